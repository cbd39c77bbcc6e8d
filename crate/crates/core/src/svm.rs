//! Soft-margin linear SVMs with an unregularized bias.
//!
//! The primal problem is
//!
//! ```text
//! min_{w,b}  ½‖w‖² + Σᵢ Cᵢ · max(0, 1 − yᵢ(w·xᵢ + b))
//! ```
//!
//! The default solver is SMO on the full dual, including the equality
//! constraint `Σ αᵢyᵢ = 0` that the free bias induces. Dual coordinate
//! descent is available as an alternative: for a fixed bias the dual has only
//! box constraints, and the optimal value `f(b)` of that inner problem is
//! convex in `b` with derivative `−Σ αᵢyᵢ`, so an outer loop root-finds
//! `Σ αᵢyᵢ = 0` with a bracketing false-position search. Solutions with a
//! small active set are finally *polished*: the KKT system on that set is
//! solved directly, which recovers margin-exact hyperplanes for the symbolic
//! tasks.

use nalgebra::{DMatrix, DVector};
use ndarray::{s, Array2, ArrayView2, CowArray, Ix2};
use rand::seq::SliceRandom;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::model::{dot, Hyperplane};
use crate::rng;

/// Functional-margin slack below which a sample counts as a support vector.
pub const SUPPORT_SLACK: f64 = 1e-6;

/// Largest active set handed to the KKT polishing step.
const POLISH_LIMIT: usize = 600;

/// Problems up to this many samples precompute the whole Gram matrix.
const SMO_LIMIT: usize = 3000;

/// KKT violation tolerance of the SMO solver, in functional-margin units.
const SMO_EPS: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct SvmProblem {
    pub positives: Array2<f64>,
    pub negatives: Array2<f64>,
    pub cost: f64,
    /// `true` marks a feature the SVM may use; masked weights stay at zero.
    pub feature_mask: Option<Vec<bool>>,
}

#[derive(Clone, Debug)]
pub struct SvmOptions {
    /// Relative duality-gap tolerance of each fixed-bias solve.
    pub tolerance: f64,
    /// Coordinate-update cap per fixed-bias solve; `None` means `10·n·d`
    /// (at least 10⁵).
    pub max_updates: Option<usize>,
    /// Reweight the cost so both classes carry equal total penalty.
    pub balanced: bool,
    pub polish: bool,
    pub solver: Solver,
}

/// Which dual solver to run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Solver {
    /// SMO on the dual with the bias equality constraint.
    #[default]
    Smo,
    /// Fixed-bias coordinate descent inside a root search on the bias.
    CoordinateDescent,
}

impl Default for SvmOptions {
    fn default() -> Self {
        SvmOptions {
            tolerance: 1e-6,
            max_updates: None,
            balanced: false,
            polish: true,
            solver: Solver::Smo,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SvmSolution {
    /// Support indices refer to rows of the stacked `[positives; negatives]`
    /// matrix (or to the rows passed to [`fit_labeled`]).
    pub hyperplane: Hyperplane,
    pub objective: f64,
    pub train_error: f64,
    pub converged: bool,
}

impl SvmSolution {
    pub fn margin(&self) -> f64 {
        self.hyperplane.margin
    }
}

pub fn train_svm(p: &SvmProblem, seed: u64) -> Result<SvmSolution> {
    train_svm_with(p, seed, &SvmOptions::default())
}

pub fn train_svm_with(p: &SvmProblem, seed: u64, opts: &SvmOptions) -> Result<SvmSolution> {
    if p.positives.nrows() == 0 || p.negatives.nrows() == 0 {
        return Err(Error::invalid("both sides of an SVM need at least one sample"));
    }
    if p.positives.ncols() != p.negatives.ncols() {
        return Err(Error::DimensionMismatch {
            expected: p.positives.ncols(),
            actual: p.negatives.ncols(),
        });
    }
    let x = ndarray::concatenate![ndarray::Axis(0), p.positives, p.negatives];
    let labels: Vec<bool> = (0..x.nrows()).map(|i| i < p.positives.nrows()).collect();
    fit_labeled(x.view(), &labels, p.cost, p.feature_mask.as_deref(), seed, opts)
}

/// `(m·w, m·b)`; the recorded margin is unchanged.
pub fn scale(sol: &SvmSolution, multiplier: f64) -> Result<Hyperplane> {
    sol.hyperplane.scaled(multiplier)
}

/// Train `sets[target]` against the union of all other sets.
pub fn one_vs_all(sets: &[Array2<f64>], target: usize, cost: f64, seed: u64) -> Result<SvmSolution> {
    if sets.len() < 2 {
        return Err(Error::invalid("one-vs-all needs at least two sets"));
    }
    if target >= sets.len() {
        return Err(Error::invalid(format!(
            "target set {target} out of range for {} sets",
            sets.len()
        )));
    }
    let others: Vec<_> = sets
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target)
        .map(|(_, m)| m.view())
        .collect();
    let negatives = ndarray::concatenate(ndarray::Axis(0), &others)
        .map_err(|e| Error::invalid(format!("incompatible sets: {e}")))?;
    train_svm(
        &SvmProblem {
            positives: sets[target].clone(),
            negatives,
            cost,
            feature_mask: None,
        },
        seed,
    )
}

/// Fit an SVM on the rows of `x`; `positive[i]` gives the side of row `i`.
pub fn fit_labeled(
    x: ArrayView2<f64>,
    positive: &[bool],
    cost: f64,
    active: Option<&[bool]>,
    seed: u64,
    opts: &SvmOptions,
) -> Result<SvmSolution> {
    let (n, d) = x.dim();
    if positive.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: positive.len(),
        });
    }
    if !(cost > 0.0) || !cost.is_finite() {
        return Err(Error::invalid(format!("SVM cost must be positive, got {cost}")));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 || n_pos == n {
        return Err(Error::invalid("both sides of an SVM need at least one sample"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("SVM features"));
    }
    if let Some(m) = active {
        if m.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: m.len(),
            });
        }
    }

    // Restrict to active columns; masked features never enter the solver.
    let cols: Vec<usize> = match active {
        Some(m) => (0..d).filter(|&j| m[j]).collect(),
        None => (0..d).collect(),
    };
    let xs: CowArray<f64, Ix2> = if cols.len() == d && x.is_standard_layout() {
        CowArray::from(x)
    } else if cols.len() == d {
        CowArray::from(x.as_standard_layout().into_owned())
    } else {
        CowArray::from(x.select(ndarray::Axis(1), &cols).as_standard_layout().into_owned())
    };

    let y: Vec<f64> = positive.iter().map(|&p| if p { 1.0 } else { -1.0 }).collect();
    let bounds: Vec<f64> = if opts.balanced {
        let (cp, cn) = (
            cost * n as f64 / (2.0 * n_pos as f64),
            cost * n as f64 / (2.0 * (n - n_pos) as f64),
        );
        positive.iter().map(|&p| if p { cp } else { cn }).collect()
    } else {
        vec![cost; n]
    };

    let (w_active, b, converged) = if cols.is_empty() {
        // No features: the best constant classifier.
        (Vec::new(), best_constant_bias(&y, &bounds), true)
    } else {
        let max_updates = opts
            .max_updates
            .unwrap_or_else(|| (10usize.saturating_mul(n).saturating_mul(cols.len())).max(100_000));
        let (mut w, mut b, mut ok, alpha) = if opts.solver == Solver::Smo {
            smo(xs.view(), &y, &bounds, max_updates)
        } else {
            let mut solver = Dcd::new(xs.view(), &y, &bounds, seed, max_updates);
            let (w, b, ok) = solver.solve_with_bias(opts.tolerance);
            (w, b, ok, solver.alpha)
        };
        if opts.polish {
            if let Some((pw, pb)) = polish(xs.view(), &y, &bounds, &alpha, &w, b) {
                w = pw;
                b = pb;
                ok = true;
            }
        }
        (w, b, ok)
    };

    let mut w = vec![0.0; d];
    for (k, &j) in cols.iter().enumerate() {
        w[j] = w_active[k];
    }

    let mut objective = 0.5 * dot(&w, &w);
    let mut wrong = 0usize;
    let mut support = Vec::new();
    for i in 0..n {
        let row = xs.row(i);
        let f = dot(&w_active, row.as_slice().expect("standard layout")) + b;
        let m = y[i] * f;
        objective += bounds[i] * (1.0 - m).max(0.0);
        if m <= 0.0 {
            wrong += 1;
        }
        if m <= 1.0 + SUPPORT_SLACK {
            support.push(i);
        }
    }
    let mut hyperplane = Hyperplane::new(w, b);
    hyperplane.support_indices = support;
    Ok(SvmSolution {
        hyperplane,
        objective,
        train_error: wrong as f64 / n as f64,
        converged,
    })
}

fn best_constant_bias(y: &[f64], bounds: &[f64]) -> f64 {
    let cost = |b: f64| -> f64 {
        y.iter()
            .zip(bounds)
            .map(|(yi, c)| c * (1.0 - yi * b).max(0.0))
            .sum()
    };
    // The hinge sum is piecewise linear with kinks at ±1; the optimum sits on one.
    [-1.0, 1.0]
        .into_iter()
        .min_by(|a, b| cost(*a).total_cmp(&cost(*b)))
        .unwrap()
}

/// Dual coordinate descent for a fixed bias, warm-startable across biases.
struct Dcd<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [f64],
    c: &'a [f64],
    qd: Vec<f64>,
    alpha: Vec<f64>,
    w: Vec<f64>,
    order: Vec<usize>,
    rng: rng::Rng,
    max_updates: usize,
}

impl<'a> Dcd<'a> {
    fn new(x: ArrayView2<'a, f64>, y: &'a [f64], c: &'a [f64], seed: u64, max_updates: usize) -> Self {
        let qd = x.rows().into_iter().map(|r| r.dot(&r)).collect();
        Dcd {
            x,
            y,
            c,
            qd,
            alpha: vec![0.0; y.len()],
            w: vec![0.0; x.ncols()],
            order: (0..y.len()).collect(),
            rng: rng::rng(seed),
            max_updates,
        }
    }

    fn row(&self, i: usize) -> &'a [f64] {
        let x = self.x;
        let r = x.slice_move(s![i, ..]);
        r.to_slice().expect("standard layout")
    }

    /// Σ αᵢyᵢ, the negated derivative of the inner optimum in `b`.
    fn balance(&self) -> f64 {
        self.alpha.iter().zip(self.y).map(|(a, y)| a * y).sum()
    }

    fn gap(&self, b: f64) -> (f64, f64) {
        let ww = dot(&self.w, &self.w);
        let mut primal = 0.5 * ww;
        let mut dual = -0.5 * ww;
        for i in 0..self.y.len() {
            let f = dot(&self.w, self.row(i)) + b;
            primal += self.c[i] * (1.0 - self.y[i] * f).max(0.0);
            dual += self.alpha[i] * (1.0 - self.y[i] * b);
        }
        (primal - dual, primal)
    }

    /// Solve the fixed-bias dual to the relative gap `tol`.
    fn solve_fixed(&mut self, b: f64, tol: f64) -> bool {
        let mut eps = 1e-3;
        let mut updates = 0usize;
        loop {
            self.order.shuffle(&mut self.rng);
            let mut pg_max = f64::NEG_INFINITY;
            let mut pg_min = f64::INFINITY;
            for k in 0..self.order.len() {
                let i = self.order[k];
                let xi = self.row(i);
                let yi = self.y[i];
                let g = yi * (dot(&self.w, xi) + b) - 1.0;
                let a = self.alpha[i];
                let ci = self.c[i];
                let pg = if a <= 0.0 {
                    g.min(0.0)
                } else if a >= ci {
                    g.max(0.0)
                } else {
                    g
                };
                pg_max = pg_max.max(pg);
                pg_min = pg_min.min(pg);
                if pg == 0.0 {
                    continue;
                }
                let new = if self.qd[i] > 0.0 {
                    (a - g / self.qd[i]).clamp(0.0, ci)
                } else if g < 0.0 {
                    ci
                } else {
                    0.0
                };
                let delta = (new - a) * yi;
                if delta != 0.0 {
                    self.alpha[i] = new;
                    for (wj, xj) in self.w.iter_mut().zip(xi) {
                        *wj += delta * xj;
                    }
                }
            }
            updates = updates.saturating_add(self.order.len());
            if pg_max - pg_min <= eps {
                let (gap, primal) = self.gap(b);
                if gap <= tol * primal.abs().max(1.0) {
                    return true;
                }
                if eps <= 1e-13 {
                    return false;
                }
                eps *= 0.1;
            }
            if updates >= self.max_updates {
                return false;
            }
        }
    }

    /// Outer search on the bias; returns `(w, b, converged)`.
    fn solve_with_bias(&mut self, tol: f64) -> (Vec<f64>, f64, bool) {
        let mut ok = true;
        let mut probe = |s: &mut Self, b: f64| -> f64 {
            ok &= s.solve_fixed(b, tol);
            s.balance()
        };
        // Bracket the root of the nonincreasing function b ↦ Σ αᵢyᵢ.
        let mut b0 = 0.0;
        let mut h0 = probe(self, b0);
        if h0 == 0.0 {
            return (self.w.clone(), b0, ok);
        }
        let dir = if h0 > 0.0 { 1.0 } else { -1.0 };
        let mut step = 1.0;
        let (mut lo, mut h_lo, mut hi, mut h_hi);
        let mut expansions = 0;
        loop {
            let b1 = b0 + dir * step;
            let h1 = probe(self, b1);
            if h1 == 0.0 {
                return (self.w.clone(), b1, ok);
            }
            if (h1 > 0.0) != (h0 > 0.0) {
                if dir > 0.0 {
                    (lo, h_lo, hi, h_hi) = (b0, h0, b1, h1);
                } else {
                    (lo, h_lo, hi, h_hi) = (b1, h1, b0, h0);
                }
                break;
            }
            b0 = b1;
            h0 = h1;
            step *= 2.0;
            expansions += 1;
            if expansions > 200 {
                return (self.w.clone(), b1, false);
            }
        }
        // Illinois false position: h_lo > 0 > h_hi.
        let mut side = 0i8;
        let mut best = (self.w.clone(), hi, h_hi.abs());
        for _ in 0..200 {
            if hi - lo <= 1e-13 * lo.abs().max(hi.abs()).max(1.0) {
                break;
            }
            let mut b = hi - h_hi * (hi - lo) / (h_hi - h_lo);
            if !(b > lo && b < hi) {
                b = 0.5 * (lo + hi);
            }
            let h = probe(self, b);
            if h.abs() < best.2 {
                best = (self.w.clone(), b, h.abs());
            }
            if h == 0.0 {
                break;
            }
            if h > 0.0 {
                lo = b;
                h_lo = h;
                if side == 1 {
                    h_hi *= 0.5;
                }
                side = 1;
            } else {
                hi = b;
                h_hi = h;
                if side == -1 {
                    h_lo *= 0.5;
                }
                side = -1;
            }
        }
        // The last probe sits at the tightest bracket; its w is the freshest.
        let b_final = best.1;
        let _ = probe(self, b_final);
        (self.w.clone(), b_final, ok)
    }
}

/// Linear-kernel rows for SMO: the whole Gram matrix for small problems,
/// rows on demand with a bounded cache above that.
struct Kernel<'a> {
    x: ArrayView2<'a, f64>,
    diag: Vec<f64>,
    rows: Vec<Option<Rc<Vec<f64>>>>,
    cached: usize,
    capacity: usize,
}

/// Cached kernel entries kept for large problems (about 256 MB).
const KERNEL_CACHE_ENTRIES: usize = 32 << 20;

impl<'a> Kernel<'a> {
    fn new(x: ArrayView2<'a, f64>, dense_limit: usize) -> Self {
        let n = x.nrows();
        if n <= dense_limit {
            let k = x.dot(&x.t());
            let diag = (0..n).map(|i| k[(i, i)]).collect();
            let rows = k.rows().into_iter().map(|r| Some(Rc::new(r.to_vec()))).collect();
            return Kernel {
                x,
                diag,
                rows,
                cached: n,
                capacity: usize::MAX,
            };
        }
        Kernel {
            x,
            diag: x.rows().into_iter().map(|r| r.dot(&r)).collect(),
            rows: vec![None; n],
            cached: 0,
            capacity: (KERNEL_CACHE_ENTRIES / n).max(2),
        }
    }

    fn row(&mut self, i: usize) -> Rc<Vec<f64>> {
        if let Some(r) = &self.rows[i] {
            return Rc::clone(r);
        }
        if self.cached >= self.capacity {
            self.rows.iter_mut().for_each(|r| *r = None);
            self.cached = 0;
        }
        let r = Rc::new(self.x.dot(&self.x.row(i)).to_vec());
        self.rows[i] = Some(Rc::clone(&r));
        self.cached += 1;
        r
    }
}

/// SMO with second-order working-set selection (Fan, Chen & Lin) on the
/// dual `min ½αᵀQα − Σα, 0 ≤ α ≤ C, yᵀα = 0`. Returns `(w, b, converged, α)`.
fn smo(x: ArrayView2<f64>, y: &[f64], c: &[f64], max_updates: usize) -> (Vec<f64>, f64, bool, Vec<f64>) {
    const TAU: f64 = 1e-12;
    let n = y.len();
    let mut kernel = Kernel::new(x, SMO_LIMIT);
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let up = |a: f64, yt: f64, ct: f64| (yt > 0.0 && a < ct) || (yt < 0.0 && a > 0.0);
    let low = |a: f64, yt: f64, ct: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < ct);
    let mut converged = false;
    for _ in 0..max_updates {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if up(alpha[t], y[t], c[t]) {
                let v = -y[t] * grad[t];
                if v > gmax {
                    gmax = v;
                    i = t;
                }
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        let ki = (i != usize::MAX).then(|| kernel.row(i));
        for t in 0..n {
            if !low(alpha[t], y[t], c[t]) {
                continue;
            }
            let v = -y[t] * grad[t];
            gmin = gmin.min(v);
            if i == usize::MAX {
                continue;
            }
            let diff = gmax - v;
            if diff > 0.0 {
                let ki = ki.as_deref().expect("row of i");
                let mut a = kernel.diag[i] + kernel.diag[t] - 2.0 * ki[t];
                if a <= 0.0 {
                    a = TAU;
                }
                let obj = -(diff * diff) / a;
                if obj < best {
                    best = obj;
                    j = t;
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin <= SMO_EPS {
            converged = true;
            break;
        }

        let ki = ki.expect("row of i");
        let kj = kernel.row(j);
        let (ai, aj) = (alpha[i], alpha[j]);
        let (ci, cj) = (c[i], c[j]);
        let mut quad = kernel.diag[i] + kernel.diag[j] - 2.0 * ki[j];
        if quad <= 0.0 {
            quad = TAU;
        }
        let (mut ni, mut nj);
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ni = ai + delta;
            nj = aj + delta;
            if diff > 0.0 {
                if nj < 0.0 {
                    nj = 0.0;
                    ni = diff;
                }
            } else if ni < 0.0 {
                ni = 0.0;
                nj = -diff;
            }
            if diff > ci - cj {
                if ni > ci {
                    ni = ci;
                    nj = ci - diff;
                }
            } else if nj > cj {
                nj = cj;
                ni = cj + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ni = ai - delta;
            nj = aj + delta;
            if sum > ci {
                if ni > ci {
                    ni = ci;
                    nj = sum - ci;
                }
            } else if nj < 0.0 {
                nj = 0.0;
                ni = sum;
            }
            if sum > cj {
                if nj > cj {
                    nj = cj;
                    ni = sum - cj;
                }
            } else if ni < 0.0 {
                ni = 0.0;
                nj = sum;
            }
        }
        let (di, dj) = (ni - ai, nj - aj);
        alpha[i] = ni;
        alpha[j] = nj;
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * di + y[j] * kj[t] * dj);
        }
    }

    // Bias from the free multipliers, or the middle of the feasible range.
    let (mut sum, mut nfree) = (0.0, 0usize);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c[t] {
            if y[t] < 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else {
            sum += yg;
            nfree += 1;
        }
    }
    let rho = if nfree > 0 { sum / nfree as f64 } else { 0.5 * (ub + lb) };
    let mut w = vec![0.0; x.ncols()];
    for t in 0..n {
        if alpha[t] != 0.0 {
            for (wj, xj) in w.iter_mut().zip(x.row(t)) {
                *wj += alpha[t] * y[t] * xj;
            }
        }
    }
    (w, -rho, converged, alpha)
}

/// Solve the KKT conditions exactly on the active set found by the
/// iterative solver. Returns `None` when the polished point is not better.
fn polish(
    x: ArrayView2<f64>,
    y: &[f64],
    c: &[f64],
    alpha: &[f64],
    w: &[f64],
    b: f64,
) -> Option<(Vec<f64>, f64)> {
    let n = y.len();
    let d = x.ncols();
    let margins: Vec<f64> = (0..n)
        .map(|i| y[i] * (x.row(i).iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b))
        .collect();
    let at_bound = |i: usize| alpha[i] >= c[i] * (1.0 - 1e-9) && margins[i] < 1.0 - 1e-7;
    let free: Vec<usize> = (0..n)
        .filter(|&i| !at_bound(i) && (margins[i] - 1.0).abs() <= 1e-4)
        .collect();
    let bound: Vec<usize> = (0..n).filter(|&i| at_bound(i)).collect();
    if free.is_empty() || free.len() > POLISH_LIMIT {
        return None;
    }

    // Unknowns βⱼ = αⱼyⱼ (j ∈ free) and b:
    //   Σⱼ βⱼ xᵢ·xⱼ + b = yᵢ − xᵢ·w_B   (i ∈ free)
    //   Σⱼ βⱼ        = −Σ_B Cₖyₖ
    let mut w_bound = vec![0.0; d];
    for &k in &bound {
        for (wj, xj) in w_bound.iter_mut().zip(x.row(k)) {
            *wj += c[k] * y[k] * xj;
        }
    }
    let m = free.len();
    let mut a = DMatrix::<f64>::zeros(m + 1, m + 1);
    let mut rhs = DVector::<f64>::zeros(m + 1);
    for (p, &i) in free.iter().enumerate() {
        for (q, &j) in free.iter().enumerate().skip(p) {
            let k = x.row(i).dot(&x.row(j));
            a[(p, q)] = k;
            a[(q, p)] = k;
        }
        a[(p, m)] = 1.0;
        a[(m, p)] = 1.0;
        rhs[p] = y[i] - x.row(i).iter().zip(&w_bound).map(|(a, b)| a * b).sum::<f64>();
    }
    rhs[m] = -bound.iter().map(|&k| c[k] * y[k]).sum::<f64>();
    let svd = a.svd(true, true);
    let sol = svd.solve(&rhs, 1e-12).ok()?;

    let mut pw = w_bound;
    for (p, &j) in free.iter().enumerate() {
        for (wj, xj) in pw.iter_mut().zip(x.row(j)) {
            *wj += sol[p] * xj;
        }
    }
    let pb = sol[m];
    if !pb.is_finite() || pw.iter().any(|v| !v.is_finite()) {
        return None;
    }

    let objective = |w: &[f64], b: f64| -> f64 {
        let mut o = 0.5 * dot(w, w);
        for i in 0..n {
            let f = x.row(i).iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
            o += c[i] * (1.0 - y[i] * f).max(0.0);
        }
        o
    };
    // Every free constraint must hold with equality and the rest must not
    // become newly violated.
    for i in 0..n {
        let f = x.row(i).iter().zip(&pw).map(|(a, b)| a * b).sum::<f64>() + pb;
        let mi = y[i] * f;
        let was_ok = margins[i] >= 1.0 - 1e-4;
        if was_ok && mi < 1.0 - 1e-7 {
            return None;
        }
    }
    let (o_new, o_old) = (objective(&pw, pb), objective(w, b));
    if o_new <= o_old + 1e-9 * o_old.abs().max(1.0) {
        Some((pw, pb))
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn problem(pos: Array2<f64>, neg: Array2<f64>, cost: f64) -> SvmProblem {
        SvmProblem {
            positives: pos,
            negatives: neg,
            cost,
            feature_mask: None,
        }
    }

    #[test]
    fn symmetric_pair() {
        let sol = train_svm(&problem(array![[1.0]], array![[-1.0]], 1e6), 0).unwrap();
        let h = &sol.hyperplane;
        assert!((h.w[0] - 1.0).abs() < 1e-3);
        assert!(h.b.abs() < 1e-3);
        assert!((h.margin - 1.0).abs() < 1e-3);
        assert!(sol.converged);
        assert_eq!(h.support_indices, vec![0, 1]);
        assert_eq!(sol.train_error, 0.0);
    }

    #[test]
    fn mask_fixes_weights_at_zero() {
        let pos = array![[1.0, 5.0], [2.0, -3.0]];
        let neg = array![[-1.0, 4.0], [-2.0, -1.0]];
        let mut p = problem(pos, neg, 10.0);
        p.feature_mask = Some(vec![true, false]);
        let sol = train_svm(&p, 3).unwrap();
        assert_eq!(sol.hyperplane.w[1], 0.0);
        assert!(sol.hyperplane.w[0] > 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(train_svm(&problem(array![[f64::NAN]], array![[1.0]], 1.0), 0).is_err());
        assert!(train_svm(&problem(Array2::zeros((0, 1)), array![[1.0]], 1.0), 0).is_err());
        assert!(train_svm(&problem(array![[1.0]], array![[1.0]], 0.0), 0).is_err());
    }

    #[test]
    fn scaling() {
        let sol = SvmSolution {
            hyperplane: Hyperplane::new(vec![1.0], -0.5),
            objective: 0.0,
            train_error: 0.0,
            converged: true,
        };
        let h = scale(&sol, 2.0).unwrap();
        assert_eq!((h.w.clone(), h.b), (vec![2.0], -1.0));
        assert_eq!(h.margin, sol.hyperplane.margin);
        assert_eq!(scale(&sol, 1.0).unwrap(), sol.hyperplane);
        let big = scale(&sol, 1000.0).unwrap();
        assert!(big.decision(&[0.7]) > 0.0 && sol.hyperplane.decision(&[0.7]) > 0.0);
        assert!(scale(&sol, 0.0).is_err());
    }

    #[test]
    fn one_vs_all_reduces_to_pair() {
        let a = array![[0.0, 1.0], [1.0, 2.0]];
        let b = array![[3.0, -1.0], [4.0, 0.5]];
        let ova = one_vs_all(&[a.clone(), b.clone()], 0, 5.0, 11).unwrap();
        let direct = train_svm(&problem(a.clone(), b.clone(), 5.0), 11).unwrap();
        for (u, v) in ova.hyperplane.w.iter().zip(&direct.hyperplane.w) {
            assert!((u - v).abs() < 1e-9);
        }
        assert!((ova.hyperplane.b - direct.hyperplane.b).abs() < 1e-9);
        assert!(one_vs_all(&[a.clone(), b.clone()], 2, 1.0, 0).is_err());
        assert!(one_vs_all(&[a], 0, 1.0, 0).is_err());
    }

    #[test]
    fn coordinate_descent_agrees_with_smo() {
        let mut r = rng::rng(42);
        let n = 160;
        let mut x = Array2::zeros((n, 4));
        let mut lab = Vec::new();
        for i in 0..n {
            let pos = i % 3 == 0;
            for j in 0..4 {
                x[(i, j)] = r.random_range(-1.0..1.0) + if pos && j < 2 { 0.8 } else { 0.0 };
            }
            lab.push(pos);
        }
        let mut opts = SvmOptions::default();
        opts.polish = false;
        opts.solver = Solver::Smo;
        let a = fit_labeled(x.view(), &lab, 0.7, None, 1, &opts).unwrap();
        opts.solver = Solver::CoordinateDescent;
        let b = fit_labeled(x.view(), &lab, 0.7, None, 1, &opts).unwrap();
        assert!((a.objective - b.objective).abs() <= 1e-5 * a.objective, "{} {}", a.objective, b.objective);
        for (u, v) in a.hyperplane.w.iter().zip(&b.hyperplane.w) {
            assert!((u - v).abs() < 1e-2);
        }
    }

    #[test]
    fn imbalanced_weighting_knob() {
        let pos = array![[1.0], [1.2], [0.9], [1.1], [-0.2]];
        let neg = array![[-1.0]];
        let mut opts = SvmOptions::default();
        let plain = train_svm_with(&problem(pos.clone(), neg.clone(), 0.1), 0, &opts).unwrap();
        opts.balanced = true;
        let bal = train_svm_with(&problem(pos, neg, 0.1), 0, &opts).unwrap();
        assert!(bal.hyperplane.b < plain.hyperplane.b);
    }

    #[test]
    fn cached_kernel_rows_match_the_gram_matrix() {
        let mut r = rng::rng(5);
        let x = Array2::from_shape_fn((40, 6), |_| r.random_range(-1.0..1.0));
        let mut dense = Kernel::new(x.view(), usize::MAX);
        let mut lazy = Kernel::new(x.view(), 0);
        lazy.capacity = 3;
        for i in [0, 7, 39, 7, 12, 3, 0] {
            assert_eq!(dense.row(i).len(), 40);
            for (a, b) in dense.row(i).iter().zip(lazy.row(i).iter()) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!(lazy.cached <= 3);
        }
        for (a, b) in dense.diag.iter().zip(&lazy.diag) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
