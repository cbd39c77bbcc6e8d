//! Brute-force references shared by the oracle tests and the acceptance suite.

#![allow(dead_code)]

use enn_core::svm::{train_svm, SvmProblem, SvmSolution};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Gaussian elimination with partial pivoting; `None` if singular.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for k in col..n {
                a[r][k] -= f * a[col][k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

pub struct Oracle {
    pub w: Vec<f64>,
    pub b: f64,
    pub objective: f64,
}

pub fn primal(x: &[Vec<f64>], y: &[f64], c: f64, w: &[f64], b: f64) -> f64 {
    let mut o = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    for (xi, yi) in x.iter().zip(y) {
        let f: f64 = xi.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
        o += c * (1.0 - yi * f).max(0.0);
    }
    o
}

/// Enumerate every assignment of each dual variable to {0, free, C}, solve
/// the KKT equalities for the free ones and keep the best KKT-feasible point.
pub fn dual_enumeration(x: &[Vec<f64>], y: &[f64], c: f64) -> Oracle {
    let n = x.len();
    let d = x[0].len();
    let k = |i: usize, j: usize| x[i].iter().zip(&x[j]).map(|(a, b)| a * b).sum::<f64>();
    let mut best: Option<Oracle> = None;
    for code in 0..3usize.pow(n as u32) {
        let mut state = vec![0u8; n];
        let mut t = code;
        for s in state.iter_mut() {
            *s = (t % 3) as u8;
            t /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 1).collect();
        let bound: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        if free.is_empty() {
            continue;
        }
        let m = free.len();
        let mut a = vec![vec![0.0; m + 1]; m + 1];
        let mut rhs = vec![0.0; m + 1];
        for (p, &i) in free.iter().enumerate() {
            for (q, &j) in free.iter().enumerate() {
                a[p][q] = y[i] * y[j] * k(i, j);
            }
            a[p][m] = y[i];
            a[m][p] = y[i];
            rhs[p] = 1.0 - bound.iter().map(|&j| c * y[i] * y[j] * k(i, j)).sum::<f64>();
        }
        rhs[m] = -bound.iter().map(|&j| c * y[j]).sum::<f64>();
        let Some(sol) = solve_dense(a, rhs) else { continue };
        let mut alpha = vec![0.0; n];
        for (p, &i) in free.iter().enumerate() {
            alpha[i] = sol[p];
        }
        for &j in &bound {
            alpha[j] = c;
        }
        let b = sol[m];
        if free.iter().any(|&i| alpha[i] < -1e-9 || alpha[i] > c + 1e-9) {
            continue;
        }
        let mut w = vec![0.0; d];
        for i in 0..n {
            for (wj, xj) in w.iter_mut().zip(&x[i]) {
                *wj += alpha[i] * y[i] * xj;
            }
        }
        let feasible = (0..n).all(|i| {
            let f: f64 = x[i].iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            match state[i] {
                0 => y[i] * f >= 1.0 - 1e-9,
                2 => y[i] * f <= 1.0 + 1e-9,
                _ => true,
            }
        });
        if !feasible {
            continue;
        }
        let objective = primal(x, y, c, &w, b);
        if best.as_ref().is_none_or(|o| objective < o.objective) {
            best = Some(Oracle { w, b, objective });
        }
    }
    best.expect("a KKT point exists for every tiny problem")
}

/// Exhaustive lattice search over (w, b), refined twice around the best point.
pub fn grid_objective(x: &[Vec<f64>], y: &[f64], c: f64, dims: usize) -> f64 {
    let mut center = vec![0.0; dims + 1];
    let mut half: f64 = 4.0;
    let mut step: f64 = 0.1;
    let mut best = f64::INFINITY;
    for _ in 0..3 {
        let per = (2.0 * half / step).round() as i64 + 1;
        let total = (per as u64).pow((dims + 1) as u32);
        let mut best_pt = center.clone();
        for code in 0..total {
            let mut t = code;
            let mut p = vec![0.0; dims + 1];
            for (k, v) in p.iter_mut().enumerate() {
                *v = center[k] - half + step * (t % per as u64) as f64;
                t /= per as u64;
            }
            let o = primal(x, y, c, &p[..dims], p[dims]);
            if o < best {
                best = o;
                best_pt = p;
            }
        }
        center = best_pt;
        half = step * 2.0;
        step /= 10.0;
    }
    best
}

pub fn split(x: &[Vec<f64>], y: &[f64]) -> (Array2<f64>, Array2<f64>) {
    let d = x[0].len();
    let pick = |sign: f64| {
        let rows: Vec<f64> = x
            .iter()
            .zip(y)
            .filter(|(_, &yi)| yi == sign)
            .flat_map(|(r, _)| r.clone())
            .collect();
        Array2::from_shape_vec((rows.len() / d, d), rows).unwrap()
    };
    (pick(1.0), pick(-1.0))
}

pub fn fit(x: &[Vec<f64>], y: &[f64], c: f64, seed: u64) -> SvmSolution {
    let (positives, negatives) = split(x, y);
    train_svm(
        &SvmProblem {
            positives,
            negatives,
            cost: c,
            feature_mask: None,
        },
        seed,
    )
    .unwrap()
}

pub fn random_points(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, d), |_| r.random::<f64>())
}

/// Recompute every pairwise Ward distance from centroids on each step.
pub fn brute_force_ward(x: &Array2<f64>) -> Vec<(usize, usize, f64, usize)> {
    let n = x.nrows();
    // Slot k holds (cluster id, members); a merged cluster takes the lower slot.
    let mut slots: Vec<Option<(usize, Vec<usize>)>> = (0..n).map(|i| Some((i, vec![i]))).collect();
    let centroid = |m: &[usize]| -> Vec<f64> {
        let mut c = vec![0.0; x.ncols()];
        for &i in m {
            for (cj, xj) in c.iter_mut().zip(x.row(i)) {
                *cj += xj / m.len() as f64;
            }
        }
        c
    };
    let mut out = Vec::new();
    for step in 0..n - 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..n {
            for j in i + 1..n {
                let (Some(a), Some(b)) = (&slots[i], &slots[j]) else { continue };
                let (ca, cb) = (centroid(&a.1), centroid(&b.1));
                let (na, nb) = (a.1.len() as f64, b.1.len() as f64);
                let sq: f64 = ca.iter().zip(&cb).map(|(u, v)| (u - v) * (u - v)).sum();
                let d = (2.0 * na * nb / (na + nb) * sq).sqrt();
                if d < best.0 {
                    best = (d, i, j);
                }
            }
        }
        let (h, i, j) = best;
        let b = slots[j].take().unwrap();
        let a = slots[i].take().unwrap();
        let mut members = a.1;
        members.extend(b.1);
        out.push((a.0.min(b.0), a.0.max(b.0), h, members.len()));
        slots[i] = Some((n + step, members));
    }
    out
}

/// Interval of biases minimizing the primal for fixed `w`. The hinge sum is
/// convex and piecewise linear in `b` with breakpoints at `yᵢ − w·xᵢ`, so
/// the minimizers are the span of the breakpoints reaching the minimum.
pub fn optimal_bias_interval(x: &[Vec<f64>], y: &[f64], c: f64, w: &[f64]) -> (f64, f64) {
    let breaks: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| yi - xi.iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let values: Vec<f64> = breaks.iter().map(|&b| primal(x, y, c, w, b)).collect();
    let best = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let tol = 1e-9 * best.abs().max(1.0);
    let at_min: Vec<f64> = breaks
        .iter()
        .zip(&values)
        .filter(|(_, &v)| v <= best + tol)
        .map(|(&b, _)| b)
        .collect();
    let lo = at_min.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = at_min.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}
