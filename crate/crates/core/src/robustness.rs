//! Robustness probes: distance to the decision boundary along straight
//! lines, error under additive Gaussian noise, and fast-gradient-sign
//! attacks with self and transfer pairings.

use ndarray::ArrayView2;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::input_gradient;
use crate::model::{classify, Network};
use crate::rng;

fn predict_one(net: &Network, x: &[f64]) -> Result<usize> {
    Ok(classify(net, x, None)?.class)
}

fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(u, v)| u + t * (v - u)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryProbe {
    /// Fraction of the way from source to target where the class changes.
    pub t_star: f64,
    /// Mean absolute per-pixel change at `t_star`.
    pub l1_distance: f64,
}

pub const SCAN_STEP: f64 = 0.01;
pub const BISECT_TOL: f64 = 1e-4;

/// Walk from `source` toward each target, find the first point where the
/// predicted class leaves the source class, then bisect the bracketing scan
/// step down to `BISECT_TOL`. Every target must be classified differently
/// from the source.
pub fn boundary_distance(net: &Network, source: &[f64], targets: &[Vec<f64>]) -> Result<Vec<BoundaryProbe>> {
    let c0 = predict_one(net, source)?;
    targets
        .iter()
        .map(|target| {
            if predict_one(net, target)? == c0 {
                return Err(Error::invalid("target is classified like the source"));
            }
            let steps = (1.0 / SCAN_STEP).round() as usize;
            let mut hi = 1.0;
            let mut lo = 0.0;
            for k in 1..=steps {
                let t = k as f64 * SCAN_STEP;
                if predict_one(net, &lerp(source, target, t))? != c0 {
                    hi = t;
                    lo = t - SCAN_STEP;
                    break;
                }
            }
            while hi - lo >= BISECT_TOL {
                let mid = 0.5 * (lo + hi);
                if predict_one(net, &lerp(source, target, mid))? != c0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let mean_abs = source.iter().zip(target).map(|(a, b)| (a - b).abs()).sum::<f64>() / source.len() as f64;
            Ok(BoundaryProbe {
                t_star: hi,
                l1_distance: hi * mean_abs,
            })
        })
        .collect()
}

const MAX_NOISE_DRAWS: usize = 10_000;

/// `count` images of independent uniform black or white pixels, each drawn
/// until the network puts it in a class other than the source's.
pub fn white_noise_targets(net: &Network, source: &[f64], count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let c0 = predict_one(net, source)?;
    let mut r = rng::rng(rng::derive(seed, "white-noise", &[]));
    let mut out = Vec::with_capacity(count);
    let mut draws = 0;
    while out.len() < count {
        draws += 1;
        if draws > MAX_NOISE_DRAWS {
            return Err(Error::invalid("white noise never left the source class"));
        }
        let img: Vec<f64> = (0..source.len()).map(|_| if r.random::<bool>() { 1.0 } else { 0.0 }).collect();
        if predict_one(net, &img)? != c0 {
            out.push(img);
        }
    }
    Ok(out)
}

/// Median white-noise boundary distance over the correctly classified
/// images among `x`, with `per_image` targets each.
pub fn white_noise_boundary_distances(
    net: &Network,
    x: ArrayView2<f64>,
    y: &[usize],
    per_image: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let rows: Vec<usize> = (0..x.nrows()).collect();
    let per: Vec<Vec<f64>> = rows
        .par_iter()
        .map(|&i| {
            let src = x.row(i).to_vec();
            if predict_one(net, &src)? != y[i] {
                return Ok(Vec::new());
            }
            let targets = white_noise_targets(net, &src, per_image, rng::derive(seed, "probe", &[i as u64]))?;
            Ok(boundary_distance(net, &src, &targets)?.into_iter().map(|p| p.l1_distance).collect())
        })
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

/// Mean error over `repeats` noisy copies of the test set for each sigma.
/// Pixels are clipped to [0, 1] only when `clip` is set.
pub fn noise_curve(
    net: &Network,
    x: ArrayView2<f64>,
    y: &[usize],
    sigmas: &[f64],
    repeats: usize,
    clip: bool,
    seed: u64,
) -> Result<Vec<f64>> {
    if sigmas.iter().any(|s| !(*s >= 0.0)) || sigmas.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("sigmas must be nonnegative and ascending"));
    }
    if repeats == 0 {
        return Err(Error::invalid("repeats must be at least 1"));
    }
    sigmas
        .iter()
        .enumerate()
        .map(|(si, &sigma)| {
            if sigma == 0.0 {
                return net.error_rate(x, y);
            }
            let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
            let errs = (0..repeats)
                .into_par_iter()
                .map(|rep| {
                    let mut r = rng::rng(rng::derive(seed, "noise", &[si as u64, rep as u64]));
                    let mut noisy = x.to_owned();
                    noisy.mapv_inplace(|v| {
                        let n = v + normal.sample(&mut r);
                        if clip {
                            n.clamp(0.0, 1.0)
                        } else {
                            n
                        }
                    });
                    net.error_rate(noisy.view(), y)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(errs.iter().sum::<f64>() / repeats as f64)
        })
        .collect()
}

/// ε values from 0.001 to 1 in multiplicative steps of 1.05, ending at 1.
pub fn default_epsilon_grid() -> Vec<f64> {
    let mut g = Vec::new();
    let mut e = 0.001;
    while e < 1.0 {
        g.push(e);
        e *= 1.05;
    }
    g.push(1.0);
    g
}

/// Linear refinement points between two grid values.
const REFINE_STEPS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    /// Smallest tried ε that makes the victim misclassify; `+∞` when the
    /// largest grid value does not.
    pub epsilon_min: f64,
    /// Sign of the designer's input gradient.
    pub grad_sign: Vec<f64>,
}

/// Sign of the designer's cross-entropy gradient at `(image, label)`.
pub fn fgsm_direction(designer: &Network, image: &[f64], label: usize) -> Result<Vec<f64>> {
    let (_, g) = input_gradient(designer, image, label)?;
    Ok(g.iter()
        .map(|&v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 })
        .collect())
}

pub fn perturb(image: &[f64], direction: &[f64], epsilon: f64, clip: bool) -> Vec<f64> {
    image
        .iter()
        .zip(direction)
        .map(|(x, d)| {
            let v = x + epsilon * d;
            if clip {
                v.clamp(0.0, 1.0)
            } else {
                v
            }
        })
        .collect()
}

/// Scan ε upward along the designer's gradient-sign direction and return the
/// first value at which the victim misclassifies. Between the last safe grid
/// value and the first failing one the scan is refined linearly.
pub fn fgsm_epsilon_min(
    designer: &Network,
    victim: &Network,
    image: &[f64],
    label: usize,
    grid: &[f64],
    clip: bool,
) -> Result<AttackResult> {
    if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) || grid[0] <= 0.0 {
        return Err(Error::invalid("epsilon grid must be positive and strictly ascending"));
    }
    if predict_one(victim, image)? != label {
        return Err(Error::invalid("victim misclassifies the clean image"));
    }
    let dir = fgsm_direction(designer, image, label)?;
    let fooled = |e: f64| -> Result<bool> { Ok(predict_one(victim, &perturb(image, &dir, e, clip))? != label) };
    let mut prev = 0.0;
    for &e in grid {
        if fooled(e)? {
            let step = (e - prev) / REFINE_STEPS as f64;
            let mut eps = e;
            for k in 1..REFINE_STEPS {
                let t = prev + k as f64 * step;
                if fooled(t)? {
                    eps = t;
                    break;
                }
            }
            return Ok(AttackResult {
                epsilon_min: eps,
                grad_sign: dir,
            });
        }
        prev = e;
    }
    Ok(AttackResult {
        epsilon_min: f64::INFINITY,
        grad_sign: dir,
    })
}

/// ε_min for every image the victim classifies correctly; `None` marks
/// images skipped by that precondition.
pub fn fgsm_sweep(
    designer: &Network,
    victim: &Network,
    x: ArrayView2<f64>,
    y: &[usize],
    grid: &[f64],
    clip: bool,
) -> Result<Vec<Option<f64>>> {
    let rows: Vec<usize> = (0..x.nrows()).collect();
    rows.par_iter()
        .map(|&i| {
            let img = x.row(i).to_vec();
            if predict_one(victim, &img)? != y[i] {
                return Ok(None);
            }
            Ok(Some(fgsm_epsilon_min(designer, victim, &img, y[i], grid, clip)?.epsilon_min))
        })
        .collect()
}

/// Victim error on images perturbed by `epsilon` along the designer's
/// gradient-sign directions.
pub fn attack_error_at(
    designer: &Network,
    victim: &Network,
    x: ArrayView2<f64>,
    y: &[usize],
    epsilon: f64,
    clip: bool,
) -> Result<f64> {
    let rows: Vec<usize> = (0..x.nrows()).collect();
    let adv = rows
        .par_iter()
        .map(|&i| {
            let img = x.row(i).to_vec();
            let dir = fgsm_direction(designer, &img, y[i])?;
            Ok(perturb(&img, &dir, epsilon, clip))
        })
        .collect::<Result<Vec<_>>>()?;
    let m = ndarray::Array2::from_shape_vec((adv.len(), x.ncols()), adv.concat()).expect("uniform rows");
    victim.error_rate(m.view(), y)
}

/// Median of the finite and infinite values alike (infinity sorts last).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 || v[n / 2 - 1].is_infinite() || v[n / 2].is_infinite() {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
