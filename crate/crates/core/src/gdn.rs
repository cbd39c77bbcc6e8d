//! Gradient-descent baselines (GDNs).
//!
//! A GDN has the same layer widths as the ENN it is compared with but is
//! trained end to end by backpropagation and Adam. It can start from random
//! weights or from an ENN's weights plus Gaussian noise.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datasets::LabeledDataset;
use crate::enn::{stratified_folds, OutputActivation};
use crate::error::{Error, Result};
use crate::grad::{loss_and_grad, Adam, AdamConfig, DenseParams};
use crate::model::{Activation, Layer, Network};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GdnConfig {
    /// Widths of the hidden layers; the output width is the class count.
    pub hidden_widths: Vec<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default = "default_output")]
    pub output: OutputActivation,
    #[serde(default = "default_folds")]
    pub cv_folds: usize,
}

fn default_output() -> OutputActivation {
    OutputActivation::Softmax
}

fn default_folds() -> usize {
    10
}

impl Default for GdnConfig {
    fn default() -> Self {
        GdnConfig {
            hidden_widths: Vec::new(),
            batch_size: 32,
            epochs: 100,
            adam: AdamConfig::default(),
            output: default_output(),
            cv_folds: default_folds(),
        }
    }
}

impl GdnConfig {
    /// Hidden widths copied from an existing network.
    pub fn matching(net: &Network) -> Self {
        let layers = net.layers();
        GdnConfig {
            hidden_widths: layers[..layers.len() - 1].iter().map(Layer::width).collect(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_widths.contains(&0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.cv_folds < 2 {
            return Err(Error::invalid("cv_folds must be at least 2"));
        }
        let a = &self.adam;
        if !(a.alpha > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::invalid("invalid Adam parameters"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct GdnReport {
    pub samples: usize,
    pub epochs: usize,
    /// Mean training loss after each epoch.
    pub loss_history: Vec<f64>,
    pub train_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GdnModel {
    pub network: Network,
    pub report: GdnReport,
}

fn output_activation(o: OutputActivation) -> Activation {
    match o {
        OutputActivation::Softmax => Activation::Softmax,
        OutputActivation::Sigmoid => Activation::Sigmoid,
    }
}

/// Glorot-uniform weights and zero biases.
pub fn random_init(n_in: usize, cfg: &GdnConfig, n_classes: usize, seed: u64) -> DenseParams {
    let mut r = rng::rng(rng::derive(seed, "gdn-init", &[]));
    let mut widths = vec![n_in];
    widths.extend_from_slice(&cfg.hidden_widths);
    widths.push(n_classes);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    let mut activations = Vec::new();
    for k in 1..widths.len() {
        let (fan_in, fan_out) = (widths[k - 1], widths[k]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        weights.push(Array2::from_shape_fn((fan_out, fan_in), |_| r.random_range(-limit..=limit)));
        biases.push(Array1::zeros(fan_out));
        activations.push(if k + 1 == widths.len() {
            output_activation(cfg.output)
        } else {
            Activation::Sigmoid
        });
    }
    DenseParams {
        weights,
        biases,
        activations,
    }
}

/// Copy of `net` with every weight and bias of layer `L` perturbed by
/// `N(0, (noise_fraction · mean|w_L|)²)`. Symbolic layers become sigmoid so
/// the result can be trained by gradient descent.
pub fn seed_with_noise(net: &Network, noise_fraction: f64, seed: u64) -> Result<Network> {
    if !(noise_fraction >= 0.0) || !noise_fraction.is_finite() {
        return Err(Error::invalid("noise_fraction must be nonnegative"));
    }
    let mut p = DenseParams::from_network(net);
    for k in 0..p.weights.len() {
        let w = &mut p.weights[k];
        let mean_abs = w.iter().map(|v| v.abs()).sum::<f64>() / w.len().max(1) as f64;
        let sd = noise_fraction * mean_abs;
        if sd > 0.0 {
            let normal = Normal::new(0.0, sd).map_err(|e| Error::invalid(e.to_string()))?;
            let mut r = rng::rng(rng::derive(seed, "gdn-noise", &[k as u64]));
            w.mapv_inplace(|v| v + normal.sample(&mut r));
            p.biases[k].mapv_inplace(|v| v + normal.sample(&mut r));
        }
        if p.activations[k] == Activation::Symbolic {
            p.activations[k] = Activation::Sigmoid;
        }
    }
    p.to_network(net.roles().to_vec(), net.class_names().to_vec())
}

/// Train from random Glorot weights.
pub fn train_gdn(data: &LabeledDataset, cfg: &GdnConfig, seed: u64) -> Result<GdnModel> {
    cfg.validate()?;
    let init = random_init(data.n_features(), cfg, data.n_classes(), seed);
    let roles = vec![None; init.weights.len()];
    train_from(data, cfg, init, roles, seed)
}

/// Train starting from the weights of `start`; its output activation is
/// replaced by the configured one.
pub fn train_gdn_from(data: &LabeledDataset, cfg: &GdnConfig, start: &Network, seed: u64) -> Result<GdnModel> {
    cfg.validate()?;
    if start.input_dim() != data.n_features() || start.output_dim() != data.n_classes() {
        return Err(Error::invalid("starting network does not fit the data"));
    }
    let mut init = DenseParams::from_network(start);
    let last = init.activations.len() - 1;
    for a in &mut init.activations[..last] {
        if *a == Activation::Symbolic {
            *a = Activation::Sigmoid;
        }
    }
    init.activations[last] = output_activation(cfg.output);
    train_from(data, cfg, init, start.roles().to_vec(), seed)
}

fn train_from(
    data: &LabeledDataset,
    cfg: &GdnConfig,
    mut p: DenseParams,
    roles: Vec<Option<crate::model::LayerRole>>,
    seed: u64,
) -> Result<GdnModel> {
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let mut adam = Adam::new(cfg.adam);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut r = rng::rng(rng::derive(seed, "gdn-batches", &[epoch as u64]));
        order.shuffle(&mut r);
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let xb = data.x.select(Axis(0), batch);
            let yb: Vec<usize> = batch.iter().map(|&i| data.y[i]).collect();
            let g = loss_and_grad(&p, xb.view(), &yb, false)?;
            if !g.loss.is_finite() {
                return Err(Error::Diverged(format!("loss {} at epoch {epoch}, batch {b}", g.loss)));
            }
            total += g.loss * batch.len() as f64;
            adam.step_dense(&mut p, &g);
        }
        history.push(total / data.len() as f64);
    }
    let network = p.to_network(roles, data.class_names.clone())?;
    let train_error = network.error_rate(data.x.view(), &data.y)?;
    Ok(GdnModel {
        network,
        report: GdnReport {
            samples: data.len(),
            epochs: cfg.epochs,
            loss_history: history,
            train_error,
        },
    })
}

/// Mean validation accuracy of every `(batch_size, epochs)` grid point under
/// stratified k-fold cross-validation. The best point has the highest
/// accuracy; ties prefer fewer epochs, then smaller batches.
pub fn cross_validate_gdn(
    data: &LabeledDataset,
    cfg: &GdnConfig,
    grid: &[(usize, usize)],
    seed: u64,
) -> Result<((usize, usize), Vec<f64>)> {
    if grid.is_empty() {
        return Err(Error::invalid("empty grid"));
    }
    cfg.validate()?;
    let fold = stratified_folds(&data.y, data.n_classes(), cfg.cv_folds, rng::derive(seed, "gdn-cv", &[]))?;
    let mut scores = Vec::with_capacity(grid.len());
    for &(batch_size, epochs) in grid {
        let c = GdnConfig {
            batch_size,
            epochs,
            ..cfg.clone()
        };
        let mut acc = 0.0;
        for f in 0..cfg.cv_folds {
            let tr: Vec<usize> = (0..data.len()).filter(|&i| fold[i] != f).collect();
            let va: Vec<usize> = (0..data.len()).filter(|&i| fold[i] == f).collect();
            let m = train_gdn(&data.subset(&tr, "train"), &c, rng::derive(seed, "gdn-cv-fold", &[f as u64]))?;
            let v = data.subset(&va, "validation");
            acc += 1.0 - m.network.error_rate(v.x.view(), &v.y)?;
        }
        scores.push(acc / cfg.cv_folds as f64);
    }
    let best = (0..grid.len())
        .min_by(|&a, &b| {
            scores[b]
                .total_cmp(&scores[a])
                .then(grid[a].1.cmp(&grid[b].1))
                .then(grid[a].0.cmp(&grid[b].0))
        })
        .expect("nonempty");
    Ok((grid[best], scores))
}
