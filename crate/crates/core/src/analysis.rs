//! Structural analyses of trained networks: lesion curves, weight
//! statistics and firing-pattern matrices.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::cluster::ward_linkage;
use crate::error::{Error, Result};
use crate::model::{Layer, Network};
use crate::rng;

/// Leaf order of a Ward dendrogram over the rows of `x`.
fn ward_order(x: ArrayView2<f64>) -> Result<Vec<usize>> {
    if x.nrows() < 2 {
        return Ok((0..x.nrows()).collect());
    }
    Ok(ward_linkage(x)?.leaf_order())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LesionCurve {
    pub layer: usize,
    /// Neurons in the order they were deleted.
    pub order: Vec<usize>,
    /// `per_class[k][c]`: accuracy on class `c` after `k` deletions.
    pub per_class: Vec<Vec<f64>>,
    pub overall: Vec<f64>,
}

/// Accuracy on every class; classes without samples read as NaN.
fn class_accuracy(pred: &[usize], y: &[usize], n_classes: usize) -> Vec<f64> {
    let mut hit = vec![0usize; n_classes];
    let mut tot = vec![0usize; n_classes];
    for (&p, &t) in pred.iter().zip(y) {
        tot[t] += 1;
        if p == t {
            hit[t] += 1;
        }
    }
    hit.iter()
        .zip(&tot)
        .map(|(&h, &t)| if t == 0 { f64::NAN } else { h as f64 / t as f64 })
        .collect()
}

/// Delete the neurons of hidden layer `layer` one at a time by zeroing their
/// outgoing weights. The order is the Ward leaf order of the neurons' output
/// vectors over `x`.
pub fn lesion_study(net: &Network, layer: usize, x: ArrayView2<f64>, y: &[usize]) -> Result<LesionCurve> {
    if layer + 1 >= net.layers().len() {
        return Err(Error::invalid(format!("layer {layer} has no outgoing weights")));
    }
    let outs = net.forward_batch(x)?;
    let order = ward_order(outs[layer].t())?;
    let n_classes = net.output_dim();

    let mut layers: Vec<Layer> = net.layers().to_vec();
    let mut per_class = Vec::with_capacity(order.len() + 1);
    let mut overall = Vec::with_capacity(order.len() + 1);
    let mut record = |layers: &[Layer]| -> Result<()> {
        let n = Network::new(layers.to_vec(), net.roles().to_vec(), net.class_names().to_vec())?;
        let pred = n.predict(x)?;
        per_class.push(class_accuracy(&pred, y, n_classes));
        let hits = pred.iter().zip(y).filter(|(p, t)| p == t).count();
        overall.push(hits as f64 / y.len().max(1) as f64);
        Ok(())
    };
    record(&layers)?;
    for &j in &order {
        for h in &mut layers[layer + 1].neurons {
            h.w[j] = 0.0;
        }
        record(&layers)?;
    }
    Ok(LesionCurve {
        layer,
        order,
        per_class,
        overall,
    })
}

impl LesionCurve {
    /// For each class, the first deletion count at which its accuracy drops
    /// below `threshold`; `None` when it never does.
    pub fn collapse_indices(&self, threshold: f64) -> Vec<Option<usize>> {
        let n_classes = self.per_class.first().map_or(0, Vec::len);
        (0..n_classes)
            .map(|c| self.per_class.iter().position(|acc| acc[c] < threshold))
            .collect()
    }

    /// Variance of the collapse indices of the classes that collapse. High
    /// variance means classes fail one after another rather than together.
    pub fn collapse_spread(&self, threshold: f64) -> f64 {
        let idx: Vec<f64> = self
            .collapse_indices(threshold)
            .into_iter()
            .flatten()
            .map(|i| i as f64)
            .collect();
        if idx.len() < 2 {
            return 0.0;
        }
        let mean = idx.iter().sum::<f64>() / idx.len() as f64;
        idx.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / idx.len() as f64
    }
}

pub const HISTOGRAM_BINS: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightStats {
    pub layer: usize,
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub histogram: Vec<usize>,
    /// `m4/m2² − 3`; `None` when every weight is equal.
    pub excess_kurtosis: Option<f64>,
    /// Fraction of weights with `|w| < 0.01·max|w|`.
    pub sparsity: f64,
    pub degenerate: bool,
}

/// Statistics of a sample of weights.
pub fn describe_weights(layer: usize, w: &[f64]) -> WeightStats {
    // Sorting first makes every sum independent of the input order.
    let mut sorted = w.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let w = &sorted[..];
    let n = w.len();
    let min = w.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = w.iter().sum::<f64>() / n.max(1) as f64;
    let m2 = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.max(1) as f64;
    let m4 = w.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n.max(1) as f64;
    let degenerate = n == 0 || m2 == 0.0;
    let mut histogram = vec![0usize; HISTOGRAM_BINS];
    if !degenerate {
        let width = (max - min) / HISTOGRAM_BINS as f64;
        for v in w {
            let b = (((v - min) / width) as usize).min(HISTOGRAM_BINS - 1);
            histogram[b] += 1;
        }
    } else if n > 0 {
        histogram[0] = n;
    }
    let max_abs = w.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let sparse = w.iter().filter(|v| v.abs() < 0.01 * max_abs).count();
    WeightStats {
        layer,
        count: n,
        min,
        max,
        histogram,
        excess_kurtosis: (!degenerate).then(|| m4 / (m2 * m2) - 3.0),
        sparsity: sparse as f64 / n.max(1) as f64,
        degenerate,
    }
}

/// Per-layer statistics of the incoming weights (biases excluded).
pub fn weight_stats(net: &Network) -> Vec<WeightStats> {
    net.layers()
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let w: Vec<f64> = l.neurons.iter().flat_map(|h| h.w.iter().copied()).collect();
            describe_weights(k, &w)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiringMatrix {
    /// Row `i` is neuron `neurons[i]`; columns are stimuli.
    pub values: Vec<Vec<f64>>,
    /// `(layer, neuron)` of every row, grouped by layer and Ward-ordered
    /// within each layer.
    pub neurons: Vec<(usize, usize)>,
    /// Rows of the test set used as stimuli.
    pub stimuli: Vec<usize>,
    /// Mean fraction of a layer's neurons firing above 0.5 per stimulus.
    pub population_sparseness: Vec<f64>,
}

pub const DEFAULT_STIMULI: usize = 350;

/// Record every neuron's output on `count` random rows of `x` (all rows when
/// there are fewer).
pub fn firing_matrix(net: &Network, x: ArrayView2<f64>, count: usize, seed: u64) -> Result<FiringMatrix> {
    let mut r = rng::rng(rng::derive(seed, "firing", &[]));
    let take = count.min(x.nrows());
    let mut stimuli = index::sample(&mut r, x.nrows(), take).into_vec();
    stimuli.sort_unstable();
    let xs = x.select(Axis(0), &stimuli);
    let outs = net.forward_batch(xs.view())?;
    let mut values = Vec::new();
    let mut neurons = Vec::new();
    let mut sparseness = Vec::with_capacity(outs.len());
    for (k, out) in outs.iter().enumerate() {
        let rows: Array2<f64> = out.t().to_owned();
        for j in ward_order(rows.view())? {
            values.push(rows.row(j).to_vec());
            neurons.push((k, j));
        }
        let firing = out.iter().filter(|&&v| v > 0.5).count();
        sparseness.push(firing as f64 / (out.len().max(1)) as f64);
    }
    Ok(FiringMatrix {
        values,
        neurons,
        stimuli,
        population_sparseness: sparseness,
    })
}
