//! Essence neural network construction.
//!
//! Training runs five stages:
//!
//! 1. ward-cluster each class into subconcepts,
//! 2. fit a differentia SVM between every pair of subconcepts from different
//!    classes,
//! 3. prune differentiae per subconcept by masking the weakest one at a time,
//! 4. fit one subconcept SVM per subconcept on the surviving differentiae,
//! 5. connect subconcepts to concepts and refine that last layer with SGD.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cluster::{subconcept_partition, SubconceptId, SubconceptPartition};
use crate::datasets::LabeledDataset;
use crate::error::{Error, Result, StageContext};
use crate::model::{sigmoid, Activation, Hyperplane, Layer, LayerRole, Network, NetworkDocument};
use crate::rng;
use crate::svm::{fit_labeled, SvmOptions, SvmSolution};

/// Neuron steepness: a finite SVM multiplier, or the symbolic limit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Steepness {
    Scale(f64),
    Symbolic,
}

impl Steepness {
    pub fn is_symbolic(self) -> bool {
        matches!(self, Steepness::Symbolic)
    }

    fn activation(self) -> Activation {
        match self {
            Steepness::Scale(_) => Activation::Sigmoid,
            Steepness::Symbolic => Activation::Symbolic,
        }
    }

    fn apply(self, h: &Hyperplane) -> Result<Hyperplane> {
        match self {
            Steepness::Scale(m) => h.scaled(m),
            Steepness::Symbolic => Ok(h.clone()),
        }
    }
}

// Written as a number, or as "inf" for the symbolic limit.
impl Serialize for Steepness {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Steepness::Scale(m) => s.serialize_f64(*m),
            Steepness::Symbolic => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Steepness {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(m) if m > 0.0 && m.is_finite() => Ok(Steepness::Scale(m)),
            Raw::Num(m) => Err(serde::de::Error::custom(format!("multiplier must be positive, got {m}"))),
            Raw::Text(t) if matches!(t.as_str(), "inf" | "symbolic") => Ok(Steepness::Symbolic),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("unknown multiplier {t:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ConceptInit {
    /// One-vs-all SVM per class on the subconcept outputs.
    Svm,
    /// Each subconcept wired to its own concept.
    Direct { weight: f64, bias: f64 },
}

impl ConceptInit {
    pub const DIRECT: ConceptInit = ConceptInit::Direct {
        weight: 10.0,
        bias: -5.0,
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Softmax,
    Sigmoid,
}

/// Which differentiae a final subconcept SVM may read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureAccess {
    /// Every differentia that survived pruning.
    All,
    /// Surviving differentiae that involve this subconcept.
    Associated,
    /// Exactly the differentiae this subconcept's own pruning kept.
    Kept,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Fraction of each class held out to pick the best epoch; 0 disables.
    #[serde(default = "default_validation")]
    pub validation_fraction: f64,
}

fn default_validation() -> f64 {
    0.1
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.5,
            batch_size: 32,
            epochs: 40,
            seed: 0,
            validation_fraction: default_validation(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnnHyperparams {
    pub target_subconcepts: usize,
    pub svm_cost: f64,
    pub differentia_multiplier: Steepness,
    /// Upper bound (and starting value) of the co-trained subconcept multiplier.
    pub subconcept_multiplier_max: Steepness,
    pub margin_fraction: f64,
    /// Tolerated increase of the training error rate while pruning.
    pub error_tolerance: f64,
    pub concept_init: ConceptInit,
    pub final_sgd: SgdConfig,
    pub prune: bool,
    #[serde(default = "default_output")]
    pub output: OutputActivation,
    #[serde(default = "default_access")]
    pub subconcept_features: FeatureAccess,
}

fn default_output() -> OutputActivation {
    OutputActivation::Softmax
}

fn default_access() -> FeatureAccess {
    FeatureAccess::All
}

impl Default for EnnHyperparams {
    fn default() -> Self {
        EnnHyperparams {
            target_subconcepts: 60,
            svm_cost: 1.0,
            differentia_multiplier: Steepness::Scale(1.0),
            subconcept_multiplier_max: Steepness::Scale(4.0),
            margin_fraction: 0.5,
            error_tolerance: 0.0,
            concept_init: ConceptInit::Svm,
            final_sgd: SgdConfig::default(),
            prune: true,
            output: OutputActivation::Softmax,
            subconcept_features: FeatureAccess::All,
        }
    }
}

impl EnnHyperparams {
    /// Settings for networks whose neurons output only 0, ½ or 1.
    pub fn symbolic(target_subconcepts: usize) -> Self {
        EnnHyperparams {
            target_subconcepts,
            svm_cost: 1e6,
            differentia_multiplier: Steepness::Symbolic,
            subconcept_multiplier_max: Steepness::Symbolic,
            prune: false,
            ..Default::default()
        }
    }

    pub fn is_symbolic(&self) -> bool {
        self.differentia_multiplier.is_symbolic()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if self.target_subconcepts == 0 {
            return Err(Error::invalid("target_subconcepts must be positive"));
        }
        if !positive(self.svm_cost) {
            return Err(Error::invalid("svm_cost must be positive"));
        }
        if !(0.0..=1.0).contains(&self.margin_fraction) {
            return Err(Error::invalid("margin_fraction must lie in [0, 1]"));
        }
        if !(self.error_tolerance >= 0.0) {
            return Err(Error::invalid("error_tolerance must be nonnegative"));
        }
        if self.differentia_multiplier.is_symbolic() != self.subconcept_multiplier_max.is_symbolic() {
            return Err(Error::invalid("symbolic mode must apply to both multipliers"));
        }
        let sgd = &self.final_sgd;
        if !sgd.is_symbolic_safe() {
            return Err(Error::invalid("final_sgd needs a positive learning rate and batch size"));
        }
        Ok(())
    }
}

impl SgdConfig {
    fn is_symbolic_safe(&self) -> bool {
        self.learning_rate > 0.0 && self.batch_size > 0 && (0.0..1.0).contains(&self.validation_fraction)
    }
}

/// One differentia: subconcept `a` is on the positive side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Differentia {
    pub a: usize,
    pub b: usize,
    pub hyperplane: Hyperplane,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct DifferentiaCatalog {
    pub entries: Vec<Differentia>,
}

impl DifferentiaCatalog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries that involve subconcept `s`.
    pub fn associated(&self, s: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&k| self.entries[k].a == s || self.entries[k].b == s)
            .collect()
    }
}

/// Layer-1 outputs of every training sample.
pub fn differentia_outputs(layer: &Layer, x: ArrayView2<f64>) -> Array2<f64> {
    let mut z = x.dot(&layer.weight_matrix().t());
    z += &layer.biases();
    for mut row in z.axis_iter_mut(Axis(0)) {
        layer.activate(row.as_slice_mut().expect("standard layout"));
    }
    z
}

fn svm_opts() -> SvmOptions {
    SvmOptions::default()
}

/// One SVM between every pair of subconcepts of different classes, ordered
/// by `(a, b)` with `a < b` in global subconcept order.
pub fn learn_differentiae(
    data: &LabeledDataset,
    partition: &SubconceptPartition,
    cost: f64,
    steepness: Steepness,
    seed: u64,
) -> Result<(DifferentiaCatalog, Layer)> {
    let members = partition.members();
    let subs = &partition.subconcepts;
    let pairs: Vec<(usize, usize)> = (0..subs.len())
        .flat_map(|a| (a + 1..subs.len()).map(move |b| (a, b)))
        .filter(|&(a, b)| subs[a].class != subs[b].class)
        .collect();
    let entries = pairs
        .par_iter()
        .map(|&(a, b)| {
            let rows: Vec<usize> = members[a].iter().chain(&members[b]).copied().collect();
            let positive: Vec<bool> = (0..rows.len()).map(|i| i < members[a].len()).collect();
            let x = data.x.select(Axis(0), &rows);
            let sol = fit_labeled(
                x.view(),
                &positive,
                cost,
                None,
                rng::derive(seed, "differentia", &[a as u64, b as u64]),
                &svm_opts(),
            )?;
            let mut hyperplane = sol.hyperplane;
            hyperplane.support_indices = hyperplane.support_indices.iter().map(|&i| rows[i]).collect();
            Ok(Differentia { a, b, hyperplane })
        })
        .collect::<Result<Vec<_>>>()?;
    let catalog = DifferentiaCatalog { entries };
    let layer = differentia_layer(&catalog, steepness)?;
    Ok((catalog, layer))
}

fn differentia_layer(catalog: &DifferentiaCatalog, steepness: Steepness) -> Result<Layer> {
    let neurons = catalog
        .entries
        .iter()
        .map(|d| steepness.apply(&d.hyperplane))
        .collect::<Result<Vec<_>>>()?;
    Ok(Layer::new(neurons, steepness.activation()))
}

/// Outcome of the per-subconcept pruning runs.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct PruneReport {
    pub differentiae_before: usize,
    pub differentiae_after: usize,
    /// Per subconcept, the catalog indices its pruned SVM kept.
    pub kept: Vec<Vec<usize>>,
}

/// Relative slack on the margin test, so that masking a weight that was
/// zero is not rejected over rounding noise.
const MARGIN_SLACK: f64 = 1e-9;

struct SubconceptRows {
    rows: Vec<usize>,
    positive: Vec<bool>,
}

fn subconcept_rows(data: &LabeledDataset, partition: &SubconceptPartition, members: &[Vec<usize>], s: usize) -> SubconceptRows {
    let class = partition.subconcepts[s].class;
    let mut rows = members[s].clone();
    let n_pos = rows.len();
    rows.extend((0..data.len()).filter(|&i| data.y[i] != class));
    let positive = (0..rows.len()).map(|i| i < n_pos).collect();
    SubconceptRows { rows, positive }
}

fn prune_one(
    features: ArrayView2<f64>,
    sr: &SubconceptRows,
    associated: &[usize],
    hp: &EnnHyperparams,
    seed: u64,
) -> Result<Vec<usize>> {
    let m = features.ncols();
    let x = features.select(Axis(0), &sr.rows);
    let mut mask = vec![false; m];
    for &k in associated {
        mask[k] = true;
    }
    let fit = |mask: &[bool]| fit_labeled(x.view(), &sr.positive, hp.svm_cost, Some(mask), seed, &svm_opts());
    let first = fit(&mask)?;
    let (m0, e0) = (first.margin(), first.train_error);
    let mut current: SvmSolution = first;
    loop {
        let active: Vec<usize> = (0..m).filter(|&k| mask[k]).collect();
        if active.len() <= 1 {
            break;
        }
        let w = &current.hyperplane.w;
        let weakest = *active
            .iter()
            .min_by(|&&i, &&j| w[i].abs().total_cmp(&w[j].abs()).then(i.cmp(&j)))
            .expect("nonempty");
        let mut trial = mask.clone();
        trial[weakest] = false;
        let sol = fit(&trial)?;
        let margin_ok = sol.margin() >= hp.margin_fraction * m0 * (1.0 - MARGIN_SLACK);
        let error_ok = sol.train_error - e0 <= hp.error_tolerance;
        if !(margin_ok && error_ok) {
            break;
        }
        mask = trial;
        current = sol;
    }
    Ok((0..m).filter(|&k| mask[k]).collect())
}

/// Prune the catalog and fit the subconcept layer.
///
/// Returns the pruned catalog, the matching differentia layer, the
/// subconcept layer (unscaled SVM hyperplanes), and a report.
pub fn prune_and_build_subconcepts(
    catalog: &DifferentiaCatalog,
    data: &LabeledDataset,
    partition: &SubconceptPartition,
    hp: &EnnHyperparams,
    seed: u64,
) -> Result<(DifferentiaCatalog, Layer, Vec<SvmSolution>, PruneReport)> {
    if catalog.is_empty() {
        return Err(Error::invalid("differentia catalog is empty"));
    }
    let layer1 = differentia_layer(catalog, hp.differentia_multiplier)?;
    let features = differentia_outputs(&layer1, data.x.view());
    let members = partition.members();
    let n_sub = partition.len();

    let kept: Vec<Vec<usize>> = (0..n_sub)
        .into_par_iter()
        .map(|s| {
            let associated = catalog.associated(s);
            if !hp.prune {
                return Ok(associated);
            }
            let sr = subconcept_rows(data, partition, &members, s);
            prune_one(features.view(), &sr, &associated, hp, rng::derive(seed, "prune", &[s as u64]))
                .map_err(|e| Error::invalid(format!("subconcept {s}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;

    let retained: Vec<usize> = if hp.prune {
        kept.iter().flatten().copied().collect::<BTreeSet<_>>().into_iter().collect()
    } else {
        (0..catalog.len()).collect()
    };
    let mut new_index = vec![usize::MAX; catalog.len()];
    for (n, &k) in retained.iter().enumerate() {
        new_index[k] = n;
    }
    let pruned = DifferentiaCatalog {
        entries: retained.iter().map(|&k| catalog.entries[k].clone()).collect(),
    };
    let kept_new: Vec<Vec<usize>> = kept
        .iter()
        .map(|v| v.iter().map(|&k| new_index[k]).collect())
        .collect();
    let retained_features = features.select(Axis(1), &retained);

    let solutions = (0..n_sub)
        .into_par_iter()
        .map(|s| {
            let sr = subconcept_rows(data, partition, &members, s);
            let mask: Option<Vec<bool>> = match hp.subconcept_features {
                FeatureAccess::All => None,
                FeatureAccess::Associated => {
                    let assoc = pruned.associated(s);
                    let mut m = vec![false; pruned.len()];
                    assoc.iter().for_each(|&k| m[k] = true);
                    Some(m)
                }
                FeatureAccess::Kept => {
                    let mut m = vec![false; pruned.len()];
                    kept_new[s].iter().for_each(|&k| m[k] = true);
                    Some(m)
                }
            };
            let x = retained_features.select(Axis(0), &sr.rows);
            let mut sol = fit_labeled(
                x.view(),
                &sr.positive,
                hp.svm_cost,
                mask.as_deref(),
                rng::derive(seed, "subconcept", &[s as u64]),
                &svm_opts(),
            )
            .map_err(|e| Error::invalid(format!("subconcept {s}: {e}")))?;
            sol.hyperplane.support_indices = sol.hyperplane.support_indices.iter().map(|&i| sr.rows[i]).collect();
            Ok(sol)
        })
        .collect::<Result<Vec<_>>>()?;

    let raw_layer = Layer::new(
        solutions.iter().map(|s| s.hyperplane.clone()).collect(),
        hp.subconcept_multiplier_max.activation(),
    );
    let report = PruneReport {
        differentiae_before: catalog.len(),
        differentiae_after: pruned.len(),
        kept: kept_new,
    };
    Ok((pruned, raw_layer, solutions, report))
}

// ------------------------------------------------------------ concept layer

/// Final-layer parameters during SGD.
#[derive(Clone, Debug, PartialEq)]
pub struct ConceptParams {
    /// `classes × subconcepts`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    /// Subconcept multiplier `m`: subconcept outputs are `σ(m·u)`.
    pub multiplier: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConceptGrad {
    pub loss: f64,
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub multiplier: f64,
}

/// Mean cross-entropy of the concept layer over rows of `u` (raw subconcept
/// pre-activations) and its gradient. With sigmoid outputs the loss is the
/// per-class binary cross-entropy summed over classes.
pub fn concept_loss_grad(
    u: ArrayView2<f64>,
    labels: &[usize],
    p: &ConceptParams,
    output: OutputActivation,
) -> ConceptGrad {
    let n = u.nrows().max(1) as f64;
    let h = u.mapv(|v| sigmoid(p.multiplier * v));
    let mut z = h.dot(&p.w.t());
    z += &p.b;
    let mut loss = 0.0;
    let mut dz = z.clone();
    for (i, mut row) in dz.axis_iter_mut(Axis(0)).enumerate() {
        let y = labels[i];
        match output {
            OutputActivation::Softmax => {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                loss += lse - row[y];
                row.mapv_inplace(|v| (v - lse).exp());
            }
            OutputActivation::Sigmoid => {
                for (k, v) in row.iter_mut().enumerate() {
                    let t = if k == y { 1.0 } else { 0.0 };
                    // log σ(z) = −softplus(−z), log(1 − σ(z)) = −softplus(z)
                    loss += t * softplus(-*v) + (1.0 - t) * softplus(*v);
                    *v = sigmoid(*v);
                }
            }
        }
        row[y] -= 1.0;
        row.mapv_inplace(|v| v / n);
    }
    let gw = dz.t().dot(&h);
    let gb = dz.sum_axis(Axis(0));
    let dh = dz.dot(&p.w);
    let mut gm = 0.0;
    for ((dh, h), u) in dh.iter().zip(h.iter()).zip(u.iter()) {
        gm += dh * h * (1.0 - h) * u;
    }
    ConceptGrad {
        loss: loss / n,
        w: gw,
        b: gb,
        multiplier: gm,
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Trained concept layer and the tuned subconcept multiplier.
#[derive(Clone, Debug, PartialEq)]
pub struct ConceptFit {
    pub layer: Layer,
    pub multiplier: Steepness,
    /// Validation (or training) loss after each epoch.
    pub loss_history: Vec<f64>,
    pub support_indices: Vec<usize>,
}

fn initial_concepts(
    h: ArrayView2<f64>,
    labels: &[usize],
    sub_class: &[usize],
    n_classes: usize,
    hp: &EnnHyperparams,
    seed: u64,
) -> Result<(Array2<f64>, Array1<f64>, Vec<usize>)> {
    let s = h.ncols();
    let mut w = Array2::zeros((n_classes, s));
    let mut b = Array1::zeros(n_classes);
    let mut support = Vec::new();
    match hp.concept_init {
        ConceptInit::Direct { weight, bias } => {
            for (j, &c) in sub_class.iter().enumerate() {
                w[[c, j]] = weight;
            }
            b.fill(bias);
        }
        ConceptInit::Svm => {
            let sols = (0..n_classes)
                .into_par_iter()
                .map(|c| {
                    let positive: Vec<bool> = labels.iter().map(|&y| y == c).collect();
                    fit_labeled(h, &positive, hp.svm_cost, None, rng::derive(seed, "concept", &[c as u64]), &svm_opts())
                })
                .collect::<Result<Vec<_>>>()?;
            for (c, sol) in sols.iter().enumerate() {
                w.row_mut(c).assign(&Array1::from(sol.hyperplane.w.clone()));
                b[c] = sol.hyperplane.b;
                support.extend_from_slice(&sol.hyperplane.support_indices);
            }
        }
    }
    Ok((w, b, support))
}

/// Build the concept layer from raw subconcept pre-activations `u`.
pub fn learn_concept_layer(
    u: ArrayView2<f64>,
    labels: &[usize],
    sub_class: &[usize],
    n_classes: usize,
    hp: &EnnHyperparams,
    seed: u64,
) -> Result<ConceptFit> {
    let symbolic = hp.is_symbolic();
    let m_max = match hp.subconcept_multiplier_max {
        Steepness::Scale(m) => m,
        Steepness::Symbolic => 1.0,
    };
    let sub_layer_act = |m: f64| -> Array2<f64> {
        if symbolic {
            u.mapv(|v| crate::model::symbolic_activation(v, crate::model::DEFAULT_SYMBOLIC_TOLERANCE))
        } else {
            u.mapv(|v| sigmoid(m * v))
        }
    };
    let h0 = sub_layer_act(m_max);
    let (w0, b0, mut support) = initial_concepts(h0.view(), labels, sub_class, n_classes, hp, seed)?;
    support.sort_unstable();
    support.dedup();

    let neurons_of = |w: &Array2<f64>, b: &Array1<f64>| -> Vec<Hyperplane> {
        (0..n_classes).map(|c| Hyperplane::new(w.row(c).to_vec(), b[c])).collect()
    };
    if symbolic {
        return Ok(ConceptFit {
            layer: Layer::new(neurons_of(&w0, &b0), Activation::Symbolic),
            multiplier: Steepness::Symbolic,
            loss_history: Vec::new(),
            support_indices: support,
        });
    }

    let sgd = &hp.final_sgd;
    let mut r = rng::rng(rng::derive(sgd.seed, "final-sgd", &[]));
    // Per-class holdout for picking the best epoch.
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut r);
        let k = ((idx.len() as f64) * sgd.validation_fraction).floor() as usize;
        val_idx.extend_from_slice(&idx[..k]);
        train_idx.extend_from_slice(&idx[k..]);
    }
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    let u_val = u.select(Axis(0), &val_idx);
    let y_val: Vec<usize> = val_idx.iter().map(|&i| labels[i]).collect();

    let mut p = ConceptParams {
        w: w0,
        b: b0,
        multiplier: m_max,
    };
    let score = |p: &ConceptParams| -> f64 {
        if val_idx.is_empty() {
            concept_loss_grad(u, labels, p, hp.output).loss
        } else {
            concept_loss_grad(u_val.view(), &y_val, p, hp.output).loss
        }
    };
    let mut best = (score(&p), p.clone());
    let mut history = Vec::with_capacity(sgd.epochs);
    let m_floor = m_max * 1e-6;
    for epoch in 0..sgd.epochs {
        train_idx.shuffle(&mut r);
        for (k, batch) in train_idx.chunks(sgd.batch_size).enumerate() {
            let ub = u.select(Axis(0), batch);
            let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let g = concept_loss_grad(ub.view(), &yb, &p, hp.output);
            if !g.loss.is_finite() {
                return Err(Error::Diverged(format!("final-layer loss {} at epoch {epoch}, batch {k}", g.loss)));
            }
            p.w.scaled_add(-sgd.learning_rate, &g.w);
            p.b.scaled_add(-sgd.learning_rate, &g.b);
            p.multiplier = (p.multiplier - sgd.learning_rate * g.multiplier).clamp(m_floor, m_max);
        }
        let s = score(&p);
        if !s.is_finite() {
            return Err(Error::Diverged(format!("final-layer loss {s} after epoch {epoch}")));
        }
        history.push(s);
        if s < best.0 {
            best = (s, p.clone());
        }
    }
    let p = best.1;
    let act = match hp.output {
        OutputActivation::Softmax => Activation::Softmax,
        OutputActivation::Sigmoid => Activation::Sigmoid,
    };
    Ok(ConceptFit {
        layer: Layer::new(neurons_of(&p.w, &p.b), act),
        multiplier: Steepness::Scale(p.multiplier),
        loss_history: history,
        support_indices: support,
    })
}

// ------------------------------------------------------------------ model

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingReport {
    pub samples: usize,
    pub target_subconcepts: usize,
    pub achieved_subconcepts: usize,
    pub differentiae_before_pruning: usize,
    pub differentiae_after_pruning: usize,
    pub subconcept_multiplier: Option<f64>,
    pub support_vectors: usize,
    pub unconverged_svms: usize,
    pub final_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnnModel {
    pub network: Network,
    pub partition: SubconceptPartition,
    pub catalog: DifferentiaCatalog,
    pub hyperparams: EnnHyperparams,
    pub support_vector_ids: Vec<usize>,
    pub report: TrainingReport,
}

/// Index of the differentia, subconcept and concept layers.
pub const DIFFERENTIA_LAYER: usize = 0;
pub const SUBCONCEPT_LAYER: usize = 1;
pub const CONCEPT_LAYER: usize = 2;

pub fn train_enn(data: &LabeledDataset, hp: &EnnHyperparams, seed: u64) -> Result<EnnModel> {
    hp.validate()?;
    if data.n_classes() < 2 {
        return Err(Error::invalid("training needs at least two classes"));
    }
    let partition = subconcept_partition(data.x.view(), &data.y, data.n_classes(), hp.target_subconcepts)
        .stage("subconcepts")?;
    let (catalog, _) = learn_differentiae(
        data,
        &partition,
        hp.svm_cost,
        hp.differentia_multiplier,
        rng::derive(seed, "differentiae", &[]),
    )
    .stage("differentiae")?;
    let (pruned, raw_sub, sub_solutions, prune_report) =
        prune_and_build_subconcepts(&catalog, data, &partition, hp, rng::derive(seed, "subconcepts", &[]))
            .stage("pruning")?;

    let layer1 = differentia_layer(&pruned, hp.differentia_multiplier)?;
    let d = differentia_outputs(&layer1, data.x.view());
    let mut u = d.dot(&raw_sub.weight_matrix().t());
    u += &raw_sub.biases();
    let sub_class: Vec<usize> = partition.subconcepts.iter().map(|s| s.class).collect();
    let concept = learn_concept_layer(
        u.view(),
        &data.y,
        &sub_class,
        data.n_classes(),
        hp,
        rng::derive(seed, "concepts", &[]),
    )
    .stage("concepts")?;

    let sub_neurons = raw_sub
        .neurons
        .iter()
        .map(|h| concept.multiplier.apply(h))
        .collect::<Result<Vec<_>>>()?;
    let layer2 = Layer::new(sub_neurons, hp.subconcept_multiplier_max.activation());
    let network = Network::new(
        vec![layer1, layer2, concept.layer],
        vec![
            Some(LayerRole::Differentia),
            Some(LayerRole::Subconcept),
            Some(LayerRole::Concept),
        ],
        data.class_names.clone(),
    )?;

    let mut ids: BTreeSet<usize> = BTreeSet::new();
    for d in &pruned.entries {
        ids.extend(&d.hyperplane.support_indices);
    }
    for s in &sub_solutions {
        ids.extend(&s.hyperplane.support_indices);
    }
    ids.extend(&concept.support_indices);
    let support_vector_ids: Vec<usize> = ids.into_iter().collect();

    let report = TrainingReport {
        samples: data.len(),
        target_subconcepts: hp.target_subconcepts,
        achieved_subconcepts: partition.achieved,
        differentiae_before_pruning: prune_report.differentiae_before,
        differentiae_after_pruning: prune_report.differentiae_after,
        subconcept_multiplier: match concept.multiplier {
            Steepness::Scale(m) => Some(m),
            Steepness::Symbolic => None,
        },
        support_vectors: support_vector_ids.len(),
        unconverged_svms: sub_solutions.iter().filter(|s| !s.converged).count(),
        final_loss: concept.loss_history.last().copied(),
    };
    Ok(EnnModel {
        network,
        partition,
        catalog: pruned,
        hyperparams: hp.clone(),
        support_vector_ids,
        report,
    })
}

pub fn count_support_vectors(model: &EnnModel) -> usize {
    model.support_vector_ids.len()
}

impl EnnModel {
    pub fn subconcept_classes(&self) -> Vec<usize> {
        self.partition.subconcepts.iter().map(|s: &SubconceptId| s.class).collect()
    }

    pub fn to_json(&self) -> String {
        let doc = EnnDocument {
            format: ENN_FORMAT.into(),
            schema_version: crate::model::SCHEMA_VERSION,
            hyperparams: self.hyperparams.clone(),
            report: self.report.clone(),
            partition: self.partition.clone(),
            catalog: self.catalog.entries.iter().map(|d| (d.a, d.b)).collect(),
            support_vector_ids: self.support_vector_ids.clone(),
            network: NetworkDocument::from_network(&self.network),
        };
        serde_json::to_string(&doc).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(crate::model::parse_error)?;
        crate::model::check_schema(&value, ENN_FORMAT)?;
        let doc: EnnDocument = serde_json::from_str(text).map_err(crate::model::parse_error)?;
        let network = doc.network.into_network()?;
        let layer1 = &network.layers()[DIFFERENTIA_LAYER];
        if layer1.width() != doc.catalog.len() {
            return Err(Error::invalid("catalog does not match the differentia layer"));
        }
        // Catalog hyperplanes are the layer weights before multiplier scaling.
        let unscale = match doc.hyperparams.differentia_multiplier {
            Steepness::Scale(m) => 1.0 / m,
            Steepness::Symbolic => 1.0,
        };
        let entries = doc
            .catalog
            .iter()
            .zip(&layer1.neurons)
            .map(|(&(a, b), h)| {
                let mut hyperplane = h.clone();
                if unscale != 1.0 {
                    hyperplane.w.iter_mut().for_each(|v| *v *= unscale);
                    hyperplane.b *= unscale;
                }
                Differentia { a, b, hyperplane }
            })
            .collect();
        Ok(EnnModel {
            network,
            partition: doc.partition,
            catalog: DifferentiaCatalog { entries },
            hyperparams: doc.hyperparams,
            support_vector_ids: doc.support_vector_ids,
            report: doc.report,
        })
    }
}

const ENN_FORMAT: &str = "enn-model";

#[derive(Serialize, Deserialize)]
struct EnnDocument {
    format: String,
    schema_version: u32,
    hyperparams: EnnHyperparams,
    report: TrainingReport,
    partition: SubconceptPartition,
    catalog: Vec<(usize, usize)>,
    support_vector_ids: Vec<usize>,
    network: NetworkDocument,
}

// --------------------------------------------------------- cross-validation

/// Stratified `k`-fold assignment: fold index per sample.
pub fn stratified_folds(labels: &[usize], n_classes: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::invalid("cross-validation needs at least two folds"));
    }
    let mut r = rng::rng(seed);
    let mut fold = vec![0; labels.len()];
    let mut offset = 0;
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if !idx.is_empty() && idx.len() < k {
            return Err(Error::invalid(format!(
                "class {c} has {} samples, fewer than {k} folds",
                idx.len()
            )));
        }
        idx.shuffle(&mut r);
        for (j, &i) in idx.iter().enumerate() {
            fold[i] = (offset + j) % k;
        }
        offset += idx.len();
    }
    Ok(fold)
}

/// Mean validation error of every grid point; returns the index of the best
/// (lowest error, earliest on ties) and all scores.
pub fn cross_validate_enn(
    data: &LabeledDataset,
    grid: &[EnnHyperparams],
    folds: usize,
    seed: u64,
) -> Result<(usize, Vec<f64>)> {
    if grid.is_empty() {
        return Err(Error::invalid("empty hyperparameter grid"));
    }
    let fold = stratified_folds(&data.y, data.n_classes(), folds, seed)?;
    let mut scores = Vec::with_capacity(grid.len());
    for (g, hp) in grid.iter().enumerate() {
        let mut err = 0.0;
        for f in 0..folds {
            let tr: Vec<usize> = (0..data.len()).filter(|&i| fold[i] != f).collect();
            let va: Vec<usize> = (0..data.len()).filter(|&i| fold[i] == f).collect();
            let model = train_enn(&data.subset(&tr, "train"), hp, rng::derive(seed, "cv", &[g as u64, f as u64]))?;
            let v = data.subset(&va, "validation");
            err += model.network.error_rate(v.x.view(), &v.y)?;
        }
        scores.push(err / folds as f64);
    }
    let best = (0..grid.len())
        .min_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)))
        .expect("nonempty");
    Ok((best, scores))
}
