//! Layered feed-forward networks with sigmoid, symbolic and softmax units.
//!
//! Every neuron is a [`Hyperplane`]: it computes `w·x + b` and passes the
//! result through its layer's [`Activation`]. Networks are immutable once
//! built; evaluation never mutates them and is safe to share across threads.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default zero-detection band of symbolic units.
pub const DEFAULT_SYMBOLIC_TOLERANCE: f64 = 1e-9;

/// Logistic function, evaluated without overflow for any finite input.
///
/// NaN propagates.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Three-valued sign: 1 above `tau`, 0 below `-tau`, 0.5 inside the band.
pub fn symbolic_activation(z: f64, tau: f64) -> f64 {
    if z > tau {
        1.0
    } else if z < -tau {
        0.0
    } else {
        0.5
    }
}

/// In-place numerically stable softmax.
pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// A single neuron: weights, bias and the SVM bookkeeping it was built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane {
    pub w: Vec<f64>,
    pub b: f64,
    /// Geometric margin `1/‖w‖` recorded when the hyperplane was trained.
    /// Multiplier scaling does not change it.
    #[serde(default)]
    pub margin: f64,
    /// Training-set indices of the samples with active hinge constraints.
    #[serde(default, rename = "support", skip_serializing_if = "Vec::is_empty")]
    pub support_indices: Vec<usize>,
}

impl Hyperplane {
    /// A hyperplane without SVM provenance; the margin is taken as `1/‖w‖`.
    pub fn new(w: Vec<f64>, b: f64) -> Self {
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        let margin = if norm > 0.0 { 1.0 / norm } else { 0.0 };
        Hyperplane {
            w,
            b,
            margin,
            support_indices: Vec::new(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.len()
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.w, x) + self.b
    }

    /// `(m·w, m·b)` with the recorded margin and support set kept as is.
    pub fn scaled(&self, multiplier: f64) -> Result<Hyperplane> {
        if !(multiplier > 0.0) || !multiplier.is_finite() {
            return Err(Error::invalid(format!(
                "multiplier must be positive and finite, got {multiplier}"
            )));
        }
        Ok(Hyperplane {
            w: self.w.iter().map(|v| v * multiplier).collect(),
            b: self.b * multiplier,
            margin: self.margin,
            support_indices: self.support_indices.clone(),
        })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Symbolic,
    Softmax,
    Identity,
}

/// What a layer means inside an ENN.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerRole {
    Differentia,
    Subconcept,
    Concept,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub neurons: Vec<Hyperplane>,
    pub activation: Activation,
    #[serde(default = "default_tolerance")]
    pub symbolic_tolerance: f64,
}

fn default_tolerance() -> f64 {
    DEFAULT_SYMBOLIC_TOLERANCE
}

impl Layer {
    pub fn new(neurons: Vec<Hyperplane>, activation: Activation) -> Self {
        Layer {
            neurons,
            activation,
            symbolic_tolerance: DEFAULT_SYMBOLIC_TOLERANCE,
        }
    }

    pub fn width(&self) -> usize {
        self.neurons.len()
    }

    pub fn input_dim(&self) -> usize {
        self.neurons.first().map_or(0, Hyperplane::input_dim)
    }

    /// Dense `(width, input_dim)` weight matrix.
    pub fn weight_matrix(&self) -> Array2<f64> {
        let (rows, cols) = (self.width(), self.input_dim());
        let mut m = Array2::zeros((rows, cols));
        for (mut row, h) in m.axis_iter_mut(Axis(0)).zip(&self.neurons) {
            row.assign(&ndarray::ArrayView1::from(&h.w[..]));
        }
        m
    }

    pub fn biases(&self) -> Array1<f64> {
        self.neurons.iter().map(|h| h.b).collect()
    }

    pub fn activate(&self, z: &mut [f64]) {
        match self.activation {
            Activation::Sigmoid => z.iter_mut().for_each(|v| *v = sigmoid(*v)),
            Activation::Symbolic => {
                let tau = self.symbolic_tolerance;
                z.iter_mut().for_each(|v| *v = symbolic_activation(*v, tau))
            }
            Activation::Softmax => softmax_in_place(z),
            Activation::Identity => {}
        }
    }
}

/// Outputs of every layer for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub activations: Vec<Vec<f64>>,
    /// Final-layer pre-activations.
    pub logits: Vec<f64>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Additive shift applied to every bias of one layer during evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiasShift {
    pub layer: usize,
    pub shift: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    roles: Vec<Option<LayerRole>>,
    class_names: Vec<String>,
}

impl Network {
    pub fn new(
        layers: Vec<Layer>,
        roles: Vec<Option<LayerRole>>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        if roles.len() != layers.len() {
            return Err(Error::invalid(format!(
                "{} role annotations for {} layers",
                roles.len(),
                layers.len()
            )));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.neurons.is_empty() {
                return Err(Error::invalid(format!("layer {k} has no neurons")));
            }
            let dim = layer.input_dim();
            if layer.neurons.iter().any(|h| h.input_dim() != dim) {
                return Err(Error::invalid(format!("layer {k} has ragged weights")));
            }
            if !(layer.symbolic_tolerance >= 0.0) {
                return Err(Error::invalid(format!("layer {k} has negative tolerance")));
            }
            if layer.activation == Activation::Softmax && k + 1 != layers.len() {
                return Err(Error::invalid("softmax is only allowed in the final layer"));
            }
            if k > 0 && dim != layers[k - 1].width() {
                return Err(Error::invalid(format!(
                    "layer {k} expects {dim} inputs but layer {} has {} outputs",
                    k - 1,
                    layers[k - 1].width()
                )));
            }
            let finite = layer
                .neurons
                .iter()
                .all(|h| h.b.is_finite() && h.w.iter().all(|v| v.is_finite()));
            if !finite {
                return Err(Error::NonFinite("network weights"));
            }
        }
        let out = layers.last().map_or(0, Layer::width);
        if out != class_names.len() {
            return Err(Error::invalid(format!(
                "{out} outputs but {} class names",
                class_names.len()
            )));
        }
        Ok(Network {
            layers,
            roles,
            class_names,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn roles(&self) -> &[Option<LayerRole>] {
        &self.roles
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.class_names.len()
    }

    /// Index of the first layer carrying `role`.
    pub fn layer_with_role(&self, role: LayerRole) -> Option<usize> {
        self.roles.iter().position(|r| *r == Some(role))
    }

    pub fn into_parts(self) -> (Vec<Layer>, Vec<Option<LayerRole>>, Vec<String>) {
        (self.layers, self.roles, self.class_names)
    }

    pub fn neuron_count(&self) -> usize {
        self.layers.iter().map(Layer::width).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.forward_shifted(x, None)
    }

    pub fn forward_shifted(&self, x: &[f64], shift: Option<BiasShift>) -> Result<ForwardTrace> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut logits = Vec::new();
        let mut prev: Vec<f64> = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let offset = match shift {
                Some(s) if s.layer == k => s.shift,
                _ => 0.0,
            };
            let mut z: Vec<f64> = layer
                .neurons
                .iter()
                .map(|h| h.decision(&prev) + offset)
                .collect();
            if k + 1 == self.layers.len() {
                logits = z.clone();
            }
            layer.activate(&mut z);
            activations.push(z.clone());
            prev = z;
        }
        Ok(ForwardTrace {
            activations,
            logits,
        })
    }

    /// Evaluate a batch (rows of `x`); returns every layer's output matrix.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        let mut outs: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = outs.last().map_or(x, |a| a.view());
            let mut z = input.dot(&layer.weight_matrix().t());
            z += &layer.biases();
            if !z.is_standard_layout() {
                z = z.as_standard_layout().into_owned();
            }
            for mut row in z.axis_iter_mut(Axis(0)) {
                layer.activate(row.as_slice_mut().expect("standard layout"));
            }
            outs.push(z);
        }
        Ok(outs)
    }

    /// Final-layer outputs for a batch.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_batch(x)?.pop().expect("at least one layer"))
    }

    /// Predicted class per row, ties to the lowest index.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        let p = self.predict_proba(x)?;
        Ok(p.axis_iter(Axis(0))
            .map(|row| argmax_masked(row.as_slice().expect("standard layout"), None).unwrap_or(0))
            .collect())
    }

    /// Fraction of rows whose prediction differs from `labels`.
    pub fn error_rate(&self, x: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
        let pred = self.predict(x)?;
        let wrong = pred.iter().zip(labels).filter(|(p, y)| p != y).count();
        Ok(wrong as f64 / labels.len().max(1) as f64)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&NetworkDocument::from_network(self))
            .expect("network serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(parse_error)?;
        check_schema(&value, NETWORK_FORMAT)?;
        let doc: NetworkDocument = serde_json::from_str(text).map_err(parse_error)?;
        doc.into_network()
    }
}

/// Index of the largest unmasked entry (`mask[i] == true` means masked).
/// Ties go to the lowest index.
pub fn argmax_masked(values: &[f64], mask: Option<&[bool]>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if mask.is_some_and(|m| m[i]) {
            continue;
        }
        match best {
            Some((_, bv)) if !(v > bv) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Classification of one input.
#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub class: usize,
    pub probabilities: Vec<f64>,
}

/// Argmax over unmasked outputs. A `true` mask entry excludes that class.
pub fn classify(net: &Network, x: &[f64], mask: Option<&[bool]>) -> Result<Classification> {
    if let Some(m) = mask {
        if m.len() != net.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: net.output_dim(),
                actual: m.len(),
            });
        }
    }
    let trace = net.forward(x)?;
    let probabilities = trace.output().to_vec();
    let class = argmax_masked(&probabilities, mask).ok_or(Error::AllMasked)?;
    Ok(Classification {
        class,
        probabilities,
    })
}

pub const SCHEMA_VERSION: u32 = 1;
pub(crate) const NETWORK_FORMAT: &str = "enn-network";

pub(crate) fn parse_error(e: serde_json::Error) -> Error {
    Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

pub(crate) fn check_schema(value: &serde_json::Value, format: &str) -> Result<()> {
    let found = value.get("format").and_then(|v| v.as_str());
    if found != Some(format) {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: format!("expected format \"{format}\", found {found:?}"),
        });
    }
    let version = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Parse {
            line: 1,
            column: 1,
            message: "missing schema_version".into(),
        })?;
    if version != SCHEMA_VERSION as u64 {
        return Err(Error::SchemaVersion {
            found: version as u32,
            supported: SCHEMA_VERSION,
        });
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct LayerDocument {
    activation: Activation,
    symbolic_tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    role: Option<LayerRole>,
    neurons: Vec<Hyperplane>,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct NetworkDocument {
    format: String,
    schema_version: u32,
    class_names: Vec<String>,
    layers: Vec<LayerDocument>,
}

impl NetworkDocument {
    pub(crate) fn from_network(net: &Network) -> Self {
        NetworkDocument {
            format: NETWORK_FORMAT.to_string(),
            schema_version: SCHEMA_VERSION,
            class_names: net.class_names.clone(),
            layers: net
                .layers
                .iter()
                .zip(&net.roles)
                .map(|(l, r)| LayerDocument {
                    activation: l.activation,
                    symbolic_tolerance: l.symbolic_tolerance,
                    role: *r,
                    neurons: l.neurons.clone(),
                })
                .collect(),
        }
    }

    pub(crate) fn into_network(self) -> Result<Network> {
        let (layers, roles) = self
            .layers
            .into_iter()
            .map(|d| {
                (
                    Layer {
                        neurons: d.neurons,
                        activation: d.activation,
                        symbolic_tolerance: d.symbolic_tolerance,
                    },
                    d.role,
                )
            })
            .unzip();
        Network::new(layers, roles, self.class_names)
    }
}
