//! Deliberative inference.
//!
//! When the two strongest unmasked outputs are within a factor of each
//! other, the network may shift every subconcept bias by the same amount and
//! look again. It raises the biases while no subconcept fires above one half
//! and lowers them otherwise. A lowering step right after a raising step ends
//! the search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax_masked, Activation, LayerRole, Network};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeliberationConfig {
    /// Deliberate while `top < trigger_ratio × second`.
    pub trigger_ratio: f64,
    pub max_steps: usize,
    /// Bias step. `None` picks the smallest change a single differentia flip
    /// can make to a subconcept input for symbolic networks, and a tenth of
    /// the mean absolute subconcept bias otherwise.
    #[serde(default)]
    pub bias_step: Option<f64>,
}

impl Default for DeliberationConfig {
    fn default() -> Self {
        DeliberationConfig {
            trigger_ratio: 2.0,
            max_steps: 512,
            bias_step: None,
        }
    }
}

impl DeliberationConfig {
    pub fn with_ratio(trigger_ratio: f64) -> Self {
        DeliberationConfig {
            trigger_ratio,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.trigger_ratio > 1.0) || !self.trigger_ratio.is_finite() {
            return Err(Error::invalid("trigger_ratio must be a finite number above 1"));
        }
        if self.max_steps == 0 {
            return Err(Error::invalid("max_steps must be at least 1"));
        }
        if let Some(s) = self.bias_step {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid("bias_step must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// The outputs were decisive without any shift.
    NotTriggered,
    /// A shift made the outputs decisive.
    Decisive,
    /// The search reversed from raising to lowering and stopped there.
    Reversed,
    /// The step cap was hit; the answer is a plain argmax.
    Unresolved,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub shift: f64,
    pub top: f64,
    pub second: f64,
    pub firing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub outcome: Outcome,
    pub steps: Vec<Step>,
    pub final_shift: f64,
}

impl Transcript {
    pub fn unresolved(&self) -> bool {
        self.outcome == Outcome::Unresolved
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Deliberation {
    pub class: usize,
    pub probabilities: Vec<f64>,
    pub transcript: Transcript,
}

/// Largest and second largest unmasked values.
fn top_two(values: &[f64], mask: Option<&[bool]>) -> (f64, f64) {
    let mut top = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if mask.is_some_and(|m| m[i]) {
            continue;
        }
        if v > top {
            second = top;
            top = v;
        } else if v > second {
            second = v;
        }
    }
    (top, second.max(0.0))
}

/// Whether the top two unmasked outputs are too close to call. Nothing
/// firing at all also counts as ambiguous.
pub fn is_ambiguous(values: &[f64], mask: Option<&[bool]>, ratio: f64) -> bool {
    let (top, second) = top_two(values, mask);
    top <= 0.0 || top < ratio * second
}

fn default_step(net: &Network, layer: usize) -> f64 {
    let l = &net.layers()[layer];
    if l.activation == Activation::Symbolic {
        // Differentia outputs move in halves, so half the smallest weight is
        // one resolvable unit. Weights far below the largest are solver noise.
        let wmax = l
            .neurons
            .iter()
            .flat_map(|h| h.w.iter())
            .fold(0.0f64, |m, &w| m.max(w.abs()));
        let wmin = l
            .neurons
            .iter()
            .flat_map(|h| h.w.iter())
            .map(|w| w.abs())
            .filter(|&w| w > 1e-6 * wmax)
            .fold(f64::INFINITY, f64::min);
        return if wmin.is_finite() { 0.5 * wmin } else { 1.0 };
    }
    let mean = l.neurons.iter().map(|h| h.b.abs()).sum::<f64>() / l.width() as f64;
    if mean > 0.0 {
        0.1 * mean
    } else {
        0.1
    }
}

/// Classify `x`, deliberating when the outputs are ambiguous. A `true` mask
/// entry excludes that class.
pub fn deliberate_classify(
    net: &Network,
    x: &[f64],
    mask: Option<&[bool]>,
    cfg: &DeliberationConfig,
) -> Result<Deliberation> {
    cfg.validate()?;
    if let Some(m) = mask {
        if m.len() != net.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: net.output_dim(),
                actual: m.len(),
            });
        }
        if m.iter().all(|&v| v) {
            return Err(Error::AllMasked);
        }
    }
    let layer = net
        .layer_with_role(LayerRole::Subconcept)
        .ok_or_else(|| Error::invalid("network has no subconcept layer"))?;
    let step = cfg.bias_step.unwrap_or_else(|| default_step(net, layer));

    // Layers below the shifted one do not depend on the shift.
    let base = net.forward(x)?;
    let below: &[f64] = if layer == 0 { x } else { &base.activations[layer - 1] };
    let pre: Vec<f64> = net.layers()[layer].neurons.iter().map(|h| h.decision(below)).collect();
    let tail = |shift: f64| -> (Vec<f64>, bool) {
        let mut z: Vec<f64> = pre.iter().map(|v| v + shift).collect();
        net.layers()[layer].activate(&mut z);
        let firing = z.iter().any(|&v| v > 0.5);
        for l in &net.layers()[layer + 1..] {
            let mut next: Vec<f64> = l.neurons.iter().map(|h| h.decision(&z)).collect();
            l.activate(&mut next);
            z = next;
        }
        (z, firing)
    };

    let mut shift = 0.0;
    let mut last_change = 0i8;
    let mut steps = Vec::new();
    let outcome = loop {
        let (out, firing) = tail(shift);
        let (top, second) = top_two(&out, mask);
        steps.push(Step {
            shift,
            top,
            second,
            firing,
        });
        if !is_ambiguous(&out, mask, cfg.trigger_ratio) {
            break if steps.len() == 1 {
                Outcome::NotTriggered
            } else {
                Outcome::Decisive
            };
        }
        if steps.len() > cfg.max_steps {
            break Outcome::Unresolved;
        }
        if !firing {
            shift += step;
            last_change = 1;
        } else {
            if last_change > 0 {
                break Outcome::Reversed;
            }
            shift -= step;
            last_change = -1;
        }
    };
    let probabilities = tail(shift).0;
    let class = argmax_masked(&probabilities, mask).ok_or(Error::AllMasked)?;
    Ok(Deliberation {
        class,
        probabilities,
        transcript: Transcript {
            outcome,
            steps,
            final_shift: shift,
        },
    })
}
