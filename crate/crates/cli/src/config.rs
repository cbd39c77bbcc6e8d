//! Experiment configuration files (TOML).

use std::path::Path;

use enn_core::conv::ConvEnnConfig;
use enn_core::deliberation::DeliberationConfig;
use enn_core::enn::EnnHyperparams;
use enn_core::gdn::GdnConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

pub const DATASETS: &[&str] = &["logic", "orientation", "rectangles", "tsp", "bdt", "mnist"];
pub const TRAINERS: &[&str] = &["enn", "gdn", "cenn"];
pub const EVALUATIONS: &[&str] = &[
    "error", "tsp", "bdt", "oracle", "noise", "fgsm", "boundary", "lesion", "firing", "weights",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub trainer: TrainerSpec,
    #[serde(default)]
    pub evaluation: EvaluationSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingSpec>,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    /// Rectangles: training images.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    /// Rectangles: test images; TSP: maps; BDT: tables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_test: Option<usize>,
    /// MNIST: balanced training subsample, images per class. All images when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class: Option<usize>,
    /// Generator seed; the experiment seed when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enn: Option<EnnHyperparams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gdn: Option<GdnConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cenn: Option<ConvEnnConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSpec {
    /// Evaluations run by `train` right after training.
    pub list: Vec<String>,
    pub deliberation: DeliberationConfig,
    /// Deliberate during `error` evaluation too.
    pub deliberate: bool,
    /// Test images used by noise, fgsm and boundary; all when unset.
    pub subset: Option<usize>,
    pub noise_sigmas: Vec<f64>,
    pub noise_repeats: usize,
    pub boundary_per_image: usize,
    pub firing_stimuli: usize,
    pub oracle_samples: usize,
    /// Clip perturbed pixels to [0, 1].
    pub clip: bool,
    /// Hidden layer for lesions; every hidden layer when unset.
    pub lesion_layer: Option<usize>,
}

impl Default for EvaluationSpec {
    fn default() -> Self {
        EvaluationSpec {
            list: Vec::new(),
            deliberation: DeliberationConfig::default(),
            deliberate: false,
            subset: None,
            noise_sigmas: vec![0.0, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5, 2.0],
            noise_repeats: 3,
            boundary_per_image: 10,
            firing_stimuli: enn_core::analysis::DEFAULT_STIMULI,
            oracle_samples: 1000,
            clip: false,
            lesion_layer: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSpec {
    /// Training images per class, ascending.
    pub sizes: Vec<usize>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Also train a GDN of matching architecture per run.
    #[serde(default)]
    pub baseline: bool,
}

fn default_repeats() -> usize {
    5
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |p| p + 1) + 1;
    (line, column)
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
            CliError::Config {
                path: origin.to_string(),
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate(origin)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg = Self::parse(&text, &path.display().to_string())?;
        Ok((cfg, text))
    }

    fn validate(&self, origin: &str) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(CliError::Config {
                path: origin.to_string(),
                line: 1,
                column: 1,
                message: format!(
                    "schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                    self.schema_version
                ),
            });
        }
        if !DATASETS.contains(&self.dataset.name.as_str()) {
            return Err(CliError::unknown("dataset", &self.dataset.name, DATASETS));
        }
        if !TRAINERS.contains(&self.trainer.kind.as_str()) {
            return Err(CliError::unknown("trainer", &self.trainer.kind, TRAINERS));
        }
        for e in &self.evaluation.list {
            if !EVALUATIONS.contains(&e.as_str()) {
                return Err(CliError::unknown("evaluation", e, EVALUATIONS));
            }
        }
        if let Some(s) = &self.scaling {
            if s.sizes.is_empty() || s.sizes.windows(2).any(|w| w[1] <= w[0]) {
                return Err(CliError::Usage("scaling sizes must be nonempty and ascending".into()));
            }
            if s.repeats == 0 {
                return Err(CliError::Usage("scaling repeats must be positive".into()));
            }
        }
        self.evaluation.deliberation.validate()?;
        Ok(())
    }

    pub fn enn(&self) -> EnnHyperparams {
        self.trainer.enn.clone().unwrap_or_default()
    }

    pub fn gdn(&self) -> GdnConfig {
        self.trainer.gdn.clone().unwrap_or_default()
    }

    pub fn cenn(&self) -> ConvEnnConfig {
        self.trainer.cenn.clone().unwrap_or_else(|| ConvEnnConfig::lenet(self.enn()))
    }

    pub fn data_seed(&self) -> u64 {
        self.dataset.seed.unwrap_or(self.seed)
    }
}
