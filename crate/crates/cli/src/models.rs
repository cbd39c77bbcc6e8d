//! Trained model files. Each is one JSON document whose `format` field names
//! the kind of model.

use std::path::Path;

use enn_core::conv::{ConvEnn, ConvLayer};
use enn_core::enn::EnnModel;
use enn_core::gdn::{GdnModel, GdnReport};
use enn_core::model::Network;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

const GDN_FORMAT: &str = "gdn-model";
const CENN_FORMAT: &str = "cenn-model";
const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum TrainedModel {
    Enn(EnnModel),
    Gdn(GdnModel),
    Cenn(ConvEnn),
}

#[derive(Serialize, Deserialize)]
struct GdnDocument {
    format: String,
    schema_version: u32,
    report: GdnReport,
    network: Value,
}

#[derive(Serialize, Deserialize)]
struct CennDocument {
    format: String,
    schema_version: u32,
    layers: Vec<ConvLayer>,
    centroids_separated: Vec<bool>,
    enn: Value,
}

fn parse(text: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| {
        CliError::Core(enn_core::Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    })
}

fn from_value<T: serde::de::DeserializeOwned>(v: Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| {
        CliError::Core(enn_core::Error::Parse {
            line: 0,
            column: 0,
            message: e.to_string(),
        })
    })
}

fn check_version(v: &Value) -> Result<()> {
    match v.get("schema_version").and_then(Value::as_u64) {
        Some(n) if n == SCHEMA_VERSION as u64 => Ok(()),
        Some(n) => Err(CliError::Core(enn_core::Error::SchemaVersion {
            found: n as u32,
            supported: SCHEMA_VERSION,
        })),
        None => Err(CliError::Usage("model file has no schema_version".into())),
    }
}

impl TrainedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            TrainedModel::Enn(_) => "enn",
            TrainedModel::Gdn(_) => "gdn",
            TrainedModel::Cenn(_) => "cenn",
        }
    }

    /// The dense network that sees raw inputs; `None` for convolutional models.
    pub fn network(&self) -> Option<&Network> {
        match self {
            TrainedModel::Enn(m) => Some(&m.network),
            TrainedModel::Gdn(m) => Some(&m.network),
            TrainedModel::Cenn(_) => None,
        }
    }

    /// The fully connected part, for structural analyses.
    pub fn dense_part(&self) -> &Network {
        match self {
            TrainedModel::Enn(m) => &m.network,
            TrainedModel::Gdn(m) => &m.network,
            TrainedModel::Cenn(m) => &m.enn.network,
        }
    }

    pub fn to_json(&self) -> String {
        match self {
            TrainedModel::Enn(m) => m.to_json(),
            TrainedModel::Gdn(m) => {
                let doc = GdnDocument {
                    format: GDN_FORMAT.into(),
                    schema_version: SCHEMA_VERSION,
                    report: m.report.clone(),
                    network: serde_json::from_str(&m.network.to_json()).expect("network json"),
                };
                serde_json::to_string(&doc).expect("serializable")
            }
            TrainedModel::Cenn(m) => {
                let doc = CennDocument {
                    format: CENN_FORMAT.into(),
                    schema_version: SCHEMA_VERSION,
                    layers: m.layers.clone(),
                    centroids_separated: m.centroids_separated.clone(),
                    enn: serde_json::from_str(&m.enn.to_json()).expect("model json"),
                };
                serde_json::to_string(&doc).expect("serializable")
            }
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v = parse(text)?;
        let format = v.get("format").and_then(Value::as_str).unwrap_or_default().to_string();
        match format.as_str() {
            "enn-model" => Ok(TrainedModel::Enn(EnnModel::from_json(text)?)),
            GDN_FORMAT => {
                check_version(&v)?;
                let doc: GdnDocument = from_value(v)?;
                Ok(TrainedModel::Gdn(GdnModel {
                    network: Network::from_json(&doc.network.to_string())?,
                    report: doc.report,
                }))
            }
            CENN_FORMAT => {
                check_version(&v)?;
                let doc: CennDocument = from_value(v)?;
                Ok(TrainedModel::Cenn(ConvEnn {
                    layers: doc.layers,
                    enn: EnnModel::from_json(&doc.enn.to_string())?,
                    centroids_separated: doc.centroids_separated,
                }))
            }
            other => Err(CliError::unknown("model format", other, &["enn-model", GDN_FORMAT, CENN_FORMAT])),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }
}
