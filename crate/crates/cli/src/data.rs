//! Materialize the dataset named in a config.

use std::path::PathBuf;

use enn_core::datasets::{
    balanced_subsample, gen_bdt, gen_logic, gen_orientation_sets, gen_rectangles, gen_tsp, load_mnist_dir,
    LabeledDataset, TruthTableInstance, TspInstance, DATA_DIR_ENV,
};

use crate::config::DatasetSpec;
use crate::error::{CliError, Result};

pub const DEFAULT_RECT_TRAIN: usize = 50_000;
pub const DEFAULT_RECT_TEST: usize = 10_000;
pub const DEFAULT_TASK_TEST: usize = 5_000;
/// Fallback MNIST directory, relative to the working directory.
pub const DEFAULT_MNIST_DIR: &str = "data/mnist-npm";

/// Training set, named evaluation sets, and task instances where relevant.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub train: LabeledDataset,
    pub tests: Vec<(String, LabeledDataset)>,
    pub tsp_maps: Vec<TspInstance>,
    pub bdt_tables: Vec<TruthTableInstance>,
}

impl ExperimentData {
    fn plain(train: LabeledDataset, tests: Vec<(String, LabeledDataset)>) -> Self {
        ExperimentData {
            train,
            tests,
            tsp_maps: Vec::new(),
            bdt_tables: Vec::new(),
        }
    }

    /// The main held-out set: the first test set.
    pub fn primary_test(&self) -> &LabeledDataset {
        &self.tests[0].1
    }
}

pub fn mnist_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from(DEFAULT_MNIST_DIR), PathBuf::from)
}

pub fn load(spec: &DatasetSpec, seed: u64) -> Result<ExperimentData> {
    Ok(match spec.name.as_str() {
        "logic" => {
            let d = gen_logic();
            ExperimentData::plain(d.clone(), vec![("train".into(), d)])
        }
        "orientation" => {
            let o = gen_orientation_sets(seed);
            ExperimentData::plain(
                o.train,
                vec![
                    ("lines".into(), o.lines),
                    ("diagonals".into(), o.diagonals),
                    ("boxes".into(), o.boxes),
                ],
            )
        }
        "rectangles" => {
            let (train, test) = gen_rectangles(
                spec.n_train.unwrap_or(DEFAULT_RECT_TRAIN),
                spec.n_test.unwrap_or(DEFAULT_RECT_TEST),
                seed,
            );
            ExperimentData::plain(train, vec![("test".into(), test)])
        }
        "tsp" => {
            let t = gen_tsp(spec.n_test.unwrap_or(DEFAULT_TASK_TEST), seed);
            ExperimentData {
                tests: vec![("train".into(), t.train.clone())],
                train: t.train,
                tsp_maps: t.test,
                bdt_tables: Vec::new(),
            }
        }
        "bdt" => {
            let b = gen_bdt(spec.n_test.unwrap_or(DEFAULT_TASK_TEST), seed);
            ExperimentData {
                tests: vec![("train".into(), b.train.clone())],
                train: b.train,
                tsp_maps: Vec::new(),
                bdt_tables: b.test,
            }
        }
        "mnist" => {
            let (train, test) = load_mnist_dir(&mnist_dir())?;
            let train = match spec.per_class {
                Some(k) => balanced_subsample(&train, k, seed)?,
                None => train,
            };
            ExperimentData::plain(train, vec![("test".into(), test)])
        }
        other => return Err(CliError::unknown("dataset", other, crate::config::DATASETS)),
    })
}
