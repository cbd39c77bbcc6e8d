//! The subcommands, callable as library functions.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use enn_core::conv::train_cenn;
use enn_core::datasets::{balanced_subsample, save_dataset};
use enn_core::enn::{count_support_vectors, train_enn};
use enn_core::gdn::{train_gdn, GdnConfig};
use enn_core::rng;
use serde::Serialize;
use serde_json::Value;

use crate::config::{DatasetSpec, ExperimentConfig};
use crate::data::{self, ExperimentData};
use crate::error::{CliError, Result};
use crate::eval::{self, num, EvalOutput, Table};
use crate::manifest::RunDir;
use crate::models::TrainedModel;

pub const MODEL_FILE: &str = "model.json";
pub const CONFIG_ECHO: &str = "config.toml";

/// Config, its exact text, and the effective seed.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub config: ExperimentConfig,
    pub text: String,
    pub seed: u64,
}

impl Loaded {
    pub fn from_path(path: &Path, seed: Option<u64>) -> Result<Self> {
        let (config, text) = ExperimentConfig::load(path)?;
        let seed = seed.unwrap_or(config.seed);
        Ok(Loaded { config, text, seed })
    }

    pub fn from_text(text: &str, seed: Option<u64>) -> Result<Self> {
        let config = ExperimentConfig::parse(text, "<config>")?;
        let seed = seed.unwrap_or(config.seed);
        Ok(Loaded {
            config,
            text: text.to_string(),
            seed,
        })
    }

    fn data(&self) -> Result<ExperimentData> {
        data::load(&self.config.dataset, self.config.dataset.seed.unwrap_or(self.seed))
    }
}

// ------------------------------------------------------------------ gen-data

pub fn gen_data(spec: &DatasetSpec, seed: u64, out: &Path) -> Result<()> {
    let d = data::load(spec, seed)?;
    let mut run = RunDir::create(out, "gen-data", &spec.name, seed, None)?;
    let save = |run: &mut RunDir, ds: &enn_core::datasets::LabeledDataset, name: &str| -> Result<()> {
        // The dataset's own manifest covers the .bin; the run manifest covers that.
        save_dataset(ds, out, name)?;
        let f = format!("{name}.manifest.json");
        let p = out.join(&f);
        let bytes = fs::read(&p).map_err(|e| CliError::io(&p, e))?;
        run.write(&f, &bytes)?;
        Ok(())
    };
    save(&mut run, &d.train, &format!("{}-train", spec.name))?;
    for (name, ds) in d.tests.iter().filter(|(n, _)| n != "train") {
        save(&mut run, ds, &format!("{}-{name}", spec.name))?;
    }
    if !d.tsp_maps.is_empty() {
        run.write_json(&format!("{}-maps.json", spec.name), &d.tsp_maps)?;
    }
    if !d.bdt_tables.is_empty() {
        run.write_json(&format!("{}-tables.json", spec.name), &d.bdt_tables)?;
    }
    run.finish("gen-data")?;
    Ok(())
}

// --------------------------------------------------------------------- train

#[derive(Serialize)]
struct TrainSummary<'a> {
    experiment: &'a str,
    trainer: &'a str,
    seed: u64,
    samples: usize,
    neurons: usize,
    layer_widths: Vec<usize>,
    report: Value,
}

pub fn train_model(loaded: &Loaded, data: &ExperimentData) -> Result<(TrainedModel, Value)> {
    let cfg = &loaded.config;
    let seed = loaded.seed;
    Ok(match cfg.trainer.kind.as_str() {
        "enn" => {
            let m = train_enn(&data.train, &cfg.enn(), seed)?;
            let report = serde_json::to_value(&m.report).expect("serializable");
            (TrainedModel::Enn(m), report)
        }
        "gdn" => {
            let m = train_gdn(&data.train, &cfg.gdn(), seed)?;
            let report = serde_json::to_value(&m.report).expect("serializable");
            (TrainedModel::Gdn(m), report)
        }
        "cenn" => {
            let m = train_cenn(&data.train, &cfg.cenn(), seed)?;
            let report = serde_json::to_value(&m.enn.report).expect("serializable");
            (TrainedModel::Cenn(m), report)
        }
        other => return Err(CliError::unknown("trainer", other, crate::config::TRAINERS)),
    })
}

fn write_eval(run: &mut RunDir, out: &EvalOutput, summary: &mut BTreeMap<String, Value>) -> Result<()> {
    for (name, bytes) in &out.files {
        run.write(name, bytes)?;
    }
    summary.extend(out.summary.clone());
    Ok(())
}

/// Train the configured model into `out`, then run the configured evaluations.
pub fn train(loaded: &Loaded, out: &Path) -> Result<TrainedModel> {
    let cfg = &loaded.config;
    let data = loaded.data()?;
    let (model, report) = train_model(loaded, &data)?;
    let mut run = RunDir::create(out, "train", &cfg.name, loaded.seed, Some(&loaded.text))?;
    run.write(CONFIG_ECHO, loaded.text.as_bytes())?;
    run.write(MODEL_FILE, model.to_json().as_bytes())?;
    let dense = model.dense_part();
    run.write_json(
        "train_report.json",
        &TrainSummary {
            experiment: &cfg.name,
            trainer: model.kind(),
            seed: loaded.seed,
            samples: data.train.len(),
            neurons: dense.neuron_count(),
            layer_widths: dense.layers().iter().map(|l| l.width()).collect(),
            report,
        },
    )?;
    let mut summary = BTreeMap::new();
    for e in &cfg.evaluation.list {
        let o = eval::run(e, &model, &data, &cfg.evaluation, loaded.seed)?;
        write_eval(&mut run, &o, &mut summary)?;
    }
    if !summary.is_empty() {
        run.write_json("summary.json", &summary)?;
    }
    run.finish("train")?;
    Ok(model)
}

// ---------------------------------------------------------------------- eval

/// The config stored next to a model by `train`.
pub fn sibling_config(model: &Path) -> PathBuf {
    model.parent().unwrap_or(Path::new(".")).join(CONFIG_ECHO)
}

pub fn eval(model_path: &Path, evaluation: &str, loaded: &Loaded, out: &Path) -> Result<EvalOutput> {
    let model = TrainedModel::load(model_path)?;
    let data = loaded.data()?;
    let o = eval::run(evaluation, &model, &data, &loaded.config.evaluation, loaded.seed)?;
    let mut run = RunDir::create(out, &format!("eval {evaluation}"), &loaded.config.name, loaded.seed, Some(&loaded.text))?;
    run.input(model_path)?;
    let mut summary = BTreeMap::new();
    write_eval(&mut run, &o, &mut summary)?;
    run.write_json(&format!("{evaluation}.summary.json"), &summary)?;
    run.finish(&format!("eval-{evaluation}"))?;
    Ok(o)
}

/// FGSM on `victim` with perturbations designed on `designer`.
pub fn attack(victim_path: &Path, designer_path: &Path, loaded: &Loaded, out: &Path) -> Result<EvalOutput> {
    let victim = TrainedModel::load(victim_path)?;
    let designer = TrainedModel::load(designer_path)?;
    let need = |m: &TrainedModel| {
        m.network()
            .cloned()
            .ok_or_else(|| CliError::Usage(format!("attacks need dense models, not {}", m.kind())))
    };
    let (v, d) = (need(&victim)?, need(&designer)?);
    let data = loaded.data()?;
    let o = eval::fgsm(&d, &v, &data, &loaded.config.evaluation, loaded.seed)?;
    let mut run = RunDir::create(out, "attack", &loaded.config.name, loaded.seed, Some(&loaded.text))?;
    run.input(victim_path)?;
    run.input(designer_path)?;
    for (name, bytes) in &o.files {
        run.write(&name.replace("fgsm", "attack"), bytes)?;
    }
    run.write_json("attack.summary.json", &o.summary)?;
    run.finish("attack")?;
    Ok(o)
}

pub fn lesion(model_path: &Path, layer: Option<usize>, loaded: &Loaded, out: &Path) -> Result<EvalOutput> {
    let mut loaded = loaded.clone();
    if layer.is_some() {
        loaded.config.evaluation.lesion_layer = layer;
    }
    let model = TrainedModel::load(model_path)?;
    let net = model
        .network()
        .ok_or_else(|| CliError::Usage("lesion studies need a dense model".into()))?;
    let data = loaded.data()?;
    let o = eval::lesion(net, &data, &loaded.config.evaluation)?;
    let mut run = RunDir::create(out, "lesion", &loaded.config.name, loaded.seed, Some(&loaded.text))?;
    run.input(model_path)?;
    let mut summary = BTreeMap::new();
    write_eval(&mut run, &o, &mut summary)?;
    run.write_json("lesion.summary.json", &summary)?;
    run.finish("lesion")?;
    Ok(o)
}

// ------------------------------------------------------------------- scaling

/// One training run of the scaling study.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingRow {
    pub model: String,
    pub per_class: usize,
    pub samples: usize,
    pub repeat: usize,
    pub seed: u64,
    pub test_error: f64,
    pub support_vectors: Option<usize>,
    pub neurons: usize,
    pub seconds: f64,
}

pub fn scaling(loaded: &Loaded, out: &Path) -> Result<Vec<ScalingRow>> {
    let cfg = &loaded.config;
    let spec = cfg
        .scaling
        .as_ref()
        .ok_or_else(|| CliError::Usage("the config has no [scaling] section".into()))?;
    let full = data::load(
        &DatasetSpec {
            per_class: None,
            ..cfg.dataset.clone()
        },
        cfg.dataset.seed.unwrap_or(loaded.seed),
    )?;
    let test = full.primary_test();
    let hp = cfg.enn();
    let mut rows = Vec::new();
    for &size in &spec.sizes {
        for rep in 0..spec.repeats {
            let seed = rng::derive(loaded.seed, "scaling", &[size as u64, rep as u64]);
            let train = balanced_subsample(&full.train, size, seed)?;
            let t = Instant::now();
            let m = train_enn(&train, &hp, seed)?;
            rows.push(ScalingRow {
                model: "enn".into(),
                per_class: size,
                samples: train.len(),
                repeat: rep,
                seed,
                test_error: m.network.error_rate(test.x.view(), &test.y)?,
                support_vectors: Some(count_support_vectors(&m)),
                neurons: m.network.neuron_count(),
                seconds: t.elapsed().as_secs_f64(),
            });
            if spec.baseline {
                let gcfg = GdnConfig {
                    hidden_widths: GdnConfig::matching(&m.network).hidden_widths,
                    ..cfg.gdn()
                };
                let t = Instant::now();
                let g = train_gdn(&train, &gcfg, seed)?;
                rows.push(ScalingRow {
                    model: "gdn".into(),
                    per_class: size,
                    samples: train.len(),
                    repeat: rep,
                    seed,
                    test_error: g.network.error_rate(test.x.view(), &test.y)?,
                    support_vectors: None,
                    neurons: g.network.neuron_count(),
                    seconds: t.elapsed().as_secs_f64(),
                });
            }
        }
    }

    let mut run = RunDir::create(out, "scaling", &cfg.name, loaded.seed, Some(&loaded.text))?;
    let mut t = Table::new(&[
        "model",
        "per_class",
        "samples",
        "repeat",
        "seed",
        "test_error",
        "support_vectors",
        "neurons",
    ]);
    let mut w = Table::new(&["model", "per_class", "repeat", "seconds"]);
    for r in &rows {
        t.push(vec![
            r.model.clone(),
            r.per_class.to_string(),
            r.samples.to_string(),
            r.repeat.to_string(),
            r.seed.to_string(),
            num(r.test_error),
            r.support_vectors.map_or_else(String::new, |v| v.to_string()),
            r.neurons.to_string(),
        ]);
        w.push(vec![r.model.clone(), r.per_class.to_string(), r.repeat.to_string(), num(r.seconds)]);
    }
    run.write("scaling.csv", &t.to_csv())?;
    run.write_volatile("timings.csv", &w.to_csv())?;
    run.finish("scaling")?;
    Ok(rows)
}

// -------------------------------------------------------------------- report

/// Summary statistics of every numeric column of every CSV in `dir`
/// (except the report's own output), written to `report.csv`.
pub fn report(dir: &Path) -> Result<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .filter(|p| p.file_name().is_some_and(|n| n != "report.csv" && n != "timings.csv"))
        .collect();
    files.sort();
    let mut t = Table::new(&["file", "column", "count", "mean", "median", "min", "max"]);
    let mut run = RunDir::create(dir, "report", "report", 0, None)?;
    for path in &files {
        run.input(path)?;
        let mut r = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
        let header: Vec<String> = r
            .headers()
            .map_err(|e| CliError::csv(path, e))?
            .iter()
            .map(String::from)
            .collect();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
        let mut numeric = vec![true; header.len()];
        for rec in r.records() {
            let rec = rec.map_err(|e| CliError::csv(path, e))?;
            for (k, cell) in rec.iter().enumerate() {
                if cell.is_empty() {
                    continue;
                }
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => cols[k].push(v),
                    Ok(_) => {}
                    Err(_) => numeric[k] = false,
                }
            }
        }
        let name = path.file_name().expect("file").to_string_lossy().to_string();
        for (k, h) in header.iter().enumerate() {
            if !numeric[k] || cols[k].is_empty() {
                continue;
            }
            let v = &cols[k];
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let med = enn_core::robustness::median(v).expect("nonempty");
            t.push(vec![
                name.clone(),
                h.clone(),
                v.len().to_string(),
                num(mean),
                num(med),
                num(min),
                num(max),
            ]);
        }
    }
    let path = run.write("report.csv", &t.to_csv())?;
    run.finish("report")?;
    Ok(path)
}
