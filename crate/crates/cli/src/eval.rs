//! Evaluations of a trained model. Each produces CSV tables and a few
//! summary numbers.

use std::collections::BTreeMap;

use enn_core::analysis::{firing_matrix, lesion_study, weight_stats};
use enn_core::datasets::{decode_tsp, LabeledDataset};
use enn_core::deliberation::deliberate_classify;
use enn_core::model::{classify, Network};
use enn_core::rng;
use enn_core::robustness::{default_epsilon_grid, fgsm_sweep, median, noise_curve, white_noise_boundary_distances};
use enn_core::tasks::{
    cart_build, nearest_neighbor_route, oracle_bdt_step, oracle_orientation, oracle_tsp_step, rollout_bdt,
    rollout_tsp,
};
use rand::seq::index;
use serde_json::{json, Value};

use crate::config::{EvaluationSpec, EVALUATIONS};
use crate::data::ExperimentData;
use crate::error::{CliError, Result};
use crate::models::TrainedModel;

/// Output of one evaluation: named CSV files and summary values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalOutput {
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: BTreeMap<String, Value>,
}

/// Rows of string cells written as CSV with a header.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Table {
            header: header.iter().map(|s| s.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

/// Shortest text that reads back as the same `f64`.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn json_num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(num(v))
    }
}

fn need_network<'a>(model: &'a TrainedModel, evaluation: &str) -> Result<&'a Network> {
    model.network().ok_or_else(|| {
        CliError::Usage(format!("evaluation {evaluation} needs a dense model, not a {} model", model.kind()))
    })
}

/// Deterministic subset of `data`: `limit` rows chosen with `seed`, in order.
pub fn subset(data: &LabeledDataset, limit: Option<usize>, seed: u64) -> LabeledDataset {
    match limit {
        Some(k) if k < data.len() => {
            let mut r = rng::rng(rng::derive(seed, "eval-subset", &[]));
            let mut idx = index::sample(&mut r, data.len(), k).into_vec();
            idx.sort_unstable();
            data.subset(&idx, &data.meta.split)
        }
        _ => data.clone(),
    }
}

pub fn run(name: &str, model: &TrainedModel, data: &ExperimentData, spec: &EvaluationSpec, seed: u64) -> Result<EvalOutput> {
    match name {
        "error" => error(model, data, spec),
        "tsp" => tsp(need_network(model, name)?, data, spec),
        "bdt" => bdt(need_network(model, name)?, data, spec),
        "oracle" => oracle(need_network(model, name)?, data, spec),
        "noise" => noise(need_network(model, name)?, data, spec, seed),
        "fgsm" => {
            let net = need_network(model, name)?;
            fgsm(net, net, data, spec, seed)
        }
        "boundary" => boundary(need_network(model, name)?, data, spec, seed),
        "lesion" => lesion(need_network(model, name)?, data, spec),
        "firing" => firing(model.dense_part(), model, data, spec, seed),
        "weights" => Ok(weights(model.dense_part())),
        other => Err(CliError::unknown("evaluation", other, EVALUATIONS)),
    }
}

fn error(model: &TrainedModel, data: &ExperimentData, spec: &EvaluationSpec) -> Result<EvalOutput> {
    let mut t = Table::new(&["split", "samples", "errors", "error_rate"]);
    let mut out = EvalOutput::default();
    let mut sets = vec![("train".to_string(), &data.train)];
    sets.extend(data.tests.iter().filter(|(n, _)| n != "train").map(|(n, d)| (n.clone(), d)));
    for (name, d) in sets {
        let rate = match model {
            TrainedModel::Cenn(m) => m.error_rate(d)?,
            _ => {
                let net = model.network().expect("dense model");
                if spec.deliberate {
                    let mut wrong = 0usize;
                    for (i, row) in d.x.rows().into_iter().enumerate() {
                        let x = row.to_vec();
                        if deliberate_classify(net, &x, None, &spec.deliberation)?.class != d.y[i] {
                            wrong += 1;
                        }
                    }
                    wrong as f64 / d.len().max(1) as f64
                } else {
                    net.error_rate(d.x.view(), &d.y)?
                }
            }
        };
        let errors = (rate * d.len() as f64).round() as usize;
        t.push(vec![name.clone(), d.len().to_string(), errors.to_string(), num(rate)]);
        out.summary.insert(format!("error_rate.{name}"), json_num(rate));
    }
    out.files.push(("error.csv".into(), t.to_csv()));
    Ok(out)
}

fn tsp(net: &Network, data: &ExperimentData, spec: &EvaluationSpec) -> Result<EvalOutput> {
    if data.tsp_maps.is_empty() {
        return Err(CliError::Usage("the tsp evaluation needs the tsp dataset".into()));
    }
    let mut t = Table::new(&["map", "start", "network_length", "nearest_neighbor_length", "delta"]);
    let (mut sum, mut max_abs) = (0.0, 0.0f64);
    for (k, inst) in data.tsp_maps.iter().enumerate() {
        let route = rollout_tsp(
            |x, mask| Ok(deliberate_classify(net, x, Some(mask), &spec.deliberation)?.class),
            inst,
        )?;
        let nn = nearest_neighbor_route(inst);
        let delta = route.length - nn.length;
        sum += delta;
        max_abs = max_abs.max(delta.abs());
        t.push(vec![k.to_string(), inst.current.to_string(), num(route.length), num(nn.length), num(delta)]);
    }
    let mut out = EvalOutput::default();
    out.files.push(("tsp.csv".into(), t.to_csv()));
    out.summary.insert("tsp.maps".into(), json!(data.tsp_maps.len()));
    out.summary.insert("tsp.mean_delta".into(), json_num(sum / data.tsp_maps.len() as f64));
    out.summary.insert("tsp.max_abs_delta".into(), json_num(max_abs));
    Ok(out)
}

fn bdt(net: &Network, data: &ExperimentData, spec: &EvaluationSpec) -> Result<EvalOutput> {
    if data.bdt_tables.is_empty() {
        return Err(CliError::Usage("the bdt evaluation needs the bdt dataset".into()));
    }
    let mut t = Table::new(&["table", "network_avg_depth", "cart_avg_depth", "delta", "reproduces"]);
    let mut sum = 0.0;
    let mut all_reproduce = true;
    for (k, table) in data.bdt_tables.iter().enumerate() {
        let tree = rollout_bdt(
            |x, mask| Ok(deliberate_classify(net, x, Some(mask), &spec.deliberation)?.class),
            &table.labels,
        )?;
        let cart = cart_build(&table.labels)?;
        let delta = tree.avg_depth - cart.avg_depth;
        let ok = tree.reproduces(&table.labels);
        all_reproduce &= ok;
        sum += delta;
        t.push(vec![
            k.to_string(),
            num(tree.avg_depth),
            num(cart.avg_depth),
            num(delta),
            ok.to_string(),
        ]);
    }
    let mut out = EvalOutput::default();
    out.files.push(("bdt.csv".into(), t.to_csv()));
    out.summary.insert("bdt.tables".into(), json!(data.bdt_tables.len()));
    out.summary.insert("bdt.mean_delta".into(), json_num(sum / data.bdt_tables.len() as f64));
    out.summary.insert("bdt.all_reproduce".into(), json!(all_reproduce));
    Ok(out)
}

/// Agreement between the network and the hand-written reference rules.
fn oracle(net: &Network, data: &ExperimentData, spec: &EvaluationSpec) -> Result<EvalOutput> {
    let mut t = Table::new(&["task", "item", "network", "oracle", "agree"]);
    let push = |t: &mut Table, task: &str, item: String, a: usize, b: usize| {
        t.push(vec![task.into(), item, a.to_string(), b.to_string(), (a == b).to_string()]);
    };
    let limit = spec.oracle_samples;
    if !data.tsp_maps.is_empty() {
        // Steps along the network's own tours.
        let mut steps = Vec::new();
        for (k, inst) in data.tsp_maps.iter().enumerate() {
            if steps.len() >= limit {
                break;
            }
            rollout_tsp(
                |x, mask| {
                    let c = deliberate_classify(net, x, Some(mask), &spec.deliberation)?.class;
                    let (d, cur) = decode_tsp(x)?;
                    steps.push((k, cur, c, oracle_tsp_step(&d, cur)));
                    Ok(c)
                },
                inst,
            )?;
        }
        for (k, cur, c, o) in steps.into_iter().take(limit) {
            push(&mut t, "tsp", format!("{k}:{cur}"), c, o);
        }
    } else if !data.bdt_tables.is_empty() {
        for (k, table) in data.bdt_tables.iter().take(limit).enumerate() {
            let c = deliberate_classify(net, &table.features(), None, &spec.deliberation)?.class;
            push(&mut t, "bdt", k.to_string(), c, oracle_bdt_step(&table.labels));
        }
    } else if data.train.meta.generator == "orientation" {
        for (name, d) in &data.tests {
            for (i, row) in d.x.rows().into_iter().enumerate() {
                let x = row.to_vec();
                push(&mut t, name, i.to_string(), classify(net, &x, None)?.class, oracle_orientation(&x));
            }
        }
    } else {
        return Err(CliError::Usage("the oracle evaluation needs the tsp, bdt or orientation dataset".into()));
    }
    let agree = t.rows.iter().filter(|r| r[4] == "true").count();
    let total = t.rows.len();
    let mut out = EvalOutput::default();
    out.files.push(("oracle.csv".into(), t.to_csv()));
    out.summary.insert("oracle.items".into(), json!(total));
    out.summary.insert("oracle.agreements".into(), json!(agree));
    Ok(out)
}

fn noise(net: &Network, data: &ExperimentData, spec: &EvaluationSpec, seed: u64) -> Result<EvalOutput> {
    let d = subset(data.primary_test(), spec.subset, seed);
    let errs = noise_curve(
        net,
        d.x.view(),
        &d.y,
        &spec.noise_sigmas,
        spec.noise_repeats,
        spec.clip,
        rng::derive(seed, "noise", &[]),
    )?;
    let mut t = Table::new(&["sigma", "error_rate"]);
    for (s, e) in spec.noise_sigmas.iter().zip(&errs) {
        t.push(vec![num(*s), num(*e)]);
    }
    let mut out = EvalOutput::default();
    out.files.push(("noise.csv".into(), t.to_csv()));
    out.summary.insert("noise.images".into(), json!(d.len()));
    Ok(out)
}

/// FGSM attack on `victim` with perturbations designed on `designer`.
pub fn fgsm(
    designer: &Network,
    victim: &Network,
    data: &ExperimentData,
    spec: &EvaluationSpec,
    seed: u64,
) -> Result<EvalOutput> {
    let d = subset(data.primary_test(), spec.subset, seed);
    let eps = fgsm_sweep(designer, victim, d.x.view(), &d.y, &default_epsilon_grid(), spec.clip)?;
    let mut t = Table::new(&["image", "label", "epsilon_min"]);
    let mut finite = Vec::new();
    for (i, e) in eps.iter().enumerate() {
        let cell = match e {
            Some(v) => {
                finite.push(*v);
                num(*v)
            }
            None => "misclassified".into(),
        };
        t.push(vec![i.to_string(), d.y[i].to_string(), cell]);
    }
    let mut out = EvalOutput::default();
    out.files.push(("fgsm.csv".into(), t.to_csv()));
    out.summary.insert("fgsm.images".into(), json!(d.len()));
    out.summary.insert("fgsm.attacked".into(), json!(finite.len()));
    out.summary
        .insert("fgsm.median_epsilon_min".into(), median(&finite).map_or(Value::Null, json_num));
    Ok(out)
}

fn boundary(net: &Network, data: &ExperimentData, spec: &EvaluationSpec, seed: u64) -> Result<EvalOutput> {
    let d = subset(data.primary_test(), spec.subset, seed);
    let dist = white_noise_boundary_distances(
        net,
        d.x.view(),
        &d.y,
        spec.boundary_per_image,
        rng::derive(seed, "boundary", &[]),
    )?;
    let mut t = Table::new(&["probe", "l1_distance"]);
    for (k, v) in dist.iter().enumerate() {
        t.push(vec![k.to_string(), num(*v)]);
    }
    let mut out = EvalOutput::default();
    out.files.push(("boundary.csv".into(), t.to_csv()));
    out.summary.insert("boundary.probes".into(), json!(dist.len()));
    out.summary
        .insert("boundary.median_l1_distance".into(), median(&dist).map_or(Value::Null, json_num));
    Ok(out)
}

/// Hidden layers with outgoing weights, or the configured one.
fn lesion_layers(net: &Network, spec: &EvaluationSpec) -> Vec<usize> {
    match spec.lesion_layer {
        Some(l) => vec![l],
        None => (0..net.layers().len().saturating_sub(1)).collect(),
    }
}

pub fn lesion(net: &Network, data: &ExperimentData, spec: &EvaluationSpec) -> Result<EvalOutput> {
    let d = data.primary_test();
    let k = net.output_dim();
    let mut header: Vec<String> = ["layer", "deleted", "neuron", "accuracy"].map(String::from).to_vec();
    header.extend((0..k).map(|c| format!("accuracy_{}", net.class_names()[c])));
    let mut t = Table::new(&header);
    let mut out = EvalOutput::default();
    for layer in lesion_layers(net, spec) {
        let curve = lesion_study(net, layer, d.x.view(), &d.y)?;
        for (step, acc) in curve.overall.iter().enumerate() {
            let neuron = if step == 0 { String::new() } else { curve.order[step - 1].to_string() };
            let mut row = vec![layer.to_string(), step.to_string(), neuron, num(*acc)];
            row.extend(curve.per_class[step].iter().map(|v| num(*v)));
            t.push(row);
        }
        out.summary
            .insert(format!("lesion.layer{layer}.collapse_spread"), json_num(curve.collapse_spread(0.5)));
    }
    out.files.push(("lesion.csv".into(), t.to_csv()));
    Ok(out)
}

fn firing(
    net: &Network,
    model: &TrainedModel,
    data: &ExperimentData,
    spec: &EvaluationSpec,
    seed: u64,
) -> Result<EvalOutput> {
    let d = match model {
        TrainedModel::Cenn(m) => enn_core::conv::conv_features(&m.layers, data.primary_test())?,
        _ => data.primary_test().clone(),
    };
    let f = firing_matrix(net, d.x.view(), spec.firing_stimuli, seed)?;
    let mut header: Vec<String> = vec!["layer".into(), "neuron".into()];
    header.extend(f.stimuli.iter().map(|s| format!("stimulus_{s}")));
    let mut t = Table::new(&header);
    for ((layer, neuron), values) in f.neurons.iter().zip(&f.values) {
        let mut row = vec![layer.to_string(), neuron.to_string()];
        row.extend(values.iter().map(|v| num(*v)));
        t.push(row);
    }
    let mut s = Table::new(&["layer", "population_sparseness"]);
    let mut out = EvalOutput::default();
    for (layer, v) in f.population_sparseness.iter().enumerate() {
        s.push(vec![layer.to_string(), num(*v)]);
        out.summary.insert(format!("firing.layer{layer}.population_sparseness"), json_num(*v));
    }
    out.files.push(("firing.csv".into(), t.to_csv()));
    out.files.push(("sparseness.csv".into(), s.to_csv()));
    Ok(out)
}

pub fn weights(net: &Network) -> EvalOutput {
    let stats = weight_stats(net);
    let mut t = Table::new(&["layer", "count", "min", "max", "excess_kurtosis", "sparsity"]);
    let mut h = Table::new(&["layer", "bin", "lower", "upper", "count"]);
    let mut out = EvalOutput::default();
    for s in &stats {
        let kurt = s.excess_kurtosis.map_or_else(String::new, num);
        t.push(vec![
            s.layer.to_string(),
            s.count.to_string(),
            num(s.min),
            num(s.max),
            kurt,
            num(s.sparsity),
        ]);
        let width = (s.max - s.min) / s.histogram.len() as f64;
        for (b, c) in s.histogram.iter().enumerate() {
            h.push(vec![
                s.layer.to_string(),
                b.to_string(),
                num(s.min + b as f64 * width),
                num(s.min + (b + 1) as f64 * width),
                c.to_string(),
            ]);
        }
        out.summary.insert(
            format!("weights.layer{}.excess_kurtosis", s.layer),
            s.excess_kurtosis.map_or(Value::Null, json_num),
        );
    }
    out.files.push(("weights.csv".into(), t.to_csv()));
    out.files.push(("weights_histogram.csv".into(), h.to_csv()));
    out
}

