//! Dataset generators, the MNIST IDX loader and on-disk persistence.
//!
//! Images are 28×28, row-major, row 0 at the top.

use std::collections::HashSet;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use ndarray::{Array2, Axis};
use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

pub const SIDE: usize = 28;
pub const PIXELS: usize = SIDE * SIDE;

/// Environment variable naming the directory that holds MNIST IDX files.
pub const DATA_DIR_ENV: &str = "ENN_DATA_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub generator: String,
    pub seed: u64,
    pub split: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    pub class_names: Vec<String>,
    pub meta: Meta,
}

impl LabeledDataset {
    pub fn new(x: Array2<f64>, y: Vec<usize>, class_names: Vec<String>, meta: Meta) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                actual: y.len(),
            });
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= class_names.len()) {
            return Err(Error::invalid(format!(
                "label {bad} outside {} classes",
                class_names.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features"));
        }
        Ok(Self { x, y, class_names, meta })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes()];
        for &y in &self.y {
            c[y] += 1;
        }
        c
    }

    /// Indices of the samples of each class, in dataset order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_classes()];
        for (i, &y) in self.y.iter().enumerate() {
            out[y].push(i);
        }
        out
    }

    pub fn subset(&self, indices: &[usize], split: &str) -> LabeledDataset {
        LabeledDataset {
            x: self.x.select(Axis(0), indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            class_names: self.class_names.clone(),
            meta: Meta {
                split: split.to_string(),
                ..self.meta.clone()
            },
        }
    }
}

fn meta(generator: &str, seed: u64, split: &str) -> Meta {
    Meta {
        generator: generator.into(),
        seed,
        split: split.into(),
    }
}

fn from_rows(rows: Vec<Vec<f64>>, dim: usize) -> Array2<f64> {
    let n = rows.len();
    Array2::from_shape_vec((n, dim), rows.into_iter().flatten().collect()).expect("rows have equal length")
}

// ---------------------------------------------------------------- logic

/// Output of two-input Boolean function `f` (0..16); bit `2a + b` of `f`.
pub fn boolean_function(f: usize, a: bool, b: bool) -> bool {
    (f >> (2 * a as usize + b as usize)) & 1 == 1
}

pub const BOOLEAN_NAMES: [&str; 16] = [
    "FALSE", "NOR", "B AND NOT A", "NOT A", "A AND NOT B", "NOT B", "XOR", "NAND", "AND", "XNOR",
    "B", "A IMPLIES B", "A", "B IMPLIES A", "OR", "TRUE",
];

/// All 16 two-input Boolean functions on all 4 input pairs: inputs ±2, then a
/// one-hot function index. Class 1 is True.
pub fn gen_logic() -> LabeledDataset {
    let mut rows = Vec::with_capacity(64);
    let mut y = Vec::with_capacity(64);
    // The per-class Ward trees merge input corners in exact ties, so sample
    // order picks the split. With `a` varying fastest the True class splits on
    // `a` and the False class on `b`, and every cross pair stays separable.
    for f in 0..16 {
        for (a, b) in [(false, false), (true, false), (false, true), (true, true)] {
            let mut r = vec![0.0; 18];
            r[0] = if a { 2.0 } else { -2.0 };
            r[1] = if b { 2.0 } else { -2.0 };
            r[2 + f] = 1.0;
            rows.push(r);
            y.push(boolean_function(f, a, b) as usize);
        }
    }
    LabeledDataset::new(from_rows(rows, 18), y, vec!["False".into(), "True".into()], meta("logic", 0, "train"))
        .expect("logic set is well formed")
}

// ---------------------------------------------------------- orientation

pub const HORIZONTAL: usize = 0;
pub const VERTICAL: usize = 1;

fn orientation_classes() -> Vec<String> {
    vec!["horizontal".into(), "vertical".into()]
}

fn line(img: &mut [f64], (r0, c0): (i64, i64), (r1, c1): (i64, i64)) {
    let (dr, dc) = ((r1 - r0).abs(), -(c1 - c0).abs());
    let (sr, sc) = (if r0 < r1 { 1 } else { -1 }, if c0 < c1 { 1 } else { -1 });
    let (mut r, mut c, mut err) = (r0, c0, dr + dc);
    loop {
        img[r as usize * SIDE + c as usize] = 1.0;
        if r == r1 && c == c1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dc {
            err += dc;
            r += sr;
        }
        if e2 <= dr {
            err += dr;
            c += sc;
        }
    }
}

/// A `h`×`w` rectangle with its top-left pixel at (`top`, `left`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub h: usize,
    pub w: usize,
}

impl Rect {
    pub fn label(&self) -> usize {
        if self.w > self.h {
            HORIZONTAL
        } else {
            VERTICAL
        }
    }

    pub fn filled(&self) -> Vec<f64> {
        let mut img = vec![0.0; PIXELS];
        for r in self.top..self.top + self.h {
            img[r * SIDE + self.left..r * SIDE + self.left + self.w].fill(1.0);
        }
        img
    }

    pub fn outline(&self) -> Vec<f64> {
        let mut img = vec![0.0; PIXELS];
        let (b, rgt) = (self.top + self.h - 1, self.left + self.w - 1);
        for c in self.left..=rgt {
            img[self.top * SIDE + c] = 1.0;
            img[b * SIDE + c] = 1.0;
        }
        for r in self.top..=b {
            img[r * SIDE + self.left] = 1.0;
            img[r * SIDE + rgt] = 1.0;
        }
        img
    }

    /// Bresenham diagonal: top-left to bottom-right, or bottom-left to top-right.
    pub fn diagonal(&self, anti: bool) -> Vec<f64> {
        let mut img = vec![0.0; PIXELS];
        let (t, l) = (self.top as i64, self.left as i64);
        let (b, r) = (t + self.h as i64 - 1, l + self.w as i64 - 1);
        if anti {
            line(&mut img, (b, l), (t, r));
        } else {
            line(&mut img, (t, l), (b, r));
        }
        img
    }
}

pub struct OrientationData {
    pub train: LabeledDataset,
    pub lines: LabeledDataset,
    pub diagonals: LabeledDataset,
    pub boxes: LabeledDataset,
    pub rects: Vec<Rect>,
}

pub const MAX_PLACEMENTS: usize = 50;

/// The 56 full-length stripes for training, and for every non-square shape up
/// to 50 distinct random placements drawn as outlines and as one random
/// diagonal. The line set is the diagonal subset with width or height 1.
pub fn gen_orientation(seed: u64) -> LabeledDataset {
    gen_orientation_sets(seed).train
}

pub fn gen_orientation_sets(seed: u64) -> OrientationData {
    let mut rows = Vec::with_capacity(56);
    let mut y = Vec::with_capacity(56);
    for r in 0..SIDE {
        rows.push(Rect { top: r, left: 0, h: 1, w: SIDE }.filled());
        y.push(HORIZONTAL);
    }
    for c in 0..SIDE {
        rows.push(Rect { top: 0, left: c, h: SIDE, w: 1 }.filled());
        y.push(VERTICAL);
    }
    let train = LabeledDataset::new(from_rows(rows, PIXELS), y, orientation_classes(), meta("orientation", seed, "train"))
        .expect("well formed");

    let mut r = rng::rng(rng::derive(seed, "orientation-test", &[]));
    let mut rects = Vec::new();
    let mut anti = Vec::new();
    for h in 1..=SIDE {
        for w in 1..=SIDE {
            if h == w {
                continue;
            }
            let (rows_free, cols_free) = (SIDE + 1 - h, SIDE + 1 - w);
            let total = rows_free * cols_free;
            let take = total.min(MAX_PLACEMENTS);
            let mut picks = index::sample(&mut r, total, take).into_vec();
            picks.sort_unstable();
            for p in picks {
                rects.push(Rect { top: p / cols_free, left: p % cols_free, h, w });
                anti.push(r.random::<bool>());
            }
        }
    }
    let labels: Vec<usize> = rects.iter().map(Rect::label).collect();
    let build = |imgs: Vec<Vec<f64>>, y: Vec<usize>, split: &str| {
        LabeledDataset::new(from_rows(imgs, PIXELS), y, orientation_classes(), meta("orientation", seed, split))
            .expect("well formed")
    };
    let diagonals = build(
        rects.iter().zip(&anti).map(|(q, &a)| q.diagonal(a)).collect(),
        labels.clone(),
        "diagonals",
    );
    let boxes = build(rects.iter().map(Rect::outline).collect(), labels.clone(), "boxes");
    let line_idx: Vec<usize> = (0..rects.len()).filter(|&i| rects[i].h == 1 || rects[i].w == 1).collect();
    let lines = diagonals.subset(&line_idx, "lines");
    OrientationData {
        train,
        lines,
        diagonals,
        boxes,
        rects,
    }
}

// ----------------------------------------------------------- rectangles

pub const RECT_MIN: usize = 3;
pub const RECT_MAX: usize = 26;

fn rectangles_split(n: usize, seed: u64, split: &str) -> LabeledDataset {
    let mut r = rng::rng(seed);
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let (mut a, mut b) = (0, 0);
        while a == b {
            a = r.random_range(RECT_MIN..=RECT_MAX);
            b = r.random_range(RECT_MIN..=RECT_MAX);
        }
        let (long, short) = (a.max(b), a.min(b));
        let (h, w) = if label == HORIZONTAL { (short, long) } else { (long, short) };
        let top = r.random_range(0..=SIDE - h);
        let left = r.random_range(0..=SIDE - w);
        rows.push(Rect { top, left, h, w }.filled());
        y.push(label);
    }
    LabeledDataset::new(from_rows(rows, PIXELS), y, orientation_classes(), meta("rectangles", seed, split))
        .expect("well formed")
}

/// Filled axis-aligned non-square white rectangles on black; classes alternate
/// so the split is balanced exactly.
pub fn gen_rectangles(n_train: usize, n_test: usize, seed: u64) -> (LabeledDataset, LabeledDataset) {
    let mut train = rectangles_split(n_train, rng::derive(seed, "rectangles", &[0]), "train");
    let mut test = rectangles_split(n_test, rng::derive(seed, "rectangles", &[1]), "test");
    train.meta.seed = seed;
    test.meta.seed = seed;
    (train, test)
}

// ------------------------------------------------------------------ TSP

pub const CITIES: usize = 10;
pub const TSP_FEATURES: usize = CITIES * (CITIES - 1) / 2 + CITIES;
pub const VISITED_DISTANCE: f64 = 10.0;
pub const CURRENT_MARKER: f64 = 10.0;

pub type DistanceMatrix = [[f64; CITIES]; CITIES];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TspInstance {
    pub coords: Vec<[f64; 2]>,
    pub visited: Vec<bool>,
    pub current: usize,
}

impl TspInstance {
    pub fn distances(&self) -> DistanceMatrix {
        let mut d = [[0.0; CITIES]; CITIES];
        for i in 0..CITIES {
            for j in 0..CITIES {
                let (a, b) = (self.coords[i], self.coords[j]);
                d[i][j] = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            }
        }
        d
    }

    /// Distance matrix as the networks see it: visited cities sit at
    /// distance 10 from everything.
    pub fn masked_distances(&self) -> DistanceMatrix {
        let mut d = self.distances();
        for v in 0..CITIES {
            if self.visited[v] {
                for k in 0..CITIES {
                    if k != v {
                        d[v][k] = VISITED_DISTANCE;
                        d[k][v] = VISITED_DISTANCE;
                    }
                }
            }
        }
        d
    }

    pub fn encode(&self) -> Vec<f64> {
        encode_tsp(&self.masked_distances(), self.current)
    }
}

/// 45 upper-triangle distances (row-major, i < j) then the current city one-hot
/// scaled by 10.
pub fn encode_tsp(d: &DistanceMatrix, current: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(TSP_FEATURES);
    for i in 0..CITIES {
        for j in i + 1..CITIES {
            v.push(d[i][j]);
        }
    }
    for c in 0..CITIES {
        v.push(if c == current { CURRENT_MARKER } else { 0.0 });
    }
    v
}

pub fn decode_tsp(v: &[f64]) -> Result<(DistanceMatrix, usize)> {
    if v.len() != TSP_FEATURES {
        return Err(Error::DimensionMismatch {
            expected: TSP_FEATURES,
            actual: v.len(),
        });
    }
    let mut d = [[0.0; CITIES]; CITIES];
    let mut k = 0;
    for i in 0..CITIES {
        for j in i + 1..CITIES {
            d[i][j] = v[k];
            d[j][i] = v[k];
            k += 1;
        }
    }
    let marker = &v[k..];
    let current = (0..CITIES)
        .find(|&c| marker[c] > 0.0)
        .ok_or_else(|| Error::invalid("no current-city marker"))?;
    Ok((d, current))
}

/// Index of feature `d(i, j)` in the encoding.
pub fn tsp_pair_index(i: usize, j: usize) -> usize {
    let (a, b) = (i.min(j), i.max(j));
    a * CITIES - a * (a + 1) / 2 + (b - a - 1)
}

pub struct TspData {
    pub train: LabeledDataset,
    pub test: Vec<TspInstance>,
}

fn city_names() -> Vec<String> {
    (0..CITIES).map(|c| format!("city{c}")).collect()
}

/// Training states have one unvisited city left, at distance 0 from the
/// current city; every other distance reads 10.
pub fn gen_tsp_train() -> LabeledDataset {
    let mut rows = Vec::with_capacity(90);
    let mut y = Vec::with_capacity(90);
    for current in 0..CITIES {
        for next in (0..CITIES).filter(|&n| n != current) {
            let mut d = [[VISITED_DISTANCE; CITIES]; CITIES];
            for (i, row) in d.iter_mut().enumerate() {
                row[i] = 0.0;
            }
            d[current][next] = 0.0;
            d[next][current] = 0.0;
            rows.push(encode_tsp(&d, current));
            y.push(next);
        }
    }
    LabeledDataset::new(from_rows(rows, TSP_FEATURES), y, city_names(), meta("tsp", 0, "train")).expect("well formed")
}

pub fn gen_tsp_maps(n: usize, seed: u64) -> Vec<TspInstance> {
    let mut r = rng::rng(seed);
    (0..n)
        .map(|_| {
            let coords = (0..CITIES).map(|_| [r.random::<f64>(), r.random::<f64>()]).collect();
            TspInstance {
                coords,
                visited: vec![false; CITIES],
                current: r.random_range(0..CITIES),
            }
        })
        .collect()
}

pub fn gen_tsp(n_test: usize, seed: u64) -> TspData {
    TspData {
        train: gen_tsp_train(),
        test: gen_tsp_maps(n_test, rng::derive(seed, "tsp-test", &[])),
    }
}

// ------------------------------------------------------------------ BDT

pub const BDT_FEATURES: usize = 10;
pub const TABLE_LEN: usize = 1 << BDT_FEATURES;
pub const BDT_BRANCH_PROB: f64 = 0.7;
pub const BDT_MAX_DEPTH: usize = 7;

/// Value of feature `f` in truth-table row `t`.
pub fn feature_value(t: usize, f: usize) -> usize {
    (t >> f) & 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum GenTree {
    Leaf(u8),
    Split { feature: usize, low: Box<GenTree>, high: Box<GenTree> },
}

impl GenTree {
    pub fn eval(&self, t: usize) -> u8 {
        match self {
            GenTree::Leaf(v) => *v,
            GenTree::Split { feature, low, high } => {
                if feature_value(t, *feature) == 1 {
                    high.eval(t)
                } else {
                    low.eval(t)
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthTableInstance {
    pub labels: Vec<u8>,
    pub tree: Option<GenTree>,
}

impl TruthTableInstance {
    pub fn features(&self) -> Vec<f64> {
        self.labels.iter().map(|&l| l as f64).collect()
    }
}

fn random_tree(r: &mut rng::Rng, depth: usize, used: &mut Vec<usize>) -> GenTree {
    if depth < BDT_MAX_DEPTH && r.random::<f64>() < BDT_BRANCH_PROB {
        let free: Vec<usize> = (0..BDT_FEATURES).filter(|f| !used.contains(f)).collect();
        let feature = free[r.random_range(0..free.len())];
        used.push(feature);
        let low = random_tree(r, depth + 1, used);
        let high = random_tree(r, depth + 1, used);
        used.pop();
        GenTree::Split {
            feature,
            low: Box::new(low),
            high: Box::new(high),
        }
    } else {
        GenTree::Leaf(r.random_range(0..2))
    }
}

pub struct BdtData {
    pub train: LabeledDataset,
    pub test: Vec<TruthTableInstance>,
}

/// The 20 tables split purely by one feature: class `f`, label equal to the
/// feature or to its negation.
pub fn gen_bdt_train() -> LabeledDataset {
    let mut rows = Vec::with_capacity(20);
    let mut y = Vec::with_capacity(20);
    for f in 0..BDT_FEATURES {
        for flip in [0, 1] {
            rows.push((0..TABLE_LEN).map(|t| (feature_value(t, f) ^ flip) as f64).collect());
            y.push(f);
        }
    }
    let names = (0..BDT_FEATURES).map(|f| format!("x{f}")).collect();
    LabeledDataset::new(from_rows(rows, TABLE_LEN), y, names, meta("bdt", 0, "train")).expect("well formed")
}

/// Unique truth tables of random trees (branch probability 0.7, depth ≤ 7).
pub fn gen_bdt_tables(n: usize, seed: u64) -> Vec<TruthTableInstance> {
    let mut r = rng::rng(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let tree = random_tree(&mut r, 0, &mut Vec::new());
        let labels: Vec<u8> = (0..TABLE_LEN).map(|t| tree.eval(t)).collect();
        if seen.insert(labels.clone()) {
            out.push(TruthTableInstance { labels, tree: Some(tree) });
        }
    }
    out
}

pub fn gen_bdt(n_test: usize, seed: u64) -> BdtData {
    BdtData {
        train: gen_bdt_train(),
        test: gen_bdt_tables(n_test, rng::derive(seed, "bdt-test", &[])),
    }
}

// ---------------------------------------------------------------- MNIST

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Idx {
            offset,
            message: "header ends early".into(),
        })
}

/// Parse an IDX file: returns the dimensions and the raw payload.
pub fn parse_idx(bytes: &[u8], magic: u32, path: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
    let found = be_u32(bytes, 0)?;
    if found != magic {
        return Err(Error::Idx {
            offset: 0,
            message: format!("magic {found}, expected {magic}"),
        });
    }
    let ndim = (magic & 0xff) as usize;
    let dims = (0..ndim)
        .map(|k| be_u32(bytes, 4 + 4 * k).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * ndim;
    let expected = header + dims.iter().product::<usize>();
    if bytes.len() != expected {
        return Err(Error::Truncated {
            path: path.display().to_string(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok((dims, bytes[header..].to_vec()))
}

/// Load an image/label IDX pair (plain or gzip) with pixels scaled to [0, 1].
pub fn load_mnist_idx(image_path: &Path, label_path: &Path) -> Result<LabeledDataset> {
    let (idims, pixels) = parse_idx(&read_maybe_gz(image_path)?, IMAGE_MAGIC, image_path)?;
    let (ldims, labels) = parse_idx(&read_maybe_gz(label_path)?, LABEL_MAGIC, label_path)?;
    if idims[0] != ldims[0] {
        return Err(Error::Idx {
            offset: 4,
            message: format!("{} images but {} labels", idims[0], ldims[0]),
        });
    }
    let d = idims[1] * idims[2];
    let x = Array2::from_shape_vec((idims[0], d), pixels.iter().map(|&p| p as f64 / 255.0).collect())
        .expect("size checked");
    let y = labels.iter().map(|&l| l as usize).collect();
    let names = (0..10).map(|d| d.to_string()).collect();
    let split = image_path
        .file_name()
        .map(|n| n.to_string_lossy().split('-').next().unwrap_or("").to_string())
        .unwrap_or_default();
    LabeledDataset::new(x, y, names, meta("mnist", 0, &split))
}

fn idx_file(dir: &Path, stem: &str) -> PathBuf {
    let gz = dir.join(format!("{stem}.gz"));
    if gz.exists() {
        gz
    } else {
        dir.join(stem)
    }
}

/// Load `train-*` and `t10k-*` IDX pairs from a directory.
pub fn load_mnist_dir(dir: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    let train = load_mnist_idx(
        &idx_file(dir, "train-images-idx3-ubyte"),
        &idx_file(dir, "train-labels-idx1-ubyte"),
    )?;
    let test = load_mnist_idx(
        &idx_file(dir, "t10k-images-idx3-ubyte"),
        &idx_file(dir, "t10k-labels-idx1-ubyte"),
    )?;
    Ok((train, test))
}

/// Exactly `n_per_class` samples of every class, kept in original order.
pub fn balanced_subsample(ds: &LabeledDataset, n_per_class: usize, seed: u64) -> Result<LabeledDataset> {
    let mut r = rng::rng(seed);
    let mut keep = Vec::with_capacity(n_per_class * ds.n_classes());
    for (c, mut idx) in ds.class_indices().into_iter().enumerate() {
        if idx.len() < n_per_class {
            return Err(Error::invalid(format!(
                "class {c} has {} samples, {n_per_class} requested",
                idx.len()
            )));
        }
        idx.shuffle(&mut r);
        keep.extend_from_slice(&idx[..n_per_class]);
    }
    keep.sort_unstable();
    let mut out = ds.subset(&keep, &ds.meta.split);
    out.meta.seed = seed;
    Ok(out)
}

/// Per-class split into (train, held out) with `holdout` of each class held out.
pub fn stratified_split(ds: &LabeledDataset, holdout: f64, seed: u64) -> (LabeledDataset, LabeledDataset) {
    let mut r = rng::rng(seed);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for mut idx in ds.class_indices() {
        idx.shuffle(&mut r);
        let k = ((idx.len() as f64) * holdout).round() as usize;
        let k = k.min(idx.len().saturating_sub(1));
        b.extend_from_slice(&idx[..k]);
        a.extend_from_slice(&idx[k..]);
    }
    a.sort_unstable();
    b.sort_unstable();
    (ds.subset(&a, "train"), ds.subset(&b, "validation"))
}

// ---------------------------------------------------------- persistence

const DATASET_MAGIC: &[u8; 8] = b"ENNDATA1";
const DATASET_FORMAT: &str = "enn-dataset";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub schema_version: u32,
    pub meta: Meta,
    pub samples: usize,
    pub features: usize,
    pub class_names: Vec<String>,
    pub class_counts: Vec<usize>,
    pub sha256: String,
    pub file: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Binary layout: magic, sample and feature counts (u64 LE), features as f64
/// LE row-major, labels as u32 LE.
pub fn encode_dataset(ds: &LabeledDataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + ds.x.len() * 8 + ds.len() * 4);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    out.extend_from_slice(&(ds.n_features() as u64).to_le_bytes());
    for v in ds.x.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &y in &ds.y {
        out.extend_from_slice(&(y as u32).to_le_bytes());
    }
    out
}

/// Write `<name>.bin` and `<name>.manifest.json` into `dir`.
pub fn save_dataset(ds: &LabeledDataset, dir: &Path, name: &str) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bytes = encode_dataset(ds);
    let file = format!("{name}.bin");
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        schema_version: crate::model::SCHEMA_VERSION,
        meta: ds.meta.clone(),
        samples: ds.len(),
        features: ds.n_features(),
        class_names: ds.class_names.clone(),
        class_counts: ds.class_counts(),
        sha256: sha256_hex(&bytes),
        file: file.clone(),
    };
    let bin = dir.join(&file);
    fs::write(&bin, &bytes).map_err(|e| Error::io(&bin, e))?;
    let mpath = dir.join(format!("{name}.manifest.json"));
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&mpath, text + "\n").map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}

pub fn load_dataset(dir: &Path, name: &str) -> Result<LabeledDataset> {
    let mpath = dir.join(format!("{name}.manifest.json"));
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(crate::model::parse_error)?;
    crate::model::check_schema(&value, DATASET_FORMAT)?;
    let manifest: DatasetManifest = serde_json::from_value(value).map_err(crate::model::parse_error)?;
    let bin = dir.join(&manifest.file);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if sha256_hex(&bytes) != manifest.sha256 {
        return Err(Error::invalid(format!("checksum mismatch for {}", bin.display())));
    }
    let (n, d) = (manifest.samples, manifest.features);
    let expected = 24 + n * d * 8 + n * 4;
    if bytes.len() != expected || &bytes[..8] != DATASET_MAGIC {
        return Err(Error::Truncated {
            path: bin.display().to_string(),
            expected,
            actual: bytes.len(),
        });
    }
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let x = Array2::from_shape_fn((n, d), |(i, j)| f64_at(24 + (i * d + j) * 8));
    let base = 24 + n * d * 8;
    let y = (0..n)
        .map(|i| u32::from_le_bytes(bytes[base + 4 * i..base + 4 * i + 4].try_into().expect("4 bytes")) as usize)
        .collect();
    LabeledDataset::new(x, y, manifest.class_names, manifest.meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logic_encoding() {
        let ds = gen_logic();
        assert_eq!(ds.len(), 64);
        let and = 8;
        assert_eq!(BOOLEAN_NAMES[and], "AND");
        let row = 4 * and + 3;
        assert_eq!(&ds.x.row(row).to_vec()[..2], &[2.0, 2.0]);
        assert_eq!(ds.x[[row, 2 + and]], 1.0);
        assert_eq!(ds.y[row], 1);
        for r in ds.x.rows() {
            assert_eq!(r.iter().skip(2).sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn orientation_shapes() {
        let o = gen_orientation_sets(1);
        assert_eq!(o.train.len(), 56);
        for q in &o.rects {
            assert_ne!(q.h, q.w);
        }
        let mut seen = HashSet::new();
        for q in &o.rects {
            assert!(seen.insert(*q));
        }
        assert!(o.lines.len() > 0 && o.lines.len() < o.diagonals.len());
        // Every outline's bounding box is the rectangle itself.
        let q = o.rects[0];
        let img = q.outline();
        let lit: Vec<usize> = (0..PIXELS).filter(|&p| img[p] == 1.0).collect();
        assert_eq!(lit.iter().map(|p| p / SIDE).min().unwrap(), q.top);
        assert_eq!(lit.iter().map(|p| p % SIDE).max().unwrap(), q.left + q.w - 1);
    }

    #[test]
    fn diagonal_touches_both_corners() {
        let q = Rect { top: 2, left: 3, h: 5, w: 9 };
        let d = q.diagonal(false);
        assert_eq!(d[2 * SIDE + 3], 1.0);
        assert_eq!(d[6 * SIDE + 11], 1.0);
        let a = q.diagonal(true);
        assert_eq!(a[6 * SIDE + 3], 1.0);
        assert_eq!(a[2 * SIDE + 11], 1.0);
        // One lit pixel per column of the wider side.
        assert_eq!(d.iter().sum::<f64>(), 9.0);
    }

    #[test]
    fn rectangles_balanced() {
        let (train, test) = gen_rectangles(101, 10, 4);
        assert_eq!(train.len(), 101);
        assert_eq!(test.len(), 10);
        let c = train.class_counts();
        assert!(c[0].abs_diff(c[1]) <= 1);
    }

    #[test]
    fn tsp_round_trip() {
        let maps = gen_tsp_maps(3, 9);
        let mut m = maps[0].clone();
        m.visited[4] = true;
        let v = m.encode();
        assert_eq!(v.len(), 55);
        let (d, cur) = decode_tsp(&v).unwrap();
        assert_eq!(cur, m.current);
        let truth = m.distances();
        for i in 0..CITIES {
            for j in 0..CITIES {
                if i != j && i != 4 && j != 4 {
                    assert_eq!(d[i][j], truth[i][j]);
                }
            }
        }
        assert_eq!(tsp_pair_index(0, 1), 0);
        assert_eq!(tsp_pair_index(8, 9), 44);
        assert_eq!(tsp_pair_index(3, 1), tsp_pair_index(1, 3));
    }

    #[test]
    fn tsp_train_forced_labels() {
        let ds = gen_tsp_train();
        assert_eq!(ds.len(), 90);
        for (row, &y) in ds.x.rows().into_iter().zip(&ds.y) {
            let (d, cur) = decode_tsp(row.as_slice().unwrap()).unwrap();
            let zero: Vec<usize> = (0..CITIES).filter(|&k| k != cur && d[cur][k] == 0.0).collect();
            assert_eq!(zero, vec![y]);
        }
    }

    #[test]
    fn bdt_sets() {
        let train = gen_bdt_train();
        assert_eq!((train.len(), train.n_features()), (20, 1024));
        let tables = gen_bdt_tables(200, 3);
        let set: HashSet<_> = tables.iter().map(|t| t.labels.clone()).collect();
        assert_eq!(set.len(), 200);
        for t in &tables {
            let tree = t.tree.as_ref().unwrap();
            assert!((0..TABLE_LEN).all(|i| tree.eval(i) == t.labels[i]));
        }
    }

    #[test]
    fn idx_errors() {
        let p = Path::new("x");
        let mut bytes = vec![0, 0, 8, 1, 0, 0, 0, 3, 1, 2];
        assert!(matches!(
            parse_idx(&bytes, LABEL_MAGIC, p),
            Err(Error::Truncated { expected: 11, actual: 10, .. })
        ));
        bytes.push(7);
        let (dims, payload) = parse_idx(&bytes, LABEL_MAGIC, p).unwrap();
        assert_eq!((dims, payload), (vec![3], vec![1, 2, 7]));
        assert!(matches!(parse_idx(&bytes, IMAGE_MAGIC, p), Err(Error::Idx { offset: 0, .. })));
    }

    #[test]
    fn subsample_contract() {
        let (train, _) = gen_rectangles(40, 0, 1);
        let one = balanced_subsample(&train, 1, 5).unwrap();
        assert_eq!(one.class_counts(), vec![1, 1]);
        let again = balanced_subsample(&train, 1, 5).unwrap();
        assert_eq!(one, again);
        let full = balanced_subsample(&train, 20, 5).unwrap();
        assert_eq!(full.x, train.x);
        assert!(balanced_subsample(&train, 21, 5).is_err());
    }
}
