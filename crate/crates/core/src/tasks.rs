//! Sequential tasks built on top of a classifier: TSP tours, binary decision
//! trees, their greedy references, and hand-written reference algorithms for
//! the symbolic networks.

use serde::{Deserialize, Serialize};

use crate::datasets::{
    feature_value, DistanceMatrix, GenTree, LabeledDataset, TspInstance, BDT_FEATURES, CITIES, SIDE, TABLE_LEN,
};
use crate::error::{Error, Result};

/// Three-valued sign: 1 above zero, 0 below, ½ at zero.
fn sign3(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        0.0
    } else {
        0.5
    }
}

// ------------------------------------------------------------------ TSP

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub order: Vec<usize>,
    /// Includes the closing edge back to the start.
    pub length: f64,
}

pub fn route_length(coords: &[[f64; 2]], order: &[usize]) -> f64 {
    let d = |a: usize, b: usize| {
        let (p, q) = (coords[a], coords[b]);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
    };
    let mut total: f64 = order.windows(2).map(|w| d(w[0], w[1])).sum();
    if let (Some(&first), Some(&last)) = (order.first(), order.last()) {
        total += d(last, first);
    }
    total
}

/// Greedy tour from `inst.current`; ties go to the lowest city index.
pub fn nearest_neighbor_route(inst: &TspInstance) -> Route {
    let c = &inst.coords;
    let n = c.len();
    let dist = |a: usize, b: usize| ((c[a][0] - c[b][0]).powi(2) + (c[a][1] - c[b][1]).powi(2)).sqrt();
    let mut seen = vec![false; n];
    let mut order = vec![inst.current];
    seen[inst.current] = true;
    let mut cur = inst.current;
    while order.len() < n {
        let next = (0..n)
            .filter(|&k| !seen[k])
            .min_by(|&a, &b| dist(cur, a).total_cmp(&dist(cur, b)).then(a.cmp(&b)))
            .expect("an unvisited city remains");
        seen[next] = true;
        order.push(next);
        cur = next;
    }
    Route {
        length: route_length(&inst.coords, &order),
        order,
    }
}

/// Drive a policy through a full tour. The policy sees the 55-value encoding
/// and a mask (`true` = not allowed: visited or current) and returns the next
/// city.
pub fn rollout_tsp<P>(mut policy: P, inst: &TspInstance) -> Result<Route>
where
    P: FnMut(&[f64], &[bool]) -> Result<usize>,
{
    let mut state = TspInstance {
        coords: inst.coords.clone(),
        visited: vec![false; CITIES],
        current: inst.current,
    };
    let mut order = vec![inst.current];
    for _ in 1..CITIES {
        let mask: Vec<bool> = (0..CITIES).map(|k| state.visited[k] || k == state.current).collect();
        let next = policy(&state.encode(), &mask)?;
        if next >= CITIES || mask[next] {
            return Err(Error::invalid(format!("policy chose unavailable city {next}")));
        }
        state.visited[state.current] = true;
        state.current = next;
        order.push(next);
    }
    Ok(Route {
        length: route_length(&inst.coords, &order),
        order,
    })
}

/// Reference next-city rule for the symbolic TSP network, restricted to
/// transitions out of the current city `c`. Every candidate scores one point
/// per rival it is closer to (half on ties) plus one for starting at `c`;
/// the threshold search then isolates a single winner.
pub fn oracle_tsp_step(m: &DistanceMatrix, c: usize) -> usize {
    let n = m.len();
    let mut score = vec![0.0; n];
    for y in (0..n).filter(|&y| y != c) {
        score[y] = 1.0
            + (0..n)
                .filter(|&z| z != c && z != y)
                .map(|z| sign3(m[c][z] - m[c][y]))
                .sum::<f64>();
    }
    let candidates: Vec<usize> = (0..n).filter(|&y| y != c).collect();
    threshold_search(&candidates, |y| score[y], 0.0)
}

/// Raise the threshold while several candidates beat it, lower it while none
/// do, and stop at a single winner or when a raise follows a lowering.
/// Returns the first (lowest) candidate above the final threshold.
fn threshold_search<F: Fn(usize) -> f64>(candidates: &[usize], score: F, start: f64) -> usize {
    let mut max_s = start;
    let mut last_change = 0i8;
    loop {
        let above: Vec<usize> = candidates.iter().copied().filter(|&k| score(k) > max_s).collect();
        match above.len() {
            1 => return above[0],
            0 => {
                max_s -= 1.0;
                last_change = -1;
            }
            _ => {
                if last_change < 0 {
                    return above[0];
                }
                max_s += 1.0;
                last_change = 1;
            }
        }
    }
}

// ------------------------------------------------------------------ BDT

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bdt {
    pub root: GenTree,
    /// Mean number of splits on the path of each truth-table entry.
    pub avg_depth: f64,
}

impl Bdt {
    fn new(root: GenTree) -> Self {
        let avg_depth = leaf_depth_sum(&root, 0) / TABLE_LEN as f64;
        Bdt { root, avg_depth }
    }

    /// Whether the tree reproduces `labels` exactly.
    pub fn reproduces(&self, labels: &[u8]) -> bool {
        labels.iter().enumerate().all(|(t, &l)| self.root.eval(t) == l)
    }
}

// A leaf at depth d covers 2^(10−d) entries when no feature repeats on a path.
fn leaf_depth_sum(node: &GenTree, depth: usize) -> f64 {
    match node {
        GenTree::Leaf(_) => (depth * (TABLE_LEN >> depth)) as f64,
        GenTree::Split { low, high, .. } => leaf_depth_sum(low, depth + 1) + leaf_depth_sum(high, depth + 1),
    }
}

/// Copy the `value` half of the table onto the other half of feature `f`.
pub fn reform_table(labels: &[u8], f: usize, value: usize) -> Vec<u8> {
    (0..labels.len())
        .map(|t| {
            let src = if value == 1 { t | (1 << f) } else { t & !(1 << f) };
            labels[src]
        })
        .collect()
}

fn pure(labels: &[u8]) -> Option<u8> {
    let first = *labels.first()?;
    labels.iter().all(|&l| l == first).then_some(first)
}

fn grow<C>(labels: Vec<u8>, used: &mut [bool], choose: &mut C) -> Result<GenTree>
where
    C: FnMut(&[u8], &[bool]) -> Result<usize>,
{
    if let Some(l) = pure(&labels) {
        return Ok(GenTree::Leaf(l));
    }
    if used.iter().all(|&u| u) {
        return Err(Error::invalid("table not pure after splitting every feature"));
    }
    let f = choose(&labels, used)?;
    if f >= BDT_FEATURES || used[f] {
        return Err(Error::invalid(format!("split choice {f} is unavailable")));
    }
    used[f] = true;
    let low = grow(reform_table(&labels, f, 0), used, choose);
    let high = grow(reform_table(&labels, f, 1), used, choose);
    used[f] = false;
    Ok(GenTree::Split {
        feature: f,
        low: Box::new(low?),
        high: Box::new(high?),
    })
}

fn check_table(labels: &[u8]) -> Result<()> {
    if labels.len() != TABLE_LEN {
        return Err(Error::DimensionMismatch {
            expected: TABLE_LEN,
            actual: labels.len(),
        });
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::invalid("truth-table labels must be 0 or 1"));
    }
    Ok(())
}

/// Build a tree by asking `policy` for each split. The policy sees the
/// (reformed) table as 1024 values and a mask of already split features.
pub fn rollout_bdt<P>(mut policy: P, labels: &[u8]) -> Result<Bdt>
where
    P: FnMut(&[f64], &[bool]) -> Result<usize>,
{
    check_table(labels)?;
    let mut used = vec![false; BDT_FEATURES];
    let mut choose = |table: &[u8], used: &[bool]| {
        let x: Vec<f64> = table.iter().map(|&l| l as f64).collect();
        policy(&x, used)
    };
    Ok(Bdt::new(grow(labels.to_vec(), &mut used, &mut choose)?))
}

// Sum over the two halves of (positives² + negatives²); larger is purer.
fn split_purity(labels: &[u8], f: usize) -> u64 {
    let mut c = [[0u64; 2]; 2];
    for (t, &l) in labels.iter().enumerate() {
        c[feature_value(t, f)][l as usize] += 1;
    }
    c.iter().map(|s| s[0] * s[0] + s[1] * s[1]).sum()
}

/// Decrease in Gini impurity from splitting on `f`.
pub fn gini_gain(labels: &[u8], f: usize) -> f64 {
    let gini = |p: f64, n: f64| if n == 0.0 { 0.0 } else { 1.0 - (p / n).powi(2) - ((n - p) / n).powi(2) };
    let total = labels.len() as f64;
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let mut child = 0.0;
    for v in 0..2 {
        let side: Vec<u8> = (0..labels.len()).filter(|&t| feature_value(t, f) == v).map(|t| labels[t]).collect();
        let n = side.len() as f64;
        let p = side.iter().filter(|&&l| l == 1).count() as f64;
        child += n / total * gini(p, n);
    }
    gini(pos, total) - child
}

/// Greedy CART with the Gini criterion, grown until every leaf is pure. Ties
/// go to the lowest feature index. Gains are compared in exact integer form.
pub fn cart_build(labels: &[u8]) -> Result<Bdt> {
    check_table(labels)?;
    let mut used = vec![false; BDT_FEATURES];
    let mut choose = |table: &[u8], used: &[bool]| {
        let best = (0..BDT_FEATURES)
            .filter(|&f| !used[f])
            .max_by(|&a, &b| split_purity(table, a).cmp(&split_purity(table, b)).then(b.cmp(&a)))
            .expect("an unsplit feature remains");
        Ok(best)
    };
    Ok(Bdt::new(grow(labels.to_vec(), &mut used, &mut choose)?))
}

/// Reference split rule for the symbolic BDT network. For every pair of
/// distinct features it compares the number of True entries in opposite
/// quadrants, sums the wins per feature and side, and runs the threshold
/// search from `n`.
pub fn oracle_bdt_step(labels: &[u8]) -> usize {
    let n = BDT_FEATURES;
    let mut score = vec![0.0; 2 * n];
    for f1 in 0..n {
        for f2 in (0..n).filter(|&f2| f2 != f1) {
            let mut c = [[0.0f64; 2]; 2];
            for (t, &l) in labels.iter().enumerate() {
                c[feature_value(t, f1)][feature_value(t, f2)] += l as f64;
            }
            let d11 = sign3(c[1][0] - c[0][1]);
            let d10 = sign3(c[1][1] - c[0][0]);
            let d01 = sign3(c[0][0] - c[1][1]);
            let d00 = sign3(c[0][1] - c[1][0]);
            score[2 * f1] += d00 + d01;
            score[2 * f1 + 1] += d10 + d11;
        }
    }
    let candidates: Vec<usize> = (0..2 * n).collect();
    threshold_search(&candidates, |k| score[k], n as f64) / 2
}

// ----------------------------------------------------------- orientation

/// Reference rule for the symbolic orientation network.
///
/// Every pixel compares its row's white count with its column's. A row is
/// present when its own pixels favour rows strongly enough relative to all
/// other pixels, and likewise for columns. The image is horizontal when more
/// rows than columns are present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrientationOracle {
    pub side: usize,
    /// Presence threshold on the row (and, by symmetry, column) statistic.
    pub threshold: f64,
}

impl OrientationOracle {
    /// Place the threshold midway between the statistic of a stripe's own
    /// line and the largest statistic any line reaches on a stripe of the
    /// other orientation.
    pub fn calibrate(train: &LabeledDataset) -> Result<Self> {
        let side = (train.n_features() as f64).sqrt() as usize;
        if side * side != train.n_features() || side < 2 {
            return Err(Error::invalid("orientation images must be square"));
        }
        let mut oracle = OrientationOracle { side, threshold: 0.0 };
        let mut own = f64::INFINITY;
        let mut other = f64::NEG_INFINITY;
        for (i, &label) in train.y.iter().enumerate() {
            let img = train.x.row(i).to_vec();
            let (rows, cols) = oracle.statistics(&img);
            let (same, cross) = if label == crate::datasets::HORIZONTAL { (rows, cols) } else { (cols, rows) };
            own = own.min(same.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            other = other.max(cross.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        }
        if !(own > other) {
            return Err(Error::invalid("training stripes do not separate"));
        }
        oracle.threshold = (own + other) / 2.0;
        Ok(oracle)
    }

    /// Row and column presence statistics.
    pub fn statistics(&self, img: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.side;
        let row_sum: Vec<f64> = (0..n).map(|r| img[r * n..(r + 1) * n].iter().sum()).collect();
        let col_sum: Vec<f64> = (0..n).map(|c| (0..n).map(|r| img[r * n + c]).sum()).collect();
        let mut d = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                d[r * n + c] = sign3(row_sum[r] - col_sum[c]);
            }
        }
        let total: f64 = d.iter().sum();
        let total_col = (n * n) as f64 - total;
        let k = (n - 1) as f64;
        let rows = (0..n)
            .map(|r| {
                let own: f64 = d[r * n..(r + 1) * n].iter().sum();
                own - k * (total - own)
            })
            .collect();
        let cols = (0..n)
            .map(|c| {
                let own: f64 = (0..n).map(|r| 1.0 - d[r * n + c]).sum();
                own - k * (total_col - own)
            })
            .collect();
        (rows, cols)
    }

    pub fn classify(&self, img: &[f64]) -> usize {
        let (rows, cols) = self.statistics(img);
        let present = |s: &[f64]| s.iter().map(|&v| sign3(v - self.threshold)).sum::<f64>();
        if present(&rows) > present(&cols) {
            crate::datasets::HORIZONTAL
        } else {
            crate::datasets::VERTICAL
        }
    }
}

/// Orientation oracle calibrated on the standard 28×28 stripe set.
pub fn oracle_orientation(img: &[f64]) -> usize {
    thread_local! {
        static ORACLE: OrientationOracle =
            OrientationOracle::calibrate(&crate::datasets::gen_orientation(0)).expect("stripes separate");
    }
    debug_assert_eq!(img.len(), SIDE * SIDE);
    ORACLE.with(|o| o.classify(img))
}
