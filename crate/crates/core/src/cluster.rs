//! Ward agglomerative clustering, the single-cutoff subconcept cut, and k-means.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// One agglomeration step. Leaves are clusters `0..n`; the cluster created by
/// merge `k` has id `n + k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkageTree {
    pub merges: Vec<Merge>,
    pub n_leaves: usize,
}

impl LinkageTree {
    /// Number of clusters left after applying every merge with height ≤ `h`.
    pub fn clusters_at(&self, h: f64) -> usize {
        self.n_leaves - self.merges.iter().take_while(|m| m.height <= h).count()
    }

    /// Flat cluster labels after the first `applied` merges. Labels are dense
    /// and ordered by each cluster's smallest leaf.
    pub fn labels_after(&self, applied: usize) -> Vec<usize> {
        let n = self.n_leaves;
        let mut parent: Vec<usize> = (0..2 * n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for (k, m) in self.merges.iter().take(applied).enumerate() {
            let (ra, rb) = (find(&mut parent, m.a), find(&mut parent, m.b));
            parent[ra] = n + k;
            parent[rb] = n + k;
        }
        let mut label_of_root = std::collections::HashMap::new();
        (0..n)
            .map(|i| {
                let r = find(&mut parent, i);
                let next = label_of_root.len();
                *label_of_root.entry(r).or_insert(next)
            })
            .collect()
    }

    /// Leaf order of the dendrogram (left subtree first).
    pub fn leaf_order(&self) -> Vec<usize> {
        let n = self.n_leaves;
        if n == 0 {
            return Vec::new();
        }
        if self.merges.is_empty() {
            return (0..n).collect();
        }
        let mut out = Vec::with_capacity(n);
        let mut stack = vec![n + self.merges.len() - 1];
        while let Some(c) = stack.pop() {
            if c < n {
                out.push(c);
            } else {
                let m = &self.merges[c - n];
                stack.push(m.b);
                stack.push(m.a);
            }
        }
        out
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Ward minimum-variance linkage.
///
/// Merge heights follow the usual convention
/// `d(A, B) = sqrt(2|A||B|/(|A|+|B|)) · ‖μ_A − μ_B‖` and are maintained with the
/// Lance–Williams recurrence on squared distances. Ties go to the lowest pair
/// of active slots `(i, j)`, `i < j`; the merged cluster takes slot `i`.
pub fn ward_linkage(x: ArrayView2<f64>) -> Result<LinkageTree> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::invalid("ward linkage needs at least one sample"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("clustering input"));
    }
    let x = x.as_standard_layout();
    let rows: Vec<&[f64]> = (0..n)
        .map(|i| x.index_axis(Axis(0), i).to_slice().expect("standard layout"))
        .collect();

    let mut d = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = sq_dist(rows[i], rows[j]);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    let mut size = vec![1usize; n];
    let mut id: Vec<usize> = (0..n).collect();
    let mut active = vec![true; n];
    let mut nn = vec![usize::MAX; n];
    let mut mind = vec![f64::INFINITY; n];

    let recompute = |i: usize, d: &[f64], active: &[bool], nn: &mut [usize], mind: &mut [f64]| {
        nn[i] = usize::MAX;
        mind[i] = f64::INFINITY;
        for k in i + 1..n {
            if active[k] && d[i * n + k] < mind[i] {
                mind[i] = d[i * n + k];
                nn[i] = k;
            }
        }
    };
    for i in 0..n {
        recompute(i, &d, &active, &mut nn, &mut mind);
    }

    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    let mut last_height = 0.0f64;
    for step in 0..n.saturating_sub(1) {
        let mut i = usize::MAX;
        for s in 0..n {
            if active[s] && nn[s] != usize::MAX && (i == usize::MAX || mind[s] < mind[i]) {
                i = s;
            }
        }
        let j = nn[i];
        let dij = d[i * n + j];
        // Rounding in the recurrence must not break monotone heights.
        let height = dij.max(0.0).sqrt().max(last_height);
        last_height = height;
        let (si, sj) = (size[i] as f64, size[j] as f64);
        merges.push(Merge {
            a: id[i].min(id[j]),
            b: id[i].max(id[j]),
            height,
            size: size[i] + size[j],
        });

        active[j] = false;
        for k in 0..n {
            if !active[k] || k == i {
                continue;
            }
            let sk = size[k] as f64;
            let v = ((si + sk) * d[i * n + k] + (sj + sk) * d[j * n + k] - sk * dij) / (si + sj + sk);
            d[i * n + k] = v;
            d[k * n + i] = v;
        }
        size[i] += size[j];
        id[i] = n + step;

        recompute(i, &d, &active, &mut nn, &mut mind);
        for k in 0..n {
            if !active[k] || k == i {
                continue;
            }
            if nn[k] == j || (k < i && nn[k] == i) {
                recompute(k, &d, &active, &mut nn, &mut mind);
            } else if k < i {
                let v = d[k * n + i];
                if v < mind[k] || (v == mind[k] && i < nn[k]) {
                    mind[k] = v;
                    nn[k] = i;
                }
            }
        }
    }
    Ok(LinkageTree { merges, n_leaves: n })
}

/// Result of cutting several linkage trees at one common height.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeCut {
    /// Merges with height ≤ `cutoff` are applied; −1 means none are.
    pub cutoff: f64,
    pub target: usize,
    pub achieved: usize,
    /// Per tree, the flat label of each leaf.
    pub labels: Vec<Vec<usize>>,
}

/// Find one height for all trees so the total cluster count equals
/// `target_total`; when no height hits it exactly, take the smallest count
/// above the target.
pub fn cut_for_total(trees: &[LinkageTree], target_total: usize) -> Result<TreeCut> {
    let min = trees.len();
    let max: usize = trees.iter().map(|t| t.n_leaves).sum();
    if trees.iter().any(|t| t.n_leaves == 0) || target_total < min || target_total > max {
        return Err(Error::UnattainableTarget {
            target: target_total,
            min,
            max,
        });
    }
    let mut heights: Vec<f64> = trees
        .iter()
        .flat_map(|t| t.merges.iter().map(|m| m.height))
        .collect();
    heights.sort_by(f64::total_cmp);
    heights.dedup();

    let count = |h: f64| -> usize { trees.iter().map(|t| t.clusters_at(h)).sum() };
    let mut cutoff = -1.0;
    for &h in &heights {
        if count(h) >= target_total {
            cutoff = h;
        } else {
            break;
        }
    }
    let labels: Vec<Vec<usize>> = trees
        .iter()
        .map(|t| t.labels_after(t.n_leaves - t.clusters_at(cutoff)))
        .collect();
    Ok(TreeCut {
        cutoff,
        target: target_total,
        achieved: count(cutoff),
        labels,
    })
}

/// A subconcept: local cluster `local` of class `class`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubconceptId {
    pub class: usize,
    pub local: usize,
}

/// Subconcepts of every class, globally ordered by `(class, local)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubconceptPartition {
    /// Per training sample, its subconcept.
    pub assignment: Vec<SubconceptId>,
    pub subconcepts: Vec<SubconceptId>,
    pub means: Vec<Vec<f64>>,
    pub cutoff: f64,
    pub target: usize,
    pub achieved: usize,
}

impl SubconceptPartition {
    pub fn len(&self) -> usize {
        self.subconcepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subconcepts.is_empty()
    }

    /// Global index of a subconcept.
    pub fn index_of(&self, id: SubconceptId) -> usize {
        self.subconcepts.binary_search(&id).expect("subconcept exists")
    }

    /// Global subconcept index of every sample.
    pub fn sample_subconcepts(&self) -> Vec<usize> {
        self.assignment.iter().map(|&id| self.index_of(id)).collect()
    }

    /// Training-sample indices of each subconcept.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.len()];
        for (i, s) in self.sample_subconcepts().into_iter().enumerate() {
            out[s].push(i);
        }
        out
    }
}

/// Ward-cluster each class separately and cut every tree at one height so
/// the total number of subconcepts is `target` (or the smallest count above).
pub fn subconcept_partition(
    x: ArrayView2<f64>,
    y: &[usize],
    n_classes: usize,
    target: usize,
) -> Result<SubconceptPartition> {
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            actual: y.len(),
        });
    }
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &c) in y.iter().enumerate() {
        by_class[c].push(i);
    }
    if let Some(c) = by_class.iter().position(|m| m.is_empty()) {
        return Err(Error::invalid(format!("class {c} has no samples")));
    }
    let trees = by_class
        .par_iter()
        .map(|idx| ward_linkage(x.select(Axis(0), idx).view()))
        .collect::<Result<Vec<_>>>()?;
    let cut = cut_for_total(&trees, target)?;

    let mut assignment = vec![SubconceptId { class: 0, local: 0 }; y.len()];
    let mut subconcepts = Vec::new();
    let mut means = Vec::new();
    for (class, idx) in by_class.iter().enumerate() {
        let labels = &cut.labels[class];
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let mut sums = vec![vec![0.0; x.ncols()]; k];
        let mut counts = vec![0usize; k];
        for (&i, &local) in idx.iter().zip(labels) {
            assignment[i] = SubconceptId { class, local };
            counts[local] += 1;
            for (s, v) in sums[local].iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for local in 0..k {
            subconcepts.push(SubconceptId { class, local });
            means.push(sums[local].iter().map(|s| s / counts[local] as f64).collect());
        }
    }
    Ok(SubconceptPartition {
        assignment,
        subconcepts,
        means,
        cutoff: cut.cutoff,
        target,
        achieved: cut.achieved,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centroids: Array2<f64>,
    pub assignment: Vec<usize>,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
}

impl KMeans {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().unwrap_or(&0.0)
    }
}

const KMEANS_MAX_ITER: usize = 300;

/// Lloyd's algorithm from k-means++ seeding. An empty cluster is re-seeded at
/// the point farthest from its current centroid.
pub fn kmeans(x: ArrayView2<f64>, k: usize, seed: u64) -> Result<KMeans> {
    let (n, d) = x.dim();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k-means needs 1 ≤ k ≤ {n}, got {k}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k-means input"));
    }
    let mut r = rng::rng(seed);
    let row = |i: usize| x.row(i);

    let mut centroids = Array2::<f64>::zeros((k, d));
    let first = r.random_range(0..n);
    centroids.row_mut(0).assign(&row(first));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist_view(row(i), centroids.row(0)))
        .collect();
    let mut chosen = vec![first];
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = r.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &v) in d2.iter().enumerate() {
                if t < v {
                    pick = i;
                    break;
                }
                t -= v;
            }
            pick
        } else {
            // Every point coincides with a centre already; take unused indices.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(pick);
        centroids.row_mut(c).assign(&row(pick));
        for (i, v) in d2.iter_mut().enumerate() {
            *v = v.min(sq_dist_view(row(i), centroids.row(c)));
        }
    }

    let mut assignment = vec![usize::MAX; n];
    let mut history = Vec::new();
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        let mut inertia = 0.0;
        let mut dist = vec![0.0; n];
        for i in 0..n {
            let (mut best, mut bd) = (0, f64::INFINITY);
            for c in 0..k {
                let v = sq_dist_view(row(i), centroids.row(c));
                if v < bd {
                    bd = v;
                    best = c;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
            dist[i] = bd;
            inertia += bd;
        }
        history.push(inertia);
        if !changed && history.len() > 1 {
            break;
        }
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let mut s = sums.row_mut(assignment[i]);
            s += &row(i);
            counts[assignment[i]] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mut cr = centroids.row_mut(c);
                cr.assign(&sums.row(c));
                cr /= counts[c] as f64;
            } else {
                let far = (0..n)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .expect("n ≥ 1");
                centroids.row_mut(c).assign(&row(far));
                dist[far] = 0.0;
            }
        }
    }
    Ok(KMeans {
        centroids,
        assignment,
        inertia_history: history,
    })
}

fn sq_dist_view(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}
