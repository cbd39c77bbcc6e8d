//! Linkage, cut and k-means checked against exhaustive references.

use enn_core::cluster::{cut_for_total, kmeans, ward_linkage, LinkageTree};
use ndarray::Array2;
use proptest::prelude::*;

mod support;
use support::*;

fn assert_monotone(t: &LinkageTree) {
    assert_eq!(t.merges.len(), t.n_leaves - 1);
    for w in t.merges.windows(2) {
        assert!(w[0].height <= w[1].height);
    }
}

#[test]
fn ward_matches_brute_force_on_random_3d_points() {
    for seed in 0..20 {
        let x = random_points(8, 3, seed);
        let tree = ward_linkage(x.view()).unwrap();
        assert_monotone(&tree);
        let oracle = brute_force_ward(&x);
        for (m, o) in tree.merges.iter().zip(&oracle) {
            assert_eq!((m.a, m.b, m.size), (o.0, o.1, o.3), "seed {seed}");
            assert!((m.height - o.2).abs() < 1e-12, "seed {seed}");
        }
    }
}

#[test]
fn cut_matches_exhaustive_height_scan() {
    let a = random_points(4, 2, 100);
    let b = random_points(4, 2, 101);
    let trees = [ward_linkage(a.view()).unwrap(), ward_linkage(b.view()).unwrap()];
    // Candidate cuts: below every merge, then at each distinct height.
    let mut hs: Vec<f64> = trees.iter().flat_map(|t| t.merges.iter().map(|m| m.height)).collect();
    hs.push(-1.0);
    hs.sort_by(f64::total_cmp);
    hs.dedup();
    let count = |h: f64| -> usize {
        trees.iter().map(|t| t.n_leaves - t.merges.iter().filter(|m| m.height <= h).count()).sum()
    };
    for target in 2..=8 {
        let cut = cut_for_total(&trees, target).unwrap();
        let best = hs.iter().map(|&h| count(h)).filter(|&c| c >= target).min().unwrap();
        assert_eq!(cut.achieved, best);
        assert_eq!(count(cut.cutoff), best);
        let clusters: usize = cut.labels.iter().map(|l| l.iter().max().unwrap() + 1).sum();
        assert_eq!(clusters, best);
    }
}

fn inertia_of(x: &Array2<f64>, labels: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<usize> = (0..x.nrows()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let mut mean = vec![0.0; x.ncols()];
        for &i in &members {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v / members.len() as f64;
            }
        }
        for &i in &members {
            total += x.row(i).iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    total
}

#[test]
fn kmeans_two_blobs_match_exhaustive_partition() {
    let mut x = random_points(8, 2, 7);
    for i in 4..8 {
        x[[i, 0]] += 20.0;
    }
    let km = kmeans(x.view(), 2, 11).unwrap();
    let first = km.assignment[0];
    assert!(km.assignment[..4].iter().all(|&a| a == first));
    assert!(km.assignment[4..].iter().all(|&a| a != first));

    let mut best = f64::INFINITY;
    for code in 1u32..(1 << 8) - 1 {
        let labels: Vec<usize> = (0..8).map(|i| ((code >> i) & 1) as usize).collect();
        best = best.min(inertia_of(&x, &labels, 2));
    }
    assert!((km.inertia() - best).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn kmeans_inertia_never_increases(seed in 0u64..10_000, k in 1usize..6) {
        let x = random_points(30, 2, seed);
        let km = kmeans(x.view(), k, seed).unwrap();
        for w in km.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn ward_heights_are_monotone(seed in 0u64..10_000, n in 1usize..40) {
        let x = random_points(n, 3, seed);
        let t = ward_linkage(x.view()).unwrap();
        assert_monotone(&t);
    }
}
