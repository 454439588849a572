//! Invariants of anchored label diffusion on random spot layouts.

use proptest::prelude::*;
use spf_core::clustering::{agreement, find_anchors, one_hot, propagate_labels, DiffusionState};
use spf_core::numerics::{Matrix, SeededRng};
use spf_core::spatial_graph::build_gaussian_kernel;
use spf_core::Mat;

const SPOTS: usize = 100;

struct Instance {
    w: Mat,
    labels: Vec<usize>,
    anchors: Vec<usize>,
    classes: usize,
    /// Non-anchor spot whose kernel neighbors all carry `unanimous_label`.
    probe: usize,
    unanimous_label: usize,
}

fn instance(seed: u64, classes: usize, fraction: f64, k: usize) -> Instance {
    let mut rng = SeededRng::new(seed);
    let coords = Matrix::from_fn(SPOTS, 2, |_, _| 100.0 * rng.uniform());
    let w = build_gaussian_kernel(&coords, k).unwrap().w;
    let mut labels: Vec<usize> = (0..SPOTS).map(|_| rng.below(classes)).collect();
    let probe = rng.below(SPOTS);
    let unanimous_label = rng.below(classes);
    for j in 0..SPOTS {
        if w[(probe, j)] > 0.0 {
            labels[j] = unanimous_label;
        }
    }
    // The probe must not be pinned, and its own label should disagree.
    labels[probe] = (unanimous_label + 1) % classes;
    let anchors: Vec<usize> = find_anchors(&labels, &w, fraction).unwrap().into_iter().filter(|&a| a != probe).collect();
    Instance { w, labels, anchors, classes, probe, unanimous_label }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, ..ProptestConfig::default() })]

    #[test]
    fn diffusion_invariants(seed in any::<u64>(), classes in 2usize..6, fraction in 0.0f64..0.3, k in 3usize..9) {
        let inst = instance(seed, classes, fraction, k);
        let y0: Mat = one_hot(&inst.labels, inst.classes);
        let mut state = DiffusionState::new(y0.clone(), &inst.w, &inst.anchors).unwrap();
        for it in 0..50 {
            state.step();
            let labels = state.labels();
            for &a in &inst.anchors {
                prop_assert_eq!(labels[a], inst.labels[a]);
                prop_assert_eq!(state.y.row(a), y0.row(a));
            }
            for i in (0..SPOTS).filter(|i| !inst.anchors.contains(i)) {
                let row = state.y.row(i);
                prop_assert!(row.iter().all(|&v| v >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9, "row {} sums to {}", i, row.iter().sum::<f64>());
            }
            if it == 0 {
                prop_assert_eq!(labels[inst.probe], inst.unanimous_label);
            }
        }
    }

    #[test]
    fn relabeling_commutes_with_diffusion(seed in any::<u64>(), classes in 2usize..5) {
        let inst = instance(seed, classes, 0.05, 6);
        let perm: Vec<usize> = (0..classes).rev().collect();
        let relabeled: Vec<usize> = inst.labels.iter().map(|&l| perm[l]).collect();
        let (a, _) = propagate_labels::<f64>(&one_hot(&inst.labels, classes), &inst.w, &inst.anchors, 10, 1e-6).unwrap();
        let (b, _) = propagate_labels::<f64>(&one_hot(&relabeled, classes), &inst.w, &inst.anchors, 10, 1e-6).unwrap();
        // Exact ties resolve to the lower class, which relabeling can flip.
        let mut state = DiffusionState::new(one_hot::<f64>(&inst.labels, classes), &inst.w, &inst.anchors).unwrap();
        for _ in 0..10 {
            if state.step() < 1e-6 {
                break;
            }
        }
        for i in 0..SPOTS {
            let row = state.y.row(i);
            let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if row.iter().filter(|&&v| v == top).count() == 1 {
                prop_assert_eq!(perm[a[i]], b[i]);
            }
        }
    }
}

#[test]
fn fully_pinned_labels_do_not_move() {
    let inst = instance(3, 3, 1.0, 6);
    assert_eq!(inst.anchors.len(), SPOTS - 1);
    let all: Vec<usize> = (0..SPOTS).collect();
    let (labels, _) = propagate_labels::<f64>(&one_hot(&inst.labels, 3), &inst.w, &all, 50, 1e-6).unwrap();
    assert_eq!(labels, inst.labels);
}

#[test]
fn anchors_match_brute_force_ranking_on_grid() {
    // 3×3 grid, unit spacing, 4-neighbor weights.
    let pos = |i: usize| ((i / 3) as i64, (i % 3) as i64);
    let w = Mat::from_fn(9, 9, |i, j| {
        let ((a, b), (c, d)) = (pos(i), pos(j));
        if (a - c).abs() + (b - d).abs() == 1 { 1.0 } else { 0.0 }
    });
    let labels = vec![0, 0, 1, 0, 0, 1, 0, 1, 1];
    let agree: Vec<f64> = agreement(&labels, &w);
    // Hand counts: spot 3 has neighbors 0, 4, 6 all labeled 0.
    assert_eq!(agree, vec![2.0, 2.0, 1.0, 3.0, 2.0, 2.0, 1.0, 1.0, 2.0]);
    for fraction in [0.0, 0.2, 0.5, 1.0] {
        let got = find_anchors(&labels, &w, fraction).unwrap();
        let mut want = Vec::new();
        for c in 0..2 {
            let mut members: Vec<usize> = (0..9).filter(|&i| labels[i] == c).collect();
            let take = ((fraction * members.len() as f64).ceil() as usize).max(1);
            members.sort_by(|&a, &b| agree[b].partial_cmp(&agree[a]).unwrap().then(a.cmp(&b)));
            want.extend_from_slice(&members[..take]);
        }
        want.sort_unstable();
        assert_eq!(got, want, "fraction {fraction}");
    }
    assert_eq!(find_anchors(&labels, &w, 0.0).unwrap(), vec![3, 5]);
}
