//! Cross-attention fusion against a straight-line reference, and Stage III
//! training behavior.

use approx::assert_abs_diff_eq;
use spf_core::fusion::{cross_attend, fuse, gene_attention_maps, train_stage3, Direction, FusionParams, GeneInput, Stage3Config};
use spf_core::numerics::{Matrix, SeededRng};
use spf_core::Mat;

fn random(rows: usize, cols: usize, rng: &mut SeededRng) -> Mat {
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

fn project(x: &Mat, w: &Mat) -> Vec<Vec<f64>> {
    (0..x.rows())
        .map(|i| (0..w.cols()).map(|c| (0..x.cols()).map(|k| x[(i, k)] * w[(k, c)]).sum()).collect())
        .collect()
}

/// Single-head attention written out loop by loop, plus the residual.
fn reference_attend(queries: &Mat, keys: &Mat, residual: &Mat, wq: &Mat, wk: &Mat, wv: &Mat, wr: &Mat) -> Vec<Vec<f64>> {
    let (q, k, v, r) = (project(queries, wq), project(keys, wk), project(keys, wv), project(residual, wr));
    let d = wq.cols();
    let mut out = Vec::new();
    for i in 0..q.len() {
        let logits: Vec<f64> = k.iter().map(|kj| q[i].iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt()).collect();
        let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let s: f64 = e.iter().sum();
        let row: Vec<f64> = (0..d).map(|c| r[i][c] + (0..k.len()).map(|j| e[j] / s * v[j][c]).sum::<f64>()).collect();
        out.push(row);
    }
    out
}

fn assert_rows(got: &Mat, want: &[Vec<f64>]) {
    for (i, row) in want.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            assert_abs_diff_eq!(got[(i, j)], w, epsilon = 1e-6);
        }
    }
}

#[test]
fn single_head_matches_reference() {
    let mut rng = SeededRng::new(12);
    let (z, v) = (random(5, 3, &mut rng), random(5, 4, &mut rng));
    let params = FusionParams::<f64>::init(3, 4, 6, 1, 0.7, 0.12, Direction::Bidirectional, &mut rng).unwrap();
    let w = |name: &str| params.weights.get(name).unwrap();
    let out = cross_attend(&z, &v, &params).unwrap();
    assert_rows(&out.h_gene, &reference_attend(&z, &v, &z, w("wq_g"), w("wk_i"), w("wv_i"), w("proj_z")));
    assert_rows(&out.h_image, &reference_attend(&v, &z, &v, w("wq_i"), w("wk_g"), w("wv_g"), w("proj_v")));
    assert_eq!(out.h_fusion, fuse(&out.h_gene, &out.h_image, 0.7).unwrap());

    let uni = FusionParams { direction: Direction::ImageToGene, ..params.clone() };
    let out_uni = cross_attend(&z, &v, &uni).unwrap();
    assert_eq!(out_uni.h_gene, out.h_gene);
    let proj: Vec<Vec<f64>> = project(&v, w("proj_v"));
    assert_rows(&out_uni.h_image, &proj);
}

#[test]
fn attention_rows_are_distributions() {
    let mut rng = SeededRng::new(13);
    let (z, v) = (random(9, 4, &mut rng), random(9, 6, &mut rng));
    let params = FusionParams::<f64>::init(4, 6, 8, 4, 0.7, 0.12, Direction::Bidirectional, &mut rng).unwrap();
    let maps = gene_attention_maps(&z, &v, &params).unwrap();
    assert_eq!(maps.len(), 4);
    for m in &maps {
        for i in 0..m.rows() {
            assert!(m.row(i).iter().all(|&a| a >= 0.0));
            assert!((m.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn degenerate_inputs() {
    let mut rng = SeededRng::new(14);
    let params = FusionParams::<f64>::init(2, 3, 4, 2, 0.7, 0.12, Direction::Bidirectional, &mut rng).unwrap();
    // One key: the softmax weight is 1.
    let (z, v) = (random(1, 2, &mut rng), random(1, 3, &mut rng));
    let w = |name: &str| params.weights.get(name).unwrap();
    let out = cross_attend(&z, &v, &params).unwrap();
    let want: Vec<Vec<f64>> = project(&z, w("proj_z")).iter().zip(project(&v, w("wv_i"))).map(|(r, a)| r.iter().zip(a).map(|(x, y)| x + y).collect()).collect();
    assert_rows(&out.h_gene, &want);

    // Identical image rows: every gene query sees the same attention output.
    let z = random(4, 2, &mut rng);
    let row = [0.3, -1.0, 2.0];
    let v = Mat::from_rows(&[row, row, row, row]);
    let out = cross_attend(&z, &v, &params).unwrap();
    let resid = project(&z, w("proj_z"));
    let first: Vec<f64> = (0..4).map(|c| out.h_gene[(0, c)] - resid[0][c]).collect();
    for i in 1..4 {
        for c in 0..4 {
            assert_abs_diff_eq!(out.h_gene[(i, c)] - resid[i][c], first[c], epsilon = 1e-12);
        }
    }

    assert!(cross_attend(&random(3, 2, &mut rng), &random(4, 3, &mut rng), &params).is_err());
    assert!(FusionParams::<f64>::init(2, 3, 6, 4, 0.7, 0.12, Direction::Bidirectional, &mut rng).is_err());
    assert!(FusionParams::<f64>::init(2, 3, 4, 2, 1.5, 0.12, Direction::Bidirectional, &mut rng).is_err());
}

#[test]
fn fuse_is_linear_and_hits_endpoints() {
    let mut rng = SeededRng::new(15);
    let (g, i) = (random(3, 4, &mut rng), random(3, 4, &mut rng));
    assert_eq!(fuse(&g, &i, 1.0).unwrap(), g);
    assert_eq!(fuse(&g, &i, 0.0).unwrap(), i);
    let scaled = fuse(&g.scale(2.5), &i.scale(2.5), 0.7).unwrap();
    assert!(scaled.max_abs_diff(&fuse(&g, &i, 0.7).unwrap().scale(2.5)) < 1e-12);
}

#[test]
fn stage3_training_lowers_cross_modal_loss_and_is_deterministic() {
    let mut rng = SeededRng::new(16);
    let labels: Vec<usize> = (0..24).map(|i| i % 3).collect();
    let z = Matrix::from_fn(24, 5, |i, j| if j == labels[i] { 2.0 } else { 0.0 } + 0.3 * rng.normal());
    let v = Matrix::from_fn(24, 7, |i, j| if j == labels[i] + 2 { 1.5 } else { 0.0 } + 0.3 * rng.normal());
    let config = Stage3Config { epochs: 60, d: 8, heads: 2, lr: 1e-2, ..Stage3Config::default() };
    let a = train_stage3(GeneInput::Frozen(&z), &v, &config, &mut SeededRng::new(1)).unwrap();
    let cross: Vec<f64> = a.trace.column("sdm").iter().zip(a.trace.column("con")).map(|(s, c)| s + c).collect();
    assert_eq!(cross.len(), 60);
    assert!(cross[59] < cross[0], "{} !< {}", cross[59], cross[0]);
    let b = train_stage3(GeneInput::Frozen(&z), &v, &config, &mut SeededRng::new(1)).unwrap();
    assert_eq!(a.fused, b.fused);
    assert_eq!(a.trace.to_csv(), b.trace.to_csv());
}
