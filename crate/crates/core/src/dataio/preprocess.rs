//! Count-matrix preprocessing: gene filtering, depth normalization, log
//! transform, highly-variable-gene selection, scaling and PCA.
//!
//! Every run is described by an ordered [`PipelineStep`] manifest and
//! [`replay`] is the only code path that executes one, so a stored manifest
//! reproduces its output exactly.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dataio::dataset::ExpressionMatrix;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Pca};
use crate::scalar::Scalar;

pub const CPM_TARGET: f64 = 1e6;
pub const HVG_BINS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum PipelineStep {
    FilterGenes { min_cells: usize, min_total: f64 },
    NormalizeCpm { target: f64 },
    Log1p,
    SelectHvgs { n_top: usize, bins: usize },
    Scale { clamp: f64 },
    Pca { components: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub min_cells: usize,
    pub min_total: f64,
    pub log1p: bool,
    pub n_top_genes: usize,
    pub scale: bool,
    pub scale_clamp: f64,
    /// Upper bound on PCA components; clipped to `min(N, G')`. `0` disables PCA.
    pub pca_components: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            min_cells: 50,
            min_total: 10.0,
            log1p: true,
            n_top_genes: 2000,
            scale: true,
            scale_clamp: 10.0,
            pca_components: 200,
        }
    }
}

impl PreprocessConfig {
    /// Manifest for a raw matrix with the given shape. Sizes that depend on
    /// intermediate results (HVG count, PCA width) are resolved during replay.
    pub fn manifest(&self) -> Vec<PipelineStep> {
        let mut steps = vec![
            PipelineStep::FilterGenes { min_cells: self.min_cells, min_total: self.min_total },
            PipelineStep::NormalizeCpm { target: CPM_TARGET },
        ];
        if self.log1p {
            steps.push(PipelineStep::Log1p);
        }
        steps.push(PipelineStep::SelectHvgs { n_top: self.n_top_genes, bins: HVG_BINS });
        if self.scale {
            steps.push(PipelineStep::Scale { clamp: self.scale_clamp });
        }
        if self.pca_components > 0 {
            steps.push(PipelineStep::Pca { components: self.pca_components });
        }
        steps
    }
}

#[derive(Clone, Debug)]
pub struct PreprocessedMatrix<T> {
    pub values: Matrix<T>,
    /// Genes retained after HVG selection (column names before PCA).
    pub gene_index: Vec<String>,
    /// Indices into the raw spot order of the spots that were kept.
    pub kept_spots: Vec<usize>,
    pub pipeline_manifest: Vec<PipelineStep>,
}

/// Keeps genes detected in at least `min_cells` spots with total count at
/// least `min_total`.
pub fn filter_genes<T: Scalar>(expr: &ExpressionMatrix<T>, min_cells: usize, min_total: f64) -> Result<ExpressionMatrix<T>> {
    let keep: Vec<usize> = (0..expr.n_genes())
        .filter(|&j| {
            let col = expr.values.col(j);
            let detected = col.iter().filter(|&&x| x > T::zero()).count();
            let total: f64 = col.iter().map(|x| x.as_f64()).sum();
            detected >= min_cells && total >= min_total
        })
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyResult);
    }
    Ok(expr.select_genes(&keep))
}

/// Drops zero-total spots, then scales each remaining spot to sum `target`.
/// Returns the kept row indices alongside the normalized matrix.
pub fn normalize_total<T: Scalar>(expr: &ExpressionMatrix<T>, target: f64) -> (ExpressionMatrix<T>, Vec<usize>) {
    let sums = expr.values.row_sums();
    let kept: Vec<usize> = (0..expr.n_spots()).filter(|&i| sums[i] > T::zero()).collect();
    if kept.len() < expr.n_spots() {
        warn!("dropping {} zero-total spots", expr.n_spots() - kept.len());
    }
    let mut out = expr.select_spots(&kept);
    let t = T::lit(target);
    for (r, &i) in kept.iter().enumerate() {
        let s = sums[i];
        for x in out.values.row_mut(r) {
            *x = *x / s * t;
        }
    }
    (out, kept)
}

/// Counts-per-million normalization.
pub fn normalize_cpm<T: Scalar>(expr: &ExpressionMatrix<T>) -> (ExpressionMatrix<T>, Vec<usize>) {
    normalize_total(expr, CPM_TARGET)
}

pub fn log1p<T: Scalar>(expr: &ExpressionMatrix<T>) -> ExpressionMatrix<T> {
    ExpressionMatrix { values: expr.values.map(|x| x.ln_1p()), ..expr.clone() }
}

/// Per-gene variance standardized within equal-width mean-expression bins.
/// Zero-variance genes score `-inf`.
pub fn hvg_scores<T: Scalar>(values: &Matrix<T>, bins: usize) -> Vec<f64> {
    let (n, g) = values.shape();
    let mut means = Vec::with_capacity(g);
    let mut vars = Vec::with_capacity(g);
    for j in 0..g {
        let col: Vec<f64> = values.col(j).iter().map(|x| x.as_f64()).collect();
        let m = col.iter().sum::<f64>() / n as f64;
        let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
        means.push(m);
        vars.push(v);
    }
    let lo = means.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let bin_of = |m: f64| if width > 0.0 { (((m - lo) / width) as usize).min(bins - 1) } else { 0 };
    let mut members = vec![Vec::new(); bins];
    for j in 0..g {
        members[bin_of(means[j])].push(j);
    }
    let mut scores = vec![0.0; g];
    for m in &members {
        let k = m.len();
        if k == 0 {
            continue;
        }
        let mu = m.iter().map(|&j| vars[j]).sum::<f64>() / k as f64;
        let sd = if k > 1 {
            (m.iter().map(|&j| (vars[j] - mu).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
        } else {
            0.0
        };
        for &j in m {
            scores[j] = if sd > 0.0 { (vars[j] - mu) / sd } else { 0.0 };
        }
    }
    for j in 0..g {
        if vars[j] <= 0.0 {
            scores[j] = f64::NEG_INFINITY;
        }
    }
    scores
}

/// Indices of the `n_top` highest-scoring genes, in original column order.
pub fn select_hvg_indices<T: Scalar>(values: &Matrix<T>, n_top: usize, bins: usize) -> Vec<usize> {
    let scores = hvg_scores(values, bins);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("no NaN scores").then(a.cmp(&b)));
    let mut keep: Vec<usize> = order.into_iter().take(n_top).collect();
    keep.sort_unstable();
    keep
}

pub fn select_hvgs<T: Scalar>(expr: &ExpressionMatrix<T>, n_top: usize) -> ExpressionMatrix<T> {
    let keep = select_hvg_indices(&expr.values, n_top.min(expr.n_genes()), HVG_BINS);
    expr.select_genes(&keep)
}

/// Per-gene z-scoring clamped to `±clamp`; constant genes become 0.
pub fn scale_genes<T: Scalar>(values: &Matrix<T>, clamp: f64) -> Matrix<T> {
    let (n, g) = values.shape();
    let means = values.col_means();
    let mut sds = Vec::with_capacity(g);
    for (j, &m) in means.iter().enumerate() {
        let v = (0..n).map(|i| (values[(i, j)] - m).as_f64().powi(2)).sum::<f64>() / n as f64;
        sds.push(v.sqrt());
    }
    Matrix::from_fn(n, g, |i, j| {
        if sds[j] > 0.0 {
            let z = (values[(i, j)] - means[j]).as_f64() / sds[j];
            T::lit(z.clamp(-clamp, clamp))
        } else {
            T::zero()
        }
    })
}

/// Executes a manifest on raw counts.
pub fn replay<T: Scalar>(raw: &ExpressionMatrix<T>, manifest: &[PipelineStep]) -> Result<PreprocessedMatrix<T>> {
    let mut expr = raw.clone();
    let mut kept: Vec<usize> = (0..raw.n_spots()).collect();
    let mut values: Option<Matrix<T>> = None;
    for step in manifest {
        match *step {
            PipelineStep::FilterGenes { min_cells, min_total } => expr = filter_genes(&expr, min_cells, min_total)?,
            PipelineStep::NormalizeCpm { target } => {
                let (e, k) = normalize_total(&expr, target);
                kept = k.iter().map(|&i| kept[i]).collect();
                expr = e;
            }
            PipelineStep::Log1p => expr = log1p(&expr),
            PipelineStep::SelectHvgs { n_top, bins } => {
                let keep = select_hvg_indices(&expr.values, n_top.min(expr.n_genes()), bins);
                expr = expr.select_genes(&keep);
            }
            PipelineStep::Scale { clamp } => values = Some(scale_genes(values.as_ref().unwrap_or(&expr.values), clamp)),
            PipelineStep::Pca { components } => {
                let input = values.take().unwrap_or_else(|| expr.values.clone());
                let comps = components.min(input.rows()).min(input.cols());
                values = Some(Pca::fit(&input, comps)?.transform(&input));
            }
        }
    }
    let values = values.unwrap_or_else(|| expr.values.clone());
    if !values.all_finite() {
        return Err(Error::NonFinite);
    }
    Ok(PreprocessedMatrix { values, gene_index: expr.genes, kept_spots: kept, pipeline_manifest: manifest.to_vec() })
}

pub fn preprocess<T: Scalar>(raw: &ExpressionMatrix<T>, cfg: &PreprocessConfig) -> Result<PreprocessedMatrix<T>> {
    replay(raw, &cfg.manifest())
}
