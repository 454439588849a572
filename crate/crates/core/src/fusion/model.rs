//! Shared-space projections and bidirectional multi-head cross-attention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamSet, SeededRng, Tape, Var};
use crate::scalar::Scalar;
use crate::training::{bind, glorot};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Bidirectional,
    /// Only genes attend to the image; the image embedding is its projection.
    ImageToGene,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bidirectional" => Ok(Direction::Bidirectional),
            "image_to_gene" => Ok(Direction::ImageToGene),
            other => Err(Error::Config(format!("unknown direction `{other}`"))),
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::Bidirectional => "bidirectional",
            Direction::ImageToGene => "image_to_gene",
        })
    }
}

// Positions inside `FusionParams::weights`.
pub(crate) const PROJ_Z: usize = 0;
pub(crate) const PROJ_V: usize = 1;
pub(crate) const WQ_G: usize = 2;
pub(crate) const WK_G: usize = 3;
pub(crate) const WV_G: usize = 4;
pub(crate) const WQ_I: usize = 5;
pub(crate) const WK_I: usize = 6;
pub(crate) const WV_I: usize = 7;

/// Weights are stored input-major (`d_in × d`) in the order `proj_z,
/// proj_v, wq_g, wk_g, wv_g, wq_i, wk_i, wv_i`; the `_g` maps read gene
/// latents and the `_i` maps read image embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams<T> {
    pub weights: ParamSet<T>,
    pub heads: usize,
    pub d: usize,
    pub alpha: f64,
    pub tau: f64,
    pub direction: Direction,
}

impl<T: Scalar> FusionParams<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        dz: usize,
        dv: usize,
        d: usize,
        heads: usize,
        alpha: f64,
        tau: f64,
        direction: Direction,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!("width {d} not divisible by {heads} heads")));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("fusion alpha {alpha} outside [0, 1]")));
        }
        if tau <= 0.0 {
            return Err(Error::Config("temperature must be positive".into()));
        }
        let mut w = ParamSet::new();
        w.push("proj_z", glorot(dz, d, rng));
        w.push("proj_v", glorot(dv, d, rng));
        for name in ["wq_g", "wk_g", "wv_g"] {
            w.push(name, glorot(dz, d, rng));
        }
        for name in ["wq_i", "wk_i", "wv_i"] {
            w.push(name, glorot(dv, d, rng));
        }
        Ok(Self { weights: w, heads, d, alpha, tau, direction })
    }

    pub fn dz(&self) -> usize {
        self.weights.by_index(PROJ_Z).rows()
    }

    pub fn dv(&self) -> usize {
        self.weights.by_index(PROJ_V).rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusedEmbedding<T> {
    pub h_gene: Matrix<T>,
    pub h_image: Matrix<T>,
    pub h_fusion: Matrix<T>,
}

/// `α·h_gene + (1−α)·h_image`.
pub fn fuse<T: Scalar>(h_gene: &Matrix<T>, h_image: &Matrix<T>, alpha: f64) -> Result<Matrix<T>> {
    if h_gene.shape() != h_image.shape() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", h_gene.shape(), h_image.shape())));
    }
    let a = T::lit(alpha);
    let b = T::lit(1.0 - alpha);
    Ok(h_gene.zip_map(h_image, |g, i| a * g + b * i))
}

/// Multi-head attention of `queries` over `keys`/`values` (all already
/// projected to width `d`); returns concatenated head outputs and, when
/// requested, the per-head weight matrices.
pub(crate) fn multi_head<T: Scalar>(t: &mut Tape<T>, q: Var, k: Var, v: Var, heads: usize) -> (Var, Vec<Var>) {
    let d = t.value(q).cols();
    let dh = d / heads;
    let scale = T::one() / T::from_usize_lossy(dh).sqrt();
    let mut out: Option<Var> = None;
    let mut maps = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = t.slice_cols(q, h * dh, dh);
        let kh = t.slice_cols(k, h * dh, dh);
        let vh = t.slice_cols(v, h * dh, dh);
        let s = t.matmul_nt(qh, kh);
        let s = t.scale(s, scale);
        let a = t.softmax_rows(s);
        maps.push(a);
        let o = t.matmul(a, vh);
        out = Some(match out {
            None => o,
            Some(prev) => t.concat_cols(prev, o),
        });
    }
    (out.expect("at least one head"), maps)
}

pub(crate) struct AttendOut {
    pub h_gene: Var,
    pub h_image: Var,
    /// Per-head weights of the gene-query direction.
    pub gene_maps: Vec<Var>,
}

pub(crate) fn cross_attend_on_tape<T: Scalar>(t: &mut Tape<T>, w: &[Var], z: Var, v: Var, params: &FusionParams<T>) -> AttendOut {
    let zr = t.matmul(z, w[PROJ_Z]);
    let vr = t.matmul(v, w[PROJ_V]);
    let qg = t.matmul(z, w[WQ_G]);
    let ki = t.matmul(v, w[WK_I]);
    let vi = t.matmul(v, w[WV_I]);
    let (att_g, gene_maps) = multi_head(t, qg, ki, vi, params.heads);
    let h_gene = t.add(zr, att_g);
    let h_image = match params.direction {
        Direction::ImageToGene => vr,
        Direction::Bidirectional => {
            let qi = t.matmul(v, w[WQ_I]);
            let kg = t.matmul(z, w[WK_G]);
            let vg = t.matmul(z, w[WV_G]);
            let (att_i, _) = multi_head(t, qi, kg, vg, params.heads);
            t.add(vr, att_i)
        }
    };
    AttendOut { h_gene, h_image, gene_maps }
}

fn check_inputs<T: Scalar>(z: &Matrix<T>, v: &Matrix<T>, params: &FusionParams<T>) -> Result<()> {
    if z.rows() != v.rows() {
        return Err(Error::RowMisalignment(z.rows(), v.rows()));
    }
    if z.cols() != params.dz() || v.cols() != params.dv() {
        return Err(Error::DimensionMismatch(format!(
            "inputs are {}/{} wide, fusion expects {}/{}",
            z.cols(),
            v.cols(),
            params.dz(),
            params.dv()
        )));
    }
    Ok(())
}

pub fn cross_attend<T: Scalar>(z: &Matrix<T>, v: &Matrix<T>, params: &FusionParams<T>) -> Result<FusedEmbedding<T>> {
    check_inputs(z, v, params)?;
    let mut t = Tape::new();
    let w = bind(&mut t, &params.weights, false);
    let zv = t.constant(z.clone());
    let vv = t.constant(v.clone());
    let out = cross_attend_on_tape(&mut t, &w, zv, vv, params);
    let h_gene = t.value(out.h_gene).clone();
    let h_image = t.value(out.h_image).clone();
    let h_fusion = fuse(&h_gene, &h_image, params.alpha)?;
    Ok(FusedEmbedding { h_gene, h_image, h_fusion })
}

/// Per-head attention weights of genes (queries) over image spots (keys).
pub fn gene_attention_maps<T: Scalar>(z: &Matrix<T>, v: &Matrix<T>, params: &FusionParams<T>) -> Result<Vec<Matrix<T>>> {
    check_inputs(z, v, params)?;
    let mut t = Tape::new();
    let w = bind(&mut t, &params.weights, false);
    let zv = t.constant(z.clone());
    let vv = t.constant(v.clone());
    let out = cross_attend_on_tape(&mut t, &w, zv, vv, params);
    Ok(out.gene_maps.iter().map(|&m| t.value(m).clone()).collect())
}
