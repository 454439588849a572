//! Stage III optimization of the fusion parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gene_encoder::model::{encode_on_tape, EncoderParams, Mode};
use crate::numerics::{Adam, AdamConfig, Matrix, Objective, ParamSet, SeededRng, Tape, Var};
use crate::scalar::Scalar;
use crate::spatial_graph::SpatialGraph;
use crate::training::{bind, collect_grads, LossTrace};

use super::losses::{contrastive_tape, reg_tape, sdm_tape};
use super::model::{cross_attend, cross_attend_on_tape, Direction, FusedEmbedding, FusionParams};

pub const STAGE3_COLUMNS: [&str; 4] = ["sdm", "con", "reg", "total"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage3Config {
    pub epochs: usize,
    pub lr: f64,
    pub heads: usize,
    pub d: usize,
    pub alpha: f64,
    pub tau: f64,
    pub lambda_sdm: f64,
    pub lambda_con: f64,
    pub lambda_reg: f64,
    pub direction: Direction,
    /// Also update the gene encoder through the fusion loss.
    pub unfreeze_encoder: bool,
}

impl Default for Stage3Config {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 1e-4,
            heads: 4,
            d: 64,
            alpha: 0.7,
            tau: 0.12,
            lambda_sdm: 1.0,
            lambda_con: 1.0,
            lambda_reg: 0.01,
            direction: Direction::Bidirectional,
            unfreeze_encoder: false,
        }
    }
}

/// Gene latents for Stage III: fixed, or recomputed from a trainable encoder.
pub enum GeneInput<'a, T> {
    Frozen(&'a Matrix<T>),
    Trainable { encoder: &'a EncoderParams<T>, x: &'a Matrix<T>, graph: &'a SpatialGraph<T> },
}

pub struct Stage3Objective<'a, T> {
    genes: GeneInput<'a, T>,
    v: &'a Matrix<T>,
    template: &'a FusionParams<T>,
    config: &'a Stage3Config,
}

pub(crate) struct Stage3Terms {
    sdm: Var,
    con: Var,
    reg: Var,
    total: Var,
}

impl<'a, T: Scalar> Stage3Objective<'a, T> {
    pub fn new(genes: GeneInput<'a, T>, v: &'a Matrix<T>, template: &'a FusionParams<T>, config: &'a Stage3Config) -> Self {
        Self { genes, v, template, config }
    }

    /// Fusion weights, followed by encoder weights when unfrozen.
    pub fn params(&self) -> ParamSet<T> {
        let mut all = ParamSet::new();
        all.extend_prefixed("fusion/", &self.template.weights);
        if let GeneInput::Trainable { encoder, .. } = &self.genes {
            all.extend_prefixed("encoder/", &encoder.weights);
        }
        all
    }

    fn forward(&self, t: &mut Tape<T>, params: &ParamSet<T>) -> (Stage3Terms, Vec<Var>) {
        let cfg = self.config;
        let vars = bind(t, params, true);
        let nf = self.template.weights.len();
        let z = match &self.genes {
            GeneInput::Frozen(z) => t.constant((*z).clone()),
            GeneInput::Trainable { encoder, x, graph } => {
                let xv = t.constant((*x).clone());
                let a = t.constant(graph.normalized.clone());
                encode_on_tape(t, &vars[nf..], &encoder.running, xv, a, Mode::Eval).0
            }
        };
        let v = t.constant(self.v.clone());
        let out = cross_attend_on_tape(t, &vars[..nf], z, v, self.template);
        let sdm = sdm_tape(t, out.h_image, out.h_gene, cfg.tau);
        let con = contrastive_tape(t, out.h_image, out.h_gene, cfg.tau);
        let reg = reg_tape(t, out.h_image, out.h_gene);
        let mut total = t.scale(sdm, T::lit(cfg.lambda_sdm));
        for (term, w) in [(con, cfg.lambda_con), (reg, cfg.lambda_reg)] {
            let s = t.scale(term, T::lit(w));
            total = t.add(total, s);
        }
        (Stage3Terms { sdm, con, reg, total }, vars)
    }
}

impl<T: Scalar> Objective<T> for Stage3Objective<'_, T> {
    fn loss(&self, params: &ParamSet<T>) -> T {
        let mut t = Tape::new();
        let (terms, _) = self.forward(&mut t, params);
        t.scalar(terms.total)
    }

    fn loss_and_grad(&self, params: &ParamSet<T>) -> (T, ParamSet<T>) {
        let mut t = Tape::new();
        let (terms, vars) = self.forward(&mut t, params);
        let g = t.backward(terms.total);
        (t.scalar(terms.total), collect_grads(&g, &vars, params))
    }
}

pub struct Stage3Result<T> {
    pub params: FusionParams<T>,
    pub fused: FusedEmbedding<T>,
    pub trace: LossTrace,
    /// Updated encoder when it was trained alongside the fusion weights.
    pub encoder: Option<EncoderParams<T>>,
    /// Gene latents the fused embedding was computed from.
    pub z: Matrix<T>,
}

pub fn train_stage3<T: Scalar>(
    genes: GeneInput<'_, T>,
    v: &Matrix<T>,
    config: &Stage3Config,
    rng: &mut SeededRng,
) -> Result<Stage3Result<T>> {
    let (n, dz) = match &genes {
        GeneInput::Frozen(z) => z.shape(),
        GeneInput::Trainable { encoder, x, .. } => (x.rows(), encoder.dims.dz()),
    };
    if n != v.rows() {
        return Err(Error::RowMisalignment(n, v.rows()));
    }
    let template = FusionParams::init(dz, v.cols(), config.d, config.heads, config.alpha, config.tau, config.direction, rng)?;
    let nf = template.weights.len();
    let mut encoder = match &genes {
        GeneInput::Trainable { encoder, .. } => Some((*encoder).clone()),
        GeneInput::Frozen(_) => None,
    };
    let obj = Stage3Objective::new(genes, v, &template, config);
    let mut params = obj.params();
    let mut opt = Adam::new(AdamConfig { lr: config.lr, ..AdamConfig::default() }, &params);
    let mut trace = LossTrace::new(&STAGE3_COLUMNS);
    for epoch in 0..config.epochs {
        let mut t = Tape::new();
        let (terms, vars) = obj.forward(&mut t, &params);
        let values: Vec<f64> = [terms.sdm, terms.con, terms.reg, terms.total].iter().map(|&v| t.scalar(v).as_f64()).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::DivergedLoss { stage: "stage3", epoch });
        }
        let g = t.backward(terms.total);
        let grads = collect_grads(&g, &vars, &params);
        opt.step(&mut params, &grads);
        if !params.all_finite() {
            return Err(Error::DivergedLoss { stage: "stage3", epoch });
        }
        trace.push(values);
    }
    let split = if encoder.is_some() { vec![nf, params.len() - nf] } else { vec![nf] };
    let parts = params.split(&split);
    let mut fusion = template.clone();
    fusion.weights = parts[0].clone();
    let z = match (&obj.genes, encoder.as_mut()) {
        (GeneInput::Trainable { x, graph, .. }, Some(enc)) => {
            enc.weights = parts[1].clone();
            crate::gene_encoder::encode(x, graph, enc, Mode::Eval)?
        }
        (GeneInput::Frozen(z), _) => (*z).clone(),
        _ => unreachable!("encoder presence matches the gene input"),
    };
    let fused = cross_attend(&z, v, &fusion)?;
    Ok(Stage3Result { params: fusion, fused, trace, encoder, z })
}
