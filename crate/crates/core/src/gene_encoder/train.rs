//! Stage I optimization: alternating discriminator and encoder/generator
//! steps on the weighted sum of reconstruction, graph, mask and GAN losses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Adam, AdamConfig, Matrix, Objective, ParamSet, SeededRng, Tape, Var};
use crate::scalar::Scalar;
use crate::spatial_graph::SpatialGraph;
use crate::training::{bind, collect_grads, LossTrace};

use super::losses::{bce_logits_tape, fisher_mmd_tape, mask_tape, moment_kl_tape, reconstruction_tape, DEFAULT_MASK_ALPHA};
use super::model::{
    decode_on_tape, discriminator_on_tape, encode, encode_on_tape, generator_on_tape, EncoderDims, EncoderParams,
    GanParams, MaskState, Mode, row_indicator, DEFAULT_MASK_RATIO,
};

pub const STAGE1_COLUMNS: [&str; 5] = ["rec", "graph", "mask", "gan", "total"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Config {
    pub epochs: usize,
    pub lr: f64,
    pub lambda_rec: f64,
    pub lambda_graph: f64,
    pub lambda_mask: f64,
    pub lambda_gan: f64,
    pub kl_weight: f64,
    /// Divide edge logits by the latent width during training.
    pub graph_width_scaled: bool,
    /// Weight edges and non-edges equally in the graph BCE.
    pub graph_balanced: bool,
    pub mask_ratio: f64,
    pub mask_alpha: f64,
    pub d1: usize,
    pub d2: usize,
    pub noise_dim: usize,
    pub disc_hidden: usize,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            epochs: 400,
            lr: 1e-3,
            lambda_rec: 1.0,
            lambda_graph: 0.3,
            lambda_mask: 1.0,
            lambda_gan: 0.1,
            kl_weight: 0.01,
            graph_width_scaled: true,
            graph_balanced: true,
            mask_ratio: DEFAULT_MASK_RATIO,
            mask_alpha: DEFAULT_MASK_ALPHA,
            d1: 64,
            d2: 32,
            noise_dim: 32,
            disc_hidden: 64,
        }
    }
}

pub struct Stage1Result<T> {
    pub encoder: EncoderParams<T>,
    pub gan: GanParams<T>,
    pub mask: MaskState<T>,
    /// Eval-mode embedding of the unmasked input.
    pub z: Matrix<T>,
    pub trace: LossTrace,
}

/// Number of tensors in the encoder/mask/generator parameter groups.
pub(crate) fn group_counts<T: Scalar>(enc: &EncoderParams<T>, gan: &GanParams<T>) -> [usize; 3] {
    [enc.weights.len(), 1, gan.generator.len()]
}

/// Concatenates encoder weights, the mask perturbation and the generator
/// into one trainable set, in that order.
pub fn joint_params<T: Scalar>(enc: &EncoderParams<T>, perturbation: &Matrix<T>, gan: &GanParams<T>) -> ParamSet<T> {
    let mut all = ParamSet::new();
    all.extend_prefixed("encoder/", &enc.weights);
    let mut m = ParamSet::new();
    m.push("m", perturbation.clone());
    all.extend_prefixed("mask/", &m);
    all.extend_prefixed("generator/", &gan.generator);
    all
}

/// Loss components of one forward pass.
pub(crate) struct Stage1Terms {
    pub rec: Var,
    pub graph: Var,
    pub mask: Var,
    pub gan: Var,
    pub total: Var,
}

/// The Stage I generator/encoder objective for a fixed mask and noise draw.
pub struct Stage1Objective<'a, T> {
    pub x: &'a Matrix<T>,
    pub graph: &'a SpatialGraph<T>,
    pub config: &'a Stage1Config,
    pub running: &'a ParamSet<T>,
    pub discriminator: &'a ParamSet<T>,
    pub masked: Vec<usize>,
    pub noise: Matrix<T>,
    counts: [usize; 3],
}

impl<'a, T: Scalar> Stage1Objective<'a, T> {
    pub fn new(
        x: &'a Matrix<T>,
        graph: &'a SpatialGraph<T>,
        config: &'a Stage1Config,
        encoder: &'a EncoderParams<T>,
        gan: &'a GanParams<T>,
        masked: Vec<usize>,
        noise: Matrix<T>,
    ) -> Self {
        Self {
            x,
            graph,
            config,
            running: &encoder.running,
            discriminator: &gan.discriminator,
            masked,
            noise,
            counts: group_counts(encoder, gan),
        }
    }

    /// Builds the forward pass; returns the loss terms, the bound joint
    /// parameters and the batch-norm statistics of the real batch.
    pub(crate) fn forward(&self, t: &mut Tape<T>, params: &ParamSet<T>) -> (Stage1Terms, Vec<Var>, Vec<(Matrix<T>, Matrix<T>)>) {
        let cfg = self.config;
        let vars = bind(t, params, true);
        let [ne, _, _] = self.counts;
        let (enc, rest) = vars.split_at(ne);
        let (m, gen) = rest.split_at(1);
        let n = self.x.rows();

        let x = t.constant(self.x.clone());
        let indicator = t.constant(row_indicator(n, &self.masked));
        let shift = t.matmul(indicator, m[0]);
        let xm = t.add(x, shift);
        let (z, xhat, rec, graph, stats) = autoencoder_terms(t, enc, self.running, xm, self.x, self.graph, cfg);
        let mask = mask_tape(t, xhat, self.x, &self.masked, cfg.mask_alpha);

        let (fake, zf) = generated_latents(t, enc, gen, self.running, &self.noise);
        let mmd = fisher_mmd_tape(t, z, zf);
        let dvars = bind(t, self.discriminator, false);
        let dl = discriminator_on_tape(t, &dvars, fake);
        let neg = t.scale(dl, -T::one());
        let adv = t.softplus(neg);
        let adv = t.mean(adv);
        let gan = t.add(mmd, adv);

        let mut total = t.scale(rec, T::lit(cfg.lambda_rec));
        for (term, w) in [(graph, cfg.lambda_graph), (mask, cfg.lambda_mask), (gan, cfg.lambda_gan)] {
            let s = t.scale(term, T::lit(w));
            total = t.add(total, s);
        }
        (Stage1Terms { rec, graph, mask, gan, total }, vars, stats)
    }
}

impl<T: Scalar> Objective<T> for Stage1Objective<'_, T> {
    fn loss(&self, params: &ParamSet<T>) -> T {
        let mut t = Tape::new();
        let (terms, _, _) = self.forward(&mut t, params);
        t.scalar(terms.total)
    }

    fn loss_and_grad(&self, params: &ParamSet<T>) -> (T, ParamSet<T>) {
        let mut t = Tape::new();
        let (terms, vars, _) = self.forward(&mut t, params);
        let g = t.backward(terms.total);
        (t.scalar(terms.total), collect_grads(&g, &vars, params))
    }
}

/// Encoder forward pass on `input` plus the reconstruction and graph losses
/// against `target`. Returns `(z, x̂, rec, graph, batch statistics)`.
pub(crate) fn autoencoder_terms<T: Scalar>(
    t: &mut Tape<T>,
    enc: &[Var],
    running: &ParamSet<T>,
    input: Var,
    target: &Matrix<T>,
    graph: &SpatialGraph<T>,
    cfg: &Stage1Config,
) -> (Var, Var, Var, Var, Vec<(Matrix<T>, Matrix<T>)>) {
    let a = t.constant(graph.normalized.clone());
    let (z, stats) = encode_on_tape(t, enc, running, input, a, Mode::Train);
    let xhat = decode_on_tape(t, enc, z, a);
    let rec = reconstruction_tape(t, xhat, target);
    let logits = t.matmul_nt(z, z);
    let logits = if cfg.graph_width_scaled {
        let dz = t.value(z).cols();
        t.scale(logits, T::one() / T::from_usize_lossy(dz))
    } else {
        logits
    };
    let bce = bce_logits_tape(t, logits, &graph.adjacency, cfg.graph_balanced);
    let kl = moment_kl_tape(t, z);
    let kl = t.scale(kl, T::lit(cfg.kl_weight));
    let graph_loss = t.add(bce, kl);
    (z, xhat, rec, graph_loss, stats)
}

/// Generated expression for `noise`, encoded without spatial neighbors.
pub(crate) fn generated_latents<T: Scalar>(
    t: &mut Tape<T>,
    enc: &[Var],
    gen: &[Var],
    running: &ParamSet<T>,
    noise: &Matrix<T>,
) -> (Var, Var) {
    let nv = t.constant(noise.clone());
    let fake = generator_on_tape(t, gen, nv);
    let eye = t.constant(SpatialGraph::<T>::identity(noise.rows()).normalized);
    let (zf, _) = encode_on_tape(t, enc, running, fake, eye, Mode::Train);
    (fake, zf)
}

/// Discriminator loss: real expression labelled 1, generated labelled 0.
fn discriminator_step<T: Scalar>(
    x: &Matrix<T>,
    fake: &Matrix<T>,
    disc: &mut ParamSet<T>,
    opt: &mut Adam<T>,
) -> T {
    let mut t = Tape::new();
    let d = bind(&mut t, disc, true);
    let real = t.constant(x.clone());
    let fake = t.constant(fake.clone());
    let lr = discriminator_on_tape(&mut t, &d, real);
    let lf = discriminator_on_tape(&mut t, &d, fake);
    let nr = t.scale(lr, -T::one());
    let sr = t.softplus(nr);
    let sr = t.mean(sr);
    let sf = t.softplus(lf);
    let sf = t.mean(sf);
    let loss = t.add(sr, sf);
    let g = t.backward(loss);
    let grads = collect_grads(&g, &d, disc);
    opt.step(disc, &grads);
    t.scalar(loss)
}

/// Initial encoder, GAN and mask parameters for `genes` inputs.
pub fn init_stage1<T: Scalar>(genes: usize, config: &Stage1Config, rng: &mut SeededRng) -> (EncoderParams<T>, GanParams<T>, Matrix<T>) {
    let dims = EncoderDims { genes, d1: config.d1, d2: config.d2 };
    let enc = EncoderParams::init(dims, rng);
    let gan = GanParams::init(config.noise_dim, dims.dz(), genes, config.disc_hidden, rng);
    (enc, gan, Matrix::zeros(1, genes))
}

pub fn train_stage1<T: Scalar>(
    x: &Matrix<T>,
    graph: &SpatialGraph<T>,
    config: &Stage1Config,
    rng: &mut SeededRng,
) -> Result<Stage1Result<T>> {
    if graph.n != x.rows() {
        return Err(Error::DimensionMismatch(format!("graph has {} spots, input has {} rows", graph.n, x.rows())));
    }
    if x.rows() < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: x.rows() });
    }
    let n = x.rows();
    let (mut enc, mut gan, m0) = init_stage1::<T>(x.cols(), config, rng);
    let counts = group_counts(&enc, &gan);
    let mut joint = joint_params(&enc, &m0, &gan);
    let adam = AdamConfig { lr: config.lr, ..AdamConfig::default() };
    let mut opt = Adam::new(adam, &joint);
    let mut dopt = Adam::new(adam, &gan.discriminator);
    let mut trace = LossTrace::new(&STAGE1_COLUMNS);
    let mut masked = Vec::new();

    for epoch in 0..config.epochs {
        masked = MaskState::sample(n, Matrix::<T>::zeros(1, 1), config.mask_ratio, rng).masked_indices;
        let noise = gan.sample_noise(n, rng);

        let fake = gan.generate(&noise);
        let dloss = discriminator_step(x, &fake, &mut gan.discriminator, &mut dopt);

        let obj = Stage1Objective::new(x, graph, config, &enc, &gan, masked.clone(), noise);
        let mut t = Tape::new();
        let (terms, vars, stats) = obj.forward(&mut t, &joint);
        let values: Vec<f64> =
            [terms.rec, terms.graph, terms.mask, terms.gan, terms.total].iter().map(|&v| t.scalar(v).as_f64()).collect();
        if values.iter().any(|v| !v.is_finite()) || !dloss.as_f64().is_finite() {
            return Err(Error::DivergedLoss { stage: "stage1", epoch });
        }
        let g = t.backward(terms.total);
        let grads = collect_grads(&g, &vars, &joint);
        opt.step(&mut joint, &grads);
        if !joint.all_finite() {
            return Err(Error::DivergedLoss { stage: "stage1", epoch });
        }
        enc.update_running(&stats);
        let parts = joint.split(&counts);
        enc.weights = parts[0].clone();
        gan.generator = parts[2].clone();
        trace.push(values);
        log::debug!("stage1 epoch {epoch}: total {:.5}", trace.rows[epoch][4]);
    }

    let parts = joint.split(&counts);
    let mask = MaskState { masked_indices: masked, perturbation: parts[1].by_index(0).clone(), ratio: config.mask_ratio };
    let z = encode(x, graph, &enc, Mode::Eval)?;
    if !z.all_finite() {
        return Err(Error::NonFinite);
    }
    Ok(Stage1Result { encoder: enc, gan, mask, z, trace })
}
