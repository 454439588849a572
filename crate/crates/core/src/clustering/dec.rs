//! Deep embedded clustering with a generative consistency term.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gene_encoder::losses::{fisher_kernel, fisher_mmd_tape, mmd_unbiased};
use crate::gene_encoder::model::{encode, EncoderParams, GanParams, Mode};
use crate::gene_encoder::train::{autoencoder_terms, generated_latents, Stage1Config};
use crate::numerics::matrix::sq_dist;
use crate::numerics::{argmax, kmeans_fit, Adam, AdamConfig, Matrix, Objective, ParamSet, SeededRng, Tape, Var};
use crate::scalar::Scalar;
use crate::spatial_graph::SpatialGraph;
use crate::training::{bind, collect_grads, LossTrace};

pub const STAGE2_COLUMNS: [&str; 5] = ["rec", "graph", "dec", "cons", "total"];

/// Student-t log kernel `−(α+1)/2 · ln(1 + ‖z−μ‖²/α)`.
fn log_kernel<T: Scalar>(d2: T, alpha: f64) -> T {
    -T::lit((alpha + 1.0) / 2.0) * (T::one() + d2 / T::lit(alpha)).ln()
}

/// Soft assignment of each row of `z` to each centroid under a Student-t
/// kernel with `alpha` degrees of freedom.
pub fn soft_assign<T: Scalar>(z: &Matrix<T>, centroids: &Matrix<T>, alpha: f64) -> Result<Matrix<T>> {
    if z.cols() != centroids.cols() {
        return Err(Error::DimensionMismatch(format!(
            "latent width {} but centroids have width {}",
            z.cols(),
            centroids.cols()
        )));
    }
    if alpha <= 0.0 {
        return Err(Error::InvalidArgument("alpha must be positive".into()));
    }
    let k = centroids.rows();
    let mut q = Matrix::zeros(z.rows(), k);
    for i in 0..z.rows() {
        let logs: Vec<T> = (0..k).map(|j| log_kernel(sq_dist(z.row(i), centroids.row(j)), alpha)).collect();
        let top = logs.iter().copied().fold(T::neg_infinity(), T::max);
        let e: Vec<T> = logs.iter().map(|&l| (l - top).exp()).collect();
        let s = e.iter().copied().fold(T::zero(), |a, b| a + b);
        for (o, v) in q.row_mut(i).iter_mut().zip(e) {
            *o = v / s;
        }
    }
    Ok(q)
}

/// Sharpened targets `p_ij ∝ q_ij² / f_j` with cluster frequencies
/// `f_j = Σ_i q_ij`. Clusters with zero mass receive zero target.
pub fn target_distribution<T: Scalar>(q: &Matrix<T>) -> Matrix<T> {
    let f = q.col_means();
    let mut p = q.clone();
    for i in 0..q.rows() {
        let row = p.row_mut(i);
        for (v, &fj) in row.iter_mut().zip(&f) {
            *v = if fj > T::zero() { *v * *v / fj } else { T::zero() };
        }
        let s = row.iter().copied().fold(T::zero(), |a, b| a + b);
        if s > T::zero() {
            for v in row.iter_mut() {
                *v = *v / s;
            }
        }
    }
    p
}

/// `Σ_ij p_ij ln(p_ij / q_ij)` with `0·ln 0 = 0`.
pub fn loss_dec<T: Scalar>(p: &Matrix<T>, q: &Matrix<T>) -> Result<T> {
    if p.shape() != q.shape() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", p.shape(), q.shape())));
    }
    Ok(p.as_slice()
        .iter()
        .zip(q.as_slice())
        .filter(|(&pv, _)| pv > T::zero())
        .fold(T::zero(), |acc, (&pv, &qv)| acc + pv * (pv / qv).ln()))
}

/// Index of the nearest row of `to` for every row of `from` (ties to the
/// lower index).
pub fn nearest_rows<T: Scalar>(from: &Matrix<T>, to: &Matrix<T>) -> Vec<usize> {
    (0..from.rows())
        .map(|i| {
            let mut best = (T::infinity(), 0);
            for j in 0..to.rows() {
                let d = sq_dist(from.row(i), to.row(j));
                if d < best.0 {
                    best = (d, j);
                }
            }
            best.1
        })
        .collect()
}

/// `KL(Q̃ ‖ Q)` averaged over generated rows, each matched to its nearest real
/// latent, plus the Fisher-kernel MMD between real and generated latents.
pub fn consistency_loss<T: Scalar>(z: &Matrix<T>, z_gen: &Matrix<T>, q: &Matrix<T>, q_gen: &Matrix<T>) -> Result<T> {
    if z_gen.rows() == 0 {
        return Err(Error::EmptyGenerated);
    }
    if q.rows() != z.rows() || q_gen.rows() != z_gen.rows() || q.cols() != q_gen.cols() {
        return Err(Error::DimensionMismatch("assignment and latent shapes disagree".into()));
    }
    let matched = nearest_rows(z_gen, z);
    let mut kl = T::zero();
    for (i, &m) in matched.iter().enumerate() {
        for (&a, &b) in q_gen.row(i).iter().zip(q.row(m)) {
            if a > T::zero() {
                kl = kl + a * (a / b).ln();
            }
        }
    }
    let kl = kl / T::from_usize_lossy(z_gen.rows());
    Ok(kl + mmd_unbiased(z, z_gen, fisher_kernel)?)
}

/// Row-wise log soft assignment on the tape.
pub(crate) fn log_soft_assign_tape<T: Scalar>(t: &mut Tape<T>, z: Var, mu: Var, alpha: f64) -> Var {
    let k = t.value(mu).rows();
    let zsq = t.square(z);
    let zz = t.row_sum(zsq);
    let ones = t.constant(Matrix::filled(1, k, T::one()));
    let zz = t.matmul(zz, ones);
    let msq = t.square(mu);
    let mm = t.row_sum(msq);
    let mm = t.transpose(mm);
    let cross = t.matmul_nt(z, mu);
    let cross = t.scale(cross, T::lit(2.0));
    let d2 = t.add_row(zz, mm);
    let d2 = t.sub(d2, cross);
    let d2 = t.relu(d2);
    let s = t.scale(d2, T::lit(1.0 / alpha));
    let s = t.add_scalar(s, T::one());
    let s = t.ln(s);
    let s = t.scale(s, -T::lit((alpha + 1.0) / 2.0));
    t.log_softmax_rows(s, false)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentState<T> {
    pub centroids: Matrix<T>,
    pub q: Matrix<T>,
    pub p: Matrix<T>,
    pub alpha: f64,
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Config {
    pub epochs: usize,
    pub lr: f64,
    pub lambda_rec: f64,
    pub lambda_graph: f64,
    pub lambda_dec: f64,
    pub lambda_gan: f64,
    pub refresh_every: usize,
    /// Stop when fewer than this fraction of hard labels change at a refresh.
    pub stop_fraction: f64,
    pub alpha: f64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 1e-3,
            lambda_rec: 1.0,
            lambda_graph: 0.3,
            lambda_dec: 1.0,
            lambda_gan: 0.1,
            refresh_every: 20,
            stop_fraction: 0.001,
            alpha: 1.0,
        }
    }
}

/// The clustering objective for fixed targets `p` and a fixed noise draw.
/// Parameters are the encoder weights, the centroids and the generator.
pub struct Stage2Objective<'a, T> {
    x: &'a Matrix<T>,
    graph: &'a SpatialGraph<T>,
    stage1: &'a Stage1Config,
    config: &'a Stage2Config,
    running: &'a ParamSet<T>,
    p: &'a Matrix<T>,
    noise: Matrix<T>,
    n_encoder: usize,
}

pub(crate) struct Stage2Terms {
    rec: Var,
    graph: Var,
    dec: Var,
    cons: Var,
    total: Var,
}

impl<'a, T: Scalar> Stage2Objective<'a, T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        x: &'a Matrix<T>,
        graph: &'a SpatialGraph<T>,
        stage1: &'a Stage1Config,
        config: &'a Stage2Config,
        encoder: &'a EncoderParams<T>,
        p: &'a Matrix<T>,
        noise: Matrix<T>,
    ) -> Self {
        Self { x, graph, stage1, config, running: &encoder.running, p, noise, n_encoder: encoder.weights.len() }
    }

    pub(crate) fn forward(&self, t: &mut Tape<T>, params: &ParamSet<T>) -> (Stage2Terms, Vec<Var>, Vec<(Matrix<T>, Matrix<T>)>) {
        let cfg = self.config;
        let vars = bind(t, params, true);
        let (enc, rest) = vars.split_at(self.n_encoder);
        let (mu, gen) = rest.split_at(1);
        let xv = t.constant(self.x.clone());
        let (z, _, rec, graph, stats) = autoencoder_terms(t, enc, self.running, xv, self.x, self.graph, self.stage1);

        let lq = log_soft_assign_tape(t, z, mu[0], cfg.alpha);
        let n = self.x.rows();
        let plogp = self
            .p
            .as_slice()
            .iter()
            .filter(|&&v| v > T::zero())
            .fold(T::zero(), |a, &v| a + v * v.ln());
        let pv = t.constant(self.p.clone());
        let cross = t.mul(pv, lq);
        let cross = t.sum(cross);
        let dec = t.scale(cross, -T::one());
        let dec = t.add_scalar(dec, plogp);
        let dec = t.scale(dec, T::one() / T::from_usize_lossy(n));

        let (_, zf) = generated_latents(t, enc, gen, self.running, &self.noise);
        let lqf = log_soft_assign_tape(t, zf, mu[0], cfg.alpha);
        let matched = nearest_rows(t.value(zf), t.value(z));
        let lq_m = t.gather_rows(lq, &matched);
        let qf = t.exp(lqf);
        let diff = t.sub(lqf, lq_m);
        let kl = t.mul(qf, diff);
        let kl = t.sum(kl);
        let kl = t.scale(kl, T::one() / T::from_usize_lossy(self.noise.rows()));
        let mmd = fisher_mmd_tape(t, z, zf);
        let cons = t.add(kl, mmd);

        let mut total = t.scale(rec, T::lit(cfg.lambda_rec));
        for (term, w) in [(graph, cfg.lambda_graph), (dec, cfg.lambda_dec), (cons, cfg.lambda_gan)] {
            let s = t.scale(term, T::lit(w));
            total = t.add(total, s);
        }
        (Stage2Terms { rec, graph, dec, cons, total }, vars, stats)
    }
}

impl<T: Scalar> Objective<T> for Stage2Objective<'_, T> {
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

/// Encoder weights, centroids and generator as one trainable set.
pub fn stage2_params<T: Scalar>(enc: &EncoderParams<T>, centroids: &Matrix<T>, gan: &GanParams<T>) -> ParamSet<T> {
    let mut all = ParamSet::new();
    all.extend_prefixed("encoder/", &enc.weights);
    let mut c = ParamSet::new();
    c.push("mu", centroids.clone());
    all.extend_prefixed("centroids/", &c);
    all.extend_prefixed("generator/", &gan.generator);
    all
}

pub struct Stage2Result<T> {
    pub encoder: EncoderParams<T>,
    pub gan: GanParams<T>,
    pub state: AssignmentState<T>,
    /// Eval-mode embedding after refinement.
    pub z: Matrix<T>,
    pub trace: LossTrace,
}

fn hard_labels<T: Scalar>(q: &Matrix<T>) -> Vec<usize> {
    (0..q.rows()).map(|i| argmax(q.row(i))).collect()
}

#[allow(clippy::too_many_arguments)]
pub fn train_stage2<T: Scalar>(
    encoder: &EncoderParams<T>,
    gan: &GanParams<T>,
    x: &Matrix<T>,
    graph: &SpatialGraph<T>,
    k: usize,
    stage1: &Stage1Config,
    config: &Stage2Config,
    rng: &mut SeededRng,
) -> Result<Stage2Result<T>> {
    if k == 0 {
        return Err(Error::InvalidArgument("cluster count must be positive".into()));
    }
    let n = x.rows();
    let mut enc = encoder.clone();
    let mut gan = gan.clone();
    let z0 = encode(x, graph, &enc, Mode::Eval)?;
    let init = kmeans_fit(&z0, k, rng)?;
    let counts = [enc.weights.len(), 1, gan.generator.len()];
    let mut joint = stage2_params(&enc, &init.centroids, &gan);
    let mut opt = Adam::new(AdamConfig { lr: config.lr, ..AdamConfig::default() }, &joint);
    let mut trace = LossTrace::new(&STAGE2_COLUMNS);
    let mut p = Matrix::zeros(n, k);
    let mut previous: Option<Vec<usize>> = None;
    let mut strikes = 0;
    let floor = 1e-3 * n as f64 / k as f64;
    let refresh = config.refresh_every.max(1);

    for epoch in 0..config.epochs {
        if epoch % refresh == 0 {
            let z = encode(x, graph, &enc, Mode::Train)?;
            let q = soft_assign(&z, joint.by_index(counts[0]), config.alpha)?;
            let labels = hard_labels(&q);
            if let Some(prev) = &previous {
                let changed = labels.iter().zip(prev).filter(|(a, b)| a != b).count();
                if (changed as f64) < config.stop_fraction * n as f64 {
                    log::debug!("stage2 converged at epoch {epoch}");
                    break;
                }
            }
            let mass = q.col_means();
            if let Some(c) = mass.iter().position(|&m| m.as_f64() * (n as f64) < floor) {
                strikes += 1;
                if strikes >= 3 {
                    return Err(Error::ClusterCollapse { cluster: c });
                }
            } else {
                strikes = 0;
            }
            p = target_distribution(&q);
            previous = Some(labels);
        }
        let noise = gan.sample_noise(n, rng);
        let obj = Stage2Objective::new(x, graph, stage1, config, &enc, &p, noise);
        let mut t = Tape::new();
        let (terms, vars, stats) = obj.forward(&mut t, &joint);
        let values: Vec<f64> =
            [terms.rec, terms.graph, terms.dec, terms.cons, terms.total].iter().map(|&v| t.scalar(v).as_f64()).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::DivergedLoss { stage: "stage2", epoch });
        }
        let g = t.backward(terms.total);
        let grads = collect_grads(&g, &vars, &joint);
        opt.step(&mut joint, &grads);
        if !joint.all_finite() {
            return Err(Error::DivergedLoss { stage: "stage2", epoch });
        }
        enc.update_running(&stats);
        let parts = joint.split(&counts);
        enc.weights = parts[0].clone();
        gan.generator = parts[2].clone();
        trace.push(values);
    }

    let centroids = joint.by_index(counts[0]).clone();
    let z = encode(x, graph, &enc, Mode::Eval)?;
    let q = soft_assign(&z, &centroids, config.alpha)?;
    let p = target_distribution(&q);
    Ok(Stage2Result { encoder: enc, gan, state: AssignmentState { centroids, q, p, alpha: config.alpha, k }, z, trace })
}
