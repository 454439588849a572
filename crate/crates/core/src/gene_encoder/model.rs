//! Encoder, decoders, masking and the GAN networks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamSet, SeededRng, Tape, Var};
use crate::scalar::Scalar;
use crate::spatial_graph::SpatialGraph;
use crate::training::glorot;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const DEFAULT_MASK_RATIO: f64 = 0.8;

// Positions of the encoder tensors inside `EncoderParams::weights`.
pub(crate) const W1: usize = 0;
pub(crate) const B1: usize = 1;
pub(crate) const GAMMA1: usize = 2;
pub(crate) const BETA1: usize = 3;
pub(crate) const W2: usize = 4;
pub(crate) const B2: usize = 5;
pub(crate) const GAMMA2: usize = 6;
pub(crate) const BETA2: usize = 7;
pub(crate) const GCN0: usize = 8;
pub(crate) const GCN1: usize = 9;
pub(crate) const DEC_W: usize = 10;
pub(crate) const DEC_B: usize = 11;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub genes: usize,
    pub d1: usize,
    pub d2: usize,
}

impl EncoderDims {
    pub fn dz(&self) -> usize {
        self.d1 + self.d2
    }
}

/// Batch-norm statistics source.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Dual-branch encoder plus expression decoder.
///
/// `weights` holds, in order: `mlp.w1, mlp.b1, bn1.gamma, bn1.beta, mlp.w2,
/// mlp.b2, bn2.gamma, bn2.beta, gcn.w0, gcn.w1, dec.w, dec.b`. `running`
/// holds the batch-norm running means and variances.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T> {
    pub dims: EncoderDims,
    pub weights: ParamSet<T>,
    pub running: ParamSet<T>,
}

impl<T: Scalar> EncoderParams<T> {
    pub fn init(dims: EncoderDims, rng: &mut SeededRng) -> Self {
        let EncoderDims { genes, d1, d2 } = dims;
        let mut w = ParamSet::new();
        w.push("mlp.w1", glorot(genes, d1, rng));
        w.push("mlp.b1", Matrix::zeros(1, d1));
        w.push("bn1.gamma", Matrix::filled(1, d1, T::one()));
        w.push("bn1.beta", Matrix::zeros(1, d1));
        w.push("mlp.w2", glorot(d1, d1, rng));
        w.push("mlp.b2", Matrix::zeros(1, d1));
        w.push("bn2.gamma", Matrix::filled(1, d1, T::one()));
        w.push("bn2.beta", Matrix::zeros(1, d1));
        w.push("gcn.w0", glorot(d1, d2, rng));
        w.push("gcn.w1", glorot(d2, d2, rng));
        w.push("dec.w", glorot(dims.dz(), genes, rng));
        w.push("dec.b", Matrix::zeros(1, genes));
        let mut running = ParamSet::new();
        for l in 1..=2 {
            running.push(format!("bn{l}.mean"), Matrix::zeros(1, d1));
            running.push(format!("bn{l}.var"), Matrix::filled(1, d1, T::one()));
        }
        Self { dims, weights: w, running }
    }

    /// Blends batch statistics into the running estimates.
    pub(crate) fn update_running(&mut self, batch: &[(Matrix<T>, Matrix<T>)]) {
        let mom = T::lit(BN_MOMENTUM);
        for (l, (mean, var)) in batch.iter().enumerate() {
            for (slot, new) in [(2 * l, mean), (2 * l + 1, var)] {
                let old = self.running.by_index_mut(slot);
                *old = old.zip_map(new, |o, n| (T::one() - mom) * o + mom * n);
            }
        }
    }
}

/// Generator (noise to expression) and discriminator (expression to logit).
#[derive(Clone, Debug, PartialEq)]
pub struct GanParams<T> {
    pub noise_dim: usize,
    /// `w1: d_n×h, b1, w2: h×G, b2` where `h` is the latent width, so that
    /// latent vectors can be injected at the final-layer input.
    pub generator: ParamSet<T>,
    /// `w1: G×h_d, b1, w2: h_d×1, b2`.
    pub discriminator: ParamSet<T>,
}

impl<T: Scalar> GanParams<T> {
    pub fn init(noise_dim: usize, hidden: usize, genes: usize, disc_hidden: usize, rng: &mut SeededRng) -> Self {
        let mut g = ParamSet::new();
        g.push("w1", glorot(noise_dim, hidden, rng));
        g.push("b1", Matrix::zeros(1, hidden));
        g.push("w2", glorot(hidden, genes, rng));
        g.push("b2", Matrix::zeros(1, genes));
        let mut d = ParamSet::new();
        d.push("w1", glorot(genes, disc_hidden, rng));
        d.push("b1", Matrix::zeros(1, disc_hidden));
        d.push("w2", glorot(disc_hidden, 1, rng));
        d.push("b2", Matrix::zeros(1, 1));
        Self { noise_dim, generator: g, discriminator: d }
    }

    /// Width of the generator's final-layer input.
    pub fn hidden(&self) -> usize {
        self.generator.by_index(2).rows()
    }

    pub fn genes(&self) -> usize {
        self.generator.by_index(2).cols()
    }

    pub fn sample_noise(&self, n: usize, rng: &mut SeededRng) -> Matrix<T> {
        Matrix::from_fn(n, self.noise_dim, |_, _| rng.normal_scalar())
    }

    pub fn generate(&self, noise: &Matrix<T>) -> Matrix<T> {
        let mut t = Tape::new();
        let g = crate::training::bind(&mut t, &self.generator, false);
        let n = t.constant(noise.clone());
        let out = generator_on_tape(&mut t, &g, n);
        t.value(out).clone()
    }

    pub fn discriminate(&self, x: &Matrix<T>) -> Matrix<T> {
        let mut t = Tape::new();
        let d = crate::training::bind(&mut t, &self.discriminator, false);
        let xv = t.constant(x.clone());
        let out = discriminator_on_tape(&mut t, &d, xv);
        t.value(out).clone()
    }
}

pub(crate) fn generator_on_tape<T: Scalar>(t: &mut Tape<T>, g: &[Var], noise: Var) -> Var {
    let h = t.matmul(noise, g[0]);
    let h = t.add_row(h, g[1]);
    let h = t.elu(h);
    let o = t.matmul(h, g[2]);
    t.add_row(o, g[3])
}

pub(crate) fn discriminator_on_tape<T: Scalar>(t: &mut Tape<T>, d: &[Var], x: Var) -> Var {
    let h = t.matmul(x, d[0]);
    let h = t.add_row(h, d[1]);
    let h = t.leaky_relu(h, T::lit(0.2));
    let o = t.matmul(h, d[2]);
    t.add_row(o, d[3])
}

/// Rows of the spot set that receive the perturbation, plus the perturbation.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskState<T> {
    pub masked_indices: Vec<usize>,
    /// Learnable `1×G` perturbation vector.
    pub perturbation: Matrix<T>,
    pub ratio: f64,
}

impl<T: Scalar> MaskState<T> {
    /// Draws `round(ratio·N)` rows without replacement.
    pub fn sample(n: usize, perturbation: Matrix<T>, ratio: f64, rng: &mut SeededRng) -> Self {
        let count = ((ratio * n as f64).round() as usize).min(n);
        Self { masked_indices: rng.sample_indices(n, count), perturbation, ratio }
    }

    /// `N×1` indicator column of masked rows.
    pub fn indicator(&self, n: usize) -> Matrix<T> {
        row_indicator(n, &self.masked_indices)
    }
}

pub(crate) fn row_indicator<T: Scalar>(n: usize, rows: &[usize]) -> Matrix<T> {
    let mut m = Matrix::zeros(n, 1);
    for &i in rows {
        m[(i, 0)] = T::one();
    }
    m
}

pub fn apply_additive_mask<T: Scalar>(x: &Matrix<T>, state: &MaskState<T>) -> Result<Matrix<T>> {
    if state.perturbation.shape() != (1, x.cols()) {
        return Err(Error::DimensionMismatch(format!(
            "perturbation is {:?}, expression has {} genes",
            state.perturbation.shape(),
            x.cols()
        )));
    }
    let mut out = x.clone();
    for &i in &state.masked_indices {
        if i >= x.rows() {
            return Err(Error::DimensionMismatch(format!("masked row {i} outside {} rows", x.rows())));
        }
        for (o, &p) in out.row_mut(i).iter_mut().zip(state.perturbation.row(0)) {
            *o = *o + p;
        }
    }
    Ok(out)
}

fn batch_norm<T: Scalar>(
    t: &mut Tape<T>,
    h: Var,
    gamma: Var,
    beta: Var,
    running: (&Matrix<T>, &Matrix<T>),
    mode: Mode,
    stats: &mut Vec<(Matrix<T>, Matrix<T>)>,
) -> Var {
    let eps = T::lit(BN_EPS);
    let normed = match mode {
        Mode::Train => {
            let mu = t.col_mean(h);
            let c = t.sub_row(h, mu);
            let sq = t.square(c);
            let var = t.col_mean(sq);
            stats.push((t.value(mu).clone(), t.value(var).clone()));
            let v = t.add_scalar(var, eps);
            let s = t.sqrt(v);
            t.div_row(c, s)
        }
        Mode::Eval => {
            let mu = t.constant(running.0.clone());
            let s = t.constant(running.1.map(|v| (v + eps).sqrt()));
            let c = t.sub_row(h, mu);
            t.div_row(c, s)
        }
    };
    let y = t.mul_row(normed, gamma);
    t.add_row(y, beta)
}

/// Encoder forward pass on a tape. `w` are the bound encoder weights; the
/// returned statistics are the train-mode batch moments of each BN layer.
pub(crate) fn encode_on_tape<T: Scalar>(
    t: &mut Tape<T>,
    w: &[Var],
    running: &ParamSet<T>,
    x: Var,
    a_norm: Var,
    mode: Mode,
) -> (Var, Vec<(Matrix<T>, Matrix<T>)>) {
    let mut stats = Vec::new();
    let mut h = x;
    for (l, (wi, bi, gi, bei)) in [(W1, B1, GAMMA1, BETA1), (W2, B2, GAMMA2, BETA2)].into_iter().enumerate() {
        let lin = t.matmul(h, w[wi]);
        let lin = t.add_row(lin, w[bi]);
        let act = t.elu(lin);
        let run = (running.by_index(2 * l), running.by_index(2 * l + 1));
        h = batch_norm(t, act, w[gi], w[bei], run, mode, &mut stats);
    }
    let h_mlp = h;
    let mut g = h_mlp;
    for wi in [GCN0, GCN1] {
        let hw = t.matmul(g, w[wi]);
        let prop = t.matmul(a_norm, hw);
        g = t.relu(prop);
    }
    (t.concat_cols(h_mlp, g), stats)
}

pub(crate) fn decode_on_tape<T: Scalar>(t: &mut Tape<T>, w: &[Var], z: Var, a_norm: Var) -> Var {
    let zw = t.matmul(z, w[DEC_W]);
    let prop = t.matmul(a_norm, zw);
    t.add_row(prop, w[DEC_B])
}

fn check_graph<T: Scalar>(x: &Matrix<T>, graph: &SpatialGraph<T>) -> Result<()> {
    if graph.n != x.rows() {
        return Err(Error::DimensionMismatch(format!("graph has {} spots, input has {} rows", graph.n, x.rows())));
    }
    Ok(())
}

/// Latent embedding `Z = [H_mlp ‖ H_gcn]`.
pub fn encode<T: Scalar>(x: &Matrix<T>, graph: &SpatialGraph<T>, params: &EncoderParams<T>, mode: Mode) -> Result<Matrix<T>> {
    check_graph(x, graph)?;
    if x.cols() != params.dims.genes {
        return Err(Error::DimensionMismatch(format!(
            "input has {} genes, encoder expects {}",
            x.cols(),
            params.dims.genes
        )));
    }
    let mut t = Tape::new();
    let w = crate::training::bind(&mut t, &params.weights, false);
    let xv = t.constant(x.clone());
    let a = t.constant(graph.normalized.clone());
    let (z, _) = encode_on_tape(&mut t, &w, &params.running, xv, a, mode);
    Ok(t.value(z).clone())
}

/// Expression reconstruction `X̂ = Ã Z W_dec + b_dec`.
pub fn decode_expression<T: Scalar>(z: &Matrix<T>, graph: &SpatialGraph<T>, params: &EncoderParams<T>) -> Result<Matrix<T>> {
    check_graph(z, graph)?;
    if z.cols() != params.dims.dz() {
        return Err(Error::DimensionMismatch(format!(
            "latent width {} but decoder expects {}",
            z.cols(),
            params.dims.dz()
        )));
    }
    let mut t = Tape::new();
    let w = crate::training::bind(&mut t, &params.weights, false);
    let zv = t.constant(z.clone());
    let a = t.constant(graph.normalized.clone());
    let out = decode_on_tape(&mut t, &w, zv, a);
    Ok(t.value(out).clone())
}

/// Edge probabilities `sigmoid(z_i·z_j)`.
pub fn decode_adjacency<T: Scalar>(z: &Matrix<T>) -> Matrix<T> {
    let s = z.matmul_nt(z);
    let n = s.rows();
    // Fill the upper triangle and mirror it so symmetry is exact.
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = T::one() / (T::one() + (-s[(i, j)]).exp());
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}
