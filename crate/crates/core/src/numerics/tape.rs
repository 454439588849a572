//! Minimal reverse-mode differentiation over dense matrices.
//!
//! Every trainable objective in the crate is written against [`Tape`], so the
//! analytic gradient of each loss comes from one backward sweep. Values are
//! computed eagerly; `backward` walks the node list in reverse.

use crate::numerics::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    SubRow(Var, Var),
    MulRow(Var, Var),
    DivRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Elu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Square(Var),
    PowF(Var, T),
    Sum(Var),
    Mean(Var),
    ColMean(Var),
    RowSum(Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    RowL2Normalize(Var),
    LogSoftmaxRows(Var, bool),
    SoftmaxRows(Var),
    GatherRows(Var, Vec<usize>),
}

struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients indexed by [`Var`]; `None` where no gradient flowed.
pub struct Grads<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for `v`, or zeros shaped like `like` if none flowed.
    pub fn get_or_zeros(&self, v: Var, rows: usize, cols: usize) -> Matrix<T> {
        self.grads[v.0].clone().unwrap_or_else(|| Matrix::zeros(rows, cols))
    }
}

fn colsum<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(1, m.cols());
    for i in 0..m.rows() {
        for (o, &x) in out.row_mut(0).iter_mut().zip(m.row(i)) {
            *o = *o + x;
        }
    }
    out
}

fn broadcast_row<T: Scalar>(a: &Matrix<T>, r: &Matrix<T>, f: impl Fn(T, T) -> T) -> Matrix<T> {
    assert_eq!(r.rows(), 1, "row operand must be 1xd");
    assert_eq!(a.cols(), r.cols(), "row broadcast width mismatch");
    let rr = r.row(0);
    Matrix::from_fn(a.rows(), a.cols(), |i, j| f(a[(i, j)], rr[j]))
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn log_softmax_rows<T: Scalar>(a: &Matrix<T>, exclude_diag: bool) -> Matrix<T> {
    let mut out = Matrix::zeros(a.rows(), a.cols());
    for i in 0..a.rows() {
        let row = a.row(i);
        let keep = |j: usize| !(exclude_diag && i == j);
        let mut mx = T::neg_infinity();
        for (j, &x) in row.iter().enumerate() {
            if keep(j) {
                mx = mx.max(x);
            }
        }
        if mx == T::neg_infinity() {
            continue;
        }
        let mut s = T::zero();
        for (j, &x) in row.iter().enumerate() {
            if keep(j) {
                s = s + (x - mx).exp();
            }
        }
        let lse = mx + s.ln();
        for (j, &x) in row.iter().enumerate() {
            if keep(j) {
                out[(i, j)] = x - lse;
            }
        }
    }
    out
}

/// Row softmax of `a`, optionally excluding the diagonal (excluded entries are 0).
pub fn softmax_rows<T: Scalar>(a: &Matrix<T>, exclude_diag: bool) -> Matrix<T> {
    let ls = log_softmax_rows(a, exclude_diag);
    Matrix::from_fn(a.rows(), a.cols(), |i, j| {
        if exclude_diag && i == j {
            T::zero()
        } else {
            ls[(i, j)].exp()
        }
    })
}

fn row_l2_normalize<T: Scalar>(a: &Matrix<T>) -> Matrix<T> {
    let mut out = a.clone();
    for i in 0..a.rows() {
        let n = a.row(i).iter().fold(T::zero(), |s, &x| s + x * x).sqrt();
        let r = out.row_mut(i);
        if n > T::zero() {
            for x in r.iter_mut() {
                *x = *x / n;
            }
        } else {
            r.iter_mut().for_each(|x| *x = T::zero());
        }
    }
    out
}

/// Rows scaled to unit L2 norm; all-zero rows stay zero.
pub fn normalize_rows<T: Scalar>(a: &Matrix<T>) -> Matrix<T> {
    row_l2_normalize(a)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m[(0, 0)]
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(value, op, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_nt(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMulNT(a, b), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let ng = self.ng(a);
        self.push(value, Op::Transpose(a), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).add(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).sub(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    /// `a + r` with the `1×d` row `r` broadcast over rows.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let value = broadcast_row(self.value(a), self.value(r), |x, y| x + y);
        let ng = self.ng(a) || self.ng(r);
        self.push(value, Op::AddRow(a, r), ng)
    }

    pub fn sub_row(&mut self, a: Var, r: Var) -> Var {
        let value = broadcast_row(self.value(a), self.value(r), |x, y| x - y);
        let ng = self.ng(a) || self.ng(r);
        self.push(value, Op::SubRow(a, r), ng)
    }

    pub fn mul_row(&mut self, a: Var, r: Var) -> Var {
        let value = broadcast_row(self.value(a), self.value(r), |x, y| x * y);
        let ng = self.ng(a) || self.ng(r);
        self.push(value, Op::MulRow(a, r), ng)
    }

    pub fn div_row(&mut self, a: Var, r: Var) -> Var {
        let value = broadcast_row(self.value(a), self.value(r), |x, y| x / y);
        let ng = self.ng(a) || self.ng(r);
        self.push(value, Op::DivRow(a, r), ng)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.unary(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + s)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(T::zero()))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), |x| if x > T::zero() { x } else { x * slope })
    }

    /// ELU with unit scale.
    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Elu(a), |x| if x > T::zero() { x } else { x.exp_m1() })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    /// `ln(1 + eˣ)`, evaluated stably.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), |x| x.exp())
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Op::Ln(a), |x| x.ln())
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), |x| x.sqrt())
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn powf(&mut self, a: Var, p: T) -> Var {
        self.unary(a, Op::PowF(a, p), |x| x.powf(p))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        let ng = self.ng(a);
        self.push(value, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).mean());
        let ng = self.ng(a);
        self.push(value, Op::Mean(a), ng)
    }

    /// Column means as a `1×d` row.
    pub fn col_mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let value = Matrix::from_vec(1, m.cols(), m.col_means());
        let ng = self.ng(a);
        self.push(value, Op::ColMean(a), ng)
    }

    /// Row sums as an `n×1` column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let value = Matrix::from_vec(m.rows(), 1, m.row_sums());
        let ng = self.ng(a);
        self.push(value, Op::RowSum(a), ng)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).hstack(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::ConcatCols(a, b), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let idx: Vec<usize> = (start..start + width).collect();
        let value = self.value(a).select_cols(&idx);
        let ng = self.ng(a);
        self.push(value, Op::SliceCols(a, start), ng)
    }

    /// Each row scaled to unit L2 norm; zero rows map to zero.
    pub fn row_l2_normalize(&mut self, a: Var) -> Var {
        let value = row_l2_normalize(self.value(a));
        let ng = self.ng(a);
        self.push(value, Op::RowL2Normalize(a), ng)
    }

    /// Row-wise log-softmax. With `exclude_diag`, the diagonal is left out of
    /// the normalization and its output entry is 0.
    pub fn log_softmax_rows(&mut self, a: Var, exclude_diag: bool) -> Var {
        let value = log_softmax_rows(self.value(a), exclude_diag);
        let ng = self.ng(a);
        self.push(value, Op::LogSoftmaxRows(a, exclude_diag), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a), false);
        let ng = self.ng(a);
        self.push(value, Op::SoftmaxRows(a), ng)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let value = self.value(a).select_rows(idx);
        let ng = self.ng(a);
        self.push(value, Op::GatherRows(a, idx.to_vec()), ng)
    }

    /// Reverse sweep from the scalar `root`.
    pub fn backward(&self, root: Var) -> Grads<T> {
        assert_eq!(self.value(root).shape(), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Matrix<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Matrix::filled(1, 1, T::one()));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let y = &node.value;
            let acc = |v: Var, d: Matrix<T>, grads: &mut Vec<Option<Matrix<T>>>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&d),
                    slot @ None => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        acc(*a, g.matmul_nt(self.value(*b)), &mut grads);
                    }
                    if self.ng(*b) {
                        acc(*b, self.value(*a).matmul_tn(&g), &mut grads);
                    }
                }
                Op::MatMulNT(a, b) => {
                    if self.ng(*a) {
                        acc(*a, g.matmul(self.value(*b)), &mut grads);
                    }
                    if self.ng(*b) {
                        acc(*b, g.matmul_tn(self.value(*a)), &mut grads);
                    }
                }
                Op::Transpose(a) => acc(*a, g.transpose(), &mut grads),
                Op::Add(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g, &mut grads);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g.scale(-T::one()), &mut grads);
                }
                Op::Mul(a, b) => {
                    acc(*a, g.zip_map(self.value(*b), |x, y| x * y), &mut grads);
                    acc(*b, g.zip_map(self.value(*a), |x, y| x * y), &mut grads);
                }
                Op::AddRow(a, r) => {
                    acc(*r, colsum(&g), &mut grads);
                    acc(*a, g, &mut grads);
                }
                Op::SubRow(a, r) => {
                    acc(*r, colsum(&g).scale(-T::one()), &mut grads);
                    acc(*a, g, &mut grads);
                }
                Op::MulRow(a, r) => {
                    let av = self.value(*a);
                    let rv = self.value(*r);
                    acc(*r, colsum(&g.zip_map(av, |x, y| x * y)), &mut grads);
                    acc(*a, broadcast_row(&g, rv, |x, y| x * y), &mut grads);
                }
                Op::DivRow(a, r) => {
                    let av = self.value(*a);
                    let rv = self.value(*r);
                    let ga = broadcast_row(&g, rv, |x, y| x / y);
                    let gr = broadcast_row(&ga.zip_map(av, |x, y| x * y), rv, |x, y| -x / y);
                    acc(*r, colsum(&gr), &mut grads);
                    acc(*a, ga, &mut grads);
                }
                Op::Scale(a, s) => acc(*a, g.scale(*s), &mut grads),
                Op::AddScalar(a) => acc(*a, g, &mut grads),
                Op::Relu(a) => {
                    let x = self.value(*a);
                    acc(*a, g.zip_map(x, |gi, xi| if xi > T::zero() { gi } else { T::zero() }), &mut grads);
                }
                Op::LeakyRelu(a, s) => {
                    let x = self.value(*a);
                    let s = *s;
                    acc(*a, g.zip_map(x, |gi, xi| if xi > T::zero() { gi } else { gi * s }), &mut grads);
                }
                Op::Elu(a) => {
                    let x = self.value(*a);
                    acc(*a, g.zip_map(x, |gi, xi| if xi > T::zero() { gi } else { gi * xi.exp() }), &mut grads);
                }
                Op::Sigmoid(a) => acc(*a, g.zip_map(y, |gi, yi| gi * yi * (T::one() - yi)), &mut grads),
                Op::Softplus(a) => {
                    let x = self.value(*a);
                    acc(*a, g.zip_map(x, |gi, xi| gi * sigmoid(xi)), &mut grads);
                }
                Op::Exp(a) => acc(*a, g.zip_map(y, |gi, yi| gi * yi), &mut grads),
                Op::Ln(a) => {
                    let x = self.value(*a);
                    acc(*a, g.zip_map(x, |gi, xi| gi / xi), &mut grads);
                }
                Op::Sqrt(a) => {
                    acc(*a, g.zip_map(y, |gi, yi| gi / (yi + yi)), &mut grads);
                }
                Op::Square(a) => {
                    let x = self.value(*a);
                    let two = T::lit(2.0);
                    acc(*a, g.zip_map(x, |gi, xi| gi * two * xi), &mut grads);
                }
                Op::PowF(a, p) => {
                    let x = self.value(*a);
                    let p = *p;
                    acc(*a, g.zip_map(x, |gi, xi| gi * p * xi.powf(p - T::one())), &mut grads);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(*a, Matrix::filled(r, c, g[(0, 0)]), &mut grads);
                }
                Op::Mean(a) => {
                    let (r, c) = self.value(*a).shape();
                    let n = T::from_usize_lossy((r * c).max(1));
                    acc(*a, Matrix::filled(r, c, g[(0, 0)] / n), &mut grads);
                }
                Op::ColMean(a) => {
                    let (r, c) = self.value(*a).shape();
                    let n = T::from_usize_lossy(r.max(1));
                    acc(*a, Matrix::from_fn(r, c, |_, j| g[(0, j)] / n), &mut grads);
                }
                Op::RowSum(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(*a, Matrix::from_fn(r, c, |i, _| g[(i, 0)]), &mut grads);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).cols();
                    let cb = self.value(*b).cols();
                    acc(*a, g.select_cols(&(0..ca).collect::<Vec<_>>()), &mut grads);
                    acc(*b, g.select_cols(&(ca..ca + cb).collect::<Vec<_>>()), &mut grads);
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = self.value(*a).shape();
                    let mut d = Matrix::zeros(r, c);
                    for i in 0..r {
                        for j in 0..g.cols() {
                            d[(i, start + j)] = g[(i, j)];
                        }
                    }
                    acc(*a, d, &mut grads);
                }
                Op::RowL2Normalize(a) => {
                    let x = self.value(*a);
                    let mut d = Matrix::zeros(x.rows(), x.cols());
                    for i in 0..x.rows() {
                        let n = x.row(i).iter().fold(T::zero(), |s, &v| s + v * v).sqrt();
                        if n == T::zero() {
                            continue;
                        }
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let yg = yr.iter().zip(gr).fold(T::zero(), |s, (&a, &b)| s + a * b);
                        for (j, dv) in d.row_mut(i).iter_mut().enumerate() {
                            *dv = (gr[j] - yr[j] * yg) / n;
                        }
                    }
                    acc(*a, d, &mut grads);
                }
                Op::LogSoftmaxRows(a, excl) => {
                    let excl = *excl;
                    let mut d = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let gr = g.row(i);
                        let yr = y.row(i);
                        let gs = gr
                            .iter()
                            .enumerate()
                            .filter(|(j, _)| !(excl && *j == i))
                            .fold(T::zero(), |s, (_, &v)| s + v);
                        for (j, dv) in d.row_mut(i).iter_mut().enumerate() {
                            if excl && j == i {
                                continue;
                            }
                            *dv = gr[j] - yr[j].exp() * gs;
                        }
                    }
                    acc(*a, d, &mut grads);
                }
                Op::SoftmaxRows(a) => {
                    let mut d = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let gr = g.row(i);
                        let yr = y.row(i);
                        let gy = gr.iter().zip(yr).fold(T::zero(), |s, (&a, &b)| s + a * b);
                        for (j, dv) in d.row_mut(i).iter_mut().enumerate() {
                            *dv = yr[j] * (gr[j] - gy);
                        }
                    }
                    acc(*a, d, &mut grads);
                }
                Op::GatherRows(a, idx) => {
                    let (r, c) = self.value(*a).shape();
                    let mut d = Matrix::zeros(r, c);
                    for (k, &src) in idx.iter().enumerate() {
                        for (dv, &gv) in d.row_mut(src).iter_mut().zip(g.row(k)) {
                            *dv = *dv + gv;
                        }
                    }
                    acc(*a, d, &mut grads);
                }
            }
        }
        Grads { grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::SeededRng;

    fn rand_mat(r: usize, c: usize, rng: &mut SeededRng) -> Matrix<f64> {
        Matrix::from_fn(r, c, |_, _| rng.normal())
    }

    /// Central-difference check of d(loss)/d(leaf) for a closure-built graph.
    fn check(build: impl Fn(&mut Tape<f64>, Var) -> Var, x0: Matrix<f64>) {
        let mut t = Tape::new();
        let x = t.param(x0.clone());
        let out = build(&mut t, x);
        let g = t.backward(out).get(x).cloned().unwrap();
        let eps = 1e-6;
        for k in 0..x0.as_slice().len() {
            let eval = |delta: f64| {
                let mut xp = x0.clone();
                xp.as_mut_slice()[k] += delta;
                let mut t = Tape::new();
                let x = t.param(xp);
                let o = build(&mut t, x);
                t.scalar(o)
            };
            let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let an = g.as_slice()[k];
            assert!((fd - an).abs() <= 1e-5 * (1.0 + an.abs()), "entry {k}: fd {fd} vs analytic {an}");
        }
    }

    #[test]
    fn elementwise_ops_differentiate() {
        let mut rng = SeededRng::new(11);
        let x0 = rand_mat(3, 4, &mut rng);
        check(|t, x| { let y = t.elu(x); t.sum(y) }, x0.clone());
        check(|t, x| { let y = t.sigmoid(x); let y = t.square(y); t.mean(y) }, x0.clone());
        check(|t, x| { let y = t.softplus(x); t.sum(y) }, x0.clone());
        check(|t, x| { let y = t.leaky_relu(x, 0.2); let y = t.exp(y); t.sum(y) }, x0.clone());
        check(|t, x| { let y = t.square(x); let y = t.add_scalar(y, 1.0); let y = t.sqrt(y); let y = t.ln(y); t.sum(y) }, x0.clone());
        check(|t, x| { let y = t.square(x); let y = t.powf(y, 1.5); t.sum(y) }, x0);
    }

    #[test]
    fn structural_ops_differentiate() {
        let mut rng = SeededRng::new(12);
        let x0 = rand_mat(4, 3, &mut rng);
        let b0 = rand_mat(3, 5, &mut rng);
        let r0 = Matrix::from_fn(1, 3, |_, j| 1.5 + j as f64);
        check(
            |t, x| {
                let b = t.constant(b0.clone());
                let y = t.matmul(x, b);
                let yt = t.transpose(y);
                let z = t.matmul_nt(yt, yt);
                let z = t.softmax_rows(z);
                let w = t.gather_rows(z, &[0, 2, 2]);
                t.sum(w)
            },
            x0.clone(),
        );
        check(
            |t, x| {
                let r = t.constant(r0.clone());
                let a = t.add_row(x, r);
                let b = t.mul_row(a, r);
                let c = t.div_row(b, r);
                let d = t.sub_row(c, r);
                let m = t.col_mean(d);
                let dm = t.sub_row(d, m);
                let sq = t.square(dm);
                let rs = t.row_sum(sq);
                let cat = t.concat_cols(rs, x);
                let s = t.slice_cols(cat, 1, 2);
                let n = t.row_l2_normalize(s);
                let l = t.log_softmax_rows(n, false);
                t.sum(l)
            },
            x0.clone(),
        );
        check(
            |t, x| {
                let s = t.matmul_nt(x, x);
                let l = t.log_softmax_rows(s, true);
                let p = t.exp(l);
                let q = t.mul(p, l);
                t.sum(q)
            },
            x0,
        );
    }

    #[test]
    fn row_broadcast_grads_reach_row_operand() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(Matrix::filled(3, 2, 2.0));
        let r = t.param(Matrix::from_f64(1, 2, &[1.0, 4.0]));
        let d = t.div_row(a, r);
        let s = t.sum(d);
        let g = t.backward(s);
        let gr = g.get(r).unwrap();
        assert!((gr[(0, 0)] + 6.0).abs() < 1e-12);
        assert!((gr[(0, 1)] + 6.0 / 16.0).abs() < 1e-12);
        assert!(g.get(a).is_none());
    }
}
