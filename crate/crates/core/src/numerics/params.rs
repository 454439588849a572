//! Named parameter tensors and the Adam optimizer.

use crate::numerics::matrix::Matrix;
use crate::scalar::Scalar;

/// Ordered collection of named tensors. Order is significant: it fixes the
/// flattening used by gradient checks and checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    entries: Vec<(String, Matrix<T>)>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, m: Matrix<T>) {
        self.entries.push((name.into(), m));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, m)| m.as_slice().len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix<T>)> {
        self.entries.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub fn get(&self, name: &str) -> Option<&Matrix<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn by_index(&self, i: usize) -> &Matrix<T> {
        &self.entries[i].1
    }

    pub fn by_index_mut(&mut self, i: usize) -> &mut Matrix<T> {
        &mut self.entries[i].1
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, m)| (n.clone(), Matrix::zeros(m.rows(), m.cols())))
                .collect(),
        }
    }

    /// (tensor index, flat offset) of the `k`-th scalar in flattening order.
    pub fn locate(&self, mut k: usize) -> (usize, usize) {
        for (i, (_, m)) in self.entries.iter().enumerate() {
            let len = m.as_slice().len();
            if k < len {
                return (i, k);
            }
            k -= len;
        }
        panic!("flat index out of range");
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, m)| m.all_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moment state for one [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Adam<T> {
    cfg: AdamConfig,
    m: ParamSet<T>,
    v: ParamSet<T>,
    step: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig, like: &ParamSet<T>) -> Self {
        Self { cfg, m: like.zeros_like(), v: like.zeros_like(), step: 0 }
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>) {
        self.step += 1;
        let b1 = T::lit(self.cfg.beta1);
        let b2 = T::lit(self.cfg.beta2);
        let lr = T::lit(self.cfg.lr);
        let eps = T::lit(self.cfg.eps);
        let c1 = T::one() - b1.powi(self.step);
        let c2 = T::one() - b2.powi(self.step);
        for i in 0..params.len() {
            let g = grads.by_index(i).as_slice();
            let m = self.m.by_index_mut(i).as_mut_slice();
            for (mk, &gk) in m.iter_mut().zip(g) {
                *mk = b1 * *mk + (T::one() - b1) * gk;
            }
            let v = self.v.by_index_mut(i).as_mut_slice();
            for (vk, &gk) in v.iter_mut().zip(g) {
                *vk = b2 * *vk + (T::one() - b2) * gk * gk;
            }
            let m = self.m.by_index(i).as_slice();
            let v = self.v.by_index(i).as_slice();
            let p = params.by_index_mut(i).as_mut_slice();
            for k in 0..p.len() {
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                p[k] = p[k] - lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}


impl<T: Scalar> ParamSet<T> {
    /// Appends all tensors of `other`, prefixing their names.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParamSet<T>) {
        for (n, m) in other.iter() {
            self.push(format!("{prefix}{n}"), m.clone());
        }
    }

    /// Splits into consecutive groups of the given tensor counts, stripping
    /// the prefixes added by [`ParamSet::extend_prefixed`].
    pub fn split(&self, counts: &[usize]) -> Vec<ParamSet<T>> {
        assert_eq!(counts.iter().sum::<usize>(), self.len(), "split counts do not cover the set");
        let mut out = Vec::with_capacity(counts.len());
        let mut it = self.entries.iter();
        for &c in counts {
            let mut ps = ParamSet::new();
            for (n, m) in it.by_ref().take(c) {
                let short = n.split_once('/').map_or(n.as_str(), |(_, s)| s);
                ps.push(short, m.clone());
            }
            out.push(ps);
        }
        out
    }
}
