//! Shared training utilities: initialization, parameter binding and loss traces.

use std::fmt::Write as _;
use std::path::Path;

use crate::dataio::formats::write_text;
use crate::error::Result;
use crate::numerics::{Matrix, ParamSet, SeededRng, Tape, Var};
use crate::scalar::Scalar;

/// Glorot-uniform `fan_in × fan_out` weight matrix.
pub fn glorot<T: Scalar>(fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Matrix<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_fn(fan_in, fan_out, |_, _| T::lit((2.0 * rng.uniform() - 1.0) * a))
}

/// Puts every tensor of `ps` on the tape, in order.
pub fn bind<T: Scalar>(tape: &mut Tape<T>, ps: &ParamSet<T>, trainable: bool) -> Vec<Var> {
    ps.iter()
        .map(|(_, m)| if trainable { tape.param(m.clone()) } else { tape.constant(m.clone()) })
        .collect()
}

/// Collects gradients for `vars` into a set shaped like `ps`.
pub fn collect_grads<T: Scalar>(
    grads: &crate::numerics::tape::Grads<T>,
    vars: &[Var],
    ps: &ParamSet<T>,
) -> ParamSet<T> {
    let mut out = ParamSet::new();
    for ((name, m), &v) in ps.iter().zip(vars) {
        out.push(name, grads.get_or_zeros(v, m.rows(), m.cols()));
    }
    out
}

/// Per-epoch loss components.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTrace {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

impl LossTrace {
    pub fn new(columns: &[&'static str]) -> Self {
        Self { columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, values: Vec<f64>) {
        debug_assert_eq!(values.len(), self.columns.len());
        self.rows.push(values);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, name: &str) -> Vec<f64> {
        let c = self.columns.iter().position(|&n| n == name).expect("unknown loss column");
        self.rows.iter().map(|r| r[c]).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch");
        for c in &self.columns {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for (e, row) in self.rows.iter().enumerate() {
            write!(s, "{e}").expect("string write");
            for v in row {
                write!(s, ",{v:e}").expect("string write");
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_csv())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut t = LossTrace::new(&["rec", "total"]);
        t.push(vec![1.0, 2.5]);
        t.push(vec![0.5, 1.25]);
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,rec,total");
        assert!(lines[2].starts_with("1,"));
        assert_eq!(t.column("total"), vec![2.5, 1.25]);
    }

    #[test]
    fn split_strips_prefixes() {
        let mut a = ParamSet::<f64>::new();
        a.push("w", Matrix::zeros(1, 1));
        let mut b = ParamSet::<f64>::new();
        b.push("v", Matrix::zeros(2, 1));
        b.push("u", Matrix::zeros(1, 2));
        let mut all = ParamSet::new();
        all.extend_prefixed("enc/", &a);
        all.extend_prefixed("gen/", &b);
        let parts = all.split(&[1, 2]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }
}
