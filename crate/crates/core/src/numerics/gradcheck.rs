//! Central-difference verification of analytic gradients.

use crate::numerics::params::ParamSet;
use crate::numerics::rng::SeededRng;
use crate::scalar::Scalar;

pub const DEFAULT_EPSILON: f64 = 1e-4;
const SUBSAMPLE_FRACTION: f64 = 0.05;
const MIN_ENTRIES: usize = 50;

/// A scalar objective over a [`ParamSet`] with an analytic gradient.
/// Evaluation must be deterministic in the parameters.
pub trait Objective<T: Scalar> {
    fn loss(&self, params: &ParamSet<T>) -> T;
    fn loss_and_grad(&self, params: &ParamSet<T>) -> (T, ParamSet<T>);
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst relative error per parameter tensor that was sampled.
    pub per_parameter_errors: Vec<(String, f64)>,
    pub entries_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Checks a random 5% subsample of entries (at least 50, at least one per
/// tensor) against central differences with step `epsilon`.
pub fn gradient_check<T: Scalar, O: Objective<T> + ?Sized>(
    objective: &O,
    params: &ParamSet<T>,
    epsilon: f64,
    rng: &mut SeededRng,
) -> GradCheckReport {
    let (_, grads) = objective.loss_and_grad(params);
    let total = params.numel();
    let want = ((total as f64 * SUBSAMPLE_FRACTION).ceil() as usize).max(MIN_ENTRIES).min(total);
    let mut picks = rng.sample_indices(total, want);
    let mut offset = 0;
    for i in 0..params.len() {
        let len = params.by_index(i).as_slice().len();
        if len > 0 && !picks.iter().any(|&p| p >= offset && p < offset + len) {
            picks.push(offset + rng.below(len));
        }
        offset += len;
    }
    picks.sort_unstable();

    let eps = T::lit(epsilon);
    let mut per: Vec<(String, f64)> = Vec::new();
    let mut work = params.clone();
    let mut max_rel = 0.0f64;
    for &flat in &picks {
        let (ti, off) = params.locate(flat);
        let orig = params.by_index(ti).as_slice()[off];
        work.by_index_mut(ti).as_mut_slice()[off] = orig + eps;
        let up = objective.loss(&work);
        work.by_index_mut(ti).as_mut_slice()[off] = orig - eps;
        let down = objective.loss(&work);
        work.by_index_mut(ti).as_mut_slice()[off] = orig;
        let numeric = (up - down).as_f64() / (2.0 * epsilon);
        let analytic = grads.by_index(ti).as_slice()[off].as_f64();
        let rel = relative_error(analytic, numeric);
        max_rel = max_rel.max(rel);
        let name = params.name(ti);
        match per.iter_mut().find(|(n, _)| n == name) {
            Some((_, e)) => *e = e.max(rel),
            None => per.push((name.to_string(), rel)),
        }
    }
    GradCheckReport { max_rel_error: max_rel, per_parameter_errors: per, entries_checked: picks.len() }
}
