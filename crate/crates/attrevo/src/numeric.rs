//! Small numeric helpers shared across the crate.
//!
//! Reductions over datasets use pairwise summation so results do not depend
//! on chunking or worker count, and set-level means sort their inputs first
//! so they are exactly permutation invariant.

use rand::Rng;

/// Pairwise (cascade) summation. Deterministic for a given input order and
/// more accurate than a left fold on long inputs.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        let mut acc = 0.0;
        for v in values {
            acc += v;
        }
        return acc;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Mean via pairwise summation. Caller guarantees a non-empty slice.
pub fn mean(values: &[f64]) -> f64 {
    debug_assert!(!values.is_empty());
    pairwise_sum(values) / values.len() as f64
}

/// Mean that first sorts its inputs by total order, making the result
/// exactly independent of input permutation.
pub fn sorted_mean(mut values: Vec<f64>) -> f64 {
    debug_assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    pairwise_sum(&values) / values.len() as f64
}

/// Dot product of two equal-length f32 slices, accumulated in f64.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += *x as f64 * *y as f64;
    }
    acc
}

pub fn l2_norm_f32(v: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for x in v {
        acc += *x as f64 * *x as f64;
    }
    acc.sqrt()
}

pub fn l2_norm_f64(v: &[f64]) -> f64 {
    let mut acc = 0.0f64;
    for x in v {
        acc += x * x;
    }
    acc.sqrt()
}

/// Scale a f64 vector to unit norm and narrow to f32. Returns `None` for a
/// zero (or denormal-tiny) vector.
pub fn normalized_f32(v: &[f64]) -> Option<Vec<f32>> {
    let n = l2_norm_f64(v);
    if n < 1e-12 {
        return None;
    }
    Some(v.iter().map(|x| (x / n) as f32).collect())
}

/// Numerically stable softmax of `values / temperature`.
pub fn softmax(values: &[f64], temperature: f64) -> Vec<f64> {
    debug_assert!(temperature > 0.0);
    debug_assert!(!values.is_empty());
    let hottest = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values
        .iter()
        .map(|v| ((v - hottest) / temperature).exp())
        .collect();
    let total = pairwise_sum(&exps);
    exps.into_iter().map(|e| e / total).collect()
}

/// log(sum(exp(values))) without overflow.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let hottest = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = values.iter().map(|v| (v - hottest).exp()).collect();
    hottest + pairwise_sum(&shifted).ln()
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax_tie_lowest(values: &[f64]) -> usize {
    debug_assert!(!values.is_empty());
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// One standard normal draw via Box-Muller. Consumes exactly two uniforms,
/// so the stream layout is stable across calls.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = loop {
        let u = rng.gen::<f64>();
        if u > 0.0 {
            break u;
        }
    };
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// A unit vector with i.i.d. gaussian components, in f32.
pub fn random_unit_vector<R: Rng>(rng: &mut R, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
        if let Some(u) = normalized_f32(&v) {
            return u;
        }
    }
}
