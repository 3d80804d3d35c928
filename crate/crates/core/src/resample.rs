//! Weight normalisation and multinomial resampling shared by the particle
//! filter and the population Monte Carlo sampler.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

/// Normalises log-weights with a max shift.
///
/// Returns the normalised linear weights and `ln Σ exp(log_w)`. If every
/// entry is `-inf` (or the slice is empty) the weights are all zero and the
/// log-sum is `-inf`.
pub fn normalize_log_weights(log_w: &[f64]) -> (Vec<f64>, f64) {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return (vec![0.0; log_w.len()], f64::NEG_INFINITY);
    }
    let mut w: Vec<f64> = log_w.iter().map(|&lw| (lw - max).exp()).collect();
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    (w, max + sum.ln())
}

/// `n` sorted draws from U(0,1), in O(n), via normalised exponential spacings.
pub fn sorted_uniforms<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let e: f64 = Exp1.sample(rng);
        acc += e;
        out.push(acc);
    }
    let e: f64 = Exp1.sample(rng);
    let total = acc + e;
    for u in &mut out {
        *u /= total;
    }
    out
}

/// `count` i.i.d. categorical draws from `weights` (need not sum to one),
/// by inverse CDF against a sorted batch of uniforms. The returned indices
/// are non-decreasing.
pub fn multinomial_indices<R: Rng + ?Sized>(
    weights: &[f64],
    count: usize,
    rng: &mut R,
) -> Vec<usize> {
    assert!(!weights.is_empty(), "cannot resample from an empty set");
    let total: f64 = weights.iter().sum();
    let uniforms = sorted_uniforms(count, rng);
    let last_positive = weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1);
    let mut out = Vec::with_capacity(count);
    let mut idx = 0;
    let mut cdf = weights[0];
    for u in uniforms {
        let target = u * total;
        while cdf <= target && idx < last_positive {
            idx += 1;
            cdf += weights[idx];
        }
        out.push(idx);
    }
    out
}

/// One categorical draw.
pub fn categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    assert!(!weights.is_empty(), "cannot sample from an empty set");
    let total: f64 = weights.iter().sum();
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut pick = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            pick = i;
            if target < acc {
                break;
            }
        }
    }
    pick
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;

    #[test]
    fn normalisation_survives_tiny_densities() {
        let (w, lse) = normalize_log_weights(&[-2000.0, -2000.0 + 2f64.ln()]);
        assert!((w[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((w[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((lse - (-2000.0 + 3f64.ln())).abs() < 1e-9);
        let (w, lse) = normalize_log_weights(&[f64::NEG_INFINITY; 3]);
        assert_eq!(w, vec![0.0; 3]);
        assert_eq!(lse, f64::NEG_INFINITY);
    }

    #[test]
    fn sorted_uniforms_are_sorted_and_uniform() {
        let u = sorted_uniforms(10_000, &mut from_seed(1));
        assert!(u.windows(2).all(|p| p[0] <= p[1]));
        assert!(u[0] > 0.0 && u[u.len() - 1] < 1.0);
        let mean = u.iter().sum::<f64>() / u.len() as f64;
        assert!((mean - 0.5).abs() < 0.01);
    }

    #[test]
    fn point_mass_is_always_selected() {
        let idx = multinomial_indices(&[0.0, 0.0, 1.0, 0.0], 100, &mut from_seed(2));
        assert!(idx.iter().all(|&i| i == 2));
        for seed in 0..50 {
            assert_eq!(categorical(&[0.0, 1.0, 0.0], &mut from_seed(seed)), 1);
        }
    }

    #[test]
    fn zero_weight_entries_are_never_selected() {
        let w = [0.3, 0.0, 0.7, 0.0];
        let idx = multinomial_indices(&w, 10_000, &mut from_seed(3));
        assert!(idx.iter().all(|&i| i == 0 || i == 2));
        let frac = idx.iter().filter(|&&i| i == 2).count() as f64 / 10_000.0;
        assert!((frac - 0.7).abs() < 0.02);
    }
}
