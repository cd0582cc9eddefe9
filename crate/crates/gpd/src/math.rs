//! Small numerical utilities: stable logistic/softmax evaluation,
//! Gauss–Hermite quadrature rules, normal quantiles, and seeded RNG streams.

use std::sync::OnceLock;

use ndarray::{Array1, Array2, ArrayView2};
use ndarray_linalg::{Eigh, UPLO};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

/// Numerically stable logistic function 1/(1+e^{-x}).
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stable log(1 + e^x).
pub fn log1p_exp(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Overwrite `v` with softmax(v), guarding against overflow by shifting by
/// the maximum entry.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Standard-normal quantile function.
pub fn normal_quantile(p: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    n.inverse_cdf(p)
}

/// A deterministic RNG for the given (seed, stream) pair. Distinct streams
/// are statistically independent, so work items can be processed in any
/// order (or in parallel) without changing the draws each item sees.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Nodes and weights of the n-point Gauss–Hermite rule for weight e^{-t²},
/// computed from the symmetric tridiagonal Jacobi matrix (Golub–Welsch):
/// nodes are its eigenvalues, weights are sqrt(pi) times the squared first
/// components of the normalized eigenvectors.
pub fn gauss_hermite(n: usize) -> (Array1<f64>, Array1<f64>) {
    assert!(n >= 1, "quadrature order must be positive");
    let mut jacobi = Array2::<f64>::zeros((n, n));
    for k in 1..n {
        let off = (k as f64 / 2.0).sqrt();
        jacobi[[k - 1, k]] = off;
        jacobi[[k, k - 1]] = off;
    }
    let (nodes, vectors) = jacobi.eigh(UPLO::Lower).expect("symmetric tridiagonal");
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let weights = Array1::from_iter((0..n).map(|j| sqrt_pi * vectors[[0, j]].powi(2)));
    (nodes, weights)
}

/// The cached 201-point Gauss–Hermite rule used for logistic-over-Gaussian
/// expectations.
pub fn gauss_hermite_201() -> &'static (Array1<f64>, Array1<f64>) {
    static RULE: OnceLock<(Array1<f64>, Array1<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_hermite(201))
}

/// E[sigmoid(Z)] for Z ~ Normal(mean, variance), by Gauss–Hermite quadrature.
pub fn logistic_gaussian_expectation(mean: f64, variance: f64) -> f64 {
    let (nodes, weights) = gauss_hermite_201();
    let scale = (2.0 * variance.max(0.0)).sqrt();
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    let mut acc = 0.0;
    for (t, w) in nodes.iter().zip(weights.iter()) {
        acc += w * sigmoid(mean + scale * t);
    }
    acc * inv_sqrt_pi
}

/// Median of a slice (averaging the two middle elements for even lengths).
/// Returns None on empty input.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        Some(sorted[mid])
    } else {
        Some(0.5 * (sorted[mid - 1] + sorted[mid]))
    }
}

/// Median pairwise Euclidean distance between rows, the usual scale-free
/// starting point for a length-scale. Rows are subsampled deterministically
/// (fixed stride) when there are more than 512 of them. Returns 1.0 when
/// fewer than two distinct rows are available or all distances vanish.
pub fn median_heuristic(x: ArrayView2<f64>) -> f64 {
    let n = x.nrows();
    if n < 2 {
        return 1.0;
    }
    let cap = 512;
    let stride = n.div_ceil(cap);
    let rows: Vec<usize> = (0..n).step_by(stride).collect();
    let mut dists = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for (a, &i) in rows.iter().enumerate() {
        for &j in rows.iter().skip(a + 1) {
            let mut d2 = 0.0;
            for k in 0..x.ncols() {
                let diff = x[[i, k]] - x[[j, k]];
                d2 += diff * diff;
            }
            let d = d2.sqrt();
            if d > 0.0 {
                dists.push(d);
            }
        }
    }
    median(&dists).unwrap_or(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn sigmoid_matches_closed_form() {
        assert_relative_eq!(sigmoid(0.0), 0.5, max_relative = 1e-15);
        // e/(1+e) evaluated at high precision.
        assert_relative_eq!(sigmoid(1.0), 0.7310585786300049, max_relative = 1e-15);
        assert_relative_eq!(sigmoid(-1.0), 1.0 - 0.7310585786300049, max_relative = 1e-12);
        // No overflow in the tails.
        assert!(sigmoid(-1000.0) >= 0.0);
        assert_relative_eq!(sigmoid(1000.0), 1.0, max_relative = 1e-15);
    }

    #[test]
    fn log1p_exp_is_stable() {
        assert_relative_eq!(log1p_exp(0.0), std::f64::consts::LN_2, max_relative = 1e-15);
        assert_relative_eq!(log1p_exp(1000.0), 1000.0, max_relative = 1e-12);
        assert!(log1p_exp(-1000.0) >= 0.0);
        assert!(log1p_exp(-1000.0) < 1e-300);
    }

    #[test]
    fn softmax_sums_to_one_and_orders() {
        let mut v = [1.0, 0.0];
        softmax_in_place(&mut v);
        assert_relative_eq!(v[0] + v[1], 1.0, max_relative = 1e-15);
        assert_relative_eq!(v[0], 0.7310585786300049, max_relative = 1e-14);
        // Shift invariance and overflow safety.
        let mut w = [1001.0, 1000.0];
        softmax_in_place(&mut w);
        assert_relative_eq!(w[0], v[0], max_relative = 1e-12);
    }

    #[test]
    fn normal_quantile_matches_reference() {
        // Two-sided 95% and 90% points of the standard normal.
        assert_relative_eq!(normal_quantile(0.975), 1.9599639845400543, max_relative = 1e-8);
        assert_relative_eq!(normal_quantile(0.95), 1.6448536269514726, max_relative = 1e-8);
        assert_relative_eq!(normal_quantile(0.5), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gauss_hermite_integrates_polynomials() {
        // With weight e^{-t²}: ∫1 = sqrt(pi), ∫t² = sqrt(pi)/2, ∫t⁴ = 3 sqrt(pi)/4.
        let (nodes, weights) = gauss_hermite(20);
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let m0: f64 = weights.sum();
        let m2: f64 = nodes.iter().zip(weights.iter()).map(|(t, w)| w * t * t).sum();
        let m4: f64 = nodes.iter().zip(weights.iter()).map(|(t, w)| w * t.powi(4)).sum();
        assert_relative_eq!(m0, sqrt_pi, max_relative = 1e-12);
        assert_relative_eq!(m2, sqrt_pi / 2.0, max_relative = 1e-12);
        assert_relative_eq!(m4, 3.0 * sqrt_pi / 4.0, max_relative = 1e-12);
    }

    #[test]
    fn logistic_gaussian_expectation_limits() {
        // Zero variance reduces to the plain logistic.
        assert_relative_eq!(logistic_gaussian_expectation(1.3, 0.0), sigmoid(1.3), max_relative = 1e-12);
        // Symmetry: zero mean gives exactly one half.
        assert_relative_eq!(logistic_gaussian_expectation(0.0, 4.0), 0.5, epsilon = 1e-12);
        // Against a brute-force Riemann sum.
        let (mean, var): (f64, f64) = (0.7, 2.3);
        let steps = 400_001;
        let lo = mean - 10.0 * var.sqrt();
        let hi = mean + 10.0 * var.sqrt();
        let h = (hi - lo) / (steps - 1) as f64;
        let mut acc = 0.0;
        for i in 0..steps {
            let f = lo + i as f64 * h;
            let pdf = (-(f - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
            acc += sigmoid(f) * pdf * h;
        }
        assert_relative_eq!(logistic_gaussian_expectation(mean, var), acc, max_relative = 1e-6);
    }

    #[test]
    fn stream_rng_is_deterministic_and_stream_dependent() {
        use rand::Rng;
        let a: f64 = stream_rng(7, 0).random();
        let b: f64 = stream_rng(7, 0).random();
        let c: f64 = stream_rng(7, 1).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn median_heuristic_on_grid() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        // Pairwise distances: 1,1,1,2,2,3 -> median 1.5.
        assert_relative_eq!(median_heuristic(x.view()), 1.5, max_relative = 1e-12);
        let single = array![[5.0]];
        assert_eq!(median_heuristic(single.view()), 1.0);
    }
}
