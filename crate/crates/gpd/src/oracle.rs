//! Slow, implementation-independent reference computations for the test
//! suite: dense Gaussian elimination for GP posteriors and marginal
//! likelihoods, a directly-evaluated sparse lower bound, grid quadrature for
//! the Bernoulli-likelihood classifier, and a large-sample Monte-Carlo
//! softmax estimate.
//!
//! Everything here is written from scratch on purpose — element loops, own
//! kernel evaluation, own pivoted elimination — so that agreement with the
//! production code is evidence rather than tautology. Each reference is
//! either algorithmically independent of the code it checks or at least an
//! order of magnitude more expensive.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{GpdError, Result};

const LN_2PI: f64 = 1.8378770664093453;

/// RBF evaluation written independently of the kernels module.
fn rbf_ref(a: ArrayView1<f64>, b: ArrayView1<f64>, variance: f64, lengthscale: f64) -> f64 {
    let mut d2 = 0.0;
    for (p, q) in a.iter().zip(b.iter()) {
        d2 += (p - q) * (p - q);
    }
    variance * (-0.5 * d2 / (lengthscale * lengthscale)).exp()
}

fn kernel_ref(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    variance: f64,
    lengthscale: f64,
) -> Array2<f64> {
    let mut k = Array2::zeros((x.nrows(), y.nrows()));
    for i in 0..x.nrows() {
        for j in 0..y.nrows() {
            k[[i, j]] = rbf_ref(x.row(i), y.row(j), variance, lengthscale);
        }
    }
    k
}

/// Invert a square matrix by Gaussian elimination with partial pivoting,
/// also returning log|det|. Errors on (numerically) singular input.
pub fn invert_with_logdet(a: &Array2<f64>) -> Result<(Array2<f64>, f64)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(GpdError::Input("matrix must be square".into()));
    }
    // Augment with the identity and eliminate in place.
    let mut work = Array2::<f64>::zeros((n, 2 * n));
    for i in 0..n {
        for j in 0..n {
            work[[i, j]] = a[[i, j]];
        }
        work[[i, n + i]] = 1.0;
    }
    let mut log_det = 0.0;
    for col in 0..n {
        // Partial pivoting: largest magnitude in the column at or below row col.
        let mut pivot_row = col;
        let mut pivot_val = work[[col, col]].abs();
        for r in (col + 1)..n {
            if work[[r, col]].abs() > pivot_val {
                pivot_val = work[[r, col]].abs();
                pivot_row = r;
            }
        }
        if pivot_val < 1e-300 {
            return Err(GpdError::Numerical(format!(
                "singular matrix: pivot {pivot_val:.3e} at column {col}"
            )));
        }
        if pivot_row != col {
            for j in 0..2 * n {
                work.swap([col, j], [pivot_row, j]);
            }
        }
        let pivot = work[[col, col]];
        log_det += pivot.abs().ln();
        for j in 0..2 * n {
            work[[col, j]] /= pivot;
        }
        for r in 0..n {
            if r != col {
                let factor = work[[r, col]];
                if factor != 0.0 {
                    for j in 0..2 * n {
                        work[[r, j]] -= factor * work[[col, j]];
                    }
                }
            }
        }
    }
    let mut inv = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            inv[[i, j]] = work[[i, n + j]];
        }
    }
    Ok((inv, log_det))
}

/// Reference GP regression fit obtained by explicit matrix inversion;
/// restricted to n <= 20 training points.
pub struct DenseGpOracle {
    x: Array2<f64>,
    variance: f64,
    lengthscale: f64,
    s_inv: Array2<f64>,
    s_inv_y: Array1<f64>,
    log_det: f64,
    quad: f64,
    n: usize,
}

/// Build the reference fit for targets y and per-point noise variances
/// `noise` (the full effective noise, including any jitter convention the
/// model under test applies).
pub fn dense_gp_oracle(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    noise: ArrayView1<f64>,
    variance: f64,
    lengthscale: f64,
) -> Result<DenseGpOracle> {
    let n = x.nrows();
    if n > 20 {
        return Err(GpdError::Input(format!(
            "dense oracle is restricted to n <= 20, got {n}"
        )));
    }
    if y.len() != n || noise.len() != n {
        return Err(GpdError::Input("oracle shape mismatch".into()));
    }
    let mut s = kernel_ref(x, x, variance, lengthscale);
    for i in 0..n {
        s[[i, i]] += noise[i];
    }
    let (s_inv, log_det) = invert_with_logdet(&s)?;
    let mut s_inv_y = Array1::<f64>::zeros(n);
    for i in 0..n {
        for j in 0..n {
            s_inv_y[i] += s_inv[[i, j]] * y[j];
        }
    }
    let mut quad = 0.0;
    for i in 0..n {
        quad += y[i] * s_inv_y[i];
    }
    Ok(DenseGpOracle {
        x: x.to_owned(),
        variance,
        lengthscale,
        s_inv,
        s_inv_y,
        log_det,
        quad,
        n,
    })
}

impl DenseGpOracle {
    /// Posterior mean at a query point.
    pub fn mean(&self, x_star: ArrayView1<f64>) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            acc += rbf_ref(self.x.row(i), x_star, self.variance, self.lengthscale)
                * self.s_inv_y[i];
        }
        acc
    }

    /// Posterior variance at a query point.
    pub fn var(&self, x_star: ArrayView1<f64>) -> f64 {
        let mut k_star = Array1::<f64>::zeros(self.n);
        for i in 0..self.n {
            k_star[i] = rbf_ref(self.x.row(i), x_star, self.variance, self.lengthscale);
        }
        let mut quad = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                quad += k_star[i] * self.s_inv[[i, j]] * k_star[j];
            }
        }
        self.variance - quad
    }

    /// Log marginal likelihood of the targets.
    pub fn lml(&self) -> f64 {
        -0.5 * self.quad - 0.5 * self.log_det - 0.5 * self.n as f64 * LN_2PI
    }
}

/// Directly-evaluated sparse regression lower bound: forms
/// Q = K_nm (K_mm + eps_m I)^{-1} K_mn explicitly, then evaluates
/// log N(y | 0, Q + diag(noise)) - (1/2) tr(diag(noise)^{-1} (K_nn - Q))
/// with dense elimination. `noise` and `inducing_jitter` must match the
/// conventions of the implementation under test.
pub fn dense_sparse_bound(
    x: ArrayView2<f64>,
    z: ArrayView2<f64>,
    y: ArrayView1<f64>,
    noise: ArrayView1<f64>,
    variance: f64,
    lengthscale: f64,
    inducing_jitter: f64,
) -> Result<f64> {
    let n = x.nrows();
    let m = z.nrows();
    let mut k_mm = kernel_ref(z, z, variance, lengthscale);
    for i in 0..m {
        k_mm[[i, i]] += inducing_jitter;
    }
    let (k_mm_inv, _) = invert_with_logdet(&k_mm)?;
    let k_nm = kernel_ref(x, z, variance, lengthscale);
    // Q = K_nm K_mm^{-1} K_mn by explicit triple loop.
    let mut q = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for a in 0..m {
                for b in 0..m {
                    acc += k_nm[[i, a]] * k_mm_inv[[a, b]] * k_nm[[j, b]];
                }
            }
            q[[i, j]] = acc;
        }
    }
    let mut g = q.clone();
    for i in 0..n {
        g[[i, i]] += noise[i];
    }
    let (g_inv, log_det) = invert_with_logdet(&g)?;
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += y[i] * g_inv[[i, j]] * y[j];
        }
    }
    let gaussian = -0.5 * quad - 0.5 * log_det - 0.5 * n as f64 * LN_2PI;
    let mut trace = 0.0;
    for i in 0..n {
        trace += (variance - q[[i, i]]) / noise[i];
    }
    Ok(gaussian - 0.5 * trace)
}

fn sig(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Reference predictive probability p(y* = 1 | y) for a GP with logistic
/// likelihood, a single Bernoulli training observation, and prediction at
/// the training input itself: brute-force 1D trapezoid quadrature over the
/// latent f on [-8, 8].
pub fn bernoulli_predictive_quadrature_1d(prior_var: f64, y: u8, grid_points: usize) -> f64 {
    let (lo, hi) = (-8.0, 8.0);
    let h = (hi - lo) / (grid_points - 1) as f64;
    let mut numer = 0.0;
    let mut denom = 0.0;
    for i in 0..grid_points {
        let f = lo + i as f64 * h;
        let w = if i == 0 || i == grid_points - 1 { 0.5 } else { 1.0 };
        let prior = (-0.5 * f * f / prior_var).exp();
        let lik = if y == 1 { sig(f) } else { 1.0 - sig(f) };
        numer += w * sig(f) * lik * prior;
        denom += w * lik * prior;
    }
    numer / denom
}

/// Reference predictive probability for a single Bernoulli observation with
/// prediction at a different input: brute-force 2D trapezoid quadrature over
/// the joint latent (f, f*) on [-8, 8]², with joint prior covariance
/// [[k11, k1s], [k1s, kss]].
pub fn bernoulli_predictive_quadrature_2d(
    k11: f64,
    k1s: f64,
    kss: f64,
    y: u8,
    grid_points: usize,
) -> Result<f64> {
    let det = k11 * kss - k1s * k1s;
    if det <= 1e-12 {
        return Err(GpdError::Input(
            "joint prior is singular; use the 1D quadrature".into(),
        ));
    }
    let (a, b, c) = (kss / det, -k1s / det, k11 / det); // inverse covariance
    let (lo, hi) = (-8.0, 8.0);
    let h = (hi - lo) / (grid_points - 1) as f64;
    let mut numer = 0.0;
    let mut denom = 0.0;
    for i in 0..grid_points {
        let f = lo + i as f64 * h;
        let wi = if i == 0 || i == grid_points - 1 { 0.5 } else { 1.0 };
        let lik = if y == 1 { sig(f) } else { 1.0 - sig(f) };
        for j in 0..grid_points {
            let fs = lo + j as f64 * h;
            let wj = if j == 0 || j == grid_points - 1 { 0.5 } else { 1.0 };
            let quad_form = a * f * f + 2.0 * b * f * fs + c * fs * fs;
            let prior = (-0.5 * quad_form).exp();
            numer += wi * wj * sig(fs) * lik * prior;
            denom += wi * wj * lik * prior;
        }
    }
    Ok(numer / denom)
}

/// Reference log evidence log p(y) for a single Bernoulli observation:
/// 1D trapezoid quadrature of the likelihood against the latent prior.
pub fn bernoulli_evidence_quadrature_1d(prior_var: f64, y: u8, grid_points: usize) -> f64 {
    let (lo, hi) = (-8.0, 8.0);
    let h = (hi - lo) / (grid_points - 1) as f64;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * prior_var).sqrt();
    let mut acc = 0.0;
    for i in 0..grid_points {
        let f = lo + i as f64 * h;
        let w = if i == 0 || i == grid_points - 1 { 0.5 } else { 1.0 };
        let prior = norm * (-0.5 * f * f / prior_var).exp();
        let lik = if y == 1 { sig(f) } else { 1.0 - sig(f) };
        acc += w * lik * prior;
    }
    (acc * h).ln()
}

/// Large-sample Monte-Carlo reference for the expected softmax of
/// independent Gaussian class latents, using a different generator family
/// (ChaCha20) and its own sampling loop.
pub fn mc_softmax_oracle(
    means: ArrayView1<f64>,
    variances: ArrayView1<f64>,
    samples: usize,
    seed: u64,
) -> Array1<f64> {
    let c = means.len();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut acc = Array1::<f64>::zeros(c);
    let mut draw = vec![0.0f64; c];
    for _ in 0..samples {
        for k in 0..c {
            // Box-Muller, independent of the production sampling path.
            let u1: f64 = rng.random::<f64>().max(1e-300);
            let u2: f64 = rng.random();
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            draw[k] = means[k] + variances[k].sqrt() * z;
        }
        let max = draw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in draw.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for (k, v) in draw.iter().enumerate() {
            acc[k] += v / sum;
        }
    }
    acc / samples as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn inversion_recovers_identity() {
        let a = array![[2.0, 1.0], [1.0, 3.0]];
        let (inv, log_det) = invert_with_logdet(&a).unwrap();
        assert_relative_eq!(log_det, 5.0f64.ln(), max_relative = 1e-12);
        let prod = a.dot(&inv);
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(prod[[i, j]], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn inversion_rejects_singular() {
        let a = array![[1.0, 2.0], [2.0, 4.0]];
        assert!(invert_with_logdet(&a).is_err());
    }

    #[test]
    fn oracle_scalar_closed_forms() {
        // One point at x=0 with y=1, noise 1, unit kernel: the posterior is
        // mean 1/2 and variance 1/2at the data point, and the marginal
        // likelihood is the scalar normal log-density.
        let x = array![[0.0]];
        let y = array![1.0];
        let noise = array![1.0];
        let o = dense_gp_oracle(x.view(), y.view(), noise.view(), 1.0, 1.0).unwrap();
        assert_relative_eq!(o.mean(array![0.0].view()), 0.5, max_relative = 1e-12);
        assert_relative_eq!(o.var(array![0.0].view()), 0.5, max_relative = 1e-12);
        // -1/2·ln(2π) - 1/2·ln 2 - 1/4.
        assert_relative_eq!(o.lml(), -1.5155121234846454, max_relative = 1e-12);
        // A singular system (duplicate rows, zero noise) must error.
        let x2 = array![[0.0], [0.0]];
        let y2 = array![1.0, 1.0];
        let z2 = array![0.0, 0.0];
        assert!(dense_gp_oracle(x2.view(), y2.view(), z2.view(), 1.0, 1.0).is_err());
    }

    #[test]
    fn oracle_rejects_large_problems() {
        let x = Array2::<f64>::zeros((21, 1));
        let y = Array1::<f64>::zeros(21);
        let noise = Array1::<f64>::ones(21);
        assert!(dense_gp_oracle(x.view(), y.view(), noise.view(), 1.0, 1.0).is_err());
    }

    #[test]
    fn quadrature_prior_only_symmetry() {
        // With no information in the likelihood (y weight identical by
        // symmetry of sigmoid around 0.5 under f→-f), the prior-only
        // expectation of sigmoid is 1/2; a single observation moves it up.
        let p = bernoulli_predictive_quadrature_1d(1.0, 1, 4001);
        assert!(p > 0.5 && p < 1.0, "posterior should favor class 1, got {p}");
        let q = bernoulli_predictive_quadrature_1d(1.0, 0, 4001);
        assert_relative_eq!(p + q, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn quadrature_2d_reduces_to_1d_for_tight_correlation() {
        // Nearly-degenerate joint should approach the 1D answer.
        let p2 = bernoulli_predictive_quadrature_2d(1.0, 0.999999, 1.0, 1, 1201).unwrap();
        let p1 = bernoulli_predictive_quadrature_1d(1.0, 1, 4001);
        assert_relative_eq!(p2, p1, epsilon = 2e-3);
        // Zero correlation: prediction reverts to 1/2 regardless of y.
        let p0 = bernoulli_predictive_quadrature_2d(1.0, 0.0, 1.0, 1, 1201).unwrap();
        assert_relative_eq!(p0, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn mc_oracle_matches_deterministic_softmax_at_zero_variance() {
        let means = array![1.0, 0.0];
        let vars = array![0.0, 0.0];
        let p = mc_softmax_oracle(means.view(), vars.view(), 1000, 5);
        assert_relative_eq!(p[0], 0.7310585786300049, max_relative = 1e-12);
    }
}
