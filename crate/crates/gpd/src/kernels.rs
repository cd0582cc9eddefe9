//! Isotropic RBF (squared-exponential) covariance: single evaluations,
//! kernel matrices, and analytic gradients with respect to the
//! log-hyperparameters.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{GpdError, Result};

/// RBF hyperparameters: marginal variance a² and length-scale l, stored in
/// log space so positivity holds by construction under unconstrained
/// optimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    /// log of the marginal variance a².
    pub log_variance: f64,
    /// log of the length-scale l.
    pub log_lengthscale: f64,
}

impl KernelParams {
    /// Construct from natural-space values a² and l (both must be positive
    /// and finite).
    pub fn new(variance: f64, lengthscale: f64) -> Result<Self> {
        if !(variance.is_finite() && variance > 0.0) {
            return Err(GpdError::Input(format!(
                "kernel variance must be positive and finite, got {variance}"
            )));
        }
        if !(lengthscale.is_finite() && lengthscale > 0.0) {
            return Err(GpdError::Input(format!(
                "kernel length-scale must be positive and finite, got {lengthscale}"
            )));
        }
        Ok(Self {
            log_variance: variance.ln(),
            log_lengthscale: lengthscale.ln(),
        })
    }

    /// Construct directly from log-space values (must be finite).
    pub fn from_log(log_variance: f64, log_lengthscale: f64) -> Result<Self> {
        if !(log_variance.is_finite() && log_lengthscale.is_finite()) {
            return Err(GpdError::Input(format!(
                "log kernel parameters must be finite, got ({log_variance}, {log_lengthscale})"
            )));
        }
        Ok(Self { log_variance, log_lengthscale })
    }

    /// Marginal variance a².
    pub fn variance(&self) -> f64 {
        self.log_variance.exp()
    }

    /// Length-scale l.
    pub fn lengthscale(&self) -> f64 {
        self.log_lengthscale.exp()
    }
}

fn squared_distance(x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    let mut d2 = 0.0;
    for k in 0..x.len() {
        let diff = x[k] - y[k];
        d2 += diff * diff;
    }
    d2
}

/// k(x, x') = a² exp(-‖x - x'‖² / (2 l²)). The result lies in (0, a²].
pub fn rbf(x: ArrayView1<f64>, x_prime: ArrayView1<f64>, params: &KernelParams) -> Result<f64> {
    if x.len() != x_prime.len() {
        return Err(GpdError::Input(format!(
            "rbf inputs have mismatched dimensions {} and {}",
            x.len(),
            x_prime.len()
        )));
    }
    if x.is_empty() {
        return Err(GpdError::Input("rbf inputs must have dimension >= 1".into()));
    }
    let l2 = params.lengthscale().powi(2);
    Ok(params.variance() * (-squared_distance(x, x_prime) / (2.0 * l2)).exp())
}

/// Cross-covariance matrix with entry (i, j) = k(X[i], X'[j]).
///
/// When both arguments are the same array the result is symmetric with
/// diagonal a² — exactly, because the distance computation is symmetric in
/// floating-point arithmetic.
pub fn kernel_matrix(
    x: ArrayView2<f64>,
    x_prime: ArrayView2<f64>,
    params: &KernelParams,
) -> Result<Array2<f64>> {
    if x.ncols() != x_prime.ncols() {
        return Err(GpdError::Input(format!(
            "kernel_matrix inputs have mismatched feature counts {} and {}",
            x.ncols(),
            x_prime.ncols()
        )));
    }
    let variance = params.variance();
    let inv_two_l2 = 1.0 / (2.0 * params.lengthscale().powi(2));
    let mut k = Array2::<f64>::zeros((x.nrows(), x_prime.nrows()));
    for i in 0..x.nrows() {
        let xi = x.row(i);
        for j in 0..x_prime.nrows() {
            k[[i, j]] = variance * (-squared_distance(xi, x_prime.row(j)) * inv_two_l2).exp();
        }
    }
    Ok(k)
}

/// Gradients of the training kernel matrix with respect to the
/// log-hyperparameters: (∂K/∂log a², ∂K/∂log l).
///
/// ∂K/∂log a² = K itself (K is linear in a²), and
/// ∂K/∂log l has entries K_ij · ‖x_i - x_j‖² / l².
pub fn kernel_gradients(x: ArrayView2<f64>, params: &KernelParams) -> (Array2<f64>, Array2<f64>) {
    let n = x.nrows();
    let variance = params.variance();
    let l2 = params.lengthscale().powi(2);
    let inv_two_l2 = 1.0 / (2.0 * l2);
    let mut dk_dlog_var = Array2::<f64>::zeros((n, n));
    let mut dk_dlog_len = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let xi = x.row(i);
        for j in 0..n {
            let d2 = squared_distance(xi, x.row(j));
            let kij = variance * (-d2 * inv_two_l2).exp();
            dk_dlog_var[[i, j]] = kij;
            dk_dlog_len[[i, j]] = kij * d2 / l2;
        }
    }
    (dk_dlog_var, dk_dlog_len)
}
