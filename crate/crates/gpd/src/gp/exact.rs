//! Exact Gaussian-process regression with per-class heteroskedastic noise.
//!
//! Each class c gets its own Gaussian likelihood with noise matrix
//! Σ_c = diag(σ²_{1c}, …, σ²_{nc}), so the per-class posterior and marginal
//! likelihood are the classic closed forms with S_c = K + Σ_c. When the
//! noise is a single learned constant, all classes share one factorization.

use ndarray::{Array1, Array2, ArrayView2};

use super::{
    column_sumsq, CholFactor, LatentPredictor, NoiseModel, MAX_JITTER_SCALE, NOISE_JITTER_SCALE,
    VARIANCE_FLOOR_SCALE,
};
use crate::error::{GpdError, Result};
use crate::kernels::{kernel_gradients, kernel_matrix, KernelParams};
use crate::math::median_heuristic;
use crate::optimize::{maximize, OptimizeOptions};

const LN_2PI: f64 = 1.8378770664093453;

/// A fitted exact GP: one shared kernel, per-class linear-solve weights, and
/// the Cholesky factor(s) needed for predictive variances.
#[derive(Debug, Clone)]
pub struct ExactGp {
    train_x: Array2<f64>,
    params: KernelParams,
    /// One factor per class, or a single shared factor when the noise model
    /// is constant across classes.
    chols: Vec<CholFactor>,
    /// n×C solve weights S_c⁻¹ y_c.
    alpha: Array2<f64>,
    num_classes: usize,
    /// Relative jitter actually used after any escalation.
    jitter_scale: f64,
}

/// Factor S_c = K + diag(noise_c + j·a²) for every class, escalating the
/// jitter scale j by decades from `NOISE_JITTER_SCALE` to `MAX_JITTER_SCALE`
/// until all classes factor. All classes always share one jitter level so
/// the fit stays a single coherent model.
fn factorize_classes(
    k: &Array2<f64>,
    targets: ArrayView2<f64>,
    noise: &NoiseModel,
    variance: f64,
) -> Result<(Vec<CholFactor>, f64)> {
    let n = k.nrows();
    let num_classes = targets.ncols();
    let class_count = if noise.is_shared() { 1 } else { num_classes };
    let mut scale = NOISE_JITTER_SCALE;
    let mut last_err = None;
    while scale <= MAX_JITTER_SCALE * (1.0 + 1e-12) {
        let extra = (scale - NOISE_JITTER_SCALE) * variance;
        let mut chols = Vec::with_capacity(class_count);
        let mut ok = true;
        for c in 0..class_count {
            let mut s = k.clone();
            let col = noise.effective_column(c, n, variance);
            for i in 0..n {
                s[[i, i]] += col[i] + extra;
            }
            match CholFactor::new(&s) {
                Ok(f) => chols.push(f),
                Err(e) => {
                    last_err = Some(e);
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok((chols, scale));
        }
        scale *= 10.0;
    }
    Err(GpdError::Numerical(format!(
        "factorization failed even at jitter {MAX_JITTER_SCALE:.0e}·a²: {}",
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

fn validate_inputs(
    x: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    noise: &NoiseModel,
) -> Result<()> {
    if x.nrows() != targets.nrows() {
        return Err(GpdError::Input(format!(
            "{} input rows but {} target rows",
            x.nrows(),
            targets.nrows()
        )));
    }
    if targets.ncols() == 0 {
        return Err(GpdError::Input("targets must have at least one column".into()));
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(GpdError::Input("targets contain non-finite values".into()));
    }
    noise.validate(x.nrows(), targets.ncols())
}

impl ExactGp {
    /// Fit the per-class regressions at fixed hyperparameters.
    ///
    /// An empty training set is allowed and yields the prior (zero mean,
    /// variance a²) with marginal likelihood 0.
    pub fn fit(
        x: ArrayView2<f64>,
        targets: ArrayView2<f64>,
        noise: &NoiseModel,
        params: &KernelParams,
    ) -> Result<ExactGp> {
        validate_inputs(x, targets, noise)?;
        let n = x.nrows();
        let num_classes = targets.ncols();
        if n == 0 {
            return Ok(ExactGp {
                train_x: x.to_owned(),
                params: params.clone(),
                chols: Vec::new(),
                alpha: Array2::zeros((0, num_classes)),
                num_classes,
                jitter_scale: NOISE_JITTER_SCALE,
            });
        }
        let k = kernel_matrix(x, x, params)?;
        let (chols, jitter_scale) = factorize_classes(&k, targets, noise, params.variance())?;
        let mut alpha = Array2::zeros((n, num_classes));
        for c in 0..num_classes {
            let factor = if noise.is_shared() { &chols[0] } else { &chols[c] };
            let a = factor.solve_vec(targets.column(c));
            alpha.column_mut(c).assign(&a);
        }
        Ok(ExactGp {
            train_x: x.to_owned(),
            params: params.clone(),
            chols,
            alpha,
            num_classes,
            jitter_scale,
        })
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    /// Relative jitter the fit ended up using (normally `NOISE_JITTER_SCALE`).
    pub fn jitter_scale(&self) -> f64 {
        self.jitter_scale
    }
}

impl LatentPredictor for ExactGp {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn predict_latent(&self, x_star: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let m = x_star.nrows();
        let variance = self.params.variance();
        let floor = VARIANCE_FLOOR_SCALE * variance;
        if self.train_x.nrows() == 0 {
            return Ok((
                Array2::zeros((m, self.num_classes)),
                Array2::from_elem((m, self.num_classes), variance),
            ));
        }
        if x_star.ncols() != self.train_x.ncols() {
            return Err(GpdError::Input(format!(
                "query points have {} columns, training data has {}",
                x_star.ncols(),
                self.train_x.ncols()
            )));
        }
        let k_star = kernel_matrix(x_star, self.train_x.view(), &self.params)?;
        let mean = k_star.dot(&self.alpha);
        let mut var = Array2::zeros((m, self.num_classes));
        let k_star_t = k_star.t().to_owned();
        let shared = self.chols.len() == 1;
        let mut shared_col: Option<Array1<f64>> = None;
        for c in 0..self.num_classes {
            if shared {
                if shared_col.is_none() {
                    let v = self.chols[0].half_solve_mat(k_star_t.view());
                    let reduced = column_sumsq(v.view());
                    shared_col =
                        Some(reduced.mapv(|s| (variance - s).max(floor)));
                }
                var.column_mut(c).assign(shared_col.as_ref().unwrap());
            } else {
                let v = self.chols[c].half_solve_mat(k_star_t.view());
                let reduced = column_sumsq(v.view());
                var.column_mut(c)
                    .assign(&reduced.mapv(|s| (variance - s).max(floor)));
            }
        }
        Ok((mean, var))
    }
}

/// Sum over classes of the exact Gaussian log marginal likelihood,
/// log N(y_c | 0, K + Σ_c) with the model's diagonal jitter included in Σ_c.
pub fn log_marginal_likelihood(
    x: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    noise: &NoiseModel,
    params: &KernelParams,
) -> Result<f64> {
    validate_inputs(x, targets, noise)?;
    let n = x.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let k = kernel_matrix(x, x, params)?;
    let (chols, _) = factorize_classes(&k, targets, noise, params.variance())?;
    let shared = noise.is_shared();
    let mut total = 0.0;
    for c in 0..targets.ncols() {
        let factor = if shared { &chols[0] } else { &chols[c] };
        let half = factor.half_solve_vec(targets.column(c));
        let quad: f64 = half.iter().map(|v| v * v).sum();
        total += -0.5 * quad - 0.5 * factor.log_det() - 0.5 * n as f64 * LN_2PI;
    }
    Ok(total)
}

/// Marginal likelihood and its gradient in the log-parameterization.
///
/// The gradient is over [log a², log ℓ] for per-point noise, with
/// log σ_n² appended for the constant-noise model. The diagonal jitter
/// j·a² is treated as part of the model, so ∂S/∂log a² = K + j·a²·I and the
/// gradient matches finite differences of [`log_marginal_likelihood`]
/// exactly.
pub fn lml_gradient(
    x: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    noise: &NoiseModel,
    params: &KernelParams,
) -> Result<(f64, Vec<f64>)> {
    validate_inputs(x, targets, noise)?;
    let n = x.nrows();
    let dim = if noise.is_shared() { 3 } else { 2 };
    if n == 0 {
        return Ok((0.0, vec![0.0; dim]));
    }
    let variance = params.variance();
    let (k, k_grad_l) = kernel_gradients(x, params);
    let (chols, jitter_scale) = factorize_classes(&k, targets, noise, variance)?;
    let jitter = jitter_scale * variance;
    let shared = noise.is_shared();

    let mut value = 0.0;
    let mut g_log_var = 0.0;
    let mut g_log_len = 0.0;
    let mut g_log_noise = 0.0;
    // The shared-noise model reuses one inverse across classes; otherwise
    // each class pays for its own.
    let mut shared_inv: Option<(Array2<f64>, f64, f64, f64)> = None;
    for c in 0..targets.ncols() {
        let factor = if shared { &chols[0] } else { &chols[c] };
        let y_c = targets.column(c);
        let alpha = factor.solve_vec(y_c);
        let quad: f64 = y_c.iter().zip(alpha.iter()).map(|(y, a)| y * a).sum();
        value += -0.5 * quad - 0.5 * factor.log_det() - 0.5 * n as f64 * LN_2PI;

        let (tr_sinv_k, tr_sinv_kl, tr_sinv) = if shared {
            if shared_inv.is_none() {
                let s_inv = factor.inverse()?;
                let tk = frobenius_inner(&s_inv, &k);
                let tkl = frobenius_inner(&s_inv, &k_grad_l);
                let tr = s_inv.diag().sum();
                shared_inv = Some((s_inv, tk, tkl, tr));
            }
            let (_, tk, tkl, tr) = shared_inv.as_ref().unwrap();
            (*tk, *tkl, *tr)
        } else {
            let s_inv = factor.inverse()?;
            (
                frobenius_inner(&s_inv, &k),
                frobenius_inner(&s_inv, &k_grad_l),
                s_inv.diag().sum(),
            )
        };

        let alpha_sq: f64 = alpha.iter().map(|a| a * a).sum();
        let k_alpha = k.dot(&alpha);
        let quad_k: f64 = alpha.iter().zip(k_alpha.iter()).map(|(a, b)| a * b).sum();
        let kl_alpha = k_grad_l.dot(&alpha);
        let quad_kl: f64 = alpha.iter().zip(kl_alpha.iter()).map(|(a, b)| a * b).sum();

        g_log_var += 0.5 * (quad_k + jitter * alpha_sq - tr_sinv_k - jitter * tr_sinv);
        g_log_len += 0.5 * (quad_kl - tr_sinv_kl);
        if let NoiseModel::Constant(log_s2) = noise {
            let s2 = log_s2.exp();
            g_log_noise += 0.5 * s2 * (alpha_sq - tr_sinv);
        }
    }
    let grad = if shared {
        vec![g_log_var, g_log_len, g_log_noise]
    } else {
        vec![g_log_var, g_log_len]
    };
    Ok((value, grad))
}

fn frobenius_inner(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Hyperparameters selected by marginal-likelihood maximization.
#[derive(Debug, Clone)]
pub struct OptimizedHyperparams {
    pub params: KernelParams,
    pub noise: NoiseModel,
    /// Marginal likelihood at the selected point.
    pub lml: f64,
    /// Which restart won (0 = the supplied initialization).
    pub restart: usize,
}

/// Maximize the exact marginal likelihood over [log a², log ℓ] (plus
/// log σ_n² for constant noise) with BFGS restarts. The first restart uses
/// `init`; later ones draw log-uniform points around the data's median
/// pairwise distance.
pub fn optimize_hyperparams(
    x: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    noise: &NoiseModel,
    init: &KernelParams,
    opts: &OptimizeOptions,
) -> Result<OptimizedHyperparams> {
    validate_inputs(x, targets, noise)?;
    let shared = noise.is_shared();
    let med = median_heuristic(x);
    let mut ranges = vec![
        (0.1f64.ln(), 10.0f64.ln()),
        ((0.1 * med).ln(), (10.0 * med).ln()),
    ];
    let mut init_vec = vec![init.log_variance, init.log_lengthscale];
    if let NoiseModel::Constant(log_s2) = noise {
        ranges.push((1e-2f64.ln(), 1.0f64.ln()));
        init_vec.push(*log_s2);
    }

    let objective = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let params = KernelParams::from_log(theta[0], theta[1])?;
        let noise_at = if shared {
            NoiseModel::Constant(theta[2])
        } else {
            noise.clone()
        };
        lml_gradient(x, targets, &noise_at, &params)
    };

    let best = maximize(objective, &init_vec, &ranges, opts)?;
    let params = KernelParams::from_log(best.point[0], best.point[1])?;
    let noise_out = if shared {
        NoiseModel::Constant(best.point[2])
    } else {
        noise.clone()
    };
    Ok(OptimizedHyperparams {
        params,
        noise: noise_out,
        lml: best.value,
        restart: best.restart,
    })
}
