//! Comparison methods: least-squares GP regression on label indicators
//! (optionally recalibrated with a fitted sigmoid) and a binary GP
//! classifier with a Laplace-approximated logistic likelihood.

use std::cell::RefCell;

use ndarray::{Array1, Array2, ArrayView2};

use crate::calibrate::{platt_apply, platt_fit, ClassProbabilities, PlattScaler, PROBABILITY_FLOOR};
use crate::error::{GpdError, Result};
use crate::gp::exact::{optimize_hyperparams, ExactGp};
use crate::gp::sparse::{fit_sparse, optimize_sparse, InducingSet};
use crate::gp::{GpModel, LatentPredictor, NoiseModel, CholFactor, NOISE_JITTER_SCALE};
use crate::kernels::{kernel_gradients, kernel_matrix, KernelParams};
use crate::math::{log1p_exp, logistic_gaussian_expectation, median_heuristic, sigmoid};
use crate::optimize::{maximize, Maximized, OptimizeOptions};
use crate::transform::one_hot;

/// Starting guess for the learned homoskedastic noise of the regression
/// baseline.
const GPR_INIT_NOISE: f64 = 0.1;

/// The regression-on-labels baseline after hyperparameter selection.
#[derive(Debug, Clone)]
pub struct GprFit {
    pub model: GpModel,
    pub params: KernelParams,
    /// Learned homoskedastic noise variance.
    pub noise_variance: f64,
    /// Marginal likelihood (exact) or its sparse lower bound at the
    /// selected hyperparameters.
    pub objective: f64,
}

/// Fit per-class GP regressions directly to one-hot label indicators with a
/// single learned noise variance, maximizing the (exact or sparse)
/// marginal likelihood.
pub fn gpr_labels_fit(
    x: ArrayView2<f64>,
    labels: &[usize],
    num_classes: usize,
    inducing: Option<&InducingSet>,
    init: &KernelParams,
    opts: &OptimizeOptions,
) -> Result<GprFit> {
    if labels.len() != x.nrows() {
        return Err(GpdError::Input(format!(
            "{} input rows but {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    let targets = one_hot(labels, num_classes)?;
    let noise = NoiseModel::Constant(GPR_INIT_NOISE.ln());
    match inducing {
        None => {
            let best = optimize_hyperparams(x, targets.view(), &noise, init, opts)?;
            let gp = ExactGp::fit(x, targets.view(), &best.noise, &best.params)?;
            let noise_variance = match best.noise {
                NoiseModel::Constant(log_s2) => log_s2.exp(),
                _ => unreachable!(),
            };
            Ok(GprFit {
                model: GpModel::Exact(gp),
                params: best.params,
                noise_variance,
                objective: best.lml,
            })
        }
        Some(set) => {
            let best = optimize_sparse(x, set, targets.view(), &noise, init, opts)?;
            let gp = fit_sparse(x, set, targets.view(), &best.noise, &best.params)?;
            let noise_variance = match best.noise {
                NoiseModel::Constant(log_s2) => log_s2.exp(),
                _ => unreachable!(),
            };
            Ok(GprFit {
                model: GpModel::Sparse(gp),
                params: best.params,
                noise_variance,
                objective: best.lml,
            })
        }
    }
}

/// Read the per-class posterior means as probabilities: clip each to
/// [PROBABILITY_FLOOR, 1 − PROBABILITY_FLOOR] and renormalize the row.
pub fn gpr_labels_predict(model: &GpModel, x_star: ArrayView2<f64>) -> Result<ClassProbabilities> {
    let (mean, _) = model.predict_latent(x_star)?;
    let mut probs = mean;
    for mut row in probs.outer_iter_mut() {
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = v.clamp(PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(ClassProbabilities {
        probs,
        mc_samples: 0,
        seed: 0,
    })
}

/// Fit one sigmoid scaler per class (one-vs-rest) on held-out calibration
/// points, using the latent regression means as scores.
pub fn gpr_platt_scalers(
    model: &GpModel,
    x_cal: ArrayView2<f64>,
    labels_cal: &[usize],
) -> Result<Vec<PlattScaler>> {
    if labels_cal.len() != x_cal.nrows() {
        return Err(GpdError::Input(format!(
            "{} calibration rows but {} labels",
            x_cal.nrows(),
            labels_cal.len()
        )));
    }
    let (mean, _) = model.predict_latent(x_cal)?;
    let mut scalers = Vec::with_capacity(mean.ncols());
    for c in 0..mean.ncols() {
        let positives: Vec<bool> = labels_cal.iter().map(|&l| l == c).collect();
        scalers.push(platt_fit(mean.column(c), &positives)?);
    }
    Ok(scalers)
}

/// Recalibrated regression baseline: per-class sigmoid of the latent mean,
/// renormalized across classes.
pub fn gpr_labels_predict_platt(
    model: &GpModel,
    scalers: &[PlattScaler],
    x_star: ArrayView2<f64>,
) -> Result<ClassProbabilities> {
    let (mean, _) = model.predict_latent(x_star)?;
    if scalers.len() != mean.ncols() {
        return Err(GpdError::Input(format!(
            "{} scalers for {} classes",
            scalers.len(),
            mean.ncols()
        )));
    }
    let mut probs = Array2::zeros(mean.raw_dim());
    for c in 0..mean.ncols() {
        let p = platt_apply(&scalers[c], mean.column(c));
        probs.column_mut(c).assign(&p);
    }
    for mut row in probs.outer_iter_mut() {
        let sum: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(ClassProbabilities {
        probs,
        mc_samples: 0,
        seed: 0,
    })
}

fn validate_binary_labels(x: ArrayView2<f64>, labels: &[usize]) -> Result<Array1<f64>> {
    if labels.len() != x.nrows() {
        return Err(GpdError::Input(format!(
            "{} input rows but {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(GpdError::Input("need at least one training point".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(GpdError::Input(format!(
            "the Laplace classifier is binary; got label {bad}"
        )));
    }
    Ok(labels.iter().map(|&l| l as f64).collect())
}

/// Newton mode search for the logistic-likelihood posterior, parameterized
/// by a = K̂⁻¹f so no explicit inverse is needed. Each step is damped by
/// halving until the unnormalized posterior improves.
struct ModeResult {
    f: Array1<f64>,
    a: Array1<f64>,
    pi: Array1<f64>,
    w_sqrt: Array1<f64>,
    l_b: CholFactor,
    loglik: f64,
    iterations: usize,
}

fn log_likelihood(y: &Array1<f64>, f: &Array1<f64>) -> f64 {
    y.iter()
        .zip(f.iter())
        .map(|(&yi, &fi)| if yi > 0.5 { -log1p_exp(-fi) } else { -log1p_exp(fi) })
        .sum()
}

fn find_mode(
    k_hat: &Array2<f64>,
    y: &Array1<f64>,
    warm_a: Option<&Array1<f64>>,
) -> Result<ModeResult> {
    let n = y.len();
    let mut a = warm_a.cloned().unwrap_or_else(|| Array1::zeros(n));
    let mut f = k_hat.dot(&a);
    let mut psi = -0.5 * a.dot(&f) + log_likelihood(y, &f);
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..100 {
        let pi = f.mapv(sigmoid);
        let grad_norm = y
            .iter()
            .zip(pi.iter())
            .zip(a.iter())
            .map(|((yi, pii), ai)| {
                let g = yi - pii - ai;
                g * g
            })
            .sum::<f64>()
            .sqrt();
        if grad_norm < 1e-6 {
            converged = true;
            break;
        }
        iterations += 1;
        let w = pi.mapv(|p| p * (1.0 - p));
        let w_sqrt = w.mapv(f64::sqrt);
        let mut b_mat = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                b_mat[[i, j]] = w_sqrt[i] * k_hat[[i, j]] * w_sqrt[j];
            }
            b_mat[[i, i]] += 1.0;
        }
        let l_b = CholFactor::new(&b_mat)?;
        let b: Array1<f64> = (0..n).map(|i| w[i] * f[i] + y[i] - pi[i]).collect();
        let rhs: Array1<f64> = {
            let v = k_hat.dot(&b);
            (0..n).map(|i| w_sqrt[i] * v[i]).collect()
        };
        let sol = l_b.solve_vec(rhs.view());
        let a_new: Array1<f64> = (0..n).map(|i| b[i] - w_sqrt[i] * sol[i]).collect();
        let f_new = k_hat.dot(&a_new);
        let da = &a_new - &a;
        let df = &f_new - &f;
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let a_try = &a + &(&da * step);
            let f_try = &f + &(&df * step);
            let psi_try = -0.5 * a_try.dot(&f_try) + log_likelihood(y, &f_try);
            if psi_try > psi {
                a = a_try;
                f = f_try;
                psi = psi_try;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            // Numerically stationary; the convergence check above decides
            // whether that is good enough.
            let pi = f.mapv(sigmoid);
            let g2 = y
                .iter()
                .zip(pi.iter())
                .zip(a.iter())
                .map(|((yi, pii), ai)| {
                    let g = yi - pii - ai;
                    g * g
                })
                .sum::<f64>()
                .sqrt();
            converged = g2 < 1e-6;
            break;
        }
    }
    if !converged {
        let pi = f.mapv(sigmoid);
        let g2 = y
            .iter()
            .zip(pi.iter())
            .zip(a.iter())
            .map(|((yi, pii), ai)| {
                let g = yi - pii - ai;
                g * g
            })
            .sum::<f64>()
            .sqrt();
        if g2 >= 1e-6 {
            return Err(GpdError::Model(format!(
                "posterior mode search stalled with gradient norm {g2:.3e}"
            )));
        }
    }
    // Rebuild the curvature pieces at the final mode.
    let pi = f.mapv(sigmoid);
    let w = pi.mapv(|p| p * (1.0 - p));
    let w_sqrt = w.mapv(f64::sqrt);
    let n = y.len();
    let mut b_mat = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            b_mat[[i, j]] = w_sqrt[i] * k_hat[[i, j]] * w_sqrt[j];
        }
        b_mat[[i, i]] += 1.0;
    }
    let l_b = CholFactor::new(&b_mat)?;
    let loglik = log_likelihood(y, &f);
    Ok(ModeResult {
        f,
        a,
        pi,
        w_sqrt,
        l_b,
        loglik,
        iterations,
    })
}

/// Binary GP classifier with the Laplace approximation to the logistic
/// posterior. The kernel matrix carries the same relative diagonal jitter
/// as the regression backends.
#[derive(Debug, Clone)]
pub struct LaplaceGpc {
    train_x: Array2<f64>,
    params: KernelParams,
    /// ∇ log p(y|f̂) = y − π̂, which is all the predictive mean needs.
    grad_loglik: Array1<f64>,
    w_sqrt: Array1<f64>,
    l_b: CholFactor,
    evidence: f64,
    iterations: usize,
}

impl LaplaceGpc {
    /// Find the posterior mode and approximate evidence at fixed
    /// hyperparameters. `warm_a` restarts the Newton iteration from a
    /// previous solution's dual vector.
    pub fn fit(
        x: ArrayView2<f64>,
        labels: &[usize],
        params: &KernelParams,
        warm_a: Option<&Array1<f64>>,
    ) -> Result<LaplaceGpc> {
        let y = validate_binary_labels(x, labels)?;
        let k_hat = jittered_kernel(x, params)?;
        let mode = find_mode(&k_hat, &y, warm_a)?;
        let evidence = -0.5 * mode.a.dot(&mode.f) + mode.loglik
            - mode.l_b.l.diag().iter().map(|v| v.ln()).sum::<f64>();
        let grad_loglik: Array1<f64> = (0..y.len()).map(|i| y[i] - mode.pi[i]).collect();
        Ok(LaplaceGpc {
            train_x: x.to_owned(),
            params: params.clone(),
            grad_loglik,
            w_sqrt: mode.w_sqrt,
            l_b: mode.l_b,
            evidence,
            iterations: mode.iterations,
        })
    }

    /// Laplace approximation to the log marginal likelihood.
    pub fn evidence(&self) -> f64 {
        self.evidence
    }

    /// Newton steps the mode search used.
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    /// Posterior mean and variance of the class-1 latent per query row.
    fn latent_marginals(&self, x_star: ArrayView2<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        let k_star = kernel_matrix(x_star, self.train_x.view(), &self.params)?;
        let mu = k_star.dot(&self.grad_loglik);
        // Scale the columns of k*ᵀ by W^{1/2} and half-solve for variances.
        let mut scaled = k_star.t().to_owned();
        for (mut row, w) in scaled.outer_iter_mut().zip(self.w_sqrt.iter()) {
            row.mapv_inplace(|v| v * w);
        }
        let v = self.l_b.half_solve_mat(scaled.view());
        let css = crate::gp::column_sumsq(v.view());
        let prior = self.params.variance();
        let var = css.mapv(|s| (prior - s).max(0.0));
        Ok((mu, var))
    }

    /// Class-1 probability per query row, by Gauss–Hermite averaging of the
    /// logistic over the latent marginal.
    pub fn predict_proba(&self, x_star: ArrayView2<f64>) -> Result<ClassProbabilities> {
        let (mu, var) = self.latent_marginals(x_star)?;
        let mut probs = Array2::zeros((x_star.nrows(), 2));
        for i in 0..x_star.nrows() {
            let p1 = logistic_gaussian_expectation(mu[i], var[i]);
            probs[[i, 0]] = 1.0 - p1;
            probs[[i, 1]] = p1;
        }
        Ok(ClassProbabilities {
            probs,
            mc_samples: 0,
            seed: 0,
        })
    }
}

/// Latent view of the classifier: class 1 carries the posterior marginal of
/// the logistic latent, class 0 is pinned at zero with no uncertainty. The
/// softmax of the pair is exactly the logistic of the class-1 latent, so
/// sampling-based consumers reproduce the averaged predictive.
impl LatentPredictor for LaplaceGpc {
    fn num_classes(&self) -> usize {
        2
    }

    fn predict_latent(&self, x_star: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let (mu, var) = self.latent_marginals(x_star)?;
        let m = x_star.nrows();
        let mut mean = Array2::zeros((m, 2));
        let mut variance = Array2::zeros((m, 2));
        mean.column_mut(1).assign(&mu);
        variance.column_mut(1).assign(&var);
        Ok((mean, variance))
    }
}

fn jittered_kernel(x: ArrayView2<f64>, params: &KernelParams) -> Result<Array2<f64>> {
    let mut k = kernel_matrix(x, x, params)?;
    let jitter = NOISE_JITTER_SCALE * params.variance();
    for i in 0..k.nrows() {
        k[[i, i]] += jitter;
    }
    Ok(k)
}

/// Laplace evidence and its gradient over [log a², log ℓ], plus the dual
/// vector of the mode for warm-starting the next evaluation.
pub fn laplace_evidence_gradient(
    x: ArrayView2<f64>,
    labels: &[usize],
    params: &KernelParams,
    warm_a: Option<&Array1<f64>>,
) -> Result<(f64, Vec<f64>, Array1<f64>)> {
    let y = validate_binary_labels(x, labels)?;
    let n = y.len();
    let variance = params.variance();
    let (k, k_grad_l) = kernel_gradients(x, params);
    let jitter = NOISE_JITTER_SCALE * variance;
    let mut k_hat = k;
    for i in 0..n {
        k_hat[[i, i]] += jitter;
    }
    let mode = find_mode(&k_hat, &y, warm_a)?;
    let evidence = -0.5 * mode.a.dot(&mode.f) + mode.loglik
        - mode.l_b.l.diag().iter().map(|v| v.ln()).sum::<f64>();

    // Explicit responsibility matrix R = W^{1/2} B⁻¹ W^{1/2}.
    let b_inv = mode.l_b.inverse()?;
    let mut r = b_inv;
    for i in 0..n {
        for j in 0..n {
            r[[i, j]] *= mode.w_sqrt[i] * mode.w_sqrt[j];
        }
    }
    // Posterior variances at the training points.
    let mut wk = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            wk[[i, j]] = mode.w_sqrt[i] * k_hat[[i, j]];
        }
    }
    let c_mat = mode.l_b.half_solve_mat(wk.view());
    let css = crate::gp::column_sumsq(c_mat.view());
    // Implicit-derivative weights ∂Z/∂f̂ᵢ: the mode is stationary, so only
    // the log-det term moves, through W. With d³/df³ log p = −dW/df this is
    // +½ · (posterior variance)ᵢ · d³ᵢ.
    let s2: Array1<f64> = (0..n)
        .map(|i| {
            let p = mode.pi[i];
            let d3 = -p * (1.0 - p) * (1.0 - 2.0 * p);
            0.5 * (k_hat[[i, i]] - css[i]) * d3
        })
        .collect();
    let grad_ll: Array1<f64> = (0..n).map(|i| y[i] - mode.pi[i]).collect();

    // Every entry of K̂ scales with a², jitter included, so the log-variance
    // derivative block is K̂ itself.
    let mut grad = Vec::with_capacity(2);
    for c_j in [&k_hat, &k_grad_l] {
        let ca = c_j.dot(&mode.a);
        let s1 = 0.5 * mode.a.dot(&ca) - 0.5 * frobenius(&r, c_j);
        let b_j = c_j.dot(&grad_ll);
        let rb = r.dot(&b_j);
        let s3 = &b_j - &k_hat.dot(&rb);
        grad.push(s1 + s2.dot(&s3));
    }
    Ok((evidence, grad, mode.a))
}

fn frobenius(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Hyperparameters chosen by maximizing the Laplace evidence.
#[derive(Debug, Clone)]
pub struct OptimizedLaplace {
    pub params: KernelParams,
    pub evidence: f64,
    pub restart: usize,
}

/// Maximize the Laplace evidence over [log a², log ℓ] with BFGS restarts,
/// warm-starting each mode search from the previous evaluation.
pub fn optimize_laplace(
    x: ArrayView2<f64>,
    labels: &[usize],
    init: &KernelParams,
    opts: &OptimizeOptions,
) -> Result<OptimizedLaplace> {
    validate_binary_labels(x, labels)?;
    let med = median_heuristic(x);
    let ranges = [
        (0.1f64.ln(), 10.0f64.ln()),
        ((0.1 * med).ln(), (10.0 * med).ln()),
    ];
    let warm: RefCell<Option<Array1<f64>>> = RefCell::new(None);
    let objective = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let params = KernelParams::from_log(theta[0], theta[1])?;
        let warm_now = warm.borrow().clone();
        let (value, grad, a) =
            laplace_evidence_gradient(x, labels, &params, warm_now.as_ref())?;
        *warm.borrow_mut() = Some(a);
        Ok((value, grad))
    };
    let best: Maximized = maximize(objective, &[init.log_variance, init.log_lengthscale], &ranges, opts)?;
    Ok(OptimizedLaplace {
        params: KernelParams::from_log(best.point[0], best.point[1])?,
        evidence: best.value,
        restart: best.restart,
    })
}
