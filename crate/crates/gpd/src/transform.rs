//! The Dirichlet label transform: one-hot class labels become per-class
//! regression targets in log space together with per-observation noise
//! variances.
//!
//! Each label row is read as Dirichlet concentration counts α = one_hot + α_ε
//! with a small pseudo-count α_ε > 0. Each Gamma(α, 1) marginal of that
//! Dirichlet is replaced by the log-normal with the same mean and variance,
//! which yields Gaussian targets
//!
//!   σ̃² = log(1/α + 1),   ỹ = log α − σ̃²/2,
//!
//! so a heteroskedastic GP regression on (ỹ, σ̃²) stands in for classification.

use ndarray::{Array2, ArrayView2};

use crate::error::{GpdError, Result};

/// The Dirichlet pseudo-count 0 < α_ε < 1 added to every one-hot count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaEpsilon(f64);

impl AlphaEpsilon {
    pub fn new(value: f64) -> Result<Self> {
        if !(value.is_finite() && value > 0.0 && value < 1.0) {
            return Err(GpdError::Input(format!(
                "alpha_eps must lie strictly between 0 and 1, got {value}"
            )));
        }
        Ok(Self(value))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// The default pseudo-count grid searched by [`select_alpha_eps`].
pub fn default_alpha_grid() -> Vec<AlphaEpsilon> {
    [0.1, 0.01, 0.001]
        .into_iter()
        .map(|v| AlphaEpsilon::new(v).expect("static grid"))
        .collect()
}

/// Per-class regression targets ỹ and noise variances σ̃² produced by the
/// label transform. Within each row only two distinct (ỹ, σ̃²) pairs occur:
/// one for the observed class (α = 1 + α_ε) and one shared by all others
/// (α = α_ε); the observed class has the larger target and the smaller
/// variance.
#[derive(Debug, Clone)]
pub struct TransformedTargets {
    /// n×C latent targets in log space.
    pub y_tilde: Array2<f64>,
    /// n×C per-observation noise variances, all strictly positive.
    pub sigma2_tilde: Array2<f64>,
    /// The pseudo-count that produced the targets.
    pub alpha_eps: AlphaEpsilon,
    /// Number of classes C >= 2.
    pub num_classes: usize,
}

/// Encode integer labels in {0..C-1} as an n×C one-hot matrix.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Array2<f64>> {
    if num_classes < 2 {
        return Err(GpdError::Input(format!(
            "one_hot requires at least 2 classes, got {num_classes}"
        )));
    }
    let mut out = Array2::<f64>::zeros((labels.len(), num_classes));
    for (i, &label) in labels.iter().enumerate() {
        if label >= num_classes {
            return Err(GpdError::Input(format!(
                "label {label} at row {i} is out of range for {num_classes} classes"
            )));
        }
        out[[i, label]] = 1.0;
    }
    Ok(out)
}

/// Moment-matched log-normal parameters for a Gamma(α, 1) marginal:
/// (ỹ, σ̃²) with σ̃² = log(1/α + 1) and ỹ = log α − σ̃²/2.
pub fn moment_match(alpha: f64) -> (f64, f64) {
    let sigma2 = (1.0 / alpha + 1.0).ln();
    let y = alpha.ln() - 0.5 * sigma2;
    (y, sigma2)
}

/// Apply the Dirichlet transform to a one-hot matrix.
pub fn transform(one_hot: ArrayView2<f64>, alpha_eps: AlphaEpsilon) -> Result<TransformedTargets> {
    let (n, c) = one_hot.dim();
    if c < 2 {
        return Err(GpdError::Input(format!(
            "transform requires at least 2 classes, got {c}"
        )));
    }
    for i in 0..n {
        let mut ones = 0usize;
        for j in 0..c {
            let v = one_hot[[i, j]];
            if v == 1.0 {
                ones += 1;
            } else if v != 0.0 {
                return Err(GpdError::Input(format!(
                    "row {i} is not one-hot: entry {v} at column {j}"
                )));
            }
        }
        if ones != 1 {
            return Err(GpdError::Input(format!(
                "row {i} is not one-hot: {ones} entries set"
            )));
        }
    }
    // α takes only the two values α_ε and 1 + α_ε; evaluate each once.
    let (y_unobserved, s2_unobserved) = moment_match(alpha_eps.value());
    let (y_observed, s2_observed) = moment_match(1.0 + alpha_eps.value());
    let mut y_tilde = Array2::<f64>::zeros((n, c));
    let mut sigma2_tilde = Array2::<f64>::zeros((n, c));
    for i in 0..n {
        for j in 0..c {
            if one_hot[[i, j]] == 1.0 {
                y_tilde[[i, j]] = y_observed;
                sigma2_tilde[[i, j]] = s2_observed;
            } else {
                y_tilde[[i, j]] = y_unobserved;
                sigma2_tilde[[i, j]] = s2_unobserved;
            }
        }
    }
    Ok(TransformedTargets {
        y_tilde,
        sigma2_tilde,
        alpha_eps,
        num_classes: c,
    })
}

/// Pick the pseudo-count from `grid` whose fully fitted model attains the
/// lowest training-set mean negative log-likelihood, as reported by
/// `fit_and_score`. Ties break toward the larger pseudo-count (smoother
/// targets). Individual grid points may fail to fit; only if every grid
/// point fails is an error returned.
pub fn select_alpha_eps<F>(grid: &[AlphaEpsilon], mut fit_and_score: F) -> Result<AlphaEpsilon>
where
    F: FnMut(AlphaEpsilon) -> Result<f64>,
{
    if grid.is_empty() {
        return Err(GpdError::Input("alpha_eps grid must be non-empty".into()));
    }
    let mut best: Option<(AlphaEpsilon, f64)> = None;
    let mut failures = Vec::new();
    for &candidate in grid {
        match fit_and_score(candidate) {
            Ok(score) if score.is_finite() => {
                let better = match best {
                    None => true,
                    Some((prev, prev_score)) => {
                        score < prev_score
                            || (score == prev_score && candidate.value() > prev.value())
                    }
                };
                if better {
                    best = Some((candidate, score));
                }
            }
            Ok(score) => failures.push(format!("alpha_eps={}: non-finite score {score}", candidate.value())),
            Err(e) => failures.push(format!("alpha_eps={}: {e}", candidate.value())),
        }
    }
    best.map(|(a, _)| a).ok_or_else(|| {
        GpdError::Model(format!(
            "every alpha_eps grid point failed to fit: {}",
            failures.join("; ")
        ))
    })
}
