//! From latent Gaussians to class probabilities and calibration metrics.
//!
//! Probabilities come from Monte-Carlo averaging of the softmax over the
//! per-class latent posterior. Metrics (expected calibration error, mean
//! negative log-likelihood, error rate) and reliability diagrams all run off
//! one canonical binning, so a diagram written to disk can be folded back
//! into exactly the scalar the library reported.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{GpdError, Result};
use crate::gp::LatentPredictor;
use crate::math::{log1p_exp, normal_quantile, sigmoid, softmax_in_place, stream_rng};

/// Floor applied to predicted probabilities inside the log-likelihood.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Class-probability estimates for a batch of points, with the sampling
/// configuration that produced them. `mc_samples == 0` marks probabilities
/// that were computed deterministically rather than by sampling.
#[derive(Debug, Clone)]
pub struct ClassProbabilities {
    /// p×C; every row sums to 1.
    pub probs: Array2<f64>,
    pub mc_samples: usize,
    pub seed: u64,
}

impl ClassProbabilities {
    pub fn num_points(&self) -> usize {
        self.probs.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.probs.ncols()
    }
}

fn validate_latents(mean: ArrayView2<f64>, var: ArrayView2<f64>) -> Result<()> {
    if mean.shape() != var.shape() {
        return Err(GpdError::Input(format!(
            "latent mean shape {:?} does not match variance shape {:?}",
            mean.shape(),
            var.shape()
        )));
    }
    if mean.ncols() < 2 {
        return Err(GpdError::Input(format!(
            "classification needs at least 2 latent classes, got {}",
            mean.ncols()
        )));
    }
    if mean.iter().any(|v| !v.is_finite()) {
        return Err(GpdError::Input("latent means contain non-finite values".into()));
    }
    if var.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(GpdError::Input(
            "latent variances must be non-negative and finite".into(),
        ));
    }
    Ok(())
}

/// Monte-Carlo estimate of E[softmax(f)] under independent per-class
/// Gaussians. The i-th row draws from its own RNG stream, so results are
/// reproducible point-by-point for a fixed seed and batch.
pub fn softmax_expectation_from_latents(
    mean: ArrayView2<f64>,
    var: ArrayView2<f64>,
    samples: usize,
    seed: u64,
) -> Result<ClassProbabilities> {
    validate_latents(mean, var)?;
    if samples == 0 {
        return Err(GpdError::Input("sample count must be at least 1".into()));
    }
    let (p, c) = (mean.nrows(), mean.ncols());
    let mut probs = Array2::zeros((p, c));
    let mut f = vec![0.0f64; c];
    for i in 0..p {
        let mut rng = stream_rng(seed, i as u64);
        let mut acc = vec![0.0f64; c];
        for _ in 0..samples {
            for (k, slot) in f.iter_mut().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                // Written as mean + sd*z so zero variance reproduces the
                // mean exactly rather than within rounding.
                *slot = mean[[i, k]] + var[[i, k]].sqrt() * z;
            }
            softmax_in_place(&mut f);
            for (a, v) in acc.iter_mut().zip(f.iter()) {
                *a += v;
            }
        }
        for (k, a) in acc.iter().enumerate() {
            probs[[i, k]] = a / samples as f64;
        }
    }
    Ok(ClassProbabilities {
        probs,
        mc_samples: samples,
        seed,
    })
}

/// Convenience wrapper: query the predictor, then average the softmax.
pub fn softmax_expectation(
    predictor: &dyn LatentPredictor,
    x_star: ArrayView2<f64>,
    samples: usize,
    seed: u64,
) -> Result<ClassProbabilities> {
    let (mean, var) = predictor.predict_latent(x_star)?;
    softmax_expectation_from_latents(mean.view(), var.view(), samples, seed)
}

fn validate_probs_labels(probs: ArrayView2<f64>, labels: &[usize]) -> Result<()> {
    if probs.nrows() == 0 {
        return Err(GpdError::Input("no predictions to score".into()));
    }
    if probs.nrows() != labels.len() {
        return Err(GpdError::Input(format!(
            "{} probability rows but {} labels",
            probs.nrows(),
            labels.len()
        )));
    }
    if probs.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0 + 1e-9) {
        return Err(GpdError::Input(
            "probabilities must lie in [0, 1] and be finite".into(),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= probs.ncols()) {
        return Err(GpdError::Input(format!(
            "label {bad} is out of range for {} classes",
            probs.ncols()
        )));
    }
    Ok(())
}

/// Predicted class per row: argmax probability, first index on ties.
fn argmax_row(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (j, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = j;
        }
    }
    best
}

/// Which of `bins` uniform bins a confidence falls in. Values exactly on a
/// boundary go to the upper bin; 1.0 goes to the last bin.
fn bin_index(confidence: f64, bins: usize) -> usize {
    ((confidence * bins as f64).floor() as usize).min(bins - 1)
}

/// One row of a reliability diagram. Empty bins carry zero confidence and
/// accuracy and contribute nothing to the calibration error.
#[derive(Debug, Clone, PartialEq)]
pub struct BinRecord {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Mean confidence of the points in the bin.
    pub confidence: f64,
    /// Fraction of those points whose predicted class was correct.
    pub accuracy: f64,
}

/// Bin predictions by confidence (max class probability) into `bins`
/// uniform bins over [0, 1]. Always returns exactly `bins` records.
pub fn reliability_bins(
    probs: ArrayView2<f64>,
    labels: &[usize],
    bins: usize,
) -> Result<Vec<BinRecord>> {
    validate_probs_labels(probs, labels)?;
    if bins == 0 {
        return Err(GpdError::Input("bin count must be at least 1".into()));
    }
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0f64; bins];
    let mut correct_sum = vec![0.0f64; bins];
    for (i, row) in probs.outer_iter().enumerate() {
        let pred = argmax_row(row);
        let conf = row[pred];
        let b = bin_index(conf, bins);
        count[b] += 1;
        conf_sum[b] += conf;
        if pred == labels[i] {
            correct_sum[b] += 1.0;
        }
    }
    Ok((0..bins)
        .map(|b| {
            let n = count[b];
            BinRecord {
                lo: b as f64 / bins as f64,
                hi: (b + 1) as f64 / bins as f64,
                count: n,
                confidence: if n > 0 { conf_sum[b] / n as f64 } else { 0.0 },
                accuracy: if n > 0 { correct_sum[b] / n as f64 } else { 0.0 },
            }
        })
        .collect())
}

/// Expected calibration error from a finished binning:
/// Σ_b (count_b / N) · |accuracy_b − confidence_b|.
///
/// This is the only place the reduction is written down; every other route
/// to an ECE (the scalar metric, reports, diagrams re-read from disk) goes
/// through it, which is what makes recomputation bit-exact.
pub fn ece_from_bins(bins: &[BinRecord]) -> f64 {
    let total: usize = bins.iter().map(|b| b.count).sum();
    if total == 0 {
        return 0.0;
    }
    bins.iter()
        .map(|b| (b.count as f64 / total as f64) * (b.accuracy - b.confidence).abs())
        .sum()
}

/// Expected calibration error with `bins` uniform confidence bins.
pub fn ece(probs: ArrayView2<f64>, labels: &[usize], bins: usize) -> Result<f64> {
    Ok(ece_from_bins(&reliability_bins(probs, labels, bins)?))
}

/// Mean negative log-likelihood of the true labels, with probabilities
/// floored at `PROBABILITY_FLOOR` so certain-and-wrong predictions stay
/// finite.
pub fn mnll(probs: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    validate_probs_labels(probs, labels)?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| -probs[[i, l]].max(PROBABILITY_FLOOR).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Fraction of points whose argmax prediction disagrees with the label.
pub fn error_rate(probs: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    validate_probs_labels(probs, labels)?;
    let wrong = probs
        .outer_iter()
        .zip(labels.iter())
        .filter(|(row, &l)| argmax_row(*row) != l)
        .count();
    Ok(wrong as f64 / labels.len() as f64)
}

/// The three headline metrics plus the binning they came from. The stored
/// `ece` is exactly `ece_from_bins(&bins)`.
#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub ece: f64,
    pub mnll: f64,
    pub error_rate: f64,
    pub bins: Vec<BinRecord>,
}

pub fn calibration_report(
    probs: &ClassProbabilities,
    labels: &[usize],
    bins: usize,
) -> Result<CalibrationReport> {
    let view = probs.probs.view();
    let bins = reliability_bins(view, labels, bins)?;
    Ok(CalibrationReport {
        ece: ece_from_bins(&bins),
        mnll: mnll(view, labels)?,
        error_rate: error_rate(view, labels)?,
        bins,
    })
}

/// A fitted sigmoid recalibration p = σ(slope·s + intercept).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlattScaler {
    pub slope: f64,
    pub intercept: f64,
}

/// Fit the sigmoid by Newton's method on the regularized targets
/// t₊ = (N₊+1)/(N₊+2) and t₋ = 1/(N₋+2), which keep the optimum finite even
/// on separable scores. Converges when the gradient's max-norm drops below
/// 1e-8; steps are halved until they improve the objective.
pub fn platt_fit(scores: ArrayView1<f64>, positives: &[bool]) -> Result<PlattScaler> {
    if scores.len() != positives.len() {
        return Err(GpdError::Input(format!(
            "{} scores but {} labels",
            scores.len(),
            positives.len()
        )));
    }
    if scores.is_empty() {
        return Err(GpdError::Input("cannot fit a scaler to zero points".into()));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(GpdError::Input("scores contain non-finite values".into()));
    }
    let n_pos = positives.iter().filter(|p| **p).count() as f64;
    let n_neg = positives.len() as f64 - n_pos;
    let t_pos = (n_pos + 1.0) / (n_pos + 2.0);
    let t_neg = 1.0 / (n_neg + 2.0);
    let targets: Vec<f64> = positives
        .iter()
        .map(|&p| if p { t_pos } else { t_neg })
        .collect();

    let nll = |a: f64, b: f64| -> f64 {
        scores
            .iter()
            .zip(targets.iter())
            .map(|(&s, &t)| {
                let z = a * s + b;
                t * log1p_exp(-z) + (1.0 - t) * log1p_exp(z)
            })
            .sum()
    };

    let mut a = 0.0;
    let mut b = ((n_pos + 1.0) / (n_neg + 1.0)).ln();
    let mut f = nll(a, b);
    for _ in 0..100 {
        let mut g_a = 0.0;
        let mut g_b = 0.0;
        let mut h_aa = 1e-12;
        let mut h_ab = 0.0;
        let mut h_bb = 1e-12;
        for (&s, &t) in scores.iter().zip(targets.iter()) {
            let p = sigmoid(a * s + b);
            let d = p - t;
            let w = (p * (1.0 - p)).max(1e-12);
            g_a += d * s;
            g_b += d;
            h_aa += w * s * s;
            h_ab += w * s;
            h_bb += w;
        }
        if g_a.abs().max(g_b.abs()) < 1e-8 {
            break;
        }
        let det = h_aa * h_bb - h_ab * h_ab;
        if det <= 0.0 || !det.is_finite() {
            return Err(GpdError::Numerical(
                "singular Hessian while fitting the sigmoid scaler".into(),
            ));
        }
        let step_a = -(h_bb * g_a - h_ab * g_b) / det;
        let step_b = -(h_aa * g_b - h_ab * g_a) / det;
        let mut eta = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let f_new = nll(a + eta * step_a, b + eta * step_b);
            if f_new < f {
                a += eta * step_a;
                b += eta * step_b;
                f = f_new;
                improved = true;
                break;
            }
            eta *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(PlattScaler {
        slope: a,
        intercept: b,
    })
}

/// Apply a fitted scaler to raw scores.
pub fn platt_apply(scaler: &PlattScaler, scores: ArrayView1<f64>) -> Array1<f64> {
    scores.mapv(|s| sigmoid(scaler.slope * s + scaler.intercept))
}

/// One reliability-diagram row with an uncertainty band on its accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct BandRecord {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub confidence: f64,
    pub accuracy: f64,
    /// Accuracy of the classifier built from the latent means shifted down
    /// by z·σ per class.
    pub lower_accuracy: f64,
    /// Accuracy of the classifier built from the latent means shifted up.
    pub upper_accuracy: f64,
}

/// Reliability diagram with accuracy bands for a binary classifier.
///
/// Points are binned by the confidence of the Monte-Carlo probabilities.
/// The band columns rescore each bin under the two deterministic softmax
/// classifiers at μ − z·σ and μ + z·σ with z = Φ⁻¹((1+quantile)/2), so a
/// zero-variance predictor collapses all three accuracy columns to the same
/// values.
pub fn reliability_band(
    predictor: &dyn LatentPredictor,
    x: ArrayView2<f64>,
    labels: &[usize],
    bins: usize,
    quantile: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<BandRecord>> {
    let (mean, var) = predictor.predict_latent(x)?;
    validate_latents(mean.view(), var.view())?;
    let central = softmax_expectation_from_latents(mean.view(), var.view(), samples, seed)?;
    reliability_band_from_probs(
        central.probs.view(),
        mean.view(),
        var.view(),
        labels,
        bins,
        quantile,
    )
}

/// Reliability rows with accuracy bands when the probabilities were produced
/// by some *other* recipe than the Monte-Carlo softmax (e.g. clipped
/// regression means). Binning and confidence come from `probs`, so the rows
/// stay consistent with metrics computed on them, while the band columns
/// still rescore labels under the ±z·σ shifted-latent classifiers.
pub fn reliability_band_from_probs(
    probs: ArrayView2<f64>,
    mean: ArrayView2<f64>,
    var: ArrayView2<f64>,
    labels: &[usize],
    bins: usize,
    quantile: f64,
) -> Result<Vec<BandRecord>> {
    if mean.ncols() != 2 {
        return Err(GpdError::Input(format!(
            "reliability bands are defined for binary problems, got {} classes",
            mean.ncols()
        )));
    }
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(GpdError::Input(format!(
            "band quantile must be inside (0, 1), got {quantile}"
        )));
    }
    if bins == 0 {
        return Err(GpdError::Input("bin count must be at least 1".into()));
    }
    validate_latents(mean, var)?;
    validate_probs_labels(probs, labels)?;
    if probs.nrows() != mean.nrows() {
        return Err(GpdError::Input(format!(
            "{} probability rows but {} latent rows",
            probs.nrows(),
            mean.nrows()
        )));
    }
    let z = normal_quantile((1.0 + quantile) / 2.0);

    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0f64; bins];
    let mut correct = vec![0.0f64; bins];
    let mut correct_lo = vec![0.0f64; bins];
    let mut correct_hi = vec![0.0f64; bins];
    for i in 0..labels.len() {
        let row = probs.row(i);
        let pred = argmax_row(row);
        let b = bin_index(row[pred], bins);
        count[b] += 1;
        conf_sum[b] += row[pred];
        if pred == labels[i] {
            correct[b] += 1.0;
        }
        // The softmax is monotone, so the shifted classifiers' argmax can be
        // read straight off the shifted latents.
        let shifted_pred = |sign: f64| -> usize {
            let f0 = mean[[i, 0]] + sign * z * var[[i, 0]].sqrt();
            let f1 = mean[[i, 1]] + sign * z * var[[i, 1]].sqrt();
            usize::from(f1 > f0)
        };
        if shifted_pred(-1.0) == labels[i] {
            correct_lo[b] += 1.0;
        }
        if shifted_pred(1.0) == labels[i] {
            correct_hi[b] += 1.0;
        }
    }
    Ok((0..bins)
        .map(|b| {
            let n = count[b];
            let denom = n.max(1) as f64;
            BandRecord {
                lo: b as f64 / bins as f64,
                hi: (b + 1) as f64 / bins as f64,
                count: n,
                confidence: if n > 0 { conf_sum[b] / denom } else { 0.0 },
                accuracy: if n > 0 { correct[b] / denom } else { 0.0 },
                lower_accuracy: if n > 0 { correct_lo[b] / denom } else { 0.0 },
                upper_accuracy: if n > 0 { correct_hi[b] / denom } else { 0.0 },
            }
        })
        .collect())
}
