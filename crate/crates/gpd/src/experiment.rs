//! Experiment drivers: configuration, the per-replicate pipeline
//! (split → standardize → fit → predict → score), pseudo-count and
//! inducing-point sweeps, and deterministic artifact writing.
//!
//! Every run is reproducible from its configuration: all randomness flows
//! from the config seed through per-purpose derived streams, and metric
//! files contain no timestamps or machine state, so rerunning a config
//! yields byte-identical metrics. Wall-clock numbers are real and therefore
//! live in a separate timings file that is excluded from that guarantee.
//! Each output file records the hash of the configuration that produced it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::ArrayView2;
use sha2::{Digest, Sha256};

use crate::baselines::{
    gpr_labels_fit, gpr_labels_predict, gpr_labels_predict_platt, gpr_platt_scalers,
    optimize_laplace, LaplaceGpc,
};
use crate::calibrate::{
    calibration_report, mnll, reliability_band_from_probs, reliability_bins,
    softmax_expectation, BandRecord, CalibrationReport, ClassProbabilities, PlattScaler,
};
use crate::data::{
    load_csv, split, standardize, synth_bernoulli_1d, Dataset, FullPrecision, LabelColumn,
    ProbabilityCurve, SplitSpec,
};
use crate::error::{GpdError, Result};
use crate::gp::exact::{optimize_hyperparams, ExactGp};
use crate::gp::sparse::{fit_sparse, optimize_sparse, InducingSet};
use crate::gp::{GpModel, LatentPredictor, NoiseModel};
use crate::kernels::KernelParams;
use crate::math::median_heuristic;
use crate::optimize::OptimizeOptions;
use crate::transform::{default_alpha_grid, one_hot, select_alpha_eps, transform, AlphaEpsilon};

/// Central probability mass of the reliability accuracy band (±1 standard
/// deviation of the latent posterior).
pub const BAND_QUANTILE: f64 = 0.6827;

/// Classification method to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// GP regression on transformed label pseudo-counts, Monte-Carlo
    /// softmax probabilities.
    Gpd,
    /// GP regression directly on one-hot labels, clamped probabilities.
    Gpr,
    /// The regression baseline recalibrated with per-class sigmoids fitted
    /// on held-out calibration data.
    GprPlatt,
    /// Binary GP classification with a Laplace-approximated logistic
    /// likelihood.
    LaplaceGpc,
}

impl Method {
    /// Parse the CLI spelling of a method name.
    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "gpd" => Ok(Method::Gpd),
            "gpr" => Ok(Method::Gpr),
            "gpr_platt" => Ok(Method::GprPlatt),
            "laplace_gpc" => Ok(Method::LaplaceGpc),
            other => Err(GpdError::Input(format!(
                "unknown method {other:?}; expected gpd, gpr, gpr_platt, or laplace_gpc"
            ))),
        }
    }

    /// The canonical spelling used in files and hashes.
    pub fn name(&self) -> &'static str {
        match self {
            Method::Gpd => "gpd",
            Method::Gpr => "gpr",
            Method::GprPlatt => "gpr_platt",
            Method::LaplaceGpc => "laplace_gpc",
        }
    }
}

/// Where the data comes from: a CSV file or a built-in synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Delimited file with the label in the last column.
    Csv(PathBuf),
    /// One-dimensional Bernoulli draw with the given probability curve.
    Synth { curve: ProbabilityCurve, n: usize },
}

impl DataSource {
    /// Parse either a file path or a `synth:<curve>:<n>` spec, where curve
    /// is `sinusoid`, `step`, `square`, or `const<p>` (e.g. `const0.3`).
    pub fn parse(s: &str) -> Result<DataSource> {
        let Some(rest) = s.strip_prefix("synth:") else {
            return Ok(DataSource::Csv(PathBuf::from(s)));
        };
        let (curve_s, n_s) = rest.split_once(':').ok_or_else(|| {
            GpdError::Input(format!(
                "synthetic spec {s:?} must look like synth:<curve>:<n>"
            ))
        })?;
        let curve = if curve_s == "sinusoid" {
            ProbabilityCurve::Sinusoid
        } else if curve_s == "step" {
            ProbabilityCurve::Step
        } else if curve_s == "square" {
            ProbabilityCurve::Square
        } else if let Some(p) = curve_s.strip_prefix("const") {
            let p: f64 = p
                .parse()
                .map_err(|_| GpdError::Input(format!("bad constant probability in {s:?}")))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(GpdError::Input(format!(
                    "constant probability {p} outside [0,1]"
                )));
            }
            ProbabilityCurve::Constant(p)
        } else {
            return Err(GpdError::Input(format!(
                "unknown curve {curve_s:?}; expected sinusoid, step, square, or const<p>"
            )));
        };
        let n: usize = n_s
            .parse()
            .map_err(|_| GpdError::Input(format!("bad sample count in {s:?}")))?;
        if n == 0 {
            return Err(GpdError::Input("synthetic sample count must be positive".into()));
        }
        Ok(DataSource::Synth { curve, n })
    }

    /// The canonical spelling used in files and hashes.
    pub fn describe(&self) -> String {
        match self {
            DataSource::Csv(path) => path.display().to_string(),
            DataSource::Synth { curve, n } => format!("synth:{}:{n}", curve.label()),
        }
    }
}

/// Exact GP or a sparse approximation with this many inducing points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InducingSpec {
    Exact,
    Count(usize),
}

impl InducingSpec {
    /// Parse `exact` or a positive integer.
    pub fn parse(s: &str) -> Result<InducingSpec> {
        if s == "exact" {
            return Ok(InducingSpec::Exact);
        }
        let m: usize = s
            .parse()
            .map_err(|_| GpdError::Input(format!("inducing must be \"exact\" or a count, got {s:?}")))?;
        if m == 0 {
            return Err(GpdError::Input("inducing count must be positive".into()));
        }
        Ok(InducingSpec::Count(m))
    }

    fn describe(&self) -> String {
        match self {
            InducingSpec::Exact => "exact".to_string(),
            InducingSpec::Count(m) => m.to_string(),
        }
    }
}

/// Pseudo-count policy: select on training fit over the built-in grid, or
/// force a fixed value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaEpsSpec {
    Auto,
    Fixed(f64),
}

impl AlphaEpsSpec {
    /// Parse `auto` or a positive value.
    pub fn parse(s: &str) -> Result<AlphaEpsSpec> {
        if s == "auto" {
            return Ok(AlphaEpsSpec::Auto);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| GpdError::Input(format!("alpha_eps must be \"auto\" or a number, got {s:?}")))?;
        AlphaEpsilon::new(v)?;
        Ok(AlphaEpsSpec::Fixed(v))
    }

    fn describe(&self) -> String {
        match self {
            AlphaEpsSpec::Auto => "auto".to_string(),
            AlphaEpsSpec::Fixed(v) => format!("{:e}", FullPrecision(*v)),
        }
    }
}

/// Everything a run needs. Build one with [`ExperimentConfig::new`] and
/// adjust fields, or parse key-value pairs via
/// [`ExperimentConfig::from_pairs`].
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub method: Method,
    pub inducing: InducingSpec,
    pub alpha_eps: AlphaEpsSpec,
    pub replicates: usize,
    /// Monte-Carlo sample count for softmax probabilities; 0 means use the
    /// latent means deterministically.
    pub mc_samples: usize,
    /// Confidence bin count for calibration metrics and reliability files.
    pub bins: usize,
    pub seed: u64,
    /// Output directory; excluded from the config hash so runs into
    /// different directories stay comparable.
    pub out_dir: PathBuf,
    pub test_fraction: f64,
    /// Fraction of the training remainder held out for sigmoid
    /// recalibration; only consumed by `gpr_platt`.
    pub calibration_fraction: f64,
    /// Optimizer restarts per fit.
    pub restarts: usize,
    /// Optimizer iteration cap per restart.
    pub max_iters: usize,
}

impl ExperimentConfig {
    /// A config with conventional defaults: GPD, exact GP, automatic
    /// pseudo-count, one replicate, 1000 softmax samples, 10 bins.
    pub fn new(data: DataSource) -> Self {
        Self {
            data,
            method: Method::Gpd,
            inducing: InducingSpec::Exact,
            alpha_eps: AlphaEpsSpec::Auto,
            replicates: 1,
            mc_samples: 1000,
            bins: 10,
            seed: 0,
            out_dir: PathBuf::from("gpd_out"),
            test_fraction: 0.5,
            calibration_fraction: 0.2,
            restarts: 3,
            max_iters: 200,
        }
    }

    /// Apply `key=value` pairs (config file entries first, then flag
    /// overrides) on top of the defaults. The `dataset` key is required.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut data: Option<DataSource> = None;
        let mut config = Self::new(DataSource::Synth {
            curve: ProbabilityCurve::Sinusoid,
            n: 1,
        });
        for (key, value) in pairs {
            match key.as_str() {
                "dataset" => data = Some(DataSource::parse(value)?),
                "method" => config.method = Method::parse(value)?,
                "inducing" => config.inducing = InducingSpec::parse(value)?,
                "alpha_eps" => config.alpha_eps = AlphaEpsSpec::parse(value)?,
                "replicates" => config.replicates = parse_count(key, value)?,
                "mc_samples" => {
                    config.mc_samples = value.parse().map_err(|_| bad_number(key, value))?
                }
                "bins" => config.bins = parse_count(key, value)?,
                "seed" => config.seed = value.parse().map_err(|_| bad_number(key, value))?,
                "out" => config.out_dir = PathBuf::from(value),
                "test_fraction" => {
                    config.test_fraction = value.parse().map_err(|_| bad_number(key, value))?
                }
                "calibration_fraction" => {
                    config.calibration_fraction =
                        value.parse().map_err(|_| bad_number(key, value))?
                }
                "restarts" => config.restarts = parse_count(key, value)?,
                "max_iters" => config.max_iters = parse_count(key, value)?,
                other => {
                    return Err(GpdError::Input(format!("unknown config key {other:?}")));
                }
            }
        }
        config.data = data.ok_or_else(|| {
            GpdError::Input("config needs a dataset (path or synth:<curve>:<n>)".into())
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Cross-field checks that do not need the data loaded yet.
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(GpdError::Input("replicates must be positive".into()));
        }
        if self.bins == 0 {
            return Err(GpdError::Input("bins must be positive".into()));
        }
        if matches!(self.alpha_eps, AlphaEpsSpec::Fixed(_)) && self.method != Method::Gpd {
            return Err(GpdError::Input(format!(
                "alpha_eps applies only to gpd, not {}",
                self.method.name()
            )));
        }
        if self.method == Method::LaplaceGpc && self.inducing != InducingSpec::Exact {
            return Err(GpdError::Input(
                "laplace_gpc supports only inducing=exact".into(),
            ));
        }
        if self.method == Method::GprPlatt && self.calibration_fraction <= 0.0 {
            return Err(GpdError::Input(
                "gpr_platt needs calibration_fraction > 0".into(),
            ));
        }
        Ok(())
    }

    /// Canonical serialization of everything that affects numerical output
    /// (the output directory is deliberately excluded).
    fn canonical(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "dataset={}", self.data.describe());
        let _ = writeln!(s, "method={}", self.method.name());
        let _ = writeln!(s, "inducing={}", self.inducing.describe());
        let _ = writeln!(s, "alpha_eps={}", self.alpha_eps.describe());
        let _ = writeln!(s, "replicates={}", self.replicates);
        let _ = writeln!(s, "mc_samples={}", self.mc_samples);
        let _ = writeln!(s, "bins={}", self.bins);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "test_fraction={:e}", FullPrecision(self.test_fraction));
        let _ = writeln!(
            s,
            "calibration_fraction={:e}",
            FullPrecision(self.calibration_fraction)
        );
        let _ = writeln!(s, "restarts={}", self.restarts);
        let _ = writeln!(s, "max_iters={}", self.max_iters);
        s
    }

    /// Sixteen hex characters of the SHA-256 of the canonical form; stamped
    /// on every output file.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).fold(String::new(), |mut acc, b| {
            let _ = write!(acc, "{b:02x}");
            acc
        })
    }
}

fn parse_count(key: &str, value: &str) -> Result<usize> {
    let v: usize = value.parse().map_err(|_| bad_number(key, value))?;
    if v == 0 {
        return Err(GpdError::Input(format!("{key} must be positive")));
    }
    Ok(v)
}

fn bad_number(key: &str, value: &str) -> GpdError {
    GpdError::Input(format!("config key {key}: {value:?} is not a valid number"))
}

/// Read a flat `key = value` config file: one pair per line, `#` comments
/// and blank lines ignored.
pub fn parse_config_file(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let mut pairs = Vec::new();
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            GpdError::Parse(format!(
                "config line {}: expected key=value, got {line:?}",
                line_no + 1
            ))
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Load or synthesize the configured dataset. Synthetic draws use the
/// config seed, so the population is fixed while replicates vary the split.
pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    match &config.data {
        DataSource::Csv(path) => load_csv(path, &LabelColumn::Last),
        DataSource::Synth { curve, n } => synth_bernoulli_1d(*n, *curve, config.seed),
    }
}

/// splitmix64-style mixer giving each (seed, purpose) pair its own stream
/// seed, so e.g. k-means and Monte-Carlo prediction never share draws.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(salt.wrapping_mul(0xD129_0D3B_3F4C_6E1B));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// Salt bases: one namespace per randomized pipeline stage, offset by the
// replicate index.
const SALT_KMEANS: u64 = 1_000;
const SALT_OPTIMIZER: u64 = 2_000;
const SALT_PREDICT: u64 = 3_000;
const SALT_TRAIN_SCORE: u64 = 4_000;

/// Hyperparameters and selection details of one fitted replicate.
#[derive(Debug, Clone)]
pub struct FitDetails {
    pub variance: f64,
    pub lengthscale: f64,
    /// Learned homoskedastic noise variance (regression baselines only).
    pub noise_variance: Option<f64>,
    /// Selected pseudo-count (GPD only).
    pub alpha_eps: Option<f64>,
    /// Marginal likelihood, sparse bound, or Laplace evidence at the
    /// selected hyperparameters.
    pub objective: f64,
}

/// A fitted model of any method, ready to produce class probabilities.
#[derive(Debug)]
pub enum FittedMethod {
    Gpd {
        model: GpModel,
        mc_samples: usize,
        predict_seed: u64,
    },
    Gpr {
        model: GpModel,
    },
    GprPlatt {
        model: GpModel,
        scalers: Vec<PlattScaler>,
    },
    Laplace {
        model: LaplaceGpc,
    },
}

impl FittedMethod {
    /// Class probabilities for the query rows, using each method's own
    /// predictive recipe.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<ClassProbabilities> {
        match self {
            FittedMethod::Gpd {
                model,
                mc_samples,
                predict_seed,
            } => softmax_expectation(model, x, *mc_samples, *predict_seed),
            FittedMethod::Gpr { model } => gpr_labels_predict(model, x),
            FittedMethod::GprPlatt { model, scalers } => {
                gpr_labels_predict_platt(model, scalers, x)
            }
            FittedMethod::Laplace { model } => model.predict_proba(x),
        }
    }

    /// The latent-Gaussian view used for reliability bands, when the
    /// method has one (the post-hoc scaler does not).
    pub fn latent_predictor(&self) -> Option<&dyn LatentPredictor> {
        match self {
            FittedMethod::Gpd { model, .. } => Some(model),
            FittedMethod::Gpr { model } => Some(model),
            FittedMethod::GprPlatt { .. } => None,
            FittedMethod::Laplace { model } => Some(model),
        }
    }
}

/// Fit the configured method on a (standardized) training set. For
/// `gpr_platt` the calibration set supplies the sigmoid targets; other
/// methods ignore it. Automatic pseudo-count selection happens in here so
/// its cost lands inside the fit wall-clock.
pub fn fit_method(
    config: &ExperimentConfig,
    train: &Dataset,
    calibration: &Dataset,
    replicate: usize,
) -> Result<(FittedMethod, FitDetails)> {
    let x = train.x.view();
    let n = x.nrows();
    let r = replicate as u64;
    let opts = OptimizeOptions {
        restarts: config.restarts,
        max_iters: config.max_iters,
        seed: mix_seed(config.seed, SALT_OPTIMIZER + r),
        ..OptimizeOptions::default()
    };
    let init = KernelParams::new(1.0, median_heuristic(x))?;
    let inducing = match config.inducing {
        InducingSpec::Exact => None,
        InducingSpec::Count(m) => Some(InducingSet::kmeans(
            x,
            m.min(n),
            mix_seed(config.seed, SALT_KMEANS + r),
        )?),
    };

    match config.method {
        Method::Gpd => {
            let onehot = one_hot(&train.y, train.num_classes)?;
            let fit_at = |ae: AlphaEpsilon| -> Result<(GpModel, KernelParams, f64)> {
                let tt = transform(onehot.view(), ae)?;
                let noise = NoiseModel::PerPoint(tt.sigma2_tilde.clone());
                match &inducing {
                    None => {
                        let best = optimize_hyperparams(x, tt.y_tilde.view(), &noise, &init, &opts)?;
                        let gp = ExactGp::fit(x, tt.y_tilde.view(), &best.noise, &best.params)?;
                        Ok((GpModel::Exact(gp), best.params, best.lml))
                    }
                    Some(z) => {
                        let best = optimize_sparse(x, z, tt.y_tilde.view(), &noise, &init, &opts)?;
                        let gp = fit_sparse(x, z, tt.y_tilde.view(), &best.noise, &best.params)?;
                        Ok((GpModel::Sparse(gp), best.params, best.lml))
                    }
                }
            };
            let chosen = match config.alpha_eps {
                AlphaEpsSpec::Fixed(v) => AlphaEpsilon::new(v)?,
                AlphaEpsSpec::Auto => {
                    let score_seed = mix_seed(config.seed, SALT_TRAIN_SCORE + r);
                    select_alpha_eps(&default_alpha_grid(), |ae| {
                        let (model, _, _) = fit_at(ae)?;
                        let probs =
                            softmax_expectation(&model, x, config.mc_samples, score_seed)?;
                        mnll(probs.probs.view(), &train.y)
                    })?
                }
            };
            let (model, params, objective) = fit_at(chosen)?;
            Ok((
                FittedMethod::Gpd {
                    model,
                    mc_samples: config.mc_samples,
                    predict_seed: mix_seed(config.seed, SALT_PREDICT + r),
                },
                FitDetails {
                    variance: params.variance(),
                    lengthscale: params.lengthscale(),
                    noise_variance: None,
                    alpha_eps: Some(chosen.value()),
                    objective,
                },
            ))
        }
        Method::Gpr => {
            let fit = gpr_labels_fit(x, &train.y, train.num_classes, inducing.as_ref(), &init, &opts)?;
            let details = FitDetails {
                variance: fit.params.variance(),
                lengthscale: fit.params.lengthscale(),
                noise_variance: Some(fit.noise_variance),
                alpha_eps: None,
                objective: fit.objective,
            };
            Ok((FittedMethod::Gpr { model: fit.model }, details))
        }
        Method::GprPlatt => {
            if calibration.is_empty() {
                return Err(GpdError::Input(
                    "gpr_platt needs a non-empty calibration split".into(),
                ));
            }
            let fit = gpr_labels_fit(x, &train.y, train.num_classes, inducing.as_ref(), &init, &opts)?;
            let scalers = gpr_platt_scalers(&fit.model, calibration.x.view(), &calibration.y)?;
            let details = FitDetails {
                variance: fit.params.variance(),
                lengthscale: fit.params.lengthscale(),
                noise_variance: Some(fit.noise_variance),
                alpha_eps: None,
                objective: fit.objective,
            };
            Ok((
                FittedMethod::GprPlatt {
                    model: fit.model,
                    scalers,
                },
                details,
            ))
        }
        Method::LaplaceGpc => {
            let best = optimize_laplace(x, &train.y, &init, &opts)?;
            let model = LaplaceGpc::fit(x, &train.y, &best.params, None)?;
            let details = FitDetails {
                variance: best.params.variance(),
                lengthscale: best.params.lengthscale(),
                noise_variance: None,
                alpha_eps: None,
                objective: best.evidence,
            };
            Ok((FittedMethod::Laplace { model }, details))
        }
    }
}

/// Metrics of one successful replicate.
#[derive(Debug, Clone)]
pub struct ReplicateMetrics {
    pub replicate: usize,
    pub report: CalibrationReport,
    pub details: FitDetails,
    /// Mean squared error of the class-1 probability against the known
    /// generating curve (synthetic binary data only).
    pub mse_to_truth: Option<f64>,
}

/// Wall-clock seconds of one successful replicate. Fit covers
/// hyperparameter optimization and final fitting (plus pseudo-count
/// selection for GPD); predict covers test-set probability computation.
#[derive(Debug, Clone, Copy)]
pub struct ReplicateTiming {
    pub replicate: usize,
    pub fit_seconds: f64,
    pub predict_seconds: f64,
}

/// What happened to one replicate.
#[derive(Debug)]
pub enum ReplicateResult {
    Ok(Box<ReplicateMetrics>, ReplicateTiming),
    Failed { replicate: usize, error: String },
}

/// Everything a run produced, mirrored in `run_metrics.json` and
/// `run_timings.json` under the output directory.
#[derive(Debug)]
pub struct RunRecord {
    pub config_hash: String,
    pub replicates: Vec<ReplicateResult>,
}

impl RunRecord {
    /// Metrics of the successful replicates, in order.
    pub fn successes(&self) -> Vec<&ReplicateMetrics> {
        self.replicates
            .iter()
            .filter_map(|r| match r {
                ReplicateResult::Ok(m, _) => Some(m.as_ref()),
                ReplicateResult::Failed { .. } => None,
            })
            .collect()
    }
}

/// Run one replicate end to end on the already-loaded dataset.
pub fn run_replicate(
    config: &ExperimentConfig,
    data: &Dataset,
    replicate: usize,
) -> Result<(ReplicateMetrics, ReplicateTiming)> {
    let spec = SplitSpec {
        test_fraction: config.test_fraction,
        calibration_fraction: if config.method == Method::GprPlatt {
            config.calibration_fraction
        } else {
            0.0
        },
        seed: config.seed,
        replicate_index: replicate as u64,
    };
    let parts = split(data, &spec)?;
    let (train, others, _) = standardize(&parts.train, &[&parts.calibration, &parts.test])?;
    let calibration = &others[0];
    let test = &others[1];

    let fit_start = Instant::now();
    let (model, details) = fit_method(config, &train, calibration, replicate)?;
    let fit_seconds = fit_start.elapsed().as_secs_f64().max(1e-9);

    let predict_start = Instant::now();
    let probs = model.predict(test.x.view())?;
    let predict_seconds = predict_start.elapsed().as_secs_f64().max(1e-9);

    let report = calibration_report(&probs, &test.y, config.bins)?;
    let mse_to_truth = match (&test.true_prob, data.num_classes) {
        (Some(truth), 2) => {
            let sq = probs
                .probs
                .column(1)
                .iter()
                .zip(truth.iter())
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>();
            Some(sq / truth.len() as f64)
        }
        _ => None,
    };
    Ok((
        ReplicateMetrics {
            replicate,
            report,
            details,
            mse_to_truth,
        },
        ReplicateTiming {
            replicate,
            fit_seconds,
            predict_seconds,
        },
    ))
}

/// Run every replicate of the config, write `run_metrics.json` and
/// `run_timings.json`, and return the record. Individual replicate
/// failures are recorded and skipped; only a run with zero successes is an
/// error.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunRecord> {
    config.validate()?;
    let data = load_dataset(config)?;
    if config.method == Method::LaplaceGpc && data.num_classes != 2 {
        return Err(GpdError::Input(format!(
            "laplace_gpc handles binary problems only; {} has {} classes",
            data.name, data.num_classes
        )));
    }
    let mut replicates = Vec::with_capacity(config.replicates);
    for r in 0..config.replicates {
        match run_replicate(config, &data, r) {
            Ok((metrics, timing)) => replicates.push(ReplicateResult::Ok(Box::new(metrics), timing)),
            Err(e) => replicates.push(ReplicateResult::Failed {
                replicate: r,
                error: e.to_string(),
            }),
        }
    }
    let record = RunRecord {
        config_hash: config.hash(),
        replicates,
    };
    if record.successes().is_empty() {
        let first_error = record
            .replicates
            .iter()
            .find_map(|r| match r {
                ReplicateResult::Failed { error, .. } => Some(error.clone()),
                ReplicateResult::Ok(..) => None,
            })
            .unwrap_or_default();
        return Err(GpdError::Model(format!(
            "every replicate failed; first error: {first_error}"
        )));
    }
    std::fs::create_dir_all(&config.out_dir)?;
    write_atomic(
        &config.out_dir.join("run_metrics.json"),
        &render_metrics_json(config, &record),
    )?;
    write_atomic(
        &config.out_dir.join("run_timings.json"),
        &render_timings_json(&record),
    )?;
    Ok(record)
}

/// One row of the pseudo-count sweep output.
#[derive(Debug, Clone, Copy)]
pub struct AlphaSweepRow {
    pub alpha_eps: f64,
    pub train_mnll: f64,
    pub test_mnll: f64,
    pub replicate: usize,
}

/// Fit GPD at every pseudo-count in `grid` for every replicate and record
/// training- and test-set mean negative log-likelihood. Writes
/// `alpha_sweep.csv` with columns `alpha_eps,train_mnll,test_mnll,replicate`.
pub fn sweep_alpha(config: &ExperimentConfig, grid: &[f64]) -> Result<Vec<AlphaSweepRow>> {
    if config.method != Method::Gpd {
        return Err(GpdError::Input(
            "the pseudo-count sweep is defined for method=gpd".into(),
        ));
    }
    if grid.is_empty() {
        return Err(GpdError::Input("pseudo-count grid must be non-empty".into()));
    }
    let data = load_dataset(config)?;
    let mut rows = Vec::with_capacity(grid.len() * config.replicates);
    for r in 0..config.replicates {
        let spec = SplitSpec {
            test_fraction: config.test_fraction,
            calibration_fraction: 0.0,
            seed: config.seed,
            replicate_index: r as u64,
        };
        let parts = split(&data, &spec)?;
        let (train, others, _) = standardize(&parts.train, &[&parts.test])?;
        let test = &others[0];
        for &ae in grid {
            let mut point_config = config.clone();
            point_config.alpha_eps = AlphaEpsSpec::Fixed(ae);
            let (model, _) = fit_method(&point_config, &train, &parts.calibration, r)?;
            let train_probs = match &model {
                FittedMethod::Gpd { model, .. } => softmax_expectation(
                    model,
                    train.x.view(),
                    config.mc_samples,
                    mix_seed(config.seed, SALT_TRAIN_SCORE + r as u64),
                )?,
                _ => unreachable!("sweep is gpd-only"),
            };
            let test_probs = model.predict(test.x.view())?;
            rows.push(AlphaSweepRow {
                alpha_eps: ae,
                train_mnll: mnll(train_probs.probs.view(), &train.y)?,
                test_mnll: mnll(test_probs.probs.view(), &test.y)?,
                replicate: r,
            });
        }
    }
    std::fs::create_dir_all(&config.out_dir)?;
    let mut csv = format!("# config_hash={}\n", config.hash());
    csv.push_str("alpha_eps,train_mnll,test_mnll,replicate\n");
    for row in &rows {
        let _ = writeln!(
            csv,
            "{:e},{:e},{:e},{}",
            FullPrecision(row.alpha_eps),
            FullPrecision(row.train_mnll),
            FullPrecision(row.test_mnll),
            row.replicate
        );
    }
    write_atomic(&config.out_dir.join("alpha_sweep.csv"), &csv)?;
    Ok(rows)
}

/// One row of the inducing-point sweep output.
#[derive(Debug, Clone, Copy)]
pub struct InducingSweepRow {
    pub m: usize,
    pub error_rate: f64,
    pub fit_seconds: f64,
    pub replicate: usize,
}

/// Fit GPD with each inducing-point count and record test error and fit
/// wall-clock. Writes `inducing_sweep.csv` with columns
/// `m,error_rate,fit_seconds,replicate`.
pub fn sweep_inducing(config: &ExperimentConfig, m_list: &[usize]) -> Result<Vec<InducingSweepRow>> {
    if config.method != Method::Gpd {
        return Err(GpdError::Input(
            "the inducing-point sweep is defined for method=gpd".into(),
        ));
    }
    if m_list.is_empty() {
        return Err(GpdError::Input("inducing-point list must be non-empty".into()));
    }
    let data = load_dataset(config)?;
    let mut rows = Vec::with_capacity(m_list.len() * config.replicates);
    for r in 0..config.replicates {
        let spec = SplitSpec {
            test_fraction: config.test_fraction,
            calibration_fraction: 0.0,
            seed: config.seed,
            replicate_index: r as u64,
        };
        let parts = split(&data, &spec)?;
        let (train, others, _) = standardize(&parts.train, &[&parts.test])?;
        let test = &others[0];
        for &m in m_list {
            let mut point_config = config.clone();
            point_config.inducing = InducingSpec::Count(m);
            let fit_start = Instant::now();
            let (model, _) = fit_method(&point_config, &train, &parts.calibration, r)?;
            let fit_seconds = fit_start.elapsed().as_secs_f64().max(1e-9);
            let probs = model.predict(test.x.view())?;
            rows.push(InducingSweepRow {
                m,
                error_rate: crate::calibrate::error_rate(probs.probs.view(), &test.y)?,
                fit_seconds,
                replicate: r,
            });
        }
    }
    std::fs::create_dir_all(&config.out_dir)?;
    let mut csv = format!("# config_hash={}\n", config.hash());
    csv.push_str("m,error_rate,fit_seconds,replicate\n");
    for row in &rows {
        let _ = writeln!(
            csv,
            "{},{:e},{:e},{}",
            row.m,
            FullPrecision(row.error_rate),
            FullPrecision(row.fit_seconds),
            row.replicate
        );
    }
    write_atomic(&config.out_dir.join("inducing_sweep.csv"), &csv)?;
    Ok(rows)
}

/// Fixed header of every reliability CSV.
pub const RELIABILITY_HEADER: &str =
    "bin_lo,bin_hi,count,confidence,accuracy,lower_accuracy,upper_accuracy";

/// Fit each replicate and write one reliability CSV per replicate with
/// exactly `bins` data rows: bin bounds, count, mean confidence, accuracy,
/// and the accuracy band from the latent quantile shift. Methods without a
/// latent-Gaussian view (the post-hoc scaler) repeat the point accuracy in
/// the band columns. Returns the written paths.
pub fn emit_reliability(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let data = load_dataset(config)?;
    std::fs::create_dir_all(&config.out_dir)?;
    let mut written = Vec::with_capacity(config.replicates);
    for r in 0..config.replicates {
        let spec = SplitSpec {
            test_fraction: config.test_fraction,
            calibration_fraction: if config.method == Method::GprPlatt {
                config.calibration_fraction
            } else {
                0.0
            },
            seed: config.seed,
            replicate_index: r as u64,
        };
        let parts = split(&data, &spec)?;
        let (train, others, _) = standardize(&parts.train, &[&parts.calibration, &parts.test])?;
        let test = &others[1];
        let (model, _) = fit_method(config, &train, &others[0], r)?;
        // Bin by the method's own predicted probabilities so the rows stay
        // consistent with the reported scalar metrics; the band columns use
        // the latent view where one exists.
        let probs = model.predict(test.x.view())?;
        let bands: Vec<BandRecord> = match model.latent_predictor() {
            Some(pred) if data.num_classes == 2 => {
                let (mean, var) = pred.predict_latent(test.x.view())?;
                reliability_band_from_probs(
                    probs.probs.view(),
                    mean.view(),
                    var.view(),
                    &test.y,
                    config.bins,
                    BAND_QUANTILE,
                )?
            }
            _ => {
                // No latent band: echo the point accuracy in both columns.
                reliability_bins(probs.probs.view(), &test.y, config.bins)?
                    .into_iter()
                    .map(|b| BandRecord {
                        lo: b.lo,
                        hi: b.hi,
                        count: b.count,
                        confidence: b.confidence,
                        accuracy: b.accuracy,
                        lower_accuracy: b.accuracy,
                        upper_accuracy: b.accuracy,
                    })
                    .collect()
            }
        };
        let mut csv = format!("# config_hash={}\n{RELIABILITY_HEADER}\n", config.hash());
        for b in &bands {
            let _ = writeln!(
                csv,
                "{:e},{:e},{},{:e},{:e},{:e},{:e}",
                FullPrecision(b.lo),
                FullPrecision(b.hi),
                b.count,
                FullPrecision(b.confidence),
                FullPrecision(b.accuracy),
                FullPrecision(b.lower_accuracy),
                FullPrecision(b.upper_accuracy)
            );
        }
        let path = config
            .out_dir
            .join(format!("reliability_{}_r{r}.csv", config.method.name()));
        write_atomic(&path, &csv)?;
        written.push(path);
    }
    Ok(written)
}

/// Write via a temp file in the same directory plus rename, so readers
/// never observe a half-written artifact.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn json_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out
}

fn json_f64(v: f64) -> String {
    format!("{:e}", FullPrecision(v))
}

fn json_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "null".to_string(), json_f64)
}

/// Deterministic metrics JSON: config echo, hash, and per-replicate scores
/// with the full bin table. No timings and no float formatting shortcuts,
/// so identical configs produce identical bytes.
pub fn render_metrics_json(config: &ExperimentConfig, record: &RunRecord) -> String {
    let mut s = String::new();
    s.push_str("{\n  \"config\": {\n");
    let _ = writeln!(s, "    \"dataset\": \"{}\",", json_escape(&config.data.describe()));
    let _ = writeln!(s, "    \"method\": \"{}\",", config.method.name());
    let _ = writeln!(s, "    \"inducing\": \"{}\",", config.inducing.describe());
    let _ = writeln!(s, "    \"alpha_eps\": \"{}\",", config.alpha_eps.describe());
    let _ = writeln!(s, "    \"replicates\": {},", config.replicates);
    let _ = writeln!(s, "    \"mc_samples\": {},", config.mc_samples);
    let _ = writeln!(s, "    \"bins\": {},", config.bins);
    let _ = writeln!(s, "    \"seed\": {},", config.seed);
    let _ = writeln!(s, "    \"test_fraction\": {},", json_f64(config.test_fraction));
    let _ = writeln!(
        s,
        "    \"calibration_fraction\": {},",
        json_f64(config.calibration_fraction)
    );
    let _ = writeln!(s, "    \"restarts\": {},", config.restarts);
    let _ = writeln!(s, "    \"max_iters\": {}", config.max_iters);
    s.push_str("  },\n");
    let _ = writeln!(s, "  \"config_hash\": \"{}\",", record.config_hash);
    s.push_str("  \"replicates\": [\n");
    for (i, rep) in record.replicates.iter().enumerate() {
        match rep {
            ReplicateResult::Ok(m, _) => {
                s.push_str("    {\n");
                let _ = writeln!(s, "      \"replicate\": {},", m.replicate);
                s.push_str("      \"status\": \"ok\",\n");
                let _ = writeln!(s, "      \"alpha_eps\": {},", json_opt(m.details.alpha_eps));
                let _ = writeln!(s, "      \"variance\": {},", json_f64(m.details.variance));
                let _ = writeln!(s, "      \"lengthscale\": {},", json_f64(m.details.lengthscale));
                let _ = writeln!(
                    s,
                    "      \"noise_variance\": {},",
                    json_opt(m.details.noise_variance)
                );
                let _ = writeln!(s, "      \"objective\": {},", json_f64(m.details.objective));
                let _ = writeln!(s, "      \"ece\": {},", json_f64(m.report.ece));
                let _ = writeln!(s, "      \"mnll\": {},", json_f64(m.report.mnll));
                let _ = writeln!(s, "      \"error_rate\": {},", json_f64(m.report.error_rate));
                let _ = writeln!(s, "      \"mse_to_truth\": {},", json_opt(m.mse_to_truth));
                s.push_str("      \"bins\": [\n");
                for (j, b) in m.report.bins.iter().enumerate() {
                    let _ = write!(
                        s,
                        "        {{\"lo\": {}, \"hi\": {}, \"count\": {}, \"confidence\": {}, \"accuracy\": {}}}",
                        json_f64(b.lo),
                        json_f64(b.hi),
                        b.count,
                        json_f64(b.confidence),
                        json_f64(b.accuracy)
                    );
                    s.push_str(if j + 1 < m.report.bins.len() { ",\n" } else { "\n" });
                }
                s.push_str("      ]\n    }");
            }
            ReplicateResult::Failed { replicate, error } => {
                let _ = write!(
                    s,
                    "    {{\"replicate\": {replicate}, \"status\": \"failed\", \"error\": \"{}\"}}",
                    json_escape(error)
                );
            }
        }
        s.push_str(if i + 1 < record.replicates.len() { ",\n" } else { "\n" });
    }
    s.push_str("  ]\n}\n");
    s
}

/// Wall-clock JSON, one entry per replicate; separated from the metrics
/// file because timings legitimately differ between reruns.
pub fn render_timings_json(record: &RunRecord) -> String {
    let mut s = String::new();
    s.push_str("{\n");
    let _ = writeln!(s, "  \"config_hash\": \"{}\",", record.config_hash);
    s.push_str("  \"replicates\": [\n");
    for (i, rep) in record.replicates.iter().enumerate() {
        match rep {
            ReplicateResult::Ok(_, t) => {
                let _ = write!(
                    s,
                    "    {{\"replicate\": {}, \"status\": \"ok\", \"fit_seconds\": {}, \"predict_seconds\": {}}}",
                    t.replicate,
                    json_f64(t.fit_seconds),
                    json_f64(t.predict_seconds)
                );
            }
            ReplicateResult::Failed { replicate, error } => {
                let _ = write!(
                    s,
                    "    {{\"replicate\": {replicate}, \"status\": \"failed\", \"error\": \"{}\"}}",
                    json_escape(error)
                );
            }
        }
        s.push_str(if i + 1 < record.replicates.len() { ",\n" } else { "\n" });
    }
    s.push_str("  ]\n}\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(entries: &[(&str, &str)]) -> Vec<(String, String)> {
        entries
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    fn quick_config(dir: &Path) -> ExperimentConfig {
        let mut config = ExperimentConfig::new(DataSource::Synth {
            curve: ProbabilityCurve::Sinusoid,
            n: 120,
        });
        config.out_dir = dir.to_path_buf();
        config.mc_samples = 200;
        config.restarts = 1;
        config.max_iters = 30;
        config.seed = 3;
        config
    }

    #[test]
    fn pairs_parse_with_defaults_and_overrides() {
        let config = ExperimentConfig::from_pairs(&pairs(&[
            ("dataset", "synth:step:300"),
            ("method", "gpr"),
            ("inducing", "40"),
            ("replicates", "4"),
            ("seed", "9"),
        ]))
        .unwrap();
        assert_eq!(config.method, Method::Gpr);
        assert_eq!(config.inducing, InducingSpec::Count(40));
        assert_eq!(config.replicates, 4);
        assert_eq!(config.seed, 9);
        assert_eq!(config.bins, 10);
        assert_eq!(
            config.data,
            DataSource::Synth {
                curve: ProbabilityCurve::Step,
                n: 300
            }
        );
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(ExperimentConfig::from_pairs(&pairs(&[
            ("dataset", "synth:sinusoid:100"),
            ("kernel", "rbf"),
        ]))
        .is_err());
        assert!(ExperimentConfig::from_pairs(&pairs(&[
            ("dataset", "synth:sinusoid:100"),
            ("replicates", "0"),
        ]))
        .is_err());
        assert!(ExperimentConfig::from_pairs(&pairs(&[("method", "gpd")])).is_err());
        assert!(DataSource::parse("synth:wiggle:10").is_err());
        assert!(DataSource::parse("synth:const1.5:10").is_err());
    }

    #[test]
    fn method_specific_fields_are_validated() {
        // Pseudo-count is a GPD knob.
        assert!(ExperimentConfig::from_pairs(&pairs(&[
            ("dataset", "synth:sinusoid:100"),
            ("method", "gpr"),
            ("alpha_eps", "0.01"),
        ]))
        .is_err());
        // The Laplace reference runs exact only.
        assert!(ExperimentConfig::from_pairs(&pairs(&[
            ("dataset", "synth:sinusoid:100"),
            ("method", "laplace_gpc"),
            ("inducing", "16"),
        ]))
        .is_err());
        // The recalibrated baseline needs calibration data.
        assert!(ExperimentConfig::from_pairs(&pairs(&[
            ("dataset", "synth:sinusoid:100"),
            ("method", "gpr_platt"),
            ("calibration_fraction", "0.0"),
        ]))
        .is_err());
    }

    #[test]
    fn hash_tracks_numerical_inputs_but_not_the_output_dir() {
        let dir = std::env::temp_dir();
        let a = quick_config(&dir);
        let mut b = a.clone();
        b.out_dir = dir.join("elsewhere");
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.seed = 4;
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn config_files_parse_as_pairs() {
        let path = std::env::temp_dir().join(format!("gpd_cfg_{}.txt", std::process::id()));
        std::fs::write(&path, "# comment\nmethod = gpr\n\nseed=5\n").unwrap();
        let got = parse_config_file(&path).unwrap();
        std::fs::remove_file(&path).unwrap();
        assert_eq!(got, pairs(&[("method", "gpr"), ("seed", "5")]));
        let bad = std::env::temp_dir().join(format!("gpd_cfg_bad_{}.txt", std::process::id()));
        std::fs::write(&bad, "method gpr\n").unwrap();
        let err = parse_config_file(&bad).unwrap_err();
        std::fs::remove_file(&bad).unwrap();
        assert!(err.to_string().contains("line 1"));
    }

    #[test]
    fn mixed_seeds_separate_purposes() {
        assert_ne!(mix_seed(0, SALT_KMEANS), mix_seed(0, SALT_OPTIMIZER));
        assert_ne!(mix_seed(0, SALT_PREDICT), mix_seed(1, SALT_PREDICT));
        assert_eq!(mix_seed(7, 3), mix_seed(7, 3));
    }

    #[test]
    fn gpd_run_produces_sane_metrics_and_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = quick_config(dir.path());
        config.alpha_eps = AlphaEpsSpec::Fixed(0.01);
        let record = run_experiment(&config).unwrap();
        let ok = record.successes();
        assert_eq!(ok.len(), 1);
        let m = ok[0];
        assert!(m.report.ece >= 0.0 && m.report.ece <= 1.0);
        assert!(m.report.mnll.is_finite());
        assert!(m.report.error_rate <= 0.5, "error rate {}", m.report.error_rate);
        assert_eq!(m.details.alpha_eps, Some(0.01));
        assert!(m.mse_to_truth.unwrap() < 0.2);
        assert_eq!(m.report.bins.len(), config.bins);
        let metrics = std::fs::read_to_string(dir.path().join("run_metrics.json")).unwrap();
        assert!(metrics.contains(&record.config_hash));
        assert!(!metrics.contains("seconds"));
        let timings = std::fs::read_to_string(dir.path().join("run_timings.json")).unwrap();
        assert!(timings.contains("fit_seconds"));
    }

    #[test]
    fn rerunning_a_config_reproduces_metrics_byte_for_byte() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut config_a = quick_config(dir_a.path());
        config_a.method = Method::Gpr;
        let mut config_b = config_a.clone();
        config_b.out_dir = dir_b.path().to_path_buf();
        run_experiment(&config_a).unwrap();
        run_experiment(&config_b).unwrap();
        let a = std::fs::read(dir_a.path().join("run_metrics.json")).unwrap();
        let b = std::fs::read(dir_b.path().join("run_metrics.json")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn laplace_rejects_multiclass_before_fitting() {
        let dir = tempfile::tempdir().unwrap();
        // Three-class data: labels cycle 0,1,2.
        let csv = (0..30)
            .map(|i| format!("{}.5,{}", i, i % 3))
            .collect::<Vec<_>>()
            .join("\n");
        let path = dir.path().join("three.csv");
        std::fs::write(&path, csv).unwrap();
        let mut config = quick_config(dir.path());
        config.data = DataSource::Csv(path);
        config.method = Method::LaplaceGpc;
        let err = run_experiment(&config).unwrap_err();
        assert!(err.to_string().contains("3 classes"), "{err}");
    }

    #[test]
    fn all_replicates_failing_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        // A 4:1 class imbalance with an 80% test draw pulls the rare class
        // entirely out of training, so every replicate's split fails.
        let path = dir.path().join("rare.csv");
        std::fs::write(&path, "0.1,0\n0.2,0\n0.3,0\n0.4,0\n0.5,1\n").unwrap();
        let mut config = quick_config(dir.path());
        config.data = DataSource::Csv(path);
        config.test_fraction = 0.8;
        config.replicates = 2;
        let err = run_experiment(&config).unwrap_err();
        assert!(err.to_string().contains("every replicate failed"), "{err}");
    }

    #[test]
    fn alpha_sweep_emits_the_contracted_columns() {
        let dir = tempfile::tempdir().unwrap();
        let config = quick_config(dir.path());
        let rows = sweep_alpha(&config, &[0.1, 0.01]).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.train_mnll.is_finite() && r.test_mnll.is_finite()));
        let csv = std::fs::read_to_string(dir.path().join("alpha_sweep.csv")).unwrap();
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("# config_hash="));
        assert_eq!(lines.next().unwrap(), "alpha_eps,train_mnll,test_mnll,replicate");
        assert_eq!(lines.count(), 2);
    }

    #[test]
    fn single_point_grid_gives_single_row() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = quick_config(dir.path());
        config.data = DataSource::Synth {
            curve: ProbabilityCurve::Sinusoid,
            n: 80,
        };
        let rows = sweep_alpha(&config, &[0.001]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].alpha_eps, 0.001);
    }

    #[test]
    fn inducing_sweep_records_error_and_time() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = quick_config(dir.path());
        config.alpha_eps = AlphaEpsSpec::Fixed(0.01);
        let rows = sweep_inducing(&config, &[8, 16]).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.fit_seconds > 0.0));
        assert!(rows.iter().all(|r| r.error_rate <= 0.5));
        let csv = std::fs::read_to_string(dir.path().join("inducing_sweep.csv")).unwrap();
        assert!(csv.contains("m,error_rate,fit_seconds,replicate"));
    }

    #[test]
    fn reliability_files_have_exactly_bins_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = quick_config(dir.path());
        config.alpha_eps = AlphaEpsSpec::Fixed(0.01);
        config.bins = 7;
        config.replicates = 2;
        let paths = emit_reliability(&config).unwrap();
        assert_eq!(paths.len(), 2);
        for path in &paths {
            let csv = std::fs::read_to_string(path).unwrap();
            let mut lines = csv.lines();
            assert!(lines.next().unwrap().starts_with("# config_hash="));
            assert_eq!(lines.next().unwrap(), RELIABILITY_HEADER);
            assert_eq!(lines.count(), 7);
        }
    }

    #[test]
    fn platt_reliability_collapses_the_band_columns() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = quick_config(dir.path());
        config.method = Method::GprPlatt;
        config.data = DataSource::Synth {
            curve: ProbabilityCurve::Sinusoid,
            n: 160,
        };
        let paths = emit_reliability(&config).unwrap();
        let csv = std::fs::read_to_string(&paths[0]).unwrap();
        for line in csv.lines().skip(2) {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields[4], fields[5]);
            assert_eq!(fields[4], fields[6]);
        }
    }

    #[test]
    fn every_method_completes_a_small_run() {
        for method in [Method::Gpd, Method::Gpr, Method::GprPlatt, Method::LaplaceGpc] {
            let dir = tempfile::tempdir().unwrap();
            let mut config = quick_config(dir.path());
            config.method = method;
            if method == Method::Gpd {
                config.alpha_eps = AlphaEpsSpec::Fixed(0.1);
            }
            let record = run_experiment(&config)
                .unwrap_or_else(|e| panic!("{} failed: {e}", method.name()));
            assert_eq!(record.successes().len(), 1, "{}", method.name());
        }
    }

    #[test]
    fn sparse_fit_goes_through_the_inducing_path() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = quick_config(dir.path());
        config.inducing = InducingSpec::Count(12);
        config.alpha_eps = AlphaEpsSpec::Fixed(0.01);
        let record = run_experiment(&config).unwrap();
        assert_eq!(record.successes().len(), 1);
    }
}
