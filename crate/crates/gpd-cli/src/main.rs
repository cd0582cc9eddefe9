//! Command-line experiment runner: fit/evaluate across replicates, sweep
//! the pseudo-count or inducing-point count, and emit reliability diagrams.
//!
//! All knobs can come from a flat `key=value` config file (`--config`),
//! from flags, or both; flags win. Outputs land in the `--out` directory
//! with the config hash stamped on every file.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gpd::experiment::{
    emit_reliability, parse_config_file, run_experiment, sweep_alpha, sweep_inducing,
    ExperimentConfig, ReplicateResult,
};
use gpd::{GpdError, Result};

#[derive(Parser)]
#[command(
    name = "gpd",
    version,
    about = "Calibrated GP classification via regression on transformed labels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit and evaluate every replicate; writes run_metrics.json and
    /// run_timings.json.
    Run(CommonArgs),
    /// Fit at each pseudo-count on a grid; writes alpha_sweep.csv with
    /// train and test mean negative log-likelihood per point.
    SweepAlpha(SweepAlphaArgs),
    /// Fit at each inducing-point count; writes inducing_sweep.csv with
    /// test error and fit seconds per point.
    SweepInducing(SweepInducingArgs),
    /// Write one reliability CSV per replicate with accuracy bands.
    Reliability(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Flat key=value config file; flags below override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset: a CSV path (label in the last column) or synth:<curve>:<n>
    /// with curve one of sinusoid, step, square, const<p>.
    #[arg(long)]
    dataset: Option<String>,
    /// One of gpd, gpr, gpr_platt, laplace_gpc.
    #[arg(long)]
    method: Option<String>,
    /// "exact" or an inducing-point count.
    #[arg(long)]
    inducing: Option<String>,
    /// "auto" (select on training fit) or a fixed pseudo-count (gpd only).
    #[arg(long)]
    alpha_eps: Option<String>,
    /// Number of independent train/test splits.
    #[arg(long)]
    replicates: Option<String>,
    /// Monte-Carlo samples for softmax probabilities (0 = latent means).
    #[arg(long)]
    mc_samples: Option<String>,
    /// Confidence bins for calibration metrics and reliability files.
    #[arg(long)]
    bins: Option<String>,
    /// Base RNG seed; every derived stream is keyed off it.
    #[arg(long)]
    seed: Option<String>,
    /// Output directory for metric, timing, and plot-data files.
    #[arg(long)]
    out: Option<String>,
    /// Fraction of rows held out for testing.
    #[arg(long)]
    test_fraction: Option<String>,
    /// Fraction of the training remainder held out for recalibration.
    #[arg(long)]
    calibration_fraction: Option<String>,
    /// Optimizer restarts per fit.
    #[arg(long)]
    restarts: Option<String>,
    /// Optimizer iteration cap per restart.
    #[arg(long)]
    max_iters: Option<String>,
}

#[derive(Args)]
struct SweepAlphaArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated pseudo-counts to sweep.
    #[arg(long, default_value = "0.1,0.01,0.001")]
    grid: String,
}

#[derive(Args)]
struct SweepInducingArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated inducing-point counts to sweep.
    #[arg(long)]
    m_list: String,
}

impl CommonArgs {
    /// Config file entries first, then flags, so flags override.
    fn build_config(&self) -> Result<ExperimentConfig> {
        let mut pairs = match &self.config {
            Some(path) => parse_config_file(path)?,
            None => Vec::new(),
        };
        let mut push = |key: &str, value: &Option<String>| {
            if let Some(v) = value {
                pairs.push((key.to_string(), v.clone()));
            }
        };
        push("dataset", &self.dataset);
        push("method", &self.method);
        push("inducing", &self.inducing);
        push("alpha_eps", &self.alpha_eps);
        push("replicates", &self.replicates);
        push("mc_samples", &self.mc_samples);
        push("bins", &self.bins);
        push("seed", &self.seed);
        push("out", &self.out);
        push("test_fraction", &self.test_fraction);
        push("calibration_fraction", &self.calibration_fraction);
        push("restarts", &self.restarts);
        push("max_iters", &self.max_iters);
        ExperimentConfig::from_pairs(&pairs)
    }
}

fn parse_f64_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| GpdError::Input(format!("bad {what} entry {p:?}")))
        })
        .collect()
}

fn parse_usize_list(s: &str, what: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| GpdError::Input(format!("bad {what} entry {p:?}")))
        })
        .collect()
}

fn cmd_run(args: &CommonArgs) -> Result<()> {
    let config = args.build_config()?;
    let record = run_experiment(&config)?;
    println!("config_hash={}", record.config_hash);
    for rep in &record.replicates {
        match rep {
            ReplicateResult::Ok(m, t) => println!(
                "replicate {}: ece={:.4} mnll={:.4} error_rate={:.4} fit_s={:.3} predict_s={:.3}",
                m.replicate,
                m.report.ece,
                m.report.mnll,
                m.report.error_rate,
                t.fit_seconds,
                t.predict_seconds
            ),
            ReplicateResult::Failed { replicate, error } => {
                println!("replicate {replicate}: FAILED ({error})")
            }
        }
    }
    let ok = record.successes();
    let mean = |f: &dyn Fn(&gpd::experiment::ReplicateMetrics) -> f64| {
        ok.iter().map(|m| f(m)).sum::<f64>() / ok.len() as f64
    };
    println!(
        "mean over {} replicate(s): ece={:.4} mnll={:.4} error_rate={:.4}",
        ok.len(),
        mean(&|m| m.report.ece),
        mean(&|m| m.report.mnll),
        mean(&|m| m.report.error_rate)
    );
    println!(
        "wrote {} and run_timings.json",
        config.out_dir.join("run_metrics.json").display()
    );
    Ok(())
}

fn cmd_sweep_alpha(args: &SweepAlphaArgs) -> Result<()> {
    let config = args.common.build_config()?;
    let grid = parse_f64_list(&args.grid, "grid")?;
    let rows = sweep_alpha(&config, &grid)?;
    for row in &rows {
        println!(
            "replicate {} alpha_eps={:>7}: train_mnll={:.4} test_mnll={:.4}",
            row.replicate, row.alpha_eps, row.train_mnll, row.test_mnll
        );
    }
    println!("wrote {}", config.out_dir.join("alpha_sweep.csv").display());
    Ok(())
}

fn cmd_sweep_inducing(args: &SweepInducingArgs) -> Result<()> {
    let config = args.common.build_config()?;
    let m_list = parse_usize_list(&args.m_list, "m_list")?;
    let rows = sweep_inducing(&config, &m_list)?;
    for row in &rows {
        println!(
            "replicate {} m={:>5}: error_rate={:.4} fit_s={:.3}",
            row.replicate, row.m, row.error_rate, row.fit_seconds
        );
    }
    println!(
        "wrote {}",
        config.out_dir.join("inducing_sweep.csv").display()
    );
    Ok(())
}

fn cmd_reliability(args: &CommonArgs) -> Result<()> {
    let config = args.build_config()?;
    let paths = emit_reliability(&config)?;
    for path in &paths {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::SweepAlpha(args) => cmd_sweep_alpha(args),
        Command::SweepInducing(args) => cmd_sweep_inducing(args),
        Command::Reliability(args) => cmd_reliability(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
