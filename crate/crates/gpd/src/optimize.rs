//! Small-dimension BFGS maximizer with random restarts.
//!
//! All hyperparameter searches in this crate are over two or three
//! log-parameters, so a dense inverse-Hessian update with Armijo
//! backtracking is plenty. Objective evaluations may fail (for example a
//! factorization at an extreme point); failures during a line search are
//! treated as rejected steps, and failures at a restart's initial point
//! abandon that restart.

use crate::error::{GpdError, Result};
use crate::math::stream_rng;
use rand::Rng;

/// Budget and reproducibility knobs for a hyperparameter search.
#[derive(Debug, Clone)]
pub struct OptimizeOptions {
    /// Total number of starts; the first uses the caller's initialization,
    /// the rest sample uniformly from the per-coordinate restart ranges.
    pub restarts: usize,
    /// Iteration cap per start.
    pub max_iters: usize,
    /// Terminate a start once the gradient norm falls below this.
    pub grad_tol: f64,
    /// Seed for the restart sampler.
    pub seed: u64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            restarts: 3,
            max_iters: 200,
            grad_tol: 1e-5,
            seed: 0,
        }
    }
}

/// Result of a multi-start maximization.
#[derive(Debug, Clone)]
pub struct Maximized {
    pub point: Vec<f64>,
    pub value: f64,
    /// Index of the winning start (0 = caller's initialization). Ties keep
    /// the earliest start.
    pub restart: usize,
    /// Iterations the winning start used.
    pub iters: usize,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 30;
const CURVATURE_FLOOR: f64 = 1e-12;

/// Maximize `eval` (which returns a value and its gradient) from `init`,
/// with `opts.restarts - 1` extra starts drawn uniformly from
/// `restart_ranges`. Errors only if every start fails its first evaluation.
pub fn maximize<F>(
    mut eval: F,
    init: &[f64],
    restart_ranges: &[(f64, f64)],
    opts: &OptimizeOptions,
) -> Result<Maximized>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let dim = init.len();
    if dim == 0 || restart_ranges.len() != dim {
        return Err(GpdError::Input(format!(
            "optimizer got {} coordinates but {} restart ranges",
            dim,
            restart_ranges.len()
        )));
    }
    if opts.restarts == 0 {
        return Err(GpdError::Input("at least one start is required".into()));
    }
    let mut best: Option<Maximized> = None;
    let mut failures = Vec::new();
    for restart in 0..opts.restarts {
        let start = if restart == 0 {
            init.to_vec()
        } else {
            let mut rng = stream_rng(opts.seed, restart as u64);
            restart_ranges
                .iter()
                .map(|&(lo, hi)| rng.random_range(lo..=hi))
                .collect()
        };
        match bfgs_ascent(&mut eval, &start, opts) {
            Ok((point, value, iters)) => {
                let better = match &best {
                    None => true,
                    Some(b) => value > b.value,
                };
                if better {
                    best = Some(Maximized {
                        point,
                        value,
                        restart,
                        iters,
                    });
                }
            }
            Err(e) => failures.push(format!("start {restart}: {e}")),
        }
    }
    best.ok_or_else(|| {
        GpdError::Model(format!(
            "every optimizer start failed: {}",
            failures.join("; ")
        ))
    })
}

/// One BFGS ascent. Internally minimizes the negated objective with the
/// standard inverse-Hessian update.
fn bfgs_ascent<F>(eval: &mut F, start: &[f64], opts: &OptimizeOptions) -> Result<(Vec<f64>, f64, usize)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let dim = start.len();
    let (value0, grad0) = eval(start)?;
    // Minimization view: f = -value, g = -grad.
    let mut x = start.to_vec();
    let mut f = -value0;
    let mut g: Vec<f64> = grad0.iter().map(|v| -v).collect();
    let mut h = identity(dim);
    let mut h_unscaled = true;
    let mut iters = 0;
    for _ in 0..opts.max_iters {
        if norm(&g) < opts.grad_tol {
            break;
        }
        iters += 1;
        // d = -H g
        let mut d = vec![0.0; dim];
        for i in 0..dim {
            for j in 0..dim {
                d[i] -= h[i * dim + j] * g[j];
            }
        }
        let mut slope: f64 = d.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            // Stale curvature made the direction non-descending; fall back
            // to steepest descent.
            h = identity(dim);
            h_unscaled = true;
            for i in 0..dim {
                d[i] = -g[i];
            }
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }
        // Until the inverse Hessian has picked up curvature, the direction
        // carries raw gradient scale; cap the first trial move at unit
        // length in log-parameter space so steep objectives cannot fling
        // the iterate into a degenerate basin.
        let d_norm = norm(&d);
        let mut step = if h_unscaled && d_norm > 1.0 {
            1.0 / d_norm
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let candidate: Vec<f64> = x.iter().zip(d.iter()).map(|(a, b)| a + step * b).collect();
            match eval(&candidate) {
                Ok((value, grad)) if value.is_finite() => {
                    let f_new = -value;
                    if f_new <= f + ARMIJO_C1 * step * slope {
                        accepted = Some((candidate, f_new, grad));
                        break;
                    }
                }
                // Evaluation failures and non-finite values behave like a
                // rejected step: shorten and retry.
                _ => {}
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, grad_new)) = accepted else {
            break;
        };
        let g_new: Vec<f64> = grad_new.iter().map(|v| -v).collect();
        let s: Vec<f64> = x_new.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(g.iter()).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(yv.iter()).map(|(a, b)| a * b).sum();
        if sy > CURVATURE_FLOOR {
            if h_unscaled {
                // Size the initial inverse Hessian from the first observed
                // curvature pair before applying the secant update.
                let yy: f64 = yv.iter().map(|v| v * v).sum();
                if yy > 0.0 {
                    let scale = sy / yy;
                    for v in h.iter_mut() {
                        *v *= scale;
                    }
                }
                h_unscaled = false;
            }
            bfgs_update(&mut h, &s, &yv, sy);
        }
        x = x_new;
        f = f_new;
        g = g_new;
    }
    Ok((x, -f, iters))
}

/// H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ with ρ = 1/(sᵀy).
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let dim = s.len();
    let rho = 1.0 / sy;
    let mut hy = vec![0.0; dim];
    for i in 0..dim {
        for j in 0..dim {
            hy[i] += h[i * dim + j] * y[j];
        }
    }
    let yhy: f64 = y.iter().zip(hy.iter()).map(|(a, b)| a * b).sum();
    for i in 0..dim {
        for j in 0..dim {
            h[i * dim + j] += rho * rho * yhy * s[i] * s[j] + rho * s[i] * s[j]
                - rho * (s[i] * hy[j] + hy[i] * s[j]);
        }
    }
}

fn identity(dim: usize) -> Vec<f64> {
    let mut h = vec![0.0; dim * dim];
    for i in 0..dim {
        h[i * dim + i] = 1.0;
    }
    h
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
