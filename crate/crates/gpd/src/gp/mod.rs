//! Gaussian-process regression backends: exact Cholesky-based inference and
//! a collapsed variational sparse approximation, both supporting fixed
//! per-point noise (heteroskedastic) and a learned constant noise.

pub mod exact;
pub mod sparse;

pub use exact::{log_marginal_likelihood, lml_gradient, optimize_hyperparams, ExactGp};
pub use sparse::{
    fit_sparse, kmeans_inducing, optimize_sparse, sparse_bound, sparse_bound_gradient,
    InducingSelection, InducingSet, SparseGp,
};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use ndarray_linalg::cholesky::{Cholesky, CholeskyFactorized, InverseCInto, UPLO};
use ndarray_linalg::triangular::{Diag, SolveTriangular};

use crate::error::{GpdError, Result};

/// Relative scale of the diagonal jitter folded into the observation noise:
/// all factorizations work with noise + NOISE_JITTER_SCALE·a² on the
/// diagonal. Because the jitter enters the likelihood itself (not just the
/// factorization), objectives, gradients, and the sparse bound stay mutually
/// consistent, and the bound still never exceeds the exact marginal
/// likelihood.
pub const NOISE_JITTER_SCALE: f64 = 1e-8;

/// Starting relative jitter for inducing-matrix factorizations, which have
/// no observation noise of their own. Escalated by decades on failure up to
/// [`MAX_JITTER_SCALE`]. Kept two decades below the noise jitter so that a
/// full inducing set reproduces exact inference to well inside 1e-6.
pub const INDUCING_JITTER_SCALE: f64 = 1e-10;

/// Upper end of the jitter escalation ladder (relative to a²).
pub const MAX_JITTER_SCALE: f64 = 1e-4;

/// Relative floor applied to predictive variances to keep them strictly
/// positive in the face of cancellation.
pub const VARIANCE_FLOOR_SCALE: f64 = 1e-12;

/// Observation-noise model for the per-class regressions.
#[derive(Debug, Clone)]
pub enum NoiseModel {
    /// Fixed per-observation, per-class variances (n×C), as produced by the
    /// label transform. Never optimized.
    PerPoint(Array2<f64>),
    /// A single variance shared by every observation and class, stored as
    /// log σ_n² and optimized jointly with the kernel parameters.
    Constant(f64),
}

impl NoiseModel {
    /// Per-point noise for one class, including the diagonal jitter.
    pub(crate) fn effective_column(&self, class: usize, n: usize, variance: f64) -> Array1<f64> {
        let jitter = NOISE_JITTER_SCALE * variance;
        match self {
            NoiseModel::PerPoint(s2) => s2.column(class).mapv(|v| v + jitter),
            NoiseModel::Constant(log_s2) => {
                Array1::from_elem(n, log_s2.exp() + jitter)
            }
        }
    }

    /// Whether every class shares one noise vector (and hence one
    /// factorization).
    pub(crate) fn is_shared(&self) -> bool {
        matches!(self, NoiseModel::Constant(_))
    }

    pub(crate) fn validate(&self, n: usize, num_classes: usize) -> Result<()> {
        match self {
            NoiseModel::PerPoint(s2) => {
                if s2.nrows() != n || s2.ncols() != num_classes {
                    return Err(GpdError::Input(format!(
                        "noise matrix is {}x{}, expected {}x{}",
                        s2.nrows(),
                        s2.ncols(),
                        n,
                        num_classes
                    )));
                }
                if s2.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(GpdError::Input(
                        "per-point noise variances must be positive and finite".into(),
                    ));
                }
            }
            NoiseModel::Constant(log_s2) => {
                if !log_s2.is_finite() {
                    return Err(GpdError::Input(format!(
                        "log noise variance must be finite, got {log_s2}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Lower-triangular Cholesky factor with the solve helpers the GP code
/// needs.
#[derive(Debug, Clone)]
pub(crate) struct CholFactor {
    pub l: Array2<f64>,
}

impl CholFactor {
    /// Factor an SPD matrix; the error carries the smallest diagonal entry
    /// to aid conditioning diagnostics.
    pub fn new(s: &Array2<f64>) -> Result<Self> {
        match s.cholesky(UPLO::Lower) {
            Ok(l) => Ok(Self { l }),
            Err(e) => {
                let min_diag = s.diag().iter().cloned().fold(f64::INFINITY, f64::min);
                Err(GpdError::Numerical(format!(
                    "Cholesky factorization failed (min diagonal {min_diag:.3e}): {e}"
                )))
            }
        }
    }

    /// L⁻¹ b.
    pub fn half_solve_vec(&self, b: ArrayView1<f64>) -> Array1<f64> {
        self.l
            .solve_triangular(UPLO::Lower, Diag::NonUnit, &b.to_owned())
            .expect("triangular solve")
    }

    /// L⁻¹ B.
    pub fn half_solve_mat(&self, b: ArrayView2<f64>) -> Array2<f64> {
        self.l
            .solve_triangular(UPLO::Lower, Diag::NonUnit, &b.to_owned())
            .expect("triangular solve")
    }

    /// L⁻ᵀ B.
    pub fn half_solve_t_mat(&self, b: ArrayView2<f64>) -> Array2<f64> {
        self.l
            .t()
            .solve_triangular(UPLO::Upper, Diag::NonUnit, &b.to_owned())
            .expect("triangular solve")
    }

    /// (L Lᵀ)⁻¹ b.
    pub fn solve_vec(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let half = self.half_solve_vec(b);
        self.l
            .t()
            .solve_triangular(UPLO::Upper, Diag::NonUnit, &half)
            .expect("triangular solve")
    }

    /// (L Lᵀ)⁻¹ B.
    pub fn solve_mat(&self, b: ArrayView2<f64>) -> Array2<f64> {
        let half = self.half_solve_mat(b);
        self.l
            .t()
            .solve_triangular(UPLO::Upper, Diag::NonUnit, &half)
            .expect("triangular solve")
    }

    /// log det(L Lᵀ) = 2 Σ log L_ii.
    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diag().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// Explicit SPD inverse (L Lᵀ)⁻¹ via the factored LAPACK routine.
    pub fn inverse(&self) -> Result<Array2<f64>> {
        let factorized = CholeskyFactorized {
            factor: self.l.clone(),
            uplo: UPLO::Lower,
        };
        factorized
            .invc_into()
            .map_err(|e| GpdError::Numerical(format!("Cholesky inverse failed: {e}")))
    }
}

/// Column-wise squared norms of a matrix: out[j] = Σ_i m[i,j]².
pub(crate) fn column_sumsq(m: ArrayView2<f64>) -> Array1<f64> {
    m.map_axis(Axis(0), |col| col.iter().map(|v| v * v).sum())
}

/// Anything that yields per-class latent Gaussian marginals at query points.
/// Both GP backends implement this, and tests may substitute degenerate
/// predictors (for example zero variance) to probe downstream behavior.
pub trait LatentPredictor {
    fn num_classes(&self) -> usize;

    /// Per-class posterior means and variances at the query rows; both
    /// results are m×C.
    fn predict_latent(&self, x_star: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)>;
}

/// Either regression backend behind one prediction interface, so the
/// downstream probability and metric code never branches on sparsity.
#[derive(Debug, Clone)]
pub enum GpModel {
    Exact(exact::ExactGp),
    Sparse(sparse::SparseGp),
}

impl LatentPredictor for GpModel {
    fn num_classes(&self) -> usize {
        match self {
            GpModel::Exact(m) => m.num_classes(),
            GpModel::Sparse(m) => m.num_classes(),
        }
    }

    fn predict_latent(&self, x_star: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        match self {
            GpModel::Exact(m) => m.predict_latent(x_star),
            GpModel::Sparse(m) => m.predict_latent(x_star),
        }
    }
}
