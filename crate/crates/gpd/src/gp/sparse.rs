//! Sparse GP regression through the collapsed variational bound.
//!
//! With inducing inputs Z (m rows), M = K_mm + ε_m I, Q = K_nm M⁻¹ K_mn, and
//! per-point noise Σ̂ (observation noise plus the model's diagonal jitter),
//! each class contributes
//!
//!   L_c = log N(y_c | 0, Q + Σ̂_c) − ½ tr(Σ̂_c⁻¹ (K_nn − Q)),
//!
//! which never exceeds the exact marginal likelihood of the jittered model.
//! Everything below works in the whitened form A = L_m⁻¹ K_mn so that no
//! n×n matrix is ever built: values, gradients, and predictions are all
//! O(m²n) time and O(mn) memory.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::Rng;

use super::{
    column_sumsq, CholFactor, LatentPredictor, NoiseModel, INDUCING_JITTER_SCALE,
    MAX_JITTER_SCALE, NOISE_JITTER_SCALE, VARIANCE_FLOOR_SCALE,
};
use crate::error::{GpdError, Result};
use crate::kernels::{kernel_matrix, KernelParams};
use crate::math::{median_heuristic, stream_rng};
use crate::optimize::{maximize, OptimizeOptions};

use super::exact::OptimizedHyperparams;

const LN_2PI: f64 = 1.8378770664093453;

/// How an inducing set was chosen; carried along for provenance in outputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InducingSelection {
    KMeans { seed: u64 },
    Uniform { seed: u64 },
    Explicit,
}

/// Inducing inputs with no duplicate rows (duplicates are deterministically
/// perturbed away, since K_mm would otherwise be exactly singular).
#[derive(Debug, Clone)]
pub struct InducingSet {
    z: Array2<f64>,
    selection: InducingSelection,
}

impl InducingSet {
    /// k-means centroids of the training inputs.
    pub fn kmeans(x: ArrayView2<f64>, m: usize, seed: u64) -> Result<InducingSet> {
        let mut z = kmeans_inducing(x, m, seed)?;
        perturb_duplicate_rows(&mut z);
        Ok(InducingSet {
            z,
            selection: InducingSelection::KMeans { seed },
        })
    }

    /// m training rows sampled without replacement.
    pub fn uniform(x: ArrayView2<f64>, m: usize, seed: u64) -> Result<InducingSet> {
        validate_selection_args(x, m)?;
        let mut rng = stream_rng(seed, 0);
        let idx = sample(&mut rng, x.nrows(), m);
        let mut z = Array2::zeros((m, x.ncols()));
        for (row, i) in idx.into_iter().enumerate() {
            z.row_mut(row).assign(&x.row(i));
        }
        perturb_duplicate_rows(&mut z);
        Ok(InducingSet {
            z,
            selection: InducingSelection::Uniform { seed },
        })
    }

    /// Caller-provided locations (for example Z = X to recover exact
    /// inference).
    pub fn explicit(z: Array2<f64>) -> Result<InducingSet> {
        if z.nrows() == 0 || z.ncols() == 0 {
            return Err(GpdError::Input("inducing set must be non-empty".into()));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(GpdError::Input(
                "inducing locations contain non-finite values".into(),
            ));
        }
        let mut z = z;
        perturb_duplicate_rows(&mut z);
        Ok(InducingSet {
            z,
            selection: InducingSelection::Explicit,
        })
    }

    pub fn locations(&self) -> ArrayView2<'_, f64> {
        self.z.view()
    }

    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.nrows() == 0
    }

    pub fn selection(&self) -> &InducingSelection {
        &self.selection
    }
}

fn validate_selection_args(x: ArrayView2<f64>, m: usize) -> Result<()> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(GpdError::Input(
            "inducing selection needs a non-empty training matrix".into(),
        ));
    }
    if m == 0 || m > x.nrows() {
        return Err(GpdError::Input(format!(
            "inducing count must be in 1..={}, got {m}",
            x.nrows()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(GpdError::Input("training inputs contain non-finite values".into()));
    }
    Ok(())
}

/// Lloyd's algorithm with k-means++ seeding: at most 50 iterations, stopping
/// once no centroid moves more than 1e-6, with empty clusters re-seeded at
/// the point currently farthest from its centroid.
pub fn kmeans_inducing(x: ArrayView2<f64>, m: usize, seed: u64) -> Result<Array2<f64>> {
    validate_selection_args(x, m)?;
    let n = x.nrows();
    let d = x.ncols();
    if m == n {
        // Every point is its own centroid; this is the exact optimum and
        // sidesteps seeding pathologies on duplicated data.
        return Ok(x.to_owned());
    }
    let sqdist = |a: usize, c: ndarray::ArrayView1<f64>| -> f64 {
        x.row(a)
            .iter()
            .zip(c.iter())
            .map(|(p, q)| (p - q) * (p - q))
            .sum()
    };

    let mut rng = stream_rng(seed, 0);
    let mut centers = Array2::zeros((m, d));
    centers.row_mut(0).assign(&x.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sqdist(i, centers.row(0))).collect();
    for k in 1..m {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let u = rng.random_range(0.0..total);
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All remaining points coincide with existing centers.
            rng.random_range(0..n)
        };
        centers.row_mut(k).assign(&x.row(idx));
        for i in 0..n {
            d2[i] = d2[i].min(sqdist(i, centers.row(k)));
        }
    }

    let mut assign = vec![0usize; n];
    for _ in 0..50 {
        let mut dist = vec![0.0f64; n];
        for i in 0..n {
            let mut best = f64::INFINITY;
            let mut best_k = 0;
            for k in 0..m {
                let dd = sqdist(i, centers.row(k));
                if dd < best {
                    best = dd;
                    best_k = k;
                }
            }
            assign[i] = best_k;
            dist[i] = best;
        }
        let mut counts = vec![0usize; m];
        let mut sums = Array2::<f64>::zeros((m, d));
        for i in 0..n {
            counts[assign[i]] += 1;
            let mut row = sums.row_mut(assign[i]);
            row += &x.row(i);
        }
        let mut new_centers = Array2::zeros((m, d));
        for k in 0..m {
            if counts[k] > 0 {
                let c = sums.row(k).mapv(|v| v / counts[k] as f64);
                new_centers.row_mut(k).assign(&c);
            } else {
                // Re-seed at the point farthest from its centroid, then zero
                // its distance so a second empty cluster picks elsewhere.
                let (far, _) = dist
                    .iter()
                    .enumerate()
                    .fold((0, -1.0), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
                new_centers.row_mut(k).assign(&x.row(far));
                dist[far] = 0.0;
            }
        }
        let shift = centers
            .outer_iter()
            .zip(new_centers.outer_iter())
            .map(|(a, b)| {
                a.iter()
                    .zip(b.iter())
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0f64, f64::max);
        centers = new_centers;
        if shift < 1e-6 {
            break;
        }
    }
    Ok(centers)
}

/// Nudge exact-duplicate rows apart by 1e-6 of the per-feature spread so
/// that K_mm stays invertible at tiny jitter.
fn perturb_duplicate_rows(z: &mut Array2<f64>) {
    let m = z.nrows();
    let d = z.ncols();
    if m < 2 {
        return;
    }
    let mut scale = vec![1.0f64; d];
    for j in 0..d {
        let col = z.column(j);
        let mean = col.sum() / m as f64;
        let sd = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64).sqrt();
        if sd > 0.0 {
            scale[j] = sd;
        }
    }
    for pass in 1..=4 {
        let mut occurrence = 1.0;
        let mut any = false;
        for i in 1..m {
            let dup = (0..i).any(|k| z.row(k) == z.row(i));
            if dup {
                any = true;
                for j in 0..d {
                    z[[i, j]] += 1e-6 * scale[j] * occurrence * pass as f64;
                }
                occurrence += 1.0;
            }
        }
        if !any {
            break;
        }
    }
}

/// Per-noise-block quantities (one block per class, or a single shared
/// block when the noise is constant across classes).
struct NoiseBlock {
    sigma2: Array1<f64>,
    inv_sigma: Array1<f64>,
    a_s: Array2<f64>,
    l_b: CholFactor,
    sum_ln_sigma2: f64,
    /// ½ tr(Σ̂⁻¹(K_nn − Q)) for this block's noise.
    trace_term: f64,
}

/// Per-class quantities layered on a noise block.
struct ClassState {
    y_hat: Array1<f64>,
    e: Array1<f64>,
    bound: f64,
}

/// Everything the bound, its gradient, and the fitted predictor share.
struct SparseCore {
    l_m: CholFactor,
    /// A = L_m⁻¹ K_mn (m×n).
    a: Array2<f64>,
    /// diag(Q) = column squared norms of A.
    q_diag: Array1<f64>,
    /// Absolute jitter added to K_mm after any escalation.
    eps_m: f64,
    blocks: Vec<NoiseBlock>,
    classes: Vec<ClassState>,
    shared: bool,
}

fn validate_sparse_inputs(
    x: ArrayView2<f64>,
    inducing: &InducingSet,
    targets: ArrayView2<f64>,
    noise: &NoiseModel,
) -> Result<()> {
    if x.nrows() == 0 {
        return Err(GpdError::Input(
            "sparse regression requires at least one training point".into(),
        ));
    }
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
    if inducing.locations().ncols() != x.ncols() {
        return Err(GpdError::Input(format!(
            "inducing locations have {} columns, training data has {}",
            inducing.locations().ncols(),
            x.ncols()
        )));
    }
    noise.validate(x.nrows(), targets.ncols())
}

/// Factor K_mm + ε I, escalating ε from `INDUCING_JITTER_SCALE`·a² by
/// decades up to `MAX_JITTER_SCALE`·a².
fn factor_inducing(k_mm: &Array2<f64>, variance: f64) -> Result<(CholFactor, f64)> {
    let mut scale = INDUCING_JITTER_SCALE;
    let mut last_err = None;
    while scale <= MAX_JITTER_SCALE * (1.0 + 1e-12) {
        let eps = scale * variance;
        let mut m_mat = k_mm.clone();
        for i in 0..m_mat.nrows() {
            m_mat[[i, i]] += eps;
        }
        match CholFactor::new(&m_mat) {
            Ok(f) => return Ok((f, eps)),
            Err(e) => last_err = Some(e),
        }
        scale *= 10.0;
    }
    Err(GpdError::Numerical(format!(
        "inducing matrix stayed indefinite up to jitter {MAX_JITTER_SCALE:.0e}·a²: {}",
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

impl SparseCore {
    fn build(
        x: ArrayView2<f64>,
        inducing: &InducingSet,
        targets: ArrayView2<f64>,
        noise: &NoiseModel,
        params: &KernelParams,
    ) -> Result<SparseCore> {
        validate_sparse_inputs(x, inducing, targets, noise)?;
        let n = x.nrows();
        let num_classes = targets.ncols();
        let variance = params.variance();
        let z = inducing.locations();

        let k_mm = kernel_matrix(z, z, params)?;
        let (l_m, eps_m) = factor_inducing(&k_mm, variance)?;
        let k_mn = kernel_matrix(z, x, params)?;
        let a = l_m.half_solve_mat(k_mn.view());
        let q_diag = column_sumsq(a.view());

        let shared = noise.is_shared();
        let block_count = if shared { 1 } else { num_classes };
        let mut blocks = Vec::with_capacity(block_count);
        for b in 0..block_count {
            let sigma2 = noise.effective_column(b, n, variance);
            let inv_sigma = sigma2.mapv(|v| 1.0 / v.sqrt());
            let a_s = &a * &inv_sigma;
            let mut b_mat = a_s.dot(&a_s.t());
            for i in 0..b_mat.nrows() {
                b_mat[[i, i]] += 1.0;
            }
            let l_b = CholFactor::new(&b_mat)?;
            let sum_ln_sigma2 = sigma2.iter().map(|v| v.ln()).sum();
            let trace_term = 0.5
                * sigma2
                    .iter()
                    .zip(q_diag.iter())
                    .map(|(s2, q)| (variance - q) / s2)
                    .sum::<f64>();
            blocks.push(NoiseBlock {
                sigma2,
                inv_sigma,
                a_s,
                l_b,
                sum_ln_sigma2,
                trace_term,
            });
        }

        let mut classes = Vec::with_capacity(num_classes);
        for c in 0..num_classes {
            let block = &blocks[if shared { 0 } else { c }];
            let y_hat: Array1<f64> = targets
                .column(c)
                .iter()
                .zip(block.inv_sigma.iter())
                .map(|(y, s)| y * s)
                .collect();
            let d = block.a_s.dot(&y_hat);
            let e = block.l_b.half_solve_vec(d.view());
            let y_hat_sq: f64 = y_hat.iter().map(|v| v * v).sum();
            let e_sq: f64 = e.iter().map(|v| v * v).sum();
            let bound = -0.5
                * (n as f64 * LN_2PI + block.l_b.log_det() + block.sum_ln_sigma2 + y_hat_sq
                    - e_sq)
                - block.trace_term;
            classes.push(ClassState { y_hat, e, bound });
        }
        Ok(SparseCore {
            l_m,
            a,
            q_diag,
            eps_m,
            blocks,
            classes,
            shared,
        })
    }

    fn value(&self) -> f64 {
        self.classes.iter().map(|c| c.bound).sum()
    }

    fn block_for(&self, class: usize) -> &NoiseBlock {
        &self.blocks[if self.shared { 0 } else { class }]
    }
}

/// The collapsed variational lower bound on the summed per-class marginal
/// likelihood (jitter included on both sides, so bound ≤ exact always).
pub fn sparse_bound(
    x: ArrayView2<f64>,
    inducing: &InducingSet,
    targets: ArrayView2<f64>,
    noise: &NoiseModel,
    params: &KernelParams,
) -> Result<f64> {
    Ok(SparseCore::build(x, inducing, targets, noise, params)?.value())
}

/// Bound value and gradient in the log-parameterization ([log a², log ℓ],
/// plus log σ_n² for constant noise), computed without forming any n×n
/// matrix. Matches finite differences of [`sparse_bound`].
pub fn sparse_bound_gradient(
    x: ArrayView2<f64>,
    inducing: &InducingSet,
    targets: ArrayView2<f64>,
    noise: &NoiseModel,
    params: &KernelParams,
) -> Result<(f64, Vec<f64>)> {
    let core = SparseCore::build(x, inducing, targets, noise, params)?;
    let m = inducing.len();
    let variance = params.variance();
    let lengthscale = params.lengthscale();
    let z = inducing.locations();
    let shared = core.shared;
    let dim = if shared { 3 } else { 2 };

    // Kernel blocks and their length-scale derivatives. ∂K/∂log a² = K, and
    // ∂K/∂log ℓ = K ⊙ D²/ℓ².
    let k_mm = kernel_matrix(z, z, params)?;
    let k_mn = kernel_matrix(z, x, params)?;
    let ell2 = lengthscale * lengthscale;
    let scaled_sqdist = |k: &Array2<f64>, rows: ArrayView2<f64>, cols: ArrayView2<f64>| {
        let mut out = k.clone();
        for ((i, j), v) in out.indexed_iter_mut() {
            let d2: f64 = rows
                .row(i)
                .iter()
                .zip(cols.row(j).iter())
                .map(|(p, q)| (p - q) * (p - q))
                .sum();
            *v *= d2 / ell2;
        }
        out
    };
    let kl_mm = scaled_sqdist(&k_mm, z, z);
    let kl_mn = scaled_sqdist(&k_mn, z, x);

    // P = M⁻¹ K_mn.
    let p = core.l_m.half_solve_t_mat(core.a.view());

    let mut value = 0.0;
    let mut grad = vec![0.0; dim];

    // Per-block (noise-dependent) pieces, computed once for shared noise.
    struct BlockGrad {
        pginv: Array2<f64>,
        pginv_pt: Array2<f64>,
        p_over_sigma2: Array2<f64>,
        ps: Array2<f64>,
        sum_diag_ginv: f64,
        sum_inv_sigma2: f64,
        sum_delta_over_sigma4: f64,
    }
    let mut block_grads: Vec<Option<BlockGrad>> = (0..core.blocks.len()).map(|_| None).collect();
    let build_block = |idx: usize, core: &SparseCore| -> BlockGrad {
        let block = &core.blocks[idx];
        // G⁻¹ Pᵀ by Woodbury: Σ̂⁻¹Pᵀ − Σ̂^{-1/2} A_sᵀ B⁻¹ A_s Σ̂^{-1/2} Pᵀ.
        let y_prime = &p.t() * &block.inv_sigma.view().insert_axis(Axis(1));
        let h = block.a_s.dot(&y_prime);
        let t = block.l_b.solve_mat(h.view());
        let ginv_y = (&y_prime - &block.a_s.t().dot(&t))
            * &block.inv_sigma.view().insert_axis(Axis(1));
        let pginv = ginv_y.t().to_owned();
        let pginv_pt = p.dot(&ginv_y);
        let inv_sigma2 = block.inv_sigma.mapv(|v| v * v);
        let p_over_sigma2 = &p * &inv_sigma2;
        let ps = p_over_sigma2.dot(&p.t());
        let v_b = block.l_b.half_solve_mat(block.a_s.view());
        let css = column_sumsq(v_b.view());
        let sum_diag_ginv: f64 = css
            .iter()
            .zip(inv_sigma2.iter())
            .map(|(c, is2)| (1.0 - c) * is2)
            .sum();
        let sum_inv_sigma2 = inv_sigma2.sum();
        let sum_delta_over_sigma4 = core
            .q_diag
            .iter()
            .zip(block.sigma2.iter())
            .map(|(q, s2)| (variance - q) / (s2 * s2))
            .sum();
        BlockGrad {
            pginv,
            pginv_pt,
            p_over_sigma2,
            ps,
            sum_diag_ginv,
            sum_inv_sigma2,
            sum_delta_over_sigma4,
        }
    };

    let noise_jitter = NOISE_JITTER_SCALE * variance;
    for c in 0..targets.ncols() {
        let block_idx = if shared { 0 } else { c };
        if block_grads[block_idx].is_none() {
            block_grads[block_idx] = Some(build_block(block_idx, &core));
        }
        let bg = block_grads[block_idx].as_ref().unwrap();
        let block = core.block_for(c);
        let state = &core.classes[c];
        value += state.bound;

        // β = G⁻¹ y.
        let t = block.l_b.solve_vec(block.a_s.dot(&state.y_hat).view());
        let at = block.a_s.t().dot(&t);
        let beta: Array1<f64> = state
            .y_hat
            .iter()
            .zip(at.iter())
            .zip(block.inv_sigma.iter())
            .map(|((y, a), s)| (y - a) * s)
            .collect();
        let beta_sq: f64 = beta.iter().map(|v| v * v).sum();
        let v_p = p.dot(&beta);

        for (j, g) in grad.iter_mut().enumerate().take(dim) {
            // Parameter-specific derivative blocks.
            let (r, mut dm, dk_diag, dsigma2) = match j {
                0 => (
                    Some(&k_mn),
                    Some(k_mm.clone()),
                    variance,
                    noise_jitter,
                ),
                1 => (Some(&kl_mn), Some(kl_mm.clone()), 0.0, 0.0),
                _ => {
                    let s_n2 = match noise {
                        NoiseModel::Constant(log_s2) => log_s2.exp(),
                        NoiseModel::PerPoint(_) => unreachable!(),
                    };
                    (None, None, 0.0, s_n2)
                }
            };
            if j == 0 {
                // The inducing jitter scales with a², so it differentiates
                // along with K_mm.
                let dm_mat = dm.as_mut().unwrap();
                for i in 0..m {
                    dm_mat[[i, i]] += core.eps_m;
                }
            }

            let mut g_c = 0.0;
            // d(−½ yᵀG⁻¹y) = ½ βᵀ dG β.
            if let Some(r_mat) = r {
                let rb = r_mat.dot(&beta);
                g_c += rb.iter().zip(v_p.iter()).map(|(a, b)| a * b).sum::<f64>();
            }
            if let Some(dm_mat) = &dm {
                let dmv = dm_mat.dot(&v_p);
                g_c -= 0.5 * v_p.iter().zip(dmv.iter()).map(|(a, b)| a * b).sum::<f64>();
            }
            g_c += 0.5 * dsigma2 * beta_sq;
            // d(−½ log det G) = −½ tr(G⁻¹ dG).
            if let Some(r_mat) = r {
                g_c -= frobenius(r_mat, &bg.pginv);
            }
            if let Some(dm_mat) = &dm {
                g_c += 0.5 * frobenius(dm_mat, &bg.pginv_pt);
            }
            g_c -= 0.5 * dsigma2 * bg.sum_diag_ginv;
            // Trace-correction term −½ Σ (k_ii − q_ii)/σ̂²_i.
            g_c += 0.5 * dsigma2 * bg.sum_delta_over_sigma4;
            g_c -= 0.5 * dk_diag * bg.sum_inv_sigma2;
            if let Some(r_mat) = r {
                g_c += frobenius(r_mat, &bg.p_over_sigma2);
            }
            if let Some(dm_mat) = &dm {
                g_c -= 0.5 * frobenius(dm_mat, &bg.ps);
            }
            *g += g_c;
        }
    }
    Ok((value, grad))
}

fn frobenius(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// A fitted sparse GP ready for prediction.
#[derive(Debug, Clone)]
pub struct SparseGp {
    inducing: InducingSet,
    params: KernelParams,
    l_m: CholFactor,
    /// One factor per noise block (1 for constant noise, C otherwise).
    l_b: Vec<CholFactor>,
    /// m×C whitened information vectors; predictive mean is (L_B⁻¹ w)ᵀ e_c.
    e: Array2<f64>,
    num_classes: usize,
    shared: bool,
    bound: f64,
}

/// Fit the sparse model at fixed hyperparameters, retaining what prediction
/// needs.
pub fn fit_sparse(
    x: ArrayView2<f64>,
    inducing: &InducingSet,
    targets: ArrayView2<f64>,
    noise: &NoiseModel,
    params: &KernelParams,
) -> Result<SparseGp> {
    let core = SparseCore::build(x, inducing, targets, noise, params)?;
    let bound = core.value();
    let num_classes = targets.ncols();
    let m = inducing.len();
    let mut e = Array2::zeros((m, num_classes));
    for (c, state) in core.classes.iter().enumerate() {
        e.column_mut(c).assign(&state.e);
    }
    Ok(SparseGp {
        inducing: inducing.clone(),
        params: params.clone(),
        l_m: core.l_m,
        l_b: core.blocks.into_iter().map(|b| b.l_b).collect(),
        e,
        num_classes,
        shared: core.shared,
        bound,
    })
}

impl SparseGp {
    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn inducing(&self) -> &InducingSet {
        &self.inducing
    }

    /// Bound value at the fitted parameters.
    pub fn bound(&self) -> f64 {
        self.bound
    }
}

impl LatentPredictor for SparseGp {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn predict_latent(&self, x_star: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        if x_star.ncols() != self.inducing.locations().ncols() {
            return Err(GpdError::Input(format!(
                "query points have {} columns, inducing locations have {}",
                x_star.ncols(),
                self.inducing.locations().ncols()
            )));
        }
        let p = x_star.nrows();
        let variance = self.params.variance();
        let floor = VARIANCE_FLOOR_SCALE * variance;
        let k_zs = kernel_matrix(self.inducing.locations(), x_star, &self.params)?;
        let w = self.l_m.half_solve_mat(k_zs.view());
        let w_sq = column_sumsq(w.view());
        let mut mean = Array2::zeros((p, self.num_classes));
        let mut var = Array2::zeros((p, self.num_classes));
        let mut shared_wb: Option<(Array2<f64>, Array1<f64>)> = None;
        for c in 0..self.num_classes {
            let (wb, wb_sq) = if self.shared {
                if shared_wb.is_none() {
                    let wb = self.l_b[0].half_solve_mat(w.view());
                    let wb_sq = column_sumsq(wb.view());
                    shared_wb = Some((wb, wb_sq));
                }
                let (wb, wb_sq) = shared_wb.as_ref().unwrap();
                (wb.view(), wb_sq.clone())
            } else {
                let wb = self.l_b[c].half_solve_mat(w.view());
                let wb_sq = column_sumsq(wb.view());
                shared_wb = Some((wb, wb_sq));
                let (wb, wb_sq) = shared_wb.as_ref().unwrap();
                (wb.view(), wb_sq.clone())
            };
            let e_c = self.e.column(c);
            for j in 0..p {
                mean[[j, c]] = wb.column(j).dot(&e_c);
                var[[j, c]] = (variance - w_sq[j] + wb_sq[j]).max(floor);
            }
        }
        Ok((mean, var))
    }
}

/// Maximize the sparse bound over the kernel (and constant-noise)
/// log-parameters with the inducing locations held fixed.
pub fn optimize_sparse(
    x: ArrayView2<f64>,
    inducing: &InducingSet,
    targets: ArrayView2<f64>,
    noise: &NoiseModel,
    init: &KernelParams,
    opts: &OptimizeOptions,
) -> Result<OptimizedHyperparams> {
    validate_sparse_inputs(x, inducing, targets, noise)?;
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
        sparse_bound_gradient(x, inducing, targets, &noise_at, &params)
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
