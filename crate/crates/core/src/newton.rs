//! Approximate Newton iteration on `L = L_exp + L_cent + L_reg`.
//!
//! Each step solves `H̃ s = ∇L(x_t)` by Cholesky and moves to `x_t − s`. In
//! exact mode `H̃` is the Hessian; in sampled mode it is a row-sampled sketch of
//! `H = Cᵀ C`, `C = D(x)^{1/2} A`, with `(1 − ε₀) H ⪯ H̃ ⪯ (1 + ε₀) H` with high
//! probability. No line search or damping is applied: outside the local basin
//! the iteration is allowed to fail and the failure is reported.

use std::time::Instant;

use nalgebra::Cholesky;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calculus::{gradient, hessian_kernel, hessian_total, symmetrize};
use crate::error::{Error, Result};
use crate::linalg::{extreme_eigenvalues, sorted_eigh};
use crate::model::{loss_breakdown, Matrix, ModelState, ProblemInstance, Vector};
use crate::seeds::derive_seed;

/// Oversampling constant in the row budget `⌈C₀ d log(d/δ) / ε₀²⌉`.
pub const SAMPLING_CONSTANT: f64 = 10.0;

/// Relative eigenvalue floor below which a Hessian is treated as singular.
pub const SINGULAR_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HessianMode {
    #[default]
    Exact,
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Target accuracy ε.
    pub epsilon: f64,
    /// Failure probability δ, used to size the row sample.
    pub delta: f64,
    pub mode: HessianMode,
    /// Spectral approximation target ε₀ for the sampled Hessian.
    pub sample_epsilon: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Use the exact Hessian when the row sample is rank deficient instead of
    /// failing.
    pub degenerate_fallback: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-10,
            delta: 0.01,
            mode: HessianMode::Exact,
            sample_epsilon: 0.1,
            max_iters: 100,
            seed: 0,
            degenerate_fallback: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.delta > 0.0 && self.delta < 0.1) {
            return Err(Error::InvalidConfig(format!(
                "delta must lie in (0, 0.1), got {}",
                self.delta
            )));
        }
        if !(self.sample_epsilon > 0.0 && self.sample_epsilon <= 0.1) {
            return Err(Error::InvalidConfig(format!(
                "sample_epsilon must lie in (0, 0.1], got {}",
                self.sample_epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterateRecord {
    pub t: usize,
    pub x: Vector,
    pub loss: f64,
    pub grad_norm: f64,
    /// `‖x_t − x*‖₂` when the instance carries a planted optimum.
    pub err_to_opt: Option<f64>,
    /// Wall time of the step that produced this iterate (0 for `t = 0`).
    pub step_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveTrace {
    pub iterates: Vec<IterateRecord>,
    pub converged: bool,
    pub iterations_run: usize,
    /// Stopped because `max_iters` was reached without meeting the tolerance.
    pub max_iters_exceeded: bool,
}

impl SolveTrace {
    pub fn last(&self) -> &IterateRecord {
        self.iterates.last().expect("trace always holds x0")
    }

    /// `err_{t+1} / err_t` for every step taken while `err_t > epsilon`.
    pub fn contraction_ratios(&self, epsilon: f64) -> Vec<f64> {
        self.iterates
            .windows(2)
            .filter_map(|w| match (w[0].err_to_opt, w[1].err_to_opt) {
                (Some(a), Some(b)) if a > epsilon => Some(b / a),
                _ => None,
            })
            .collect()
    }
}

/// Row budget `⌈C₀ d log(d/δ) / ε₀²⌉`.
pub fn sample_budget(d: usize, delta: f64, sample_epsilon: f64) -> usize {
    let d = d as f64;
    let log_term = (d / delta).ln().max(1.0);
    (SAMPLING_CONSTANT * d * log_term / (sample_epsilon * sample_epsilon)).ceil() as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct SketchParams {
    pub sample_epsilon: f64,
    pub delta: f64,
    pub seed: u64,
    /// Overrides the row budget derived from `(ε₀, δ)`.
    pub budget: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct SampledHessian {
    pub matrix: Matrix,
    pub rows_kept: usize,
    pub rows_total: usize,
    pub budget: usize,
}

/// Row-sampled approximation of the total Hessian.
///
/// `D(x)` is factored as `Q Λ Qᵀ`; rows `√λ_k q_kᵀ A` of the positive part are
/// kept independently with probability `p_k = min(1, c ‖row_k‖² / ‖C‖_F²)` and
/// reweighted by `1/p_k`, which keeps the estimate unbiased. Any negative part
/// of the kernel (the residual curvature of `L_exp` away from a fit) is added
/// back exactly.
pub fn approx_hessian(
    inst: &ProblemInstance,
    state: &ModelState,
    params: &SketchParams,
) -> Result<SampledHessian> {
    if !(params.sample_epsilon > 0.0 && params.sample_epsilon < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "sample_epsilon must lie in (0, 1), got {}",
            params.sample_epsilon
        )));
    }
    if !(params.delta > 0.0 && params.delta < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "delta must lie in (0, 1), got {}",
            params.delta
        )));
    }
    let (n, d) = (inst.n(), inst.d());
    let budget = params
        .budget
        .unwrap_or_else(|| sample_budget(d, params.delta, params.sample_epsilon));
    let kernel = hessian_kernel(state, inst)?;
    let (vals, vecs) = sorted_eigh(&kernel);
    // rows of Qᵀ A
    let qa = vecs.tr_mul(inst.a());

    let mut negative = Matrix::zeros(d, d);
    let mut rows: Vec<(usize, f64)> = Vec::with_capacity(n);
    for k in 0..n {
        let lam = vals[k];
        if lam < 0.0 {
            let r = qa.row(k);
            negative += r.transpose() * r * lam;
        } else if lam > 0.0 {
            let s = lam * qa.row(k).norm_squared();
            if s > 0.0 {
                rows.push((k, s));
            }
        }
    }
    let frob: f64 = rows.iter().map(|&(_, s)| s).sum();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut sketch = Matrix::zeros(d, d);
    let mut kept: Vec<Vector> = Vec::new();
    for &(k, s) in &rows {
        let p = (budget as f64 * s / frob).min(1.0);
        let draw: f64 = rng.random();
        if draw < p {
            let row = qa.row(k).transpose() * vals[k].sqrt();
            sketch += &row * row.transpose() / p;
            kept.push(row);
        }
    }
    let rank = if kept.is_empty() {
        0
    } else {
        let m = Matrix::from_columns(&kept);
        let sv = m.singular_values();
        let top = sv.max();
        sv.iter().filter(|&&v| v > 1e-12 * top).count()
    };
    if rank < d {
        return Err(Error::SamplingDegenerate {
            rows: kept.len(),
            dim: d,
        });
    }
    Ok(SampledHessian {
        matrix: symmetrize(sketch + negative),
        rows_kept: kept.len(),
        rows_total: n,
        budget,
    })
}

fn step_hessian(
    inst: &ProblemInstance,
    state: &ModelState,
    cfg: &SolverConfig,
    t: usize,
) -> Result<Matrix> {
    match cfg.mode {
        HessianMode::Exact => Ok(hessian_total(state, inst)?.h_total),
        HessianMode::Sampled => {
            let params = SketchParams {
                sample_epsilon: cfg.sample_epsilon,
                delta: cfg.delta,
                seed: derive_seed(cfg.seed, t as u64),
                budget: None,
            };
            match approx_hessian(inst, state, &params) {
                Ok(s) => Ok(s.matrix),
                Err(Error::SamplingDegenerate { .. }) if cfg.degenerate_fallback => {
                    Ok(hessian_total(state, inst)?.h_total)
                }
                Err(e) => Err(e),
            }
        }
    }
}

/// Solves `H̃ s = g` by Cholesky after checking `eigmin(H̃) ≥ 1e−12 ‖H̃‖`.
fn newton_direction(h: &Matrix, g: &Vector) -> Result<Vector> {
    let (lo, hi) = extreme_eigenvalues(h);
    let tol = SINGULAR_TOL * lo.abs().max(hi.abs());
    if !(lo >= tol) || lo <= 0.0 {
        return Err(Error::SingularHessian { eigmin: lo, tol });
    }
    let chol = Cholesky::new(h.clone()).ok_or(Error::SingularHessian { eigmin: lo, tol })?;
    Ok(chol.solve(g))
}

/// One step `x_{t+1} = x_t − H̃(x_t)⁻¹ ∇L(x_t)`.
pub fn newton_step(
    inst: &ProblemInstance,
    x: &Vector,
    cfg: &SolverConfig,
    t: usize,
) -> Result<Vector> {
    let state = ModelState::new(inst, x)?;
    let g = gradient(inst, &state)?.g_total;
    if g.iter().all(|&v| v == 0.0) {
        return Ok(x.clone());
    }
    let h = step_hessian(inst, &state, cfg, t)?;
    let next = x - newton_direction(&h, &g)?;
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteIterate(t));
    }
    Ok(next)
}

fn record(
    inst: &ProblemInstance,
    state: &ModelState,
    grad_norm: f64,
    t: usize,
    step_seconds: f64,
) -> Result<IterateRecord> {
    let loss = loss_breakdown(inst, state)?.total;
    Ok(IterateRecord {
        t,
        x: state.x().clone(),
        loss,
        grad_norm,
        err_to_opt: inst.x_star().map(|xs| (state.x() - xs).norm()),
        step_seconds,
    })
}

/// Runs the Newton iteration from `x0`.
///
/// Stops when `‖x_t − x*‖ ≤ ε` (planted instances), when
/// `‖∇L(x_t)‖ ≤ ε · eigmin(H̃(x_t))`, or after `max_iters` steps.
pub fn solve(inst: &ProblemInstance, x0: &Vector, cfg: &SolverConfig) -> Result<SolveTrace> {
    cfg.validate()?;
    let mut state = ModelState::new(inst, x0)?;
    let mut iterates = Vec::new();
    let mut step_seconds = 0.0;
    let mut t = 0;
    loop {
        let g = gradient(inst, &state)?.g_total;
        let grad_norm = g.norm();
        let rec = record(inst, &state, grad_norm, t, step_seconds)?;
        let planted_done = rec.err_to_opt.is_some_and(|e| e <= cfg.epsilon);
        iterates.push(rec);
        if planted_done || grad_norm == 0.0 {
            return Ok(finish(iterates, true, t, false));
        }
        if t >= cfg.max_iters {
            return Ok(finish(iterates, false, t, true));
        }
        let start = Instant::now();
        let h = step_hessian(inst, &state, cfg, t)?;
        let (eigmin, _) = extreme_eigenvalues(&h);
        if eigmin > 0.0 && grad_norm <= cfg.epsilon * eigmin {
            return Ok(finish(iterates, true, t, false));
        }
        let next = state.x() - newton_direction(&h, &g)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteIterate(t));
        }
        state = ModelState::new(inst, &next)?;
        step_seconds = start.elapsed().as_secs_f64();
        t += 1;
    }
}

fn finish(
    iterates: Vec<IterateRecord>,
    converged: bool,
    iterations_run: usize,
    max_iters_exceeded: bool,
) -> SolveTrace {
    SolveTrace {
        iterates,
        converged,
        iterations_run,
        max_iters_exceeded,
    }
}

/// `1 / λ_max(H(x))`, the classical safe step for gradient descent.
pub fn default_step_size(inst: &ProblemInstance, x: &Vector) -> Result<f64> {
    let state = ModelState::new(inst, x)?;
    let (_, hi) = extreme_eigenvalues(&hessian_total(&state, inst)?.h_total);
    if !(hi > 0.0) {
        return Err(Error::InvalidConfig(
            "Hessian has no positive curvature; pass an explicit step size".into(),
        ));
    }
    Ok(1.0 / hi)
}

/// Plain gradient descent `x_{t+1} = x_t − η ∇L(x_t)` with the same trace
/// schema as [`solve`].
///
/// With a `tolerance`, stops once `‖x_t − x*‖ ≤ tol` on planted instances or
/// `‖∇L‖ ≤ tol` otherwise.
pub fn gradient_descent_baseline(
    inst: &ProblemInstance,
    x0: &Vector,
    step_size: f64,
    iters: usize,
    tolerance: Option<f64>,
) -> Result<SolveTrace> {
    if !(step_size > 0.0 && step_size.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "step size must be positive, got {step_size}"
        )));
    }
    let mut state = ModelState::new(inst, x0)?;
    let mut iterates = Vec::new();
    let mut step_seconds = 0.0;
    let mut t = 0;
    loop {
        let g = gradient(inst, &state)?.g_total;
        let grad_norm = g.norm();
        let rec = record(inst, &state, grad_norm, t, step_seconds)?;
        let done = match (tolerance, rec.err_to_opt) {
            (Some(tol), Some(err)) => err <= tol,
            (Some(tol), None) => grad_norm <= tol,
            (None, _) => false,
        };
        iterates.push(rec);
        if done || grad_norm == 0.0 {
            return Ok(finish(iterates, true, t, false));
        }
        if t >= iters {
            return Ok(finish(iterates, false, t, tolerance.is_some()));
        }
        let start = Instant::now();
        let next = state.x() - g * step_size;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteIterate(t));
        }
        state = ModelState::new(inst, &next)?;
        step_seconds = start.elapsed().as_secs_f64();
        t += 1;
    }
}
