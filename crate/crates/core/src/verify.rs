//! Independent oracles and spectral checks.
//!
//! Finite differences check the closed-form derivatives; dense eigenvalue
//! computations check the Hessian lower bound, two-sided Loewner bounds, local
//! Lipschitz behaviour of the Hessian, and the solver's convergence contract.

use nalgebra::Cholesky;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::calculus::{b_matrix, exp_kernel, hessian_at, symmetrize};
use crate::error::{Error, Result};
use crate::linalg::{asymmetry, extreme_eigenvalues, sym_eigenvalues, sym_spectral_norm};
use crate::model::{Matrix, ModelState, ProblemInstance, Vector};
use crate::newton::SolveTrace;
use crate::seeds::derive_seed;

/// Step for central-difference gradients.
pub const FD_STEP: f64 = 1e-5;

/// Relative asymmetry tolerated before a matrix is rejected as non-symmetric.
const SYMMETRY_TOL: f64 = 1e-10;

fn eval<F>(loss: &F, x: &Vector, offset: usize) -> Result<f64>
where
    F: Fn(&Vector) -> Result<f64>,
{
    let v = loss(x)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteEvaluation(offset))
    }
}

fn check_step(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "step must be positive, got {h}"
        )))
    }
}

/// Central-difference gradient, `(L(x + h e_i) − L(x − h e_i)) / 2h`.
pub fn fd_gradient<F>(loss: F, x: &Vector, h: f64) -> Result<Vector>
where
    F: Fn(&Vector) -> Result<f64>,
{
    check_step(h)?;
    let mut g = Vector::zeros(x.len());
    let mut y = x.clone();
    for i in 0..x.len() {
        y[i] = x[i] + h;
        let up = eval(&loss, &y, i)?;
        y[i] = x[i] - h;
        let down = eval(&loss, &y, i)?;
        y[i] = x[i];
        g[i] = (up - down) / (2.0 * h);
    }
    Ok(g)
}

/// Central second differences,
/// `(L(x+he_i+he_j) − L(x+he_i−he_j) − L(x−he_i+he_j) + L(x−he_i−he_j)) / 4h²`,
/// symmetrized.
pub fn fd_hessian<F>(loss: F, x: &Vector, h: f64) -> Result<Matrix>
where
    F: Fn(&Vector) -> Result<f64>,
{
    check_step(h)?;
    let d = x.len();
    let mut m = Matrix::zeros(d, d);
    let at = |i: usize, si: f64, j: usize, sj: f64| -> Result<f64> {
        let mut y = x.clone();
        y[i] += si * h;
        y[j] += sj * h;
        eval(&loss, &y, i * d + j)
    };
    for i in 0..d {
        for j in i..d {
            let v = (at(i, 1.0, j, 1.0)? - at(i, 1.0, j, -1.0)? - at(i, -1.0, j, 1.0)?
                + at(i, -1.0, j, -1.0)?)
                / (4.0 * h * h);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(symmetrize(m))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub eigmin: f64,
    pub eigmax: f64,
    #[serde(skip)]
    pub target_l: f64,
    pub passed: bool,
}

fn ensure_symmetric(m: &Matrix) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            what: "square matrix",
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    let a = asymmetry(m);
    if a > SYMMETRY_TOL {
        return Err(Error::Asymmetric(a));
    }
    Ok(())
}

/// Passes iff `eigmin(H) ≥ l (1 − 1e−6)`.
pub fn psd_check(h: &Matrix, l: f64) -> Result<SpectralReport> {
    ensure_symmetric(h)?;
    let (eigmin, eigmax) = extreme_eigenvalues(h);
    Ok(SpectralReport {
        eigmin,
        eigmax,
        target_l: l,
        passed: eigmin >= l - 1e-6 * l.abs(),
    })
}

/// Range of the generalized eigenvalues of `(lhs, mid)`, i.e. of
/// `L⁻¹ lhs L⁻ᵀ` with `mid = L Lᵀ`.
pub fn generalized_eigen_range(lhs: &Matrix, mid: &Matrix) -> Result<(f64, f64)> {
    ensure_symmetric(lhs)?;
    ensure_symmetric(mid)?;
    if lhs.shape() != mid.shape() {
        return Err(Error::DimensionMismatch {
            what: "sandwich operands",
            expected: mid.nrows(),
            got: lhs.nrows(),
        });
    }
    let (mid_min, _) = extreme_eigenvalues(mid);
    if !(mid_min > 0.0) {
        return Err(Error::MidNotPd(mid_min));
    }
    let l = Cholesky::new(mid.clone())
        .ok_or(Error::MidNotPd(mid_min))?
        .unpack();
    let y = l
        .solve_lower_triangular(lhs)
        .ok_or(Error::MidNotPd(mid_min))?;
    let z = l
        .solve_lower_triangular(&y.transpose())
        .ok_or(Error::MidNotPd(mid_min))?;
    Ok(extreme_eigenvalues(&symmetrize(z)))
}

/// `lo · mid ⪯ lhs ⪯ hi · mid`, decided on the generalized eigenvalues with a
/// rounding allowance of 1e−9.
pub fn sandwich_check(lhs: &Matrix, mid: &Matrix, lo: f64, hi: f64) -> Result<bool> {
    let (gmin, gmax) = generalized_eigen_range(lhs, mid)?;
    let slack = 1e-9;
    Ok(gmin >= lo - slack * lo.abs().max(1.0) && gmax <= hi + slack * hi.abs().max(1.0))
}

/// `max ‖B_cent(x) + B_exp(x)‖` over the given points, counting only active
/// terms. This is the empirical stand-in for the kernel bound in the ridge
/// sizing rule.
pub fn kernel_bound(inst: &ProblemInstance, points: &[Vector]) -> Result<f64> {
    let terms = inst.terms();
    let mut best = 0.0f64;
    for x in points {
        let state = ModelState::new(inst, x)?;
        let n = inst.n();
        let mut k = Matrix::zeros(n, n);
        if terms.cent {
            k += b_matrix(&state, inst.b())?;
        }
        if terms.exp {
            k += exp_kernel(&state, inst.b())?;
        }
        best = best.max(sym_spectral_norm(&k));
    }
    Ok(best)
}

/// Uniform ridge weights with `w_i² = factor · K̂ + l / σ_min(A)²`.
pub fn ridge_weights(inst: &ProblemInstance, k_hat: f64, l: f64, factor: f64) -> Result<Vector> {
    let sv = inst.a().clone().singular_values();
    let smin = if inst.n() >= inst.d() { sv.min() } else { 0.0 };
    if !(smin > 0.0) {
        return Err(Error::Domain("A must have full column rank".into()));
    }
    let w2 = factor * k_hat + l / (smin * smin);
    Ok(Vector::from_element(inst.n(), w2.sqrt()))
}

/// `n` points drawn uniformly from the ball of the given radius.
pub fn ball_points(d: usize, radius: f64, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vector> {
    (0..count)
        .map(|_| {
            let dir = random_unit(d, rng);
            let r: f64 = rng.random::<f64>().powf(1.0 / d as f64) * radius;
            dir * r
        })
        .collect()
}

pub fn random_unit(d: usize, rng: &mut ChaCha8Rng) -> Vector {
    loop {
        let v = Vector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LipschitzPair {
    pub x: Vector,
    pub y: Vector,
    pub dist: f64,
    pub ratio: f64,
    /// Index of the base point the pair was grown from.
    pub base: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LipschitzProbe {
    pub pairs: Vec<LipschitzPair>,
    pub max_ratio: f64,
    pub radius_r: f64,
}

#[derive(Serialize)]
struct PairReport {
    dist: f64,
    ratio: f64,
}

#[derive(Serialize)]
struct ProbeReport {
    pairs: Vec<PairReport>,
    max_ratio: f64,
}

impl LipschitzProbe {
    /// `{"pairs":[{"dist":…,"ratio":…}],"max_ratio":…}`.
    pub fn to_json(&self) -> Result<String> {
        let report = ProbeReport {
            pairs: self
                .pairs
                .iter()
                .map(|p| PairReport {
                    dist: p.dist,
                    ratio: p.ratio,
                })
                .collect(),
            max_ratio: self.max_ratio,
        };
        Ok(serde_json::to_string_pretty(&report)?)
    }

    /// For each base point, the largest over smallest ratio across distances.
    pub fn multiscale_spread(&self) -> Vec<f64> {
        let bases = self.pairs.iter().map(|p| p.base).max().map_or(0, |b| b + 1);
        (0..bases)
            .map(|b| {
                let rs: Vec<f64> = self
                    .pairs
                    .iter()
                    .filter(|p| p.base == b)
                    .map(|p| p.ratio)
                    .collect();
                let hi = rs.iter().copied().fold(f64::MIN, f64::max);
                let lo = rs.iter().copied().fold(f64::MAX, f64::min);
                hi / lo
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LipschitzOptions {
    /// Ball radius `R`; both points of every pair satisfy `‖·‖₂ ≤ R`.
    pub radius: f64,
    pub num_pairs: usize,
    pub seed: u64,
    /// Each base point yields one pair per distance, all along one direction.
    pub distances: Vec<f64>,
}

impl Default for LipschitzOptions {
    fn default() -> Self {
        Self {
            radius: 4.0,
            num_pairs: 8,
            seed: 0,
            distances: vec![1e-2, 1e-3, 1e-4],
        }
    }
}

const PROBE_ATTEMPTS: usize = 1000;

/// Samples pairs `(x, x + t v)` with `‖x‖, ‖x + t v‖ ≤ R` and
/// `‖A (x − y)‖_∞ < 0.01`, and reports `‖H(x) − H(y)‖ / ‖x − y‖` for each.
///
/// Only finiteness and stability across scales are meaningful: the constant
/// in the theoretical bound is not computable.
pub fn lipschitz_probe(inst: &ProblemInstance, opts: &LipschitzOptions) -> Result<LipschitzProbe> {
    if !(opts.radius > 0.0) || opts.distances.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidConfig(
            "radius and distances must be positive".into(),
        ));
    }
    let d = inst.d();
    let max_dist = opts.distances.iter().copied().fold(0.0, f64::max);
    let mut pairs = Vec::new();
    for base in 0..opts.num_pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, base as u64));
        let mut found = None;
        for _ in 0..PROBE_ATTEMPTS {
            let x = ball_points(d, opts.radius, 1, &mut rng).remove(0);
            let v = random_unit(d, &mut rng);
            let reach = (inst.a() * &v).amax() * max_dist;
            if reach < 0.01 && (&x + &v * max_dist).norm() <= opts.radius {
                found = Some((x, v));
                break;
            }
        }
        let (x, v) = found.ok_or_else(|| {
            Error::SamplingFailure(format!(
                "no admissible pair for base {base} after {PROBE_ATTEMPTS} attempts"
            ))
        })?;
        let hx = hessian_at(inst, &x)?;
        for &t in &opts.distances {
            let y = &x + &v * t;
            let dist = (&y - &x).norm();
            if dist == 0.0 {
                continue;
            }
            let hy = hessian_at(inst, &y)?;
            let ratio = sym_spectral_norm(&(&hx - hy)) / dist;
            if !ratio.is_finite() {
                return Err(Error::NonFiniteEvaluation(base));
            }
            pairs.push(LipschitzPair {
                x: x.clone(),
                y,
                dist,
                ratio,
                base,
            });
        }
    }
    let max_ratio = pairs.iter().map(|p| p.ratio).fold(0.0, f64::max);
    Ok(LipschitzProbe {
        pairs,
        max_ratio,
        radius_r: opts.radius,
    })
}

/// `⌈log₂(initial / ε)⌉ + 5`, or 5 when already within tolerance.
pub fn iteration_ceiling(initial_err: f64, epsilon: f64) -> usize {
    if initial_err <= epsilon {
        5
    } else {
        (initial_err / epsilon).log2().ceil() as usize + 5
    }
}

/// True iff the final error is at most ε and the run took at most
/// `⌈log₂(‖x₀ − x*‖ / ε)⌉ + 5` iterations.
pub fn convergence_audit(trace: &SolveTrace, epsilon: f64) -> Result<bool> {
    let first = trace
        .iterates
        .first()
        .and_then(|r| r.err_to_opt)
        .ok_or(Error::MissingPlantedOptimum)?;
    let last = trace
        .last()
        .err_to_opt
        .ok_or(Error::MissingPlantedOptimum)?;
    Ok(last <= epsilon && trace.iterations_run <= iteration_ceiling(first, epsilon))
}

/// Smallest eigenvalue of a symmetric matrix, for quick checks.
pub fn eigmin(m: &Matrix) -> f64 {
    sym_eigenvalues(m)[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::newton::IterateRecord;

    #[test]
    fn fd_gradient_basics() {
        let x = Vector::from_vec(vec![0.5, -1.0, 2.0]);
        assert_eq!(
            fd_gradient(|_| Ok(3.0), &x, 1e-5).unwrap(),
            Vector::zeros(3)
        );
        let c = Vector::from_vec(vec![1.5, -0.25, 4.0]);
        let g = fd_gradient(|y: &Vector| Ok(c.dot(y)), &x, 1e-5).unwrap();
        assert!((g - &c).amax() < 1e-9);
        let g = fd_gradient(|y: &Vector| Ok(0.5 * y.norm_squared()), &x, 1e-5).unwrap();
        assert!((g - &x).amax() < 1e-8);
        assert!(matches!(
            fd_gradient(|_| Ok(f64::NAN), &x, 1e-5),
            Err(Error::NonFiniteEvaluation(0))
        ));
        assert!(fd_gradient(|_| Ok(0.0), &x, 0.0).is_err());
    }

    #[test]
    fn fd_hessian_basics() {
        let q = Matrix::from_row_slice(2, 2, &[3.0, 0.5, 0.5, 1.0]);
        let x = Vector::from_vec(vec![0.3, -0.7]);
        let h = fd_hessian(|y: &Vector| Ok(0.5 * y.dot(&(&q * y))), &x, 1e-4).unwrap();
        assert!((h - &q).amax() < 1e-6);
        let z = fd_hessian(|_| Ok(1.0), &x, 1e-4).unwrap();
        assert_eq!(z, Matrix::zeros(2, 2));
    }

    #[test]
    fn psd_examples() {
        let r = psd_check(&(Matrix::identity(3, 3) * 2.0), 1.0).unwrap();
        assert!(r.passed);
        assert!((r.eigmin - 2.0).abs() < 1e-14);
        let r = psd_check(
            &Matrix::from_diagonal(&Vector::from_vec(vec![1.0, -1.0])),
            0.0,
        )
        .unwrap();
        assert!(!r.passed);
        let asym = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(psd_check(&asym, 0.0), Err(Error::Asymmetric(_))));
        let json =
            serde_json::to_string(&psd_check(&Matrix::identity(1, 1), 0.5).unwrap()).unwrap();
        assert_eq!(json, r#"{"eigmin":1.0,"eigmax":1.0,"passed":true}"#);
    }

    #[test]
    fn sandwich_examples() {
        let m = Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        assert!(sandwich_check(&m, &m, 0.99, 1.01).unwrap());
        assert!(sandwich_check(&m, &m, 1.0, 1.0).unwrap());
        assert!(!sandwich_check(&(&m * 2.0), &m, 0.99, 1.01).unwrap());
        let not_pd = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 0.0]));
        assert!(matches!(
            sandwich_check(&m, &not_pd, 0.9, 1.1),
            Err(Error::MidNotPd(_))
        ));
    }

    fn trace_from(errs: &[f64]) -> SolveTrace {
        let iterates = errs
            .iter()
            .enumerate()
            .map(|(t, &e)| IterateRecord {
                t,
                x: Vector::zeros(1),
                loss: 0.0,
                grad_norm: 0.0,
                err_to_opt: Some(e),
                step_seconds: 0.0,
            })
            .collect::<Vec<_>>();
        SolveTrace {
            iterations_run: iterates.len() - 1,
            iterates,
            converged: true,
            max_iters_exceeded: false,
        }
    }

    #[test]
    fn audit_examples() {
        assert!(convergence_audit(&trace_from(&[0.0]), 1e-10).unwrap());
        let mut halving = vec![0.1];
        while *halving.last().unwrap() > 1e-10 {
            let next = halving.last().unwrap() * 0.5;
            halving.push(next);
        }
        assert!(convergence_audit(&trace_from(&halving), 1e-10).unwrap());
        assert!(!convergence_audit(&trace_from(&[0.1, 1e-3, 1e-4, 1e-4]), 1e-10).unwrap());
        let mut missing = trace_from(&[0.1]);
        missing.iterates[0].err_to_opt = None;
        assert!(matches!(
            convergence_audit(&missing, 1e-10),
            Err(Error::MissingPlantedOptimum)
        ));
        assert_eq!(iteration_ceiling(1e-3, 1e-10), 29);
    }
}
