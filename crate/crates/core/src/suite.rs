//! Seeded verification suite: derivative fidelity, Hessian lower bound,
//! Loewner sandwich, Lipschitz stability and convergence audits.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::calculus::{gradient, hessian_cent_entry, hessian_kernel, hessian_total};
use crate::error::{Error, Result};
use crate::experiments::{generate_planted, perturbed_start, random_instance, GeneratorSpec};
use crate::linalg::relative_error;
use crate::model::{loss_total, LossBreakdown, Matrix, ModelState, ProblemInstance, Vector};
use crate::newton::{solve, SolverConfig};
use crate::seeds::derive_seed;
use crate::verify::{
    ball_points, convergence_audit, fd_gradient, fd_hessian, generalized_eigen_range,
    lipschitz_probe, psd_check, ridge_weights, LipschitzOptions, FD_STEP,
};

pub const GRADIENT_TOL: f64 = 1e-6;
pub const HESSIAN_FD_TOL: f64 = 1e-4;
pub const HESSIAN_FORM_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Check {
    Gradient,
    Hessian,
    Psd,
    Sandwich,
    Lipschitz,
    Convergence,
}

impl Check {
    pub const ALL: [Check; 6] = [
        Check::Gradient,
        Check::Hessian,
        Check::Psd,
        Check::Sandwich,
        Check::Lipschitz,
        Check::Convergence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::Gradient => "gradient",
            Check::Hessian => "hessian",
            Check::Psd => "psd",
            Check::Sandwich => "sandwich",
            Check::Lipschitz => "lipschitz",
            Check::Convergence => "convergence",
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Check {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Check::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown check {s:?}")))
    }
}

/// Parses a comma-separated check list. An empty string selects nothing,
/// `all` selects every check.
pub fn parse_checks(list: &str) -> Result<Vec<Check>> {
    let list = list.trim();
    if list.is_empty() || list == "none" {
        return Ok(Vec::new());
    }
    if list == "all" {
        return Ok(Check::ALL.to_vec());
    }
    list.split(',').map(|s| s.trim().parse()).collect()
}

/// Max relative error of the analytic gradients of `(L_exp, L_cent, L_reg, L)`
/// against central differences with step `h`.
pub fn gradient_errors(
    inst: &ProblemInstance,
    x: &Vector,
    h: f64,
    corrupt: bool,
) -> Result<[f64; 4]> {
    let state = ModelState::new(inst, x)?;
    let mut g = gradient(inst, &state)?;
    if corrupt {
        g.g_total[0] += 1e-3;
    }
    let part =
        |pick: fn(&LossBreakdown) -> f64| move |y: &Vector| loss_total(inst, y).map(|l| pick(&l));
    let fd_exp = fd_gradient(part(|l| l.l_exp), x, h)?;
    let fd_cent = fd_gradient(part(|l| l.l_cent), x, h)?;
    let fd_reg = fd_gradient(part(|l| l.l_reg), x, h)?;
    let fd_tot = fd_gradient(part(|l| l.total), x, h)?;
    Ok([
        relative_error(g.g_exp.as_slice(), fd_exp.as_slice()),
        relative_error(g.g_cent.as_slice(), fd_cent.as_slice()),
        relative_error(g.g_reg.as_slice(), fd_reg.as_slice()),
        relative_error(g.g_total.as_slice(), fd_tot.as_slice()),
    ])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HessianErrors {
    /// Elementwise relative gap between `Aᵀ B(x) A` and the scalar formula.
    pub cent_forms: f64,
    pub cent_fd: f64,
    pub exp_fd: f64,
    pub total_fd: f64,
}

impl HessianErrors {
    pub fn passed(&self) -> bool {
        self.cent_forms <= HESSIAN_FORM_TOL
            && self.cent_fd <= HESSIAN_FD_TOL
            && self.exp_fd <= HESSIAN_FD_TOL
            && self.total_fd <= HESSIAN_FD_TOL
    }
}

pub fn hessian_errors(inst: &ProblemInstance, x: &Vector, h: f64) -> Result<HessianErrors> {
    let state = ModelState::new(inst, x)?;
    let hb = hessian_total(&state, inst)?;
    let d = inst.d();
    let mut cent_forms = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            let scalar = hessian_cent_entry(&state, inst, i, j)?;
            let gap = (hb.h_cent[(i, j)] - scalar).abs()
                / scalar.abs().max(hb.h_cent[(i, j)].abs()).max(1.0);
            cent_forms = cent_forms.max(gap);
        }
    }
    let part =
        |pick: fn(&LossBreakdown) -> f64| move |y: &Vector| loss_total(inst, y).map(|l| pick(&l));
    let fd_cent = fd_hessian(part(|l| l.l_cent), x, h)?;
    let fd_exp = fd_hessian(part(|l| l.l_exp), x, h)?;
    let fd_tot = fd_hessian(part(|l| l.total), x, h)?;
    Ok(HessianErrors {
        cent_forms,
        cent_fd: relative_error(hb.h_cent.as_slice(), fd_cent.as_slice()),
        exp_fd: relative_error(hb.h_exp.as_slice(), fd_exp.as_slice()),
        total_fd: relative_error(hb.h_total.as_slice(), fd_tot.as_slice()),
    })
}

/// Minimum of `eigmin(H_total(x))` over `x*` and `probes` points of the
/// radius-`R` ball, for a planted instance with strong-convexity level `l`.
pub fn planted_min_eigenvalue(spec: &GeneratorSpec, probes: usize) -> Result<f64> {
    let planted = generate_planted(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0xE16));
    let mut points = ball_points(spec.d, spec.norm_cap_r, probes, &mut rng);
    points.push(planted.x_star.clone());
    let mut lo = f64::INFINITY;
    for x in &points {
        let state = ModelState::new(&planted.instance, x)?;
        let h = hessian_total(&state, &planted.instance)?.h_total;
        lo = lo.min(psd_check(&h, spec.ridge_l)?.eigmin);
    }
    Ok(lo)
}

/// Generalized eigenvalue range of `(W², B̃(x*))` with `B̃ = B_cent + B_exp + W²`
/// when the ridge weights are sized with factor 10⁴.
pub fn sandwich_range(spec: &GeneratorSpec) -> Result<(f64, f64)> {
    let planted = generate_planted(spec)?;
    let factor = 1e4;
    let w = ridge_weights(
        &planted.instance,
        planted.kernel_bound,
        spec.ridge_l,
        factor,
    )?;
    let inst = planted.instance.with_weights(w)?;
    let state = ModelState::new(&inst, &planted.x_star)?;
    let kernel = hessian_kernel(&state, &inst)?;
    let w2 = Matrix::from_diagonal(&inst.w().map(|v| v * v));
    generalized_eigen_range(&w2, &kernel)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub check: Check,
    pub case: usize,
    pub metric: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub seed: u64,
    pub instances: usize,
    pub checks: Vec<Check>,
    /// Fault injection: perturb the analytic total gradient before comparing.
    pub corrupt_gradient: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 10,
            checks: Check::ALL.to_vec(),
            corrupt_gradient: false,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct SuiteReport {
    pub rows: Vec<CheckRow>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["check", "case", "metric", "threshold", "passed"])?;
        for r in &self.rows {
            w.write_record([
                r.check.name().to_string(),
                r.case.to_string(),
                r.metric.to_string(),
                r.threshold.to_string(),
                r.passed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Human-readable per-check summary.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<12} {:>6} {:>6} {:>14}\n",
            "check", "cases", "failed", "worst metric"
        );
        let mut checks: Vec<Check> = self.rows.iter().map(|r| r.check).collect();
        checks.dedup();
        for c in checks {
            let rows: Vec<&CheckRow> = self.rows.iter().filter(|r| r.check == c).collect();
            let failed = rows.iter().filter(|r| !r.passed).count();
            let worst = match c {
                Check::Psd => rows.iter().map(|r| r.metric).fold(f64::INFINITY, f64::min),
                _ => rows
                    .iter()
                    .map(|r| r.metric)
                    .fold(f64::NEG_INFINITY, f64::max),
            };
            out.push_str(&format!(
                "{:<12} {:>6} {:>6} {:>14.6e}  {}\n",
                c.name(),
                rows.len(),
                failed,
                worst,
                if failed == 0 { "PASS" } else { "FAIL" }
            ));
        }
        out
    }
}

fn planted_spec(seed: u64, ridge_l: f64) -> GeneratorSpec {
    GeneratorSpec {
        seed,
        ridge_l,
        ..GeneratorSpec::default()
    }
}

const LEVELS: [f64; 3] = [0.1, 1.0, 10.0];

pub fn run_suite(opts: &SuiteOptions) -> Result<SuiteReport> {
    let mut rows = Vec::new();
    for &check in &opts.checks {
        for case in 0..opts.instances {
            let seed = derive_seed(opts.seed, (check as u64) << 32 | case as u64);
            let row = match check {
                Check::Gradient => {
                    let (inst, x) = random_instance(seed, 50, 10)?;
                    let errs = gradient_errors(&inst, &x, FD_STEP, opts.corrupt_gradient)?;
                    let worst = errs.iter().copied().fold(0.0, f64::max);
                    (worst, GRADIENT_TOL, worst <= GRADIENT_TOL)
                }
                Check::Hessian => {
                    let (inst, x) = random_instance(seed, 50, 10)?;
                    let e = hessian_errors(&inst, &x, FD_STEP)?;
                    let worst = e.cent_fd.max(e.exp_fd).max(e.total_fd);
                    (worst, HESSIAN_FD_TOL, e.passed())
                }
                Check::Psd => {
                    let l = LEVELS[case % LEVELS.len()];
                    let lo = planted_min_eigenvalue(&planted_spec(seed, l), 8)?;
                    (lo / l, 0.99, lo >= 0.99 * l)
                }
                Check::Sandwich => {
                    let (lo, hi) = sandwich_range(&planted_spec(seed, 1.0))?;
                    let dev = (1.0 - lo).max(hi - 1.0);
                    (dev, 0.01, lo >= 0.99 && hi <= 1.01)
                }
                Check::Lipschitz => {
                    let planted = generate_planted(&planted_spec(seed, 1.0))?;
                    let probe = lipschitz_probe(
                        &planted.instance,
                        &LipschitzOptions {
                            num_pairs: 4,
                            seed,
                            ..LipschitzOptions::default()
                        },
                    )?;
                    let spread = probe.multiscale_spread().into_iter().fold(1.0, f64::max);
                    (spread, 2.0, spread <= 2.0 && probe.max_ratio.is_finite())
                }
                Check::Convergence => {
                    let planted = generate_planted(&planted_spec(seed, 1.0))?;
                    let x0 = perturbed_start(&planted.x_star, 1e-3, derive_seed(seed, 1));
                    let cfg = SolverConfig::default();
                    let trace = solve(&planted.instance, &x0, &cfg)?;
                    let audit = convergence_audit(&trace, cfg.epsilon)?;
                    let contracting = trace
                        .contraction_ratios(cfg.epsilon)
                        .iter()
                        .all(|&r| r <= 0.5);
                    let err = trace.last().err_to_opt.unwrap_or(f64::INFINITY);
                    (err, cfg.epsilon, audit && contracting)
                }
            };
            rows.push(CheckRow {
                check,
                case,
                metric: row.0,
                threshold: row.1,
                passed: row.2,
            });
        }
    }
    Ok(SuiteReport { rows })
}
