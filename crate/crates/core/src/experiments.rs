//! Synthetic instances and loss-landscape grids.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{canonical_sign, sorted_eigh, spectral_norm};
use crate::model::{
    loss_total, LossBreakdown, Matrix, ModelState, ProblemInstance, RegMode, Terms, Vector,
};
use crate::verify::{ball_points, kernel_bound, random_unit, ridge_weights};

/// Multiplier on the empirical kernel bound when sizing ridge weights.
pub const RIDGE_FACTOR: f64 = 100.0;

/// Points (besides `x*`) used to estimate the kernel bound.
pub const KERNEL_PROBES: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n: usize,
    pub d: usize,
    /// Target `σ_max(A) / σ_min(A)`.
    pub conditioning: f64,
    /// Caps `‖A‖`, `‖b‖₂` and `‖x*‖₂`.
    pub norm_cap_r: f64,
    /// Planted strong-convexity level `l`.
    pub ridge_l: f64,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            n: 20,
            d: 5,
            conditioning: 2.0,
            norm_cap_r: 4.0,
            ridge_l: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlantedInstance {
    pub instance: ProblemInstance,
    pub x_star: Vector,
    /// Empirical `K̂ = max ‖B_cent + B_exp‖` over the probe points.
    pub kernel_bound: f64,
    pub sigma_min: f64,
}

const GENERATION_ATTEMPTS: usize = 100;

fn orthonormal_columns(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let g = Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
    g.qr().q()
}

impl GeneratorSpec {
    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::InvalidConfig("n and d must be positive".into()));
        }
        if self.n < self.d {
            return Err(Error::InvalidConfig(format!(
                "planted instances need n >= d (n {}, d {})",
                self.n, self.d
            )));
        }
        if !(self.conditioning >= 1.0 && self.conditioning.is_finite()) {
            return Err(Error::InvalidConfig("conditioning must be >= 1".into()));
        }
        if !(self.norm_cap_r >= 1.0 && self.norm_cap_r.is_finite()) {
            return Err(Error::InvalidConfig("norm_cap_r must be >= 1".into()));
        }
        if !(self.ridge_l >= 0.0 && self.ridge_l.is_finite()) {
            return Err(Error::InvalidConfig("ridge_l must be >= 0".into()));
        }
        Ok(())
    }

    /// Largest singular value given to `A`.
    pub fn a_norm(&self) -> f64 {
        self.norm_cap_r.min(1.0)
    }
}

/// Builds a planted instance whose `x*` is an exact stationary point.
///
/// `A = U Σ Vᵀ` has geometrically spaced singular values from `‖A‖ = 1` down
/// to `1 / conditioning`; `b = f(x*)` so the squared-error residual and the
/// cross-entropy gradient both vanish at `x*`, and the ridge term is centered
/// at `x*`. Ridge weights follow `w_i² = 100 K̂ + l / σ_min(A)²` with `K̂`
/// measured over `x*` and points drawn from the radius-`R` ball.
pub fn generate_planted(spec: &GeneratorSpec) -> Result<PlantedInstance> {
    spec.validate()?;
    let (n, d) = (spec.n, spec.d);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let top = spec.a_norm();

    let mut a = None;
    for _ in 0..GENERATION_ATTEMPTS {
        let u = orthonormal_columns(n, d, &mut rng);
        let v = orthonormal_columns(d, d, &mut rng);
        let sig = Vector::from_fn(d, |j, _| {
            if d == 1 {
                top
            } else {
                top * spec.conditioning.powf(-(j as f64) / (d - 1) as f64)
            }
        });
        let cand = &u * Matrix::from_diagonal(&sig) * v.transpose();
        let sv = cand.clone().singular_values();
        let achieved = sv.max() / sv.min();
        if (achieved / spec.conditioning - 1.0).abs() < 1e-8 && sv.max() <= spec.norm_cap_r {
            a = Some(cand);
            break;
        }
    }
    let a = a.ok_or_else(|| {
        Error::GenerationFailure(format!(
            "conditioning {} not reached in {GENERATION_ATTEMPTS} draws",
            spec.conditioning
        ))
    })?;
    let sigma_min = a.clone().singular_values().min();

    let radius = top * rng.random_range(0.5..1.0);
    let x_star = random_unit(d, &mut rng) * radius;
    let probe = ProblemInstance::new(a.clone(), Vector::zeros(n), Vector::zeros(n))?;
    let b = ModelState::new(&probe, &x_star)?.f().clone();

    let unweighted = ProblemInstance::with_options(
        a,
        b,
        Vector::zeros(n),
        Terms::default(),
        RegMode::Centered,
        Some(x_star.clone()),
    )?;
    let mut points = ball_points(d, spec.norm_cap_r, KERNEL_PROBES, &mut rng);
    points.push(x_star.clone());
    let k_hat = kernel_bound(&unweighted, &points)?;
    let w = ridge_weights(&unweighted, k_hat, spec.ridge_l, RIDGE_FACTOR)?;
    let instance = unweighted.with_weights(w)?;
    Ok(PlantedInstance {
        instance,
        x_star,
        kernel_bound: k_hat,
        sigma_min,
    })
}

/// Start point `x* + radius · v` for a seeded random unit `v`.
pub fn perturbed_start(x_star: &Vector, radius: f64, seed: u64) -> Vector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    x_star + random_unit(x_star.len(), &mut rng) * radius
}

/// A random (non-planted) instance for derivative checks, plus a point `x`.
///
/// `n ≤ max_n`, `d ≤ max_d`, `‖A‖ ∈ [0.5, 2]`, `‖x‖ ≤ 2`, `b ≥ 0` with mass
/// near one and ridge weights in `[0, 1)`.
pub fn random_instance(seed: u64, max_n: usize, max_d: usize) -> Result<(ProblemInstance, Vector)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=max_n.max(2));
    let d = rng.random_range(1..=max_d.max(1));
    let g = Matrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
    let scale = rng.random_range(0.5..2.0) / spectral_norm(&g);
    let a = g * scale;
    let b = Vector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 / n as f64);
    let w = Vector::from_fn(n, |_, _| rng.random::<f64>());
    let x = random_unit(d, &mut rng) * rng.random_range(0.0..2.0);
    Ok((ProblemInstance::new(a, b, w)?, x))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LandscapeGrid {
    pub center: Vector,
    pub dir_u: Vector,
    pub dir_v: Vector,
    pub half_width: f64,
    pub resolution: usize,
    /// Offsets along each axis, from `−half_width` to `half_width`.
    pub coords: Vec<f64>,
    /// `values[i][j]` is the loss at `center + coords[i] u + coords[j] v`.
    pub values: Vec<Vec<LossBreakdown>>,
}

impl LandscapeGrid {
    /// Rows `(u, v, breakdown)` in row-major order.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, &LossBreakdown)> {
        self.values.iter().enumerate().flat_map(move |(i, row)| {
            row.iter()
                .enumerate()
                .map(move |(j, val)| (self.coords[i], self.coords[j], val))
        })
    }
}

/// The two leading right singular vectors of `A`, sign-normalized.
pub fn default_directions(inst: &ProblemInstance) -> Result<(Vector, Vector)> {
    let d = inst.d();
    if d < 2 {
        return Err(Error::InvalidConfig(
            "default landscape directions need d >= 2".into(),
        ));
    }
    let gram = inst.a().tr_mul(inst.a());
    let (_, vecs) = sorted_eigh(&gram);
    Ok((
        canonical_sign(vecs.column(d - 1).into_owned()),
        canonical_sign(vecs.column(d - 2).into_owned()),
    ))
}

/// Evaluates the loss breakdown on a square grid in the plane spanned by two
/// orthonormal directions through `center`.
pub fn landscape(
    inst: &ProblemInstance,
    center: &Vector,
    dir_u: &Vector,
    dir_v: &Vector,
    half_width: f64,
    resolution: usize,
) -> Result<LandscapeGrid> {
    if resolution < 2 {
        return Err(Error::InvalidConfig("resolution must be >= 2".into()));
    }
    if !(half_width >= 0.0 && half_width.is_finite()) {
        return Err(Error::InvalidConfig("half_width must be >= 0".into()));
    }
    let d = inst.d();
    for (what, v) in [("center", center), ("dir_u", dir_u), ("dir_v", dir_v)] {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                what,
                expected: d,
                got: v.len(),
            });
        }
    }
    if (dir_u.norm() - 1.0).abs() > 1e-12
        || (dir_v.norm() - 1.0).abs() > 1e-12
        || dir_u.dot(dir_v).abs() > 1e-12
    {
        return Err(Error::InvalidConfig(
            "directions must be orthonormal".into(),
        ));
    }
    let coords: Vec<f64> = (0..resolution)
        .map(|i| -half_width + 2.0 * half_width * i as f64 / (resolution - 1) as f64)
        .collect();
    let values = coords
        .iter()
        .map(|&cu| {
            coords
                .iter()
                .map(|&cv| loss_total(inst, &(center + dir_u * cu + dir_v * cv)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LandscapeGrid {
        center: center.clone(),
        dir_u: dir_u.clone(),
        dir_v: dir_v.clone(),
        half_width,
        resolution,
        coords,
        values,
    })
}

/// Entrywise mean of grids that share their shape.
pub fn average_grids(grids: &[LandscapeGrid]) -> Result<LandscapeGrid> {
    let first = grids
        .first()
        .ok_or_else(|| Error::InvalidConfig("no grids to average".into()))?;
    if grids.iter().any(|g| g.resolution != first.resolution) {
        return Err(Error::InvalidConfig("grid resolutions differ".into()));
    }
    let k = grids.len() as f64;
    let mut out = first.clone();
    for i in 0..first.resolution {
        for j in 0..first.resolution {
            let mut acc = [0.0; 3];
            for g in grids {
                let v = g.values[i][j];
                acc[0] += v.l_exp;
                acc[1] += v.l_cent;
                acc[2] += v.l_reg;
            }
            let (e, c, r) = (acc[0] / k, acc[1] / k, acc[2] / k);
            out.values[i][j] = LossBreakdown {
                l_exp: e,
                l_cent: c,
                l_reg: r,
                total: e + c + r,
            };
        }
    }
    Ok(out)
}
