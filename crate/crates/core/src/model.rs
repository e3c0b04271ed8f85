//! Problem data and the softmax-regression objectives.
//!
//! An instance holds a design matrix `A` (n × d), a target `b` and ridge
//! weights `w`. For a parameter `x` the model computes `u(x) = exp(Ax)`, the
//! normalizer `α(x) = ⟨u(x), 1⟩` and the softmax prediction `f(x) = u(x) / α(x)`.
//! The total objective is `L_exp + L_cent + L_reg` with
//!
//! * `L_exp  = ½‖f(x) − b‖²`
//! * `L_cent = −⟨b, log f(x)⟩`
//! * `L_reg  = ½‖W A x‖²`, `W = diag(w)`
//!
//! `f` and `log f` are always evaluated with the max-subtracted logits, so they
//! stay finite in regimes where the raw `u` overflows.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Largest logit whose exponential is representable as an `f64`.
pub const MAX_EXPONENT: f64 = 709.782_712_893_384;

/// Which loss components contribute to the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Terms {
    pub exp: bool,
    pub cent: bool,
    pub reg: bool,
}

impl Default for Terms {
    fn default() -> Self {
        Self {
            exp: true,
            cent: true,
            reg: true,
        }
    }
}

impl Terms {
    pub const REG_ONLY: Terms = Terms {
        exp: false,
        cent: false,
        reg: true,
    };
}

/// How the ridge term is anchored.
///
/// `Paper` is `½‖WAx‖²`. `Centered` is `½‖WA(x − x*)‖²`, used by planted
/// instances so that the known `x*` is an exact stationary point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegMode {
    #[default]
    Paper,
    Centered,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemInstance {
    a: Matrix,
    b: Vector,
    w: Vector,
    terms: Terms,
    reg_mode: RegMode,
    x_star: Option<Vector>,
}

fn ensure_finite(what: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFiniteInput(format!(
            "{what}[{i}] = {}",
            values[i]
        ))),
        None => Ok(()),
    }
}

impl ProblemInstance {
    /// Builds an instance with all three loss terms enabled and the uncentered
    /// ridge form.
    pub fn new(a: Matrix, b: Vector, w: Vector) -> Result<Self> {
        Self::with_options(a, b, w, Terms::default(), RegMode::Paper, None)
    }

    pub fn with_options(
        a: Matrix,
        b: Vector,
        w: Vector,
        terms: Terms,
        reg_mode: RegMode,
        x_star: Option<Vector>,
    ) -> Result<Self> {
        let (n, d) = a.shape();
        if n == 0 || d == 0 {
            return Err(Error::InvalidConfig(format!(
                "matrix must be non-empty, got {n}x{d}"
            )));
        }
        check_len("b", n, b.len())?;
        check_len("w", n, w.len())?;
        ensure_finite("A", a.as_slice())?;
        ensure_finite("b", b.as_slice())?;
        ensure_finite("w", w.as_slice())?;
        if terms.cent {
            if let Some(i) = b.iter().position(|&v| v < 0.0) {
                return Err(Error::Domain(format!(
                    "cross-entropy requires b >= 0, found b[{i}] = {}",
                    b[i]
                )));
            }
        }
        if let Some(xs) = &x_star {
            check_len("x_star", d, xs.len())?;
            ensure_finite("x_star", xs.as_slice())?;
        }
        if reg_mode == RegMode::Centered && x_star.is_none() {
            return Err(Error::InvalidConfig(
                "centered ridge mode requires x_star".into(),
            ));
        }
        Ok(Self {
            a,
            b,
            w,
            terms,
            reg_mode,
            x_star,
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn d(&self) -> usize {
        self.a.ncols()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Vector {
        &self.b
    }

    pub fn w(&self) -> &Vector {
        &self.w
    }

    pub fn terms(&self) -> Terms {
        self.terms
    }

    pub fn reg_mode(&self) -> RegMode {
        self.reg_mode
    }

    pub fn x_star(&self) -> Option<&Vector> {
        self.x_star.as_ref()
    }

    /// Same data with a different set of active loss terms.
    pub fn with_terms(&self, terms: Terms) -> Result<Self> {
        Self::with_options(
            self.a.clone(),
            self.b.clone(),
            self.w.clone(),
            terms,
            self.reg_mode,
            self.x_star.clone(),
        )
    }

    /// Same data with replaced ridge weights.
    pub fn with_weights(&self, w: Vector) -> Result<Self> {
        Self::with_options(
            self.a.clone(),
            self.b.clone(),
            w,
            self.terms,
            self.reg_mode,
            self.x_star.clone(),
        )
    }

    /// `x − x*` in centered mode, `x` otherwise.
    pub(crate) fn reg_offset(&self, x: &Vector) -> Vector {
        match (self.reg_mode, &self.x_star) {
            (RegMode::Centered, Some(xs)) => x - xs,
            _ => x.clone(),
        }
    }

    pub(crate) fn check_x(&self, x: &Vector) -> Result<()> {
        check_len("x", self.d(), x.len())?;
        ensure_finite("x", x.as_slice())
    }

    /// `A_{*,i}` as an owned vector.
    pub fn column(&self, i: usize) -> Result<Vector> {
        if i >= self.d() {
            return Err(Error::IndexOutOfRange {
                index: i,
                dim: self.d(),
            });
        }
        Ok(self.a.column(i).into_owned())
    }
}

/// Evaluation of the softmax map at one point, shared by every loss and
/// derivative so `Ax` is formed once.
///
/// `α` is stored scaled by `exp(−shift)` with `shift = max(Ax)`; the
/// raw values are recovered on demand and fail on exponent overflow.
#[derive(Clone, Debug)]
pub struct ModelState {
    x: Vector,
    logits: Vector,
    shift: f64,
    alpha_scaled: f64,
    f: Vector,
    log_f: Vector,
}

impl ModelState {
    pub fn new(inst: &ProblemInstance, x: &Vector) -> Result<Self> {
        inst.check_x(x)?;
        let logits = inst.a() * x;
        ensure_finite("Ax", logits.as_slice())?;
        let shift = logits.max();
        let u_scaled = logits.map(|z| (z - shift).exp());
        let alpha_scaled = u_scaled.sum();
        let f = &u_scaled / alpha_scaled;
        let log_alpha_scaled = alpha_scaled.ln();
        let log_f = logits.map(|z| z - shift - log_alpha_scaled);
        Ok(Self {
            x: x.clone(),
            logits,
            shift,
            alpha_scaled,
            f,
            log_f,
        })
    }

    pub fn x(&self) -> &Vector {
        &self.x
    }

    /// `Ax`.
    pub fn logits(&self) -> &Vector {
        &self.logits
    }

    pub fn f(&self) -> &Vector {
        &self.f
    }

    pub fn log_f(&self) -> &Vector {
        &self.log_f
    }

    /// `log α(x)`, finite even when `α` itself overflows.
    pub fn log_alpha(&self) -> f64 {
        self.shift + self.alpha_scaled.ln()
    }

    /// Raw `u(x) = exp(Ax)`.
    pub fn u(&self) -> Result<Vector> {
        if let Some((index, &value)) = self
            .logits
            .iter()
            .enumerate()
            .find(|(_, &z)| z > MAX_EXPONENT)
        {
            return Err(Error::Overflow { index, value });
        }
        Ok(self.logits.map(f64::exp))
    }

    /// Raw `α(x) = ⟨u(x), 1⟩`.
    pub fn alpha(&self) -> Result<f64> {
        evaluate_alpha(&self.u()?)
    }
}

/// `u(x) = exp(Ax)` entrywise.
pub fn evaluate_u(inst: &ProblemInstance, x: &Vector) -> Result<Vector> {
    ModelState::new(inst, x)?.u()
}

fn ensure_positive(u: &Vector) -> Result<()> {
    match u.iter().position(|&v| !(v > 0.0)) {
        Some(i) => Err(Error::Domain(format!(
            "entries must be strictly positive, found [{i}] = {}",
            u[i]
        ))),
        None => Ok(()),
    }
}

/// `α = Σ u_i`.
pub fn evaluate_alpha(u: &Vector) -> Result<f64> {
    ensure_positive(u)?;
    let alpha = u.sum();
    if !alpha.is_finite() {
        return Err(Error::Domain("sum of u overflows".into()));
    }
    Ok(alpha)
}

/// `f = u / ⟨u, 1⟩`.
pub fn evaluate_f(u: &Vector) -> Result<Vector> {
    let alpha = evaluate_alpha(u)?;
    Ok(u / alpha)
}

pub fn hadamard(x: &Vector, y: &Vector) -> Result<Vector> {
    check_len("hadamard operand", x.len(), y.len())?;
    Ok(x.component_mul(y))
}

/// `½‖f − b‖²`.
pub fn loss_exp(f: &Vector, b: &Vector) -> Result<f64> {
    check_len("b", f.len(), b.len())?;
    Ok(0.5 * (f - b).norm_squared())
}

/// `−⟨b, log f⟩`. Requires `f > 0`.
pub fn loss_cent(f: &Vector, b: &Vector) -> Result<f64> {
    check_len("b", f.len(), b.len())?;
    ensure_positive(f)?;
    Ok(-f
        .iter()
        .zip(b.iter())
        .map(|(fi, bi)| bi * fi.ln())
        .sum::<f64>())
}

/// `½ Σ_i (w_i (A x)_i)²`, with `x` replaced by `x − x*` in centered mode.
pub fn loss_reg(inst: &ProblemInstance, x: &Vector) -> Result<f64> {
    inst.check_x(x)?;
    let ax = inst.a() * inst.reg_offset(x);
    Ok(0.5 * ax.component_mul(inst.w()).norm_squared())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_exp: f64,
    pub l_cent: f64,
    pub l_reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn from_parts(l_exp: f64, l_cent: f64, l_reg: f64) -> Self {
        Self {
            l_exp,
            l_cent,
            l_reg,
            total: l_exp + l_cent + l_reg,
        }
    }
}

/// Loss components at a precomputed state. Disabled terms report 0.
pub fn loss_breakdown(inst: &ProblemInstance, state: &ModelState) -> Result<LossBreakdown> {
    let terms = inst.terms();
    let l_exp = if terms.exp {
        loss_exp(state.f(), inst.b())?
    } else {
        0.0
    };
    let l_cent = if terms.cent {
        -state.log_f().dot(inst.b())
    } else {
        0.0
    };
    let l_reg = if terms.reg {
        loss_reg(inst, state.x())?
    } else {
        0.0
    };
    Ok(LossBreakdown::from_parts(l_exp, l_cent, l_reg))
}

pub fn loss_total(inst: &ProblemInstance, x: &Vector) -> Result<LossBreakdown> {
    let state = ModelState::new(inst, x)?;
    loss_breakdown(inst, &state)
}

/// `‖Ax − b‖₂`.
pub fn residual_linear(inst: &ProblemInstance, x: &Vector) -> Result<f64> {
    inst.check_x(x)?;
    Ok((inst.a() * x - inst.b()).norm())
}

/// `‖u(x) − b‖₂`.
pub fn residual_exponential(inst: &ProblemInstance, x: &Vector) -> Result<f64> {
    Ok((evaluate_u(inst, x)? - inst.b()).norm())
}

/// `‖u(x) − ⟨u(x), 1⟩ b‖₂`.
pub fn residual_rescaled(inst: &ProblemInstance, x: &Vector) -> Result<f64> {
    let u = evaluate_u(inst, x)?;
    let alpha = evaluate_alpha(&u)?;
    Ok((&u - inst.b() * alpha).norm())
}

/// `‖⟨u(x), 1⟩⁻¹ u(x) − b‖₂`, evaluated through the overflow-safe `f`.
pub fn residual_softmax(inst: &ProblemInstance, x: &Vector) -> Result<f64> {
    let state = ModelState::new(inst, x)?;
    Ok((state.f() - inst.b()).norm())
}
