//! Closed-form first and second derivatives of `f`, `log f` and the loss terms.
//!
//! Every Hessian is written as a congruence `Aᵀ K A` with an n × n kernel `K`:
//!
//! * cross-entropy: `B_cent(x) = ⟨1, b⟩ (diag(f) − f fᵀ)`
//! * squared error: `B_exp(x) = S² + P diag(r ∘ f) Pᵀ − ⟨r, f⟩ S` with
//!   `S = diag(f) − f fᵀ`, `r = f − b`, `P = I − f 1ᵀ`
//! * ridge: `W²`
//!
//! The squared-error kernel comes from the product rule on `⟨∂f/∂x_i, f − b⟩`:
//! the Gauss-Newton part `JᵀJ = Aᵀ S² A` plus the curvature of each `f_k`
//! weighted by its residual.

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};
use crate::model::{Matrix, ModelState, ProblemInstance, Vector};

#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub g_exp: Vector,
    pub g_cent: Vector,
    pub g_reg: Vector,
    pub g_total: Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HessianBundle {
    /// Cross-entropy kernel `B_cent(x)`.
    pub b: Matrix,
    pub h_cent: Matrix,
    pub h_reg: Matrix,
    pub h_exp: Matrix,
    pub h_total: Matrix,
}

fn check_index(inst: &ProblemInstance, i: usize) -> Result<()> {
    if i < inst.d() {
        Ok(())
    } else {
        Err(Error::IndexOutOfRange {
            index: i,
            dim: inst.d(),
        })
    }
}

fn check_state(state: &ModelState, inst: &ProblemInstance) -> Result<()> {
    check_len("state", inst.n(), state.f().len())
}

/// `⟨f, A_{*,i}⟩`, the mean of column `i` under `f`.
fn col_mean(state: &ModelState, inst: &ProblemInstance, i: usize) -> f64 {
    state.f().dot(&inst.a().column(i))
}

/// `∂f/∂x_i = −⟨f, A_{*,i}⟩ f + f ∘ A_{*,i}`.
pub fn grad_f_dir(state: &ModelState, inst: &ProblemInstance, i: usize) -> Result<Vector> {
    check_state(state, inst)?;
    check_index(inst, i)?;
    let f = state.f();
    let col = inst.a().column(i);
    let mean = f.dot(&col);
    Ok(f.component_mul(&col) - f * mean)
}

/// `⟨∂f/∂x_i, A_{*,j}⟩ = −⟨f, A_{*,i}⟩⟨f, A_{*,j}⟩ + ⟨f, A_{*,i} ∘ A_{*,j}⟩`,
/// the covariance of columns `i` and `j` under `f`.
pub fn grad_f_inner(state: &ModelState, inst: &ProblemInstance, i: usize, j: usize) -> Result<f64> {
    check_state(state, inst)?;
    check_index(inst, i)?;
    check_index(inst, j)?;
    let f = state.f();
    let (ci, cj) = (inst.a().column(i), inst.a().column(j));
    Ok(-f.dot(&ci) * f.dot(&cj) + f.dot(&ci.component_mul(&cj)))
}

/// `∂ log f/∂x_i = −⟨f, A_{*,i}⟩ 1 + A_{*,i}`.
pub fn grad_log_f_dir(state: &ModelState, inst: &ProblemInstance, i: usize) -> Result<Vector> {
    check_state(state, inst)?;
    check_index(inst, i)?;
    let mean = col_mean(state, inst, i);
    Ok(inst.a().column(i).map(|a| a - mean))
}

/// Gradient of `L_cent`, entry `i` = `⟨f, A_{*,i}⟩⟨b, 1⟩ − ⟨A_{*,i}, b⟩`.
pub fn grad_cent(state: &ModelState, inst: &ProblemInstance) -> Result<Vector> {
    check_state(state, inst)?;
    let b = inst.b();
    let mass = b.sum();
    Ok(Vector::from_fn(inst.d(), |i, _| {
        let col = inst.a().column(i);
        state.f().dot(&col) * mass - col.dot(b)
    }))
}

/// Gradient of `L_cent` in matrix form, `Aᵀ(⟨b, 1⟩ f − b)`.
pub fn grad_cent_matrix_form(state: &ModelState, inst: &ProblemInstance) -> Result<Vector> {
    check_state(state, inst)?;
    let b = inst.b();
    Ok(inst.a().tr_mul(&(state.f() * b.sum() - b)))
}

/// Gradient of `L_exp`, entry `i` = `⟨∂f/∂x_i, f − b⟩`, i.e. `Aᵀ S (f − b)`.
pub fn grad_exp(state: &ModelState, inst: &ProblemInstance) -> Result<Vector> {
    check_state(state, inst)?;
    let f = state.f();
    let r = f - inst.b();
    let sr = f.component_mul(&r) - f * f.dot(&r);
    Ok(inst.a().tr_mul(&sr))
}

/// Gradient of `L_reg`, `Aᵀ W² A x` (with `x − x*` in centered mode).
pub fn grad_reg(inst: &ProblemInstance, x: &Vector) -> Result<Vector> {
    check_len("x", inst.d(), x.len())?;
    let w2 = inst.w().map(|w| w * w);
    let ax = inst.a() * inst.reg_offset(x);
    Ok(inst.a().tr_mul(&ax.component_mul(&w2)))
}

/// Gradient of every active term and their sum. Inactive terms are zero.
pub fn gradient(inst: &ProblemInstance, state: &ModelState) -> Result<GradientBundle> {
    let d = inst.d();
    let terms = inst.terms();
    let g_exp = if terms.exp {
        grad_exp(state, inst)?
    } else {
        Vector::zeros(d)
    };
    let g_cent = if terms.cent {
        grad_cent(state, inst)?
    } else {
        Vector::zeros(d)
    };
    let g_reg = if terms.reg {
        grad_reg(inst, state.x())?
    } else {
        Vector::zeros(d)
    };
    let g_total = &g_exp + &g_cent + &g_reg;
    Ok(GradientBundle {
        g_exp,
        g_cent,
        g_reg,
        g_total,
    })
}

/// The common coordinate of `∂² log f / ∂x_i ∂x_j`, which is a multiple of `1`:
/// `⟨f, A_{*,i}⟩⟨f, A_{*,j}⟩ − ⟨f, A_{*,i} ∘ A_{*,j}⟩`.
pub fn hessian_log_f_entry(
    state: &ModelState,
    inst: &ProblemInstance,
    i: usize,
    j: usize,
) -> Result<f64> {
    grad_f_inner(state, inst, i, j).map(|c| -c)
}

/// `diag(f) − f fᵀ`, the covariance of the categorical distribution `f`.
pub fn softmax_covariance(f: &Vector) -> Matrix {
    let n = f.len();
    let mut s = -(f * f.transpose());
    for k in 0..n {
        s[(k, k)] += f[k];
    }
    s
}

/// `B(x) = ⟨1, b⟩ (diag(f) − f fᵀ)`.
pub fn b_matrix(state: &ModelState, b: &Vector) -> Result<Matrix> {
    check_len("b", state.f().len(), b.len())?;
    Ok(softmax_covariance(state.f()) * b.sum())
}

/// Kernel of the `L_exp` Hessian, `S² + P diag(r ∘ f) Pᵀ − ⟨r, f⟩ S`.
pub fn exp_kernel(state: &ModelState, b: &Vector) -> Result<Matrix> {
    let f = state.f();
    check_len("b", f.len(), b.len())?;
    let n = f.len();
    let s = softmax_covariance(f);
    let r = f - b;
    let g = r.component_mul(f);
    // P diag(g) Pᵀ = diag(g) − f gᵀ − g fᵀ + (Σ g) f fᵀ
    let gsum = g.sum();
    let mut k = &s * &s;
    let rf = r.dot(f);
    for p in 0..n {
        for q in 0..n {
            let mut v = -f[p] * g[q] - g[p] * f[q] + gsum * f[p] * f[q] - rf * s[(p, q)];
            if p == q {
                v += g[p];
            }
            k[(p, q)] += v;
        }
    }
    Ok(symmetrize(k))
}

/// `(M + Mᵀ) / 2`, exactly symmetric.
pub fn symmetrize(m: Matrix) -> Matrix {
    let t = m.transpose();
    (m + t) * 0.5
}

/// `Aᵀ K A`, symmetrized.
pub fn congruence(a: &Matrix, kernel: &Matrix) -> Matrix {
    symmetrize(a.tr_mul(&(kernel * a)))
}

/// Hessian of `L_cent`, `Aᵀ B(x) A`.
pub fn hessian_cent(state: &ModelState, inst: &ProblemInstance) -> Result<Matrix> {
    check_state(state, inst)?;
    Ok(congruence(inst.a(), &b_matrix(state, inst.b())?))
}

/// Entry `(i, j)` of the `L_cent` Hessian from the scalar formula
/// `(−⟨f, A_i⟩⟨f, A_j⟩ + ⟨f, A_i ∘ A_j⟩) ⟨1, b⟩`.
pub fn hessian_cent_entry(
    state: &ModelState,
    inst: &ProblemInstance,
    i: usize,
    j: usize,
) -> Result<f64> {
    Ok(grad_f_inner(state, inst, i, j)? * inst.b().sum())
}

/// Hessian of `L_exp`.
pub fn hessian_exp(state: &ModelState, inst: &ProblemInstance) -> Result<Matrix> {
    check_state(state, inst)?;
    Ok(congruence(inst.a(), &exp_kernel(state, inst.b())?))
}

/// Hessian of `L_reg`, `Aᵀ W² A`.
pub fn hessian_reg(inst: &ProblemInstance) -> Matrix {
    congruence(inst.a(), &DMatrix::from_diagonal(&ridge_diag(inst)))
}

fn ridge_diag(inst: &ProblemInstance) -> Vector {
    inst.w().map(|w| w * w)
}

/// Kernel `D(x)` of the total Hessian `H = Aᵀ D A`, summed over active terms.
pub fn hessian_kernel(state: &ModelState, inst: &ProblemInstance) -> Result<Matrix> {
    check_state(state, inst)?;
    let n = inst.n();
    let terms = inst.terms();
    let mut d = Matrix::zeros(n, n);
    if terms.exp {
        d += exp_kernel(state, inst.b())?;
    }
    if terms.cent {
        d += b_matrix(state, inst.b())?;
    }
    if terms.reg {
        for (k, w2) in ridge_diag(inst).iter().enumerate() {
            d[(k, k)] += w2;
        }
    }
    Ok(d)
}

/// Every Hessian component and the total. Inactive terms are zero matrices;
/// `b` is always the cross-entropy kernel.
pub fn hessian_total(state: &ModelState, inst: &ProblemInstance) -> Result<HessianBundle> {
    check_state(state, inst)?;
    let d = inst.d();
    let terms = inst.terms();
    let b = b_matrix(state, inst.b())?;
    let h_cent = if terms.cent {
        congruence(inst.a(), &b)
    } else {
        Matrix::zeros(d, d)
    };
    let h_exp = if terms.exp {
        hessian_exp(state, inst)?
    } else {
        Matrix::zeros(d, d)
    };
    let h_reg = if terms.reg {
        hessian_reg(inst)
    } else {
        Matrix::zeros(d, d)
    };
    let h_total = &h_exp + &h_cent + &h_reg;
    Ok(HessianBundle {
        b,
        h_cent,
        h_reg,
        h_exp,
        h_total,
    })
}

/// Total Hessian at `x`.
pub fn hessian_at(inst: &ProblemInstance, x: &Vector) -> Result<Matrix> {
    let state = ModelState::new(inst, x)?;
    Ok(hessian_total(&state, inst)?.h_total)
}

/// Total gradient at `x`.
pub fn gradient_at(inst: &ProblemInstance, x: &Vector) -> Result<Vector> {
    let state = ModelState::new(inst, x)?;
    Ok(gradient(inst, &state)?.g_total)
}
