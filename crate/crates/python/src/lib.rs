//! Python bindings. Vectors cross the boundary as `list[float]` and matrices
//! as row-major `list[list[float]]`.

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;

use attreg_core::calculus::{gradient, hessian_total};
use attreg_core::experiments::{generate_planted as core_generate, perturbed_start, GeneratorSpec};
use attreg_core::model::loss_total;
use attreg_core::nce::{
    mi_lower_bound, nce_gradients, nce_loss as core_nce_loss, BoundKind, NceBatch,
};
use attreg_core::newton::{approx_hessian as core_approx, solve as core_solve, SketchParams};
use attreg_core::suite::{parse_checks, run_suite, SuiteOptions};
use attreg_core::verify::{psd_check as core_psd, sandwich_check as core_sandwich};
use attreg_core::{
    Error, HessianMode, Matrix, ModelState, ProblemInstance, RegMode, SolverConfig, Terms, Vector,
};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::Overflow { .. }
        | Error::SingularHessian { .. }
        | Error::NonFiniteIterate(_)
        | Error::SamplingDegenerate { .. }
        | Error::NonFiniteEvaluation(_) => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Matrix> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("matrix rows must have equal length"));
    }
    Ok(Matrix::from_fn(n, d, |i, j| rows[i][j]))
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn vector(v: Vec<f64>) -> Vector {
    Vector::from_vec(v)
}

fn list(v: &Vector) -> Vec<f64> {
    v.as_slice().to_vec()
}

/// A regression instance `(A, b, w)` with optional planted optimum.
#[pyclass(name = "Instance", module = "attreg", from_py_object)]
#[derive(Clone)]
struct PyInstance {
    inner: ProblemInstance,
}

#[pymethods]
impl PyInstance {
    #[new]
    #[pyo3(signature = (a, b, w, x_star=None, centered=false, terms=(true, true, true)))]
    fn new(
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        w: Vec<f64>,
        x_star: Option<Vec<f64>>,
        centered: bool,
        terms: (bool, bool, bool),
    ) -> PyResult<Self> {
        let mode = if centered {
            RegMode::Centered
        } else {
            RegMode::Paper
        };
        let terms = Terms {
            exp: terms.0,
            cent: terms.1,
            reg: terms.2,
        };
        let inner = ProblemInstance::with_options(
            matrix(&a)?,
            vector(b),
            vector(w),
            terms,
            mode,
            x_star.map(vector),
        )
        .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn x_star(&self) -> Option<Vec<f64>> {
        self.inner.x_star().map(list)
    }

    /// Softmax `f(x) = softmax(Ax)`.
    fn softmax(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let state = ModelState::new(&self.inner, &vector(x)).map_err(to_py)?;
        Ok(list(state.f()))
    }

    /// `(l_exp, l_cent, l_reg, total)`.
    fn loss(&self, x: Vec<f64>) -> PyResult<(f64, f64, f64, f64)> {
        let l = loss_total(&self.inner, &vector(x)).map_err(to_py)?;
        Ok((l.l_exp, l.l_cent, l.l_reg, l.total))
    }

    fn gradient(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let state = ModelState::new(&self.inner, &vector(x)).map_err(to_py)?;
        Ok(list(&gradient(&self.inner, &state).map_err(to_py)?.g_total))
    }

    fn hessian(&self, x: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let state = ModelState::new(&self.inner, &vector(x)).map_err(to_py)?;
        Ok(rows(
            &hessian_total(&state, &self.inner).map_err(to_py)?.h_total,
        ))
    }

    /// Row-sampled Hessian at `x`; returns `(matrix, rows_kept)`.
    #[pyo3(signature = (x, sample_epsilon=0.1, delta=0.01, seed=0, budget=None))]
    fn approx_hessian(
        &self,
        x: Vec<f64>,
        sample_epsilon: f64,
        delta: f64,
        seed: u64,
        budget: Option<usize>,
    ) -> PyResult<(Vec<Vec<f64>>, usize)> {
        let state = ModelState::new(&self.inner, &vector(x)).map_err(to_py)?;
        let params = SketchParams {
            sample_epsilon,
            delta,
            seed,
            budget,
        };
        let s = core_approx(&self.inner, &state, &params).map_err(to_py)?;
        Ok((rows(&s.matrix), s.rows_kept))
    }

    fn __repr__(&self) -> String {
        format!("Instance(n={}, d={})", self.inner.n(), self.inner.d())
    }
}

/// Planted instance with known optimum; returns `(instance, x_star)`.
#[pyfunction]
#[pyo3(signature = (n=20, d=5, conditioning=2.0, norm_cap_r=4.0, ridge_l=1.0, seed=0))]
fn generate_planted(
    n: usize,
    d: usize,
    conditioning: f64,
    norm_cap_r: f64,
    ridge_l: f64,
    seed: u64,
) -> PyResult<(PyInstance, Vec<f64>)> {
    let spec = GeneratorSpec {
        n,
        d,
        conditioning,
        norm_cap_r,
        ridge_l,
        seed,
    };
    let p = core_generate(&spec).map_err(to_py)?;
    Ok((PyInstance { inner: p.instance }, list(&p.x_star)))
}

#[pyfunction]
fn start_near(x_star: Vec<f64>, radius: f64, seed: u64) -> Vec<f64> {
    list(&perturbed_start(&vector(x_star), radius, seed))
}

/// Newton solve. Returns a dict with `converged`, `iterations`, `x`, and
/// per-iterate `loss`, `grad_norm`, `err_to_opt` lists.
#[pyfunction]
#[pyo3(signature = (instance, x0, epsilon=1e-10, sampled=false, sample_epsilon=0.1, delta=0.01, max_iters=100, seed=0))]
#[allow(clippy::too_many_arguments)]
fn solve<'py>(
    py: Python<'py>,
    instance: &PyInstance,
    x0: Vec<f64>,
    epsilon: f64,
    sampled: bool,
    sample_epsilon: f64,
    delta: f64,
    max_iters: usize,
    seed: u64,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let cfg = SolverConfig {
        epsilon,
        delta,
        mode: if sampled {
            HessianMode::Sampled
        } else {
            HessianMode::Exact
        },
        sample_epsilon,
        max_iters,
        seed,
        degenerate_fallback: false,
    };
    let trace = core_solve(&instance.inner, &vector(x0), &cfg).map_err(to_py)?;
    let out = pyo3::types::PyDict::new(py);
    out.set_item("converged", trace.converged)?;
    out.set_item("iterations", trace.iterations_run)?;
    out.set_item("x", list(&trace.last().x))?;
    out.set_item(
        "loss",
        trace.iterates.iter().map(|r| r.loss).collect::<Vec<_>>(),
    )?;
    out.set_item(
        "grad_norm",
        trace
            .iterates
            .iter()
            .map(|r| r.grad_norm)
            .collect::<Vec<_>>(),
    )?;
    out.set_item(
        "err_to_opt",
        trace
            .iterates
            .iter()
            .map(|r| r.err_to_opt)
            .collect::<Vec<_>>(),
    )?;
    Ok(out)
}

/// `(eigmin, eigmax, passed)` for the test `H ⪰ l·I`.
#[pyfunction]
fn psd_check(h: Vec<Vec<f64>>, l: f64) -> PyResult<(f64, f64, bool)> {
    let r = core_psd(&matrix(&h)?, l).map_err(to_py)?;
    Ok((r.eigmin, r.eigmax, r.passed))
}

/// `lo·mid ⪯ lhs ⪯ hi·mid`.
#[pyfunction]
#[pyo3(signature = (lhs, mid, lo=0.99, hi=1.01))]
fn sandwich_check(lhs: Vec<Vec<f64>>, mid: Vec<Vec<f64>>, lo: f64, hi: f64) -> PyResult<bool> {
    core_sandwich(&matrix(&lhs)?, &matrix(&mid)?, lo, hi).map_err(to_py)
}

fn batch(
    anchor: Vec<f64>,
    positive: Vec<f64>,
    negatives: Vec<Vec<f64>>,
    weight: Vec<Vec<f64>>,
) -> PyResult<NceBatch> {
    NceBatch::new(
        vector(anchor),
        vector(positive),
        negatives.into_iter().map(vector).collect(),
        matrix(&weight)?,
    )
    .map_err(to_py)
}

/// InfoNCE term for one batch with bilinear critic `W`.
#[pyfunction]
fn nce_loss(
    anchor: Vec<f64>,
    positive: Vec<f64>,
    negatives: Vec<Vec<f64>>,
    weight: Vec<Vec<f64>>,
) -> PyResult<f64> {
    Ok(core_nce_loss(&batch(anchor, positive, negatives, weight)?))
}

/// `log K + nce`, the representation-side lower bound.
#[pyfunction]
fn representation_bound(
    anchor: Vec<f64>,
    positive: Vec<f64>,
    negatives: Vec<Vec<f64>>,
    weight: Vec<Vec<f64>>,
) -> PyResult<f64> {
    Ok(mi_lower_bound(
        &batch(anchor, positive, negatives, weight)?,
        BoundKind::Representation,
    )
    .value)
}

/// Gradients `(dW, d_anchor)` of the InfoNCE term.
#[pyfunction]
fn nce_grad(
    anchor: Vec<f64>,
    positive: Vec<f64>,
    negatives: Vec<Vec<f64>>,
    weight: Vec<Vec<f64>>,
) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let g = nce_gradients(&batch(anchor, positive, negatives, weight)?);
    Ok((rows(&g.weight), list(&g.anchor)))
}

/// Runs the oracle suite; returns `(all_passed, table)`.
#[pyfunction]
#[pyo3(signature = (seed=0, instances=10, checks="all"))]
fn verify(seed: u64, instances: usize, checks: &str) -> PyResult<(bool, String)> {
    let opts = SuiteOptions {
        seed,
        instances,
        checks: parse_checks(checks).map_err(to_py)?,
        corrupt_gradient: false,
    };
    let report = run_suite(&opts).map_err(to_py)?;
    Ok((report.all_passed(), report.table()))
}

#[pymodule]
fn attreg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyInstance>()?;
    m.add_function(wrap_pyfunction!(generate_planted, m)?)?;
    m.add_function(wrap_pyfunction!(start_near, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(psd_check, m)?)?;
    m.add_function(wrap_pyfunction!(sandwich_check, m)?)?;
    m.add_function(wrap_pyfunction!(nce_loss, m)?)?;
    m.add_function(wrap_pyfunction!(representation_bound, m)?)?;
    m.add_function(wrap_pyfunction!(nce_grad, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
