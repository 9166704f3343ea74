//! Python module `ftl_wave`.

use ftl::bvp::{self, BvpOptions, BvpProblem, BvpSolution};
use ftl::diagnostics::{self, Perturbation, StabilityOptions};
use ftl::macro_ref::{self, DEFAULT_WINDOW};
use ftl::moving_frame::{self, TravelOptions};
use ftl::sim::{self, SimOptions};
use ftl::{rates, Error, ModelParams, VelocityLaw};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Car length, speed limit and velocity law (linear unless `coeffs` is given).
#[pyclass(name = "Model", module = "ftl_wave", from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: ModelParams,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (ell, v = 1.0, coeffs = None, c0_hat = 0.0, c0_unit = 0.0))]
    fn new(
        ell: f64,
        v: f64,
        coeffs: Option<Vec<f64>>,
        c0_hat: f64,
        c0_unit: f64,
    ) -> PyResult<Self> {
        let law = match coeffs {
            None => VelocityLaw::Linear,
            Some(c) => VelocityLaw::polynomial(c, c0_hat, c0_unit).map_err(err)?,
        };
        Ok(Self {
            inner: ModelParams::new(ell, v, law).map_err(err)?,
        })
    }

    #[getter]
    fn ell(&self) -> f64 {
        self.inner.ell
    }

    #[getter]
    fn v(&self) -> f64 {
        self.inner.v
    }

    fn phi(&self, rho: f64) -> PyResult<f64> {
        ftl::model::phi(&self.inner.law, rho).map_err(err)
    }

    fn flux(&self, rho: f64) -> PyResult<f64> {
        self.inner.flux(rho).map_err(err)
    }

    /// `(rho_star, f_star)`.
    fn rho_star(&self) -> PyResult<(f64, f64)> {
        let i = self.inner.rho_star().map_err(err)?;
        Ok((i.rho_star, i.f_star))
    }

    fn conjugate(&self, rho_minus: f64) -> PyResult<f64> {
        self.inner.conjugate_density(rho_minus).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(ell={}, v={}, law={})",
            self.inner.ell,
            self.inner.v,
            self.inner.law.name()
        )
    }
}

/// Converged two-point profile.
#[pyclass(name = "Profile", module = "ftl_wave")]
struct PyProfile {
    problem: BvpProblem,
    sol: BvpSolution,
}

#[pymethods]
impl PyProfile {
    fn evaluate(&self, x: f64) -> f64 {
        self.sol.curve.evaluate(x)
    }

    fn evaluate_many(&self, xs: Vec<f64>) -> Vec<f64> {
        xs.iter().map(|&x| self.sol.curve.evaluate(x)).collect()
    }

    fn derivative(&self, x: f64) -> f64 {
        self.sol.curve.derivative(x)
    }

    /// Position where the profile takes `rho`.
    fn inverse(&self, rho: f64) -> PyResult<f64> {
        diagnostics::profile_inverse(&self.sol.curve, rho, diagnostics::DEFAULT_MARGIN).map_err(err)
    }

    #[getter]
    fn grid(&self) -> Vec<f64> {
        self.sol.curve.grid().to_vec()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.sol.curve.values().to_vec()
    }

    #[getter]
    fn left_limit(&self) -> f64 {
        self.sol.curve.left_limit()
    }

    #[getter]
    fn right_limit(&self) -> f64 {
        self.sol.curve.right_limit()
    }

    #[getter]
    fn period(&self) -> f64 {
        self.problem.period()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.sol.kind != bvp::ProblemKind::Regular || self.sol.record.converged()
    }

    /// `(x_hat, delta, rho_minus_n, tp_n)` per sequence member.
    #[getter]
    fn sequence(&self) -> Vec<(f64, f64, f64, f64)> {
        self.sol
            .record
            .entries
            .iter()
            .map(|e| (e.x_hat, e.delta, e.rho_minus_n, e.tp_n))
            .collect()
    }

    /// Per-car takeover times of a generated platoon: `(mean, std, worst relative error)`.
    #[pyo3(signature = (n_back = 40, n_fwd = 40))]
    fn periodicity(&self, n_back: usize, n_fwd: usize) -> PyResult<(f64, f64, f64)> {
        let p = &self.problem.params;
        let tp = self.problem.period();
        let platoon =
            sim::generate_distribution(p, &self.sol.curve, 0.0, n_back, n_fwd).map_err(err)?;
        let traj = sim::simulate(
            &platoon,
            SimOptions::new(sim::DEFAULT_DT_SAFETY * p.ell / p.v, 2.5 * tp),
        )
        .map_err(err)?;
        let lo = n_back.saturating_sub(10);
        let hi = (n_back + 10).min(platoon.len() - 1);
        let s = sim::measure_period(p, &traj, &self.sol.curve, lo..hi).map_err(err)?;
        let worst = s
            .takeovers
            .iter()
            .map(|k| (k.event - tp).abs() / tp)
            .fold(0.0, f64::max);
        Ok((s.mean, s.std, worst))
    }

    /// Envelope gaps of a perturbed platoon, one per period: `(times, gaps)`.
    #[pyo3(signature = (eps = diagnostics::DEFAULT_EPS))]
    fn stability(&self, eps: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let pert = Perturbation {
            eps,
            ..Perturbation::default()
        };
        let opts = StabilityOptions::for_problem(&self.problem);
        let out = diagnostics::stability_run(&self.problem, &self.sol.curve, &pert, &opts)
            .map_err(err)?;
        Ok((out.trace.times.clone(), out.trace.gap()))
    }
}

#[pyfunction]
#[pyo3(signature = (model, rho_minus, rho_plus = None, n_anchors = bvp::DEFAULT_ANCHORS))]
fn solve_profile(
    model: &PyModel,
    rho_minus: f64,
    rho_plus: Option<f64>,
    n_anchors: usize,
) -> PyResult<PyProfile> {
    let p = model.inner.clone();
    let problem = match rho_plus {
        Some(rp) => BvpProblem::new(p, rho_minus, rp),
        None => BvpProblem::from_left(p, rho_minus),
    }
    .map_err(err)?;
    let sol = bvp::solve_bvp(
        &problem,
        &BvpOptions {
            n_anchors,
            ..BvpOptions::default()
        },
    )
    .map_err(err)?;
    Ok(PyProfile { problem, sol })
}

#[pyfunction]
fn rate_report<'py>(
    py: Python<'py>,
    model: &PyModel,
    rho_minus: f64,
    rho_plus: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let r = rates::rate_report(&model.inner, rho_minus, rho_plus).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("a", r.constants.a)?;
    d.set_item("b", r.constants.b)?;
    d.set_item("a_hat", r.constants.a_hat)?;
    d.set_item("b_hat", r.constants.b_hat)?;
    d.set_item("lambda_plus", r.lambda_plus)?;
    d.set_item("lambda_minus", r.lambda_minus)?;
    d.set_item("bounds_ok", rates::verify_bounds(&model.inner, &r).ok())?;
    Ok(d)
}

#[pyfunction]
fn slope_root(model: &PyModel, rho_minus: f64, rho_plus: f64) -> PyResult<f64> {
    let pr = BvpProblem::new(model.inner.clone(), rho_minus, rho_plus).map_err(err)?;
    bvp::slope_equation_root(&pr).map_err(err)
}

#[pyfunction]
fn riemann(model: &PyModel, rho_l: f64, rho_r: f64, xi: f64) -> PyResult<f64> {
    macro_ref::riemann_eval(&model.inner, rho_l, rho_r, xi).map_err(err)
}

/// `(ell, l1_to_step, sup_to_viscous)` per car length, with `model.ell` ignored.
#[pyfunction]
fn micro_macro(
    model: &PyModel,
    rho_minus: f64,
    rho_plus: f64,
    ells: Vec<f64>,
) -> PyResult<Vec<(f64, f64, f64)>> {
    let sw = macro_ref::micro_macro_sweep(
        &model.inner,
        rho_minus,
        rho_plus,
        &ells,
        DEFAULT_WINDOW,
        &BvpOptions::default(),
    )
    .map_err(err)?;
    Ok(sw
        .rows
        .iter()
        .map(|r| (r.ell, r.l1_step, r.sup_continuum2))
        .collect())
}

/// Largest lab-frame trace error over `periods` of a profile solved in the frame moving at `V sigma`.
#[pyfunction]
#[pyo3(signature = (model, sigma, rho_minus, rho_plus, periods = 3.0, check_sigma = None))]
fn moving_frame_error(
    model: &PyModel,
    sigma: f64,
    rho_minus: f64,
    rho_plus: f64,
    periods: f64,
    check_sigma: Option<f64>,
) -> PyResult<f64> {
    let p = &model.inner;
    let pr = moving_frame::shift_problem(p, sigma, rho_minus, rho_plus).map_err(err)?;
    let curve = bvp::solve_bvp(&pr, &BvpOptions::default())
        .map_err(err)?
        .curve;
    let opts = TravelOptions::new(p, periods * pr.period());
    let rep = moving_frame::verify_traveling(&curve, p, check_sigma.unwrap_or(sigma), &opts)
        .map_err(err)?;
    Ok(rep.max_error())
}

#[pymodule]
#[pyo3(name = "ftl_wave")]
fn ftl_wave_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyProfile>()?;
    m.add_function(wrap_pyfunction!(solve_profile, m)?)?;
    m.add_function(wrap_pyfunction!(rate_report, m)?)?;
    m.add_function(wrap_pyfunction!(slope_root, m)?)?;
    m.add_function(wrap_pyfunction!(riemann, m)?)?;
    m.add_function(wrap_pyfunction!(micro_macro, m)?)?;
    m.add_function(wrap_pyfunction!(moving_frame_error, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
