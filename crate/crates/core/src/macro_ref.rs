//! Macroscopic references: Riemann problems of the LWR law, viscous and
//! second-order continuum profiles, and micro-macro distances.

use crate::bvp::{solve_bvp, BvpOptions, BvpProblem};
use crate::csv::CsvTable;
use crate::curve::ProfileCurve;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::quad::adaptive_simpson;
use crate::roots;

pub const DEFAULT_WINDOW: (f64, f64) = (-10.0, 10.0);
pub const L1_TOL: f64 = 1e-8;
const L1_PANELS: usize = 256;
/// RK4 substeps are kept below this fraction of the local relaxation length.
const STEP_FRACTION: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RiemannKind {
    Shock {
        speed: f64,
    },
    /// Fan between the characteristic speeds of the left and right states.
    Rarefaction {
        lo: f64,
        hi: f64,
    },
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiemannSolution {
    pub kind: RiemannKind,
    pub left: f64,
    pub right: f64,
}

impl RiemannSolution {
    pub fn new(params: &ModelParams, left: f64, right: f64) -> Result<Self> {
        for r in [left, right] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Domain(format!("state {r} outside [0, 1]")));
            }
        }
        let kind = if left == right {
            RiemannKind::Constant
        } else if left < right {
            RiemannKind::Shock {
                speed: (params.flux_unchecked(left) - params.flux_unchecked(right))
                    / (left - right),
            }
        } else {
            RiemannKind::Rarefaction {
                lo: params.flux_deriv(left),
                hi: params.flux_deriv(right),
            }
        };
        Ok(Self { kind, left, right })
    }

    /// Density at similarity coordinate `xi = x / t`.
    pub fn eval(&self, params: &ModelParams, xi: f64) -> f64 {
        match self.kind {
            RiemannKind::Constant => self.left,
            RiemannKind::Shock { speed } => {
                if xi < speed {
                    self.left
                } else {
                    self.right
                }
            }
            RiemannKind::Rarefaction { lo, hi } => {
                if xi <= lo {
                    self.left
                } else if xi >= hi {
                    self.right
                } else {
                    roots::bisect(
                        |r| params.flux_deriv(r) - xi,
                        self.right,
                        self.left,
                        1e-15,
                        roots::DEFAULT_MAX_ITER,
                    )
                    .unwrap_or(0.5 * (self.left + self.right))
                }
            }
        }
    }
}

pub fn riemann_eval(params: &ModelParams, rho_l: f64, rho_r: f64, xi: f64) -> Result<f64> {
    Ok(RiemannSolution::new(params, rho_l, rho_r)?.eval(params, xi))
}

fn check_pair(params: &ModelParams, rho_minus: f64, rho_plus: f64) -> Result<BvpProblem> {
    let pr = BvpProblem::new(params.clone(), rho_minus, rho_plus)?;
    if rho_plus - rho_minus <= 1e-12 {
        return Err(Error::Problem(
            "profile ODE needs rho_minus < rho_plus".into(),
        ));
    }
    Ok(pr)
}

/// Integrates `W' = (f(W) - f_bar) / eps(W)` from `W(0) = rho_star` outward
/// over the nodes of `grid` (0 is inserted when missing).
fn first_integral<E>(pr: &BvpProblem, eps: E, grid: &[f64]) -> Result<ProfileCurve>
where
    E: Fn(f64) -> f64,
{
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain(
            "grid must be strictly increasing with at least two nodes".into(),
        ));
    }
    let p = &pr.params;
    let (lo, hi, f_bar) = (pr.rho_minus, pr.rho_plus, pr.f_bar);
    let rhs = |w: f64| {
        let w = w.clamp(lo, hi);
        (p.flux_unchecked(w) - f_bar) / eps(w)
    };
    let mut rate: f64 = 0.0;
    for k in 0..=64 {
        let w = lo + (hi - lo) * k as f64 / 64.0;
        let e = eps(w);
        if !(e > 0.0 && e.is_finite()) {
            return Err(Error::Domain(format!(
                "viscosity {e} at W = {w} is not positive"
            )));
        }
        rate = rate.max(p.flux_deriv(w).abs() / e);
    }
    let h_max = STEP_FRACTION / rate.max(1e-300);

    let mut x: Vec<f64> = grid.to_vec();
    if let Err(k) = x.binary_search_by(|v| v.total_cmp(&0.0)) {
        x.insert(k, 0.0);
    }
    let i0 = x.iter().position(|&v| v == 0.0).unwrap();
    let mut w = vec![0.0; x.len()];
    w[i0] = pr.rho_star;
    let advance = |w0: f64, a: f64, b: f64| {
        let n = ((b - a).abs() / h_max).ceil().max(1.0) as usize;
        let h = (b - a) / n as f64;
        let mut y = w0;
        for _ in 0..n {
            let k1 = rhs(y);
            let k2 = rhs(y + 0.5 * h * k1);
            let k3 = rhs(y + 0.5 * h * k2);
            let k4 = rhs(y + h * k3);
            y = (y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)).clamp(lo, hi);
        }
        y
    };
    for i in i0 + 1..x.len() {
        w[i] = advance(w[i - 1], x[i - 1], x[i]);
    }
    for i in (0..i0).rev() {
        w[i] = advance(w[i + 1], x[i + 1], x[i]);
    }
    let d: Vec<f64> = w.iter().map(|&v| rhs(v)).collect();
    Ok(ProfileCurve::from_samples(x, w, Some(d)))
}

/// Stationary viscous shock profile with constant viscosity `epsilon`.
pub fn viscous_profile(
    params: &ModelParams,
    rho_minus: f64,
    rho_plus: f64,
    epsilon: f64,
    grid: &[f64],
) -> Result<ProfileCurve> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Domain(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let pr = check_pair(params, rho_minus, rho_plus)?;
    first_integral(&pr, |_| epsilon, grid)
}

/// Profile of the second-order continuum model, viscosity `-(V ell / 2) phi'(W)`.
pub fn continuum2_profile(
    params: &ModelParams,
    rho_minus: f64,
    rho_plus: f64,
    grid: &[f64],
) -> Result<ProfileCurve> {
    let pr = check_pair(params, rho_minus, rho_plus)?;
    let c = params.v * params.ell / 2.0;
    first_integral(&pr, |w| -c * params.law.deriv(w), grid)
}

/// Closed-form viscous profile for the linear law.
pub fn linear_viscous_exact(v: f64, rho_minus: f64, rho_plus: f64, epsilon: f64, x: f64) -> f64 {
    let d = rho_plus - rho_minus;
    0.5 * (rho_minus + rho_plus) + 0.5 * d * (v * d * x / (2.0 * epsilon)).tanh()
}

pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect()
}

/// `int |A - B|` over the window.
pub fn l1_distance(a: &ProfileCurve, b: &ProfileCurve, window: (f64, f64)) -> f64 {
    let (lo, hi) = window;
    if !(hi > lo) {
        return 0.0;
    }
    let mut cuts: Vec<f64> = (0..=L1_PANELS)
        .map(|k| lo + (hi - lo) * k as f64 / L1_PANELS as f64)
        .collect();
    for c in [a, b] {
        for x in [c.grid_min(), c.x_hat()] {
            if x > lo && x < hi {
                cuts.push(x);
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let tol = L1_TOL / (cuts.len() - 1) as f64;
    cuts.windows(2)
        .map(|w| adaptive_simpson(|x| (a.evaluate(x) - b.evaluate(x)).abs(), w[0], w[1], tol))
        .sum()
}

/// `max |A - B|` over the given points.
pub fn sup_distance_on(a: &ProfileCurve, b: &ProfileCurve, xs: &[f64]) -> f64 {
    xs.iter()
        .map(|&x| (a.evaluate(x) - b.evaluate(x)).abs())
        .fold(0.0, f64::max)
}

/// Rows `x,W_dde,W_viscous,W_continuum2,W_step`.
pub fn compare_table(
    problem: &BvpProblem,
    dde: &ProfileCurve,
    epsilon: f64,
    grid: &[f64],
) -> Result<CsvTable> {
    let p = &problem.params;
    let visc = viscous_profile(p, problem.rho_minus, problem.rho_plus, epsilon, grid)?;
    let c2 = continuum2_profile(p, problem.rho_minus, problem.rho_plus, grid)?;
    let step = ProfileCurve::step(problem.rho_minus, problem.rho_plus, 0.0);
    let mut t = CsvTable::new(&["x", "W_dde", "W_viscous", "W_continuum2", "W_step"]);
    for &x in grid {
        t.nums(&[
            x,
            dde.evaluate(x),
            visc.evaluate(x),
            c2.evaluate(x),
            step.evaluate(x),
        ]);
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MicroMacroRow {
    pub ell: f64,
    pub l1_step: f64,
    pub sup_continuum2: f64,
    pub l1_continuum2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicroMacroSweep {
    pub rows: Vec<MicroMacroRow>,
}

impl MicroMacroSweep {
    /// Every step of the sweep lowers the L1 distance to the step by more than `rel` of its value.
    pub fn l1_step_decreasing(&self, rel: f64) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[1].l1_step < w[0].l1_step * (1.0 - rel))
    }

    pub fn sup_decreasing(&self, rel: f64) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[1].sup_continuum2 < w[0].sup_continuum2 * (1.0 - rel))
    }

    /// Largest relative spread of the sup distances across the sweep.
    pub fn sup_spread(&self) -> f64 {
        let v: Vec<f64> = self.rows.iter().map(|r| r.sup_continuum2).collect();
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        (hi - lo) / hi
    }

    pub fn to_csv(&self) -> String {
        let mut t = CsvTable::new(&["ell", "l1_step", "sup_continuum2", "l1_continuum2"]);
        for r in &self.rows {
            t.nums(&[r.ell, r.l1_step, r.sup_continuum2, r.l1_continuum2]);
        }
        t.into_string()
    }
}

/// One row of the micro-macro comparison for a solved, normalized profile.
pub fn micro_macro_row(
    problem: &BvpProblem,
    dde: &ProfileCurve,
    window: (f64, f64),
    samples: usize,
) -> Result<MicroMacroRow> {
    let (lo, hi) = window;
    let mut xs: Vec<f64> = dde
        .grid()
        .iter()
        .copied()
        .filter(|&x| x > lo && x < hi)
        .collect();
    xs.extend(uniform_grid(lo, hi, samples));
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let p = &problem.params;
    let c2 = continuum2_profile(p, problem.rho_minus, problem.rho_plus, &xs)?;
    let step = ProfileCurve::step(problem.rho_minus, problem.rho_plus, 0.0);
    Ok(MicroMacroRow {
        ell: p.ell,
        l1_step: l1_distance(dde, &step, window),
        sup_continuum2: sup_distance_on(dde, &c2, &xs),
        l1_continuum2: l1_distance(dde, &c2, window),
    })
}

/// Solves the profile for each car length and compares it with the macroscopic references.
pub fn micro_macro_sweep(
    params: &ModelParams,
    rho_minus: f64,
    rho_plus: f64,
    ells: &[f64],
    window: (f64, f64),
    opts: &BvpOptions,
) -> Result<MicroMacroSweep> {
    let mut rows = Vec::with_capacity(ells.len());
    for &ell in ells {
        let p = ModelParams::new(ell, params.v, params.law.clone())?;
        let pr = BvpProblem::new(p, rho_minus, rho_plus)?;
        let sol = solve_bvp(&pr, opts)?;
        rows.push(micro_macro_row(&pr, &sol.curve, window, 4001)?);
    }
    Ok(MicroMacroSweep { rows })
}
