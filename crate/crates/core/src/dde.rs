//! Backward method-of-steps solver for the profile equation
//!
//! ```text
//! W'(x) = W^2 / (ell phi(W)) * [ phi(W(x)) - phi(W(x + ell/W(x))) ]
//! ```
//!
//! The advanced argument `x + ell/W >= x + ell` always lands on data that is
//! already known, so the equation can be marched from `x_hat` toward `-inf`
//! with a classical four-stage scheme. Dense output between nodes is a cubic
//! Hermite interpolant built from the right-hand side at each node.

use crate::curve::{ProfileCurve, RightTail};
use crate::error::{Error, Result};
use crate::interp::hermite_segment;
use crate::model::ModelParams;
use crate::quad::adaptive_simpson;
use crate::roots;

pub const DEFAULT_PLATEAU_TOL: f64 = 1e-9;
/// Default step as a fraction of the car length.
pub const DEFAULT_STEPS_PER_CAR: f64 = 128.0;
const MONOTONE_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub h: f64,
    pub x_min: f64,
    /// Stop once `|W(x) - W(x + ell)|` stays below this for a full car length.
    /// Zero disables early stopping.
    pub plateau_tol: f64,
}

impl SolveOptions {
    pub fn new(params: &ModelParams, x_min: f64) -> Self {
        Self {
            h: params.ell / DEFAULT_STEPS_PER_CAR,
            x_min,
            plateau_tol: DEFAULT_PLATEAU_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub x_min_reached: f64,
    pub plateau: bool,
    /// Left limit from the period identity; only when a plateau was reached.
    pub left_limit: Option<f64>,
    pub monotonicity_violations: usize,
    pub tp_estimate: Option<f64>,
    pub steps: usize,
    /// Where `x + ell/W(x)` crosses `x_hat`; a node is placed there.
    pub breaking_point: Option<f64>,
}

#[inline]
fn rhs_core(params: &ModelParams, w: f64, w_adv: f64) -> Result<f64> {
    let law = &params.law;
    let pw = law.value(w);
    if !(pw > 0.0) {
        return Err(Error::Singular(format!("phi(W) = {pw} at W = {w}")));
    }
    Ok(w * w / (params.ell * pw) * (pw - law.value(w_adv)))
}

/// Right-hand side of the profile equation at `(x, w)`, reading the advanced
/// value from `curve`.
pub fn rhs_eval(params: &ModelParams, curve: &ProfileCurve, x: f64, w: f64) -> Result<f64> {
    if !(w > 0.0 && w <= 1.0) {
        return Err(Error::Domain(format!("trial value {w} outside (0, 1]")));
    }
    if w == 1.0 || params.law.value(w) <= 0.0 {
        return Err(Error::Singular(format!("phi(W) vanishes at W = {w}")));
    }
    let adv = x + params.ell / w;
    if !adv.is_finite() || adv < curve.grid_min() {
        return Err(Error::Domain(format!(
            "advanced point {adv} is not evaluable"
        )));
    }
    rhs_core(params, w, curve.evaluate(adv))
}

/// Nodes accumulated while marching left; stored in decreasing `x`.
struct Backward<'a> {
    params: &'a ModelParams,
    tail: RightTail,
    xs: Vec<f64>,
    ws: Vec<f64>,
    ds: Vec<f64>,
}

impl<'a> Backward<'a> {
    fn eval(&self, x: f64) -> Result<f64> {
        if x >= self.tail.x_hat {
            return Ok(self.tail.value(x));
        }
        let n = self.xs.len();
        let k = self.xs.partition_point(|&v| v > x);
        if k >= n {
            return Err(Error::Domain(format!(
                "lookup at {x} is left of the solved region (frontier {})",
                self.xs[n - 1]
            )));
        }
        if self.xs[k] == x {
            return Ok(self.ws[k]);
        }
        // k >= 1 because x < x_hat = xs[0]
        Ok(hermite_segment(
            self.xs[k],
            self.xs[k - 1],
            self.ws[k],
            self.ws[k - 1],
            self.ds[k],
            self.ds[k - 1],
            x,
        ))
    }

    fn rhs(&self, x: f64, w: f64) -> Result<f64> {
        if !(w > 0.0 && w <= 1.0) || !w.is_finite() {
            return Err(Error::Invariant(format!("W = {w} left (0, 1] at x = {x}")));
        }
        let adv = x + self.params.ell / w;
        rhs_core(self.params, w, self.eval(adv)?)
    }

    /// One step of size `step > 0` toward smaller `x`.
    fn rk4(&self, x: f64, w: f64, d: f64, step: f64) -> Result<(f64, f64, f64)> {
        let half = 0.5 * step;
        let k1 = d;
        let k2 = self.rhs(x - half, w - half * k1)?;
        let k3 = self.rhs(x - half, w - half * k2)?;
        let k4 = self.rhs(x - step, w - step * k3)?;
        let x_new = x - step;
        let w_new = w - step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        let d_new = self.rhs(x_new, w_new)?;
        Ok((x_new, w_new, d_new))
    }

    fn push(&mut self, x: f64, w: f64, d: f64) {
        self.xs.push(x);
        self.ws.push(w);
        self.ds.push(d);
    }

    fn last(&self) -> (f64, f64, f64) {
        let n = self.xs.len() - 1;
        (self.xs[n], self.ws[n], self.ds[n])
    }
}

/// Integrates the profile equation backward from the tail data on `[x_hat, inf)`.
pub fn solve_backward(
    params: &ModelParams,
    tail: RightTail,
    opts: SolveOptions,
) -> Result<(ProfileCurve, SolveReport)> {
    let ell = params.ell;
    let x_hat = tail.x_hat;
    if tail.rho_plus >= 1.0 {
        return Err(Error::StepProfile(
            "right state 1 admits only the step profile".into(),
        ));
    }
    let w0 = tail.value(x_hat);
    if !(tail.rho_plus > 0.0 && w0 > 0.0 && w0 < 1.0) {
        return Err(Error::Domain(format!(
            "tail values must lie in (0, 1), got psi(x_hat) = {w0}"
        )));
    }
    if tail.delta < 0.0 {
        return Err(Error::Domain(
            "decreasing initial data is not supported".into(),
        ));
    }
    if !(opts.h > 0.0 && opts.h <= ell / 64.0 * (1.0 + 1e-12)) {
        return Err(Error::Precondition(format!(
            "step {} must lie in (0, ell/64]",
            opts.h
        )));
    }
    if !(opts.x_min < x_hat) {
        return Err(Error::Precondition(format!(
            "x_min {} must be below x_hat {x_hat}",
            opts.x_min
        )));
    }

    let mut sol = Backward {
        params,
        tail,
        xs: vec![],
        ws: vec![],
        ds: vec![],
    };
    sol.push(x_hat, w0, 0.0);
    let d0 = sol.rhs(x_hat, w0)?;
    sol.ds[0] = d0;

    let g = |x: f64, w: f64| x + ell / w - x_hat;
    let mut breaking_point = None;
    let mut violations = 0usize;
    let mut plateau_start: Option<f64> = None;
    let mut plateau = false;
    let mut steps = 0usize;
    let x_stop = opts.x_min;

    loop {
        let (x, w, d) = sol.last();
        if x <= x_stop + 1e-12 * (1.0 + x_stop.abs()) {
            break;
        }
        let step = opts.h.min(x - x_stop);
        let (mut x_new, mut w_new, mut d_new) = sol.rk4(x, w, d, step)?;

        if breaking_point.is_none() && g(x, w) > 0.0 && g(x_new, w_new) <= 0.0 {
            // land a node where the advanced argument crosses x_hat
            let seg = |s: f64| hermite_segment(x_new, x, w_new, w, d_new, d, s);
            let xc = roots::bisect(
                |s| g(s, seg(s)),
                x_new,
                x,
                1e-15 * (1.0 + x.abs()),
                roots::DEFAULT_MAX_ITER,
            )?;
            if xc < x && xc > x_new {
                let (x1, w1, d1) = sol.rk4(x, w, d, x - xc)?;
                check_step(w, w1, x1, &mut violations)?;
                sol.push(x1, w1, d1);
                let r = sol.rk4(x1, w1, d1, x1 - x_new)?;
                x_new = r.0;
                w_new = r.1;
                d_new = r.2;
                breaking_point = Some(xc);
                check_step(w1, w_new, x_new, &mut violations)?;
            } else {
                breaking_point = Some(if xc >= x { x } else { x_new });
                check_step(w, w_new, x_new, &mut violations)?;
            }
        } else {
            check_step(w, w_new, x_new, &mut violations)?;
        }
        sol.push(x_new, w_new, d_new);
        steps += 1;

        if opts.plateau_tol > 0.0 {
            let diff = (w_new - sol.eval(x_new + ell)?).abs();
            if diff < opts.plateau_tol {
                let start = *plateau_start.get_or_insert(x_new);
                if start - x_new >= ell {
                    plateau = true;
                    break;
                }
            } else {
                plateau_start = None;
            }
        }
    }

    let (x_end, w_end, _) = sol.last();
    let Backward {
        mut xs,
        mut ws,
        mut ds,
        ..
    } = sol;
    xs.reverse();
    ws.reverse();
    ds.reverse();
    let curve = ProfileCurve::new(xs, ws, Some(ds), tail, w_end);

    let mut report = SolveReport {
        x_min_reached: x_end,
        plateau,
        left_limit: None,
        monotonicity_violations: violations,
        tp_estimate: None,
        steps,
        breaking_point,
    };
    let curve = if plateau {
        let tp = period_at(params, &curve, x_end)?;
        let rho = density_for_period(params, tp)?;
        report.tp_estimate = Some(tp);
        report.left_limit = Some(rho);
        curve.with_left_limit(rho)
    } else {
        curve
    };
    Ok((curve, report))
}

fn check_step(w_old: f64, w_new: f64, x_new: f64, violations: &mut usize) -> Result<()> {
    if !(w_new > 0.0 && w_new <= 1.0) {
        return Err(Error::Invariant(format!(
            "W = {w_new} left (0, 1] at x = {x_new}"
        )));
    }
    if w_new > w_old {
        *violations += 1;
        if w_new - w_old > MONOTONE_SLACK {
            return Err(Error::StepSize(format!(
                "monotonicity lost at x = {x_new} (W rose by {}); reduce the step",
                w_new - w_old
            )));
        }
    }
    Ok(())
}

/// Travel time `int_z^{z + ell/W(z)} dz / (V phi(W))` of the car at `z` to
/// its leader's position.
pub fn period_at(params: &ModelParams, curve: &ProfileCurve, z: f64) -> Result<f64> {
    let w = curve.evaluate(z);
    if !(w > 0.0) {
        return Err(Error::Domain(format!("W({z}) = {w} is not positive")));
    }
    let z1 = z + params.ell / w;
    let integrand = |s: f64| 1.0 / (params.v * params.law.value(curve.evaluate(s)));
    let tp = adaptive_simpson(integrand, z, z1, 1e-13);
    if !tp.is_finite() || tp <= 0.0 {
        return Err(Error::Numerical(format!("period quadrature gave {tp}")));
    }
    Ok(tp)
}

/// Lower-branch density whose uniform flow has period `tp`: `f(rho) = ell / tp`.
pub fn density_for_period(params: &ModelParams, tp: f64) -> Result<f64> {
    let info = params.rho_star()?;
    let target = params.ell / tp;
    if target > info.f_star * (1.0 + 1e-12) {
        return Err(Error::Inconsistency(format!(
            "flux {target} implied by the period exceeds the maximum {}",
            info.f_star
        )));
    }
    if target >= info.f_star {
        return Ok(info.rho_star);
    }
    roots::bisect(
        |r| params.flux_unchecked(r) - target,
        0.0,
        info.rho_star,
        1e-15,
        roots::DEFAULT_MAX_ITER,
    )
}

/// Left limit of a settled curve from the period of the car at its left end.
pub fn left_limit_estimate(
    curve: &ProfileCurve,
    params: &ModelParams,
    plateau_tol: f64,
) -> Result<f64> {
    if !curve.is_plateau(params.ell, plateau_tol) {
        return Err(Error::State("curve has not reached a plateau".into()));
    }
    let tp = period_at(params, curve, curve.grid_min())?;
    density_for_period(params, tp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates;

    fn ref_params() -> ModelParams {
        ModelParams::linear(0.5, 1.0).unwrap()
    }

    fn ref_tail(x_hat: f64) -> RightTail {
        let p = ref_params();
        RightTail::new(0.7, 0.2, rates::lambda_plus(&p, 0.7).unwrap(), x_hat)
    }

    #[test]
    fn constant_curve_has_zero_rhs() {
        let p = ref_params();
        let c = ProfileCurve::constant(0.4);
        assert_eq!(rhs_eval(&p, &c, 0.3, 0.4).unwrap(), 0.0);
    }

    #[test]
    fn rhs_below_advanced_value_is_positive() {
        let p = ref_params();
        let c = ProfileCurve::step(0.3, 0.7, 0.0);
        assert!(rhs_eval(&p, &c, -0.2, 0.5).unwrap() > 0.0);
        assert!(matches!(
            rhs_eval(&p, &c, 0.0, 1.0),
            Err(Error::Singular(_))
        ));
        assert!(matches!(rhs_eval(&p, &c, 0.0, 1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn rhs_on_tail_matches_linearization() {
        // small delta: W' ~ lambda delta e^{-lambda x}, checked against a finite difference of psi
        let p = ref_params();
        let lam = rates::lambda_plus(&p, 0.7).unwrap();
        let tail = RightTail::new(0.7, 1e-5, lam, -10.0);
        let c = ProfileCurve::new(
            vec![-10.0],
            vec![tail.value(-10.0)],
            Some(vec![0.0]),
            tail,
            0.3,
        );
        let x = 0.4;
        let fd = (tail.value(x + 1e-6) - tail.value(x - 1e-6)) / 2e-6;
        let r = rhs_eval(&p, &c, x, tail.value(x)).unwrap();
        assert!((r - fd).abs() < 1e-3 * fd, "{r} vs {fd}");
    }

    #[test]
    fn constant_tail_gives_constant_solution() {
        let p = ref_params();
        let tail = RightTail::constant(0.7, 0.0);
        let opts = SolveOptions {
            h: p.ell / 128.0,
            x_min: -50.0 * p.ell,
            plateau_tol: 0.0,
        };
        let (c, rep) = solve_backward(&p, tail, opts).unwrap();
        assert!(c.values().iter().all(|w| (w - 0.7).abs() < 1e-12));
        assert!(!rep.plateau);
        assert!((rep.x_min_reached + 25.0).abs() < 1e-9);

        let tail = RightTail::constant(0.5, 0.0);
        let (c, _) = solve_backward(
            &p,
            tail,
            SolveOptions {
                plateau_tol: 0.0,
                ..opts
            },
        )
        .unwrap();
        assert!(c.values().iter().all(|w| *w == 0.5));
    }

    #[test]
    fn reference_solution_is_monotone_and_plateaus_below_left_state() {
        let p = ref_params();
        let opts = SolveOptions::new(&p, -60.0);
        let (c, rep) = solve_backward(&p, ref_tail(1.0), opts).unwrap();
        assert!(rep.plateau);
        assert_eq!(rep.monotonicity_violations, 0);
        assert!(c.values().windows(2).all(|w| w[0] <= w[1]));
        let rho = rep.left_limit.unwrap();
        assert!(rho < 0.3 && rho > 0.29, "{rho}");
        let direct = c.values()[0];
        assert!((direct - rho).abs() < 1e-6);
        assert_eq!(
            left_limit_estimate(&c, &p, DEFAULT_PLATEAU_TOL).unwrap(),
            rho
        );
        assert!(rep.breaking_point.is_some());
    }

    #[test]
    fn left_limit_of_constant_plateau() {
        let p = ref_params();
        let c = ProfileCurve::new(
            vec![-5.0, 0.0],
            vec![0.3, 0.3],
            None,
            RightTail::constant(0.3, 0.0),
            0.3,
        );
        let est = left_limit_estimate(&c, &p, 1e-9).unwrap();
        assert!((est - 0.3).abs() < 1e-12);
        assert!((period_at(&p, &c, -5.0).unwrap() - 0.5 / 0.21).abs() < 1e-10);
    }

    #[test]
    fn no_plateau_is_state_error() {
        let p = ref_params();
        let opts = SolveOptions {
            x_min: -1.0,
            ..SolveOptions::new(&p, -1.0)
        };
        let (c, rep) = solve_backward(&p, ref_tail(1.0), opts).unwrap();
        assert!(!rep.plateau);
        assert!(matches!(
            left_limit_estimate(&c, &p, 1e-9),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn bad_inputs() {
        let p = ref_params();
        let opts = SolveOptions::new(&p, -10.0);
        assert!(matches!(
            solve_backward(&p, RightTail::constant(1.0, 0.0), opts),
            Err(Error::StepProfile(_))
        ));
        let big = SolveOptions { h: 0.1, ..opts };
        assert!(matches!(
            solve_backward(&p, ref_tail(1.0), big),
            Err(Error::Precondition(_))
        ));
    }
}
