//! Two-point profile problem solved as the limit of a sequence of
//! backward solves with ever more distant exponential tails.

use std::thread;

use crate::csv::{Cell, CsvTable};
use crate::curve::{ProfileCurve, RightTail};
use crate::dde::{self, SolveOptions, SolveReport};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::rates;
use crate::roots;
use crate::stats::{linear_fit, LinearFit};

pub const DEFAULT_BVP_TOL: f64 = 1e-6;
pub const DEFAULT_DELTA0: f64 = 0.2;
pub const DEFAULT_ANCHORS: usize = 8;
/// Left-limit errors below this are treated as solver noise in fits.
/// Plateau tolerance of the sequence members; tighter than a single solve so
/// that inverse lookups near the limits stay well conditioned.
pub const DEFAULT_PLATEAU_TOL: f64 = 1e-12;
pub const DEFAULT_FIT_FLOOR: f64 = 1e-9;
const CONJUGACY_TOL: f64 = 1e-10;
/// Default steps never exceed this many right-tail decay lengths.
const MAX_RATE_STEP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    /// Both states equal the critical density.
    Trivial,
    /// `(0, 1)`: the unit step.
    Step,
    Regular,
}

#[derive(Debug, Clone)]
pub struct BvpProblem {
    pub params: ModelParams,
    pub rho_minus: f64,
    pub rho_plus: f64,
    pub f_bar: f64,
    pub rho_star: f64,
    pub f_star: f64,
}

impl BvpProblem {
    pub fn new(params: ModelParams, rho_minus: f64, rho_plus: f64) -> Result<Self> {
        let info = params.rho_star()?;
        let eps = 1e-12;
        if !(rho_minus >= 0.0
            && rho_minus <= info.rho_star + eps
            && rho_plus >= info.rho_star - eps
            && rho_plus <= 1.0)
        {
            return Err(Error::Problem(format!(
                "need 0 <= rho_minus <= {} <= rho_plus <= 1, got ({rho_minus}, {rho_plus})",
                info.rho_star
            )));
        }
        let (fm, fp) = (params.flux(rho_minus)?, params.flux(rho_plus)?);
        if (fm - fp).abs() >= CONJUGACY_TOL {
            return Err(Error::Problem(format!(
                "states are not conjugate: f({rho_minus}) = {fm}, f({rho_plus}) = {fp}"
            )));
        }
        Ok(Self {
            params,
            rho_minus,
            rho_plus,
            f_bar: 0.5 * (fm + fp),
            rho_star: info.rho_star,
            f_star: info.f_star,
        })
    }

    /// Pairs `rho_minus` with its conjugate density.
    pub fn from_left(params: ModelParams, rho_minus: f64) -> Result<Self> {
        let rho_plus = params.conjugate_density(rho_minus)?;
        Self::new(params, rho_minus, rho_plus)
    }

    pub fn kind(&self) -> ProblemKind {
        if (self.rho_plus - self.rho_minus).abs() <= 1e-12 {
            ProblemKind::Trivial
        } else if self.rho_minus == 0.0 && self.rho_plus == 1.0 {
            ProblemKind::Step
        } else {
            ProblemKind::Regular
        }
    }

    /// `ell / f_bar`.
    pub fn period(&self) -> f64 {
        self.params.ell / self.f_bar
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BvpOptions {
    /// Explicit anchors; `None` uses `n * 2 / lambda_plus`.
    pub anchors: Option<Vec<f64>>,
    pub n_anchors: usize,
    pub delta0: f64,
    pub bvp_tol: f64,
    pub h: Option<f64>,
    pub plateau_tol: f64,
    /// Distance solved to the left of each anchor; `None` picks one from the left rate.
    pub span: Option<f64>,
    pub fit_floor: f64,
    /// Solve sequence members on separate threads.
    pub parallel: bool,
}

impl Default for BvpOptions {
    fn default() -> Self {
        Self {
            anchors: None,
            n_anchors: DEFAULT_ANCHORS,
            delta0: DEFAULT_DELTA0,
            bvp_tol: DEFAULT_BVP_TOL,
            h: None,
            plateau_tol: DEFAULT_PLATEAU_TOL,
            span: None,
            fit_floor: DEFAULT_FIT_FLOOR,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceEntry {
    pub n: usize,
    pub x_hat: f64,
    /// Tail perturbation size at the anchor, `delta0 * exp(-lambda_plus (x_hat_n - x_hat_0))`.
    pub delta: f64,
    pub rho_minus_n: f64,
    pub tp_n: f64,
    pub plateau: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub entries: Vec<SequenceEntry>,
    pub rho_minus: f64,
    pub tp: f64,
    pub lambda_plus: f64,
    /// `ln(rho_minus - rho_minus_n)` against `x_hat_n`.
    pub rate_fit: Option<LinearFit>,
    /// `tp_n - tp` against `delta_n`.
    pub tp_fit: Option<LinearFit>,
    /// `ln(tp_n - tp)` against `ln(delta_n)`; the slope is the observed power.
    pub tp_power_fit: Option<LinearFit>,
    pub converged_at: Option<usize>,
    pub monotone: bool,
    pub diagnostics: Vec<String>,
}

impl SequenceRecord {
    fn empty(problem: &BvpProblem) -> Self {
        Self {
            entries: vec![],
            rho_minus: problem.rho_minus,
            tp: problem.period(),
            lambda_plus: f64::NAN,
            rate_fit: None,
            tp_fit: None,
            tp_power_fit: None,
            converged_at: None,
            monotone: true,
            diagnostics: vec![],
        }
    }

    pub fn converged(&self) -> bool {
        self.converged_at.is_some()
    }

    pub fn to_csv(&self) -> String {
        let mut t = CsvTable::new(&["n", "x_hat", "delta", "rho_minus_n", "tp_n"]);
        for e in &self.entries {
            t.row(&[
                Cell::Int(e.n as i64),
                Cell::Num(e.x_hat),
                Cell::Num(e.delta),
                Cell::Num(e.rho_minus_n),
                Cell::Num(e.tp_n),
            ]);
        }
        t.into_string()
    }
}

#[derive(Debug, Clone)]
pub struct BvpSolution {
    pub kind: ProblemKind,
    /// Last member of the sequence, shifted so that `W(0) = rho_star`.
    pub curve: ProfileCurve,
    pub record: SequenceRecord,
    /// Raw members of the sequence, in anchor order.
    pub members: Vec<ProfileCurve>,
    pub reports: Vec<SolveReport>,
}

pub fn default_anchors(lambda_plus: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 * 2.0 / lambda_plus).collect()
}

pub fn solve_bvp(problem: &BvpProblem, opts: &BvpOptions) -> Result<BvpSolution> {
    match problem.kind() {
        ProblemKind::Trivial => {
            return Ok(BvpSolution {
                kind: ProblemKind::Trivial,
                curve: ProfileCurve::constant(problem.rho_star),
                record: SequenceRecord::empty(problem),
                members: vec![],
                reports: vec![],
            })
        }
        ProblemKind::Step => {
            return Ok(BvpSolution {
                kind: ProblemKind::Step,
                curve: ProfileCurve::step(0.0, 1.0, 0.0),
                record: SequenceRecord::empty(problem),
                members: vec![],
                reports: vec![],
            })
        }
        ProblemKind::Regular => {}
    }
    let p = &problem.params;
    if !(problem.rho_minus > 0.0 && problem.rho_plus < 1.0) {
        return Err(Error::StepProfile(format!(
            "pair ({}, {}) touches a vacuum or jam state",
            problem.rho_minus, problem.rho_plus
        )));
    }
    if !(opts.delta0 > 0.0 && opts.delta0 < problem.rho_plus) {
        return Err(Error::Domain(format!(
            "delta0 = {} must lie in (0, rho_plus)",
            opts.delta0
        )));
    }
    let lp = rates::lambda_plus(p, problem.rho_plus)?;
    let lm = rates::lambda_minus(p, problem.rho_minus)?;
    let anchors = opts
        .anchors
        .clone()
        .unwrap_or_else(|| default_anchors(lp, opts.n_anchors));
    if anchors.is_empty() || anchors.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain(
            "anchors must be nonempty and strictly increasing".into(),
        ));
    }
    let x0 = anchors[0];
    let delta = opts.delta0 * (lp * x0).exp();
    let span = opts.span.unwrap_or_else(|| (60.0 / lm).max(50.0 * p.ell));
    let h = opts
        .h
        .unwrap_or((p.ell / dde::DEFAULT_STEPS_PER_CAR).min(MAX_RATE_STEP / lp));

    let solve_one = |x_hat: f64| -> Result<(ProfileCurve, SolveReport)> {
        let tail = RightTail::new(problem.rho_plus, delta, lp, x_hat);
        let so = SolveOptions {
            h,
            x_min: x_hat - span,
            plateau_tol: opts.plateau_tol,
        };
        dde::solve_backward(p, tail, so)
    };
    let results: Vec<Result<(ProfileCurve, SolveReport)>> = if opts.parallel && anchors.len() > 1 {
        thread::scope(|s| {
            let handles: Vec<_> = anchors
                .iter()
                .map(|&x| s.spawn(move || solve_one(x)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("solver thread panicked"))
                .collect()
        })
    } else {
        anchors.iter().map(|&x| solve_one(x)).collect()
    };

    let mut record = SequenceRecord::empty(problem);
    record.lambda_plus = lp;
    let mut members = Vec::with_capacity(anchors.len());
    let mut reports = Vec::with_capacity(anchors.len());
    for (n, (res, &x_hat)) in results.into_iter().zip(&anchors).enumerate() {
        let (curve, rep) = res?;
        let (rho_n, tp_n) = match (rep.left_limit, rep.tp_estimate) {
            (Some(r), Some(t)) => (r, t),
            _ => {
                record
                    .diagnostics
                    .push(format!("member {n} (x_hat = {x_hat}) reached no plateau"));
                let z = curve.grid_min();
                let tp = dde::period_at(p, &curve, z)?;
                (curve.evaluate(z), tp)
            }
        };
        record.entries.push(SequenceEntry {
            n,
            x_hat,
            delta: opts.delta0 * (-lp * (x_hat - x0)).exp(),
            rho_minus_n: rho_n,
            tp_n,
            plateau: rep.plateau,
        });
        members.push(curve);
        reports.push(rep);
    }
    analyse_sequence(&mut record, opts);
    let last = members.last().expect("at least one anchor");
    let curve = normalize_shift(last, problem.rho_star)?;
    Ok(BvpSolution {
        kind: ProblemKind::Regular,
        curve,
        record,
        members,
        reports,
    })
}

fn analyse_sequence(record: &mut SequenceRecord, opts: &BvpOptions) {
    let rm = record.rho_minus;
    record.converged_at = record
        .entries
        .iter()
        .position(|e| (e.rho_minus_n - rm).abs() < opts.bvp_tol);
    let slack = opts.fit_floor;
    for w in record.entries.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let resolved = rm - a.rho_minus_n > opts.fit_floor;
        let tol = if resolved { 0.0 } else { slack };
        if b.rho_minus_n <= a.rho_minus_n - tol || (resolved && b.rho_minus_n == a.rho_minus_n) {
            record.monotone = false;
            record.diagnostics.push(format!(
                "rho_minus_n not increasing between members {} and {}",
                a.n, b.n
            ));
        }
        if b.tp_n >= a.tp_n + tol || (resolved && b.tp_n == a.tp_n) {
            record.monotone = false;
            record.diagnostics.push(format!(
                "tp_n not decreasing between members {} and {}",
                a.n, b.n
            ));
        }
    }
    for e in &record.entries {
        if e.rho_minus_n >= rm + slack {
            record.monotone = false;
            record
                .diagnostics
                .push(format!("member {} overshoots the left state", e.n));
        }
    }
    let usable: Vec<&SequenceEntry> = record
        .entries
        .iter()
        .filter(|e| rm - e.rho_minus_n > opts.fit_floor && e.tp_n > record.tp)
        .collect();
    let xs: Vec<f64> = usable.iter().map(|e| e.x_hat).collect();
    let le: Vec<f64> = usable.iter().map(|e| (rm - e.rho_minus_n).ln()).collect();
    record.rate_fit = linear_fit(&xs, &le).ok();
    let ds: Vec<f64> = usable.iter().map(|e| e.delta).collect();
    let dt: Vec<f64> = usable.iter().map(|e| e.tp_n - record.tp).collect();
    record.tp_fit = linear_fit(&ds, &dt).ok();
    let lds: Vec<f64> = ds.iter().map(|d| d.ln()).collect();
    let ldt: Vec<f64> = dt.iter().map(|d| d.ln()).collect();
    record.tp_power_fit = linear_fit(&lds, &ldt).ok();
}

/// Translates a monotone curve so that `W(0) = rho_star`.
pub fn normalize_shift(curve: &ProfileCurve, rho_star: f64) -> Result<ProfileCurve> {
    Ok(curve.translated(-crossing(curve, rho_star)?))
}

/// The position where a monotone curve attains `rho`.
pub fn crossing(curve: &ProfileCurve, rho: f64) -> Result<f64> {
    let (lo, hi) = (curve.grid_min(), curve.x_hat());
    let (wl, wh) = (curve.evaluate(lo), curve.evaluate(hi));
    let tail = curve.right_tail();
    if rho >= wh {
        if tail.delta > 0.0 && rho < tail.rho_plus {
            return Ok(-((tail.rho_plus - rho) / tail.delta).ln() / tail.lambda);
        }
        if rho == wh {
            return Ok(hi);
        }
        return Err(Error::Domain(format!(
            "density {rho} is not attained (right limit {})",
            tail.rho_plus
        )));
    }
    if rho < wl {
        return Err(Error::Domain(format!(
            "density {rho} is not attained (curve starts at {wl})"
        )));
    }
    if rho == wl {
        return Ok(lo);
    }
    roots::bisect(
        |x| curve.evaluate(x) - rho,
        lo,
        hi,
        1e-14 * (1.0 + lo.abs().max(hi.abs())),
        roots::DEFAULT_MAX_ITER,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniquenessReport {
    pub sup_distance: f64,
    pub at: f64,
}

/// Solves from two tail amplitudes and measures the distance between the
/// normalized results on their common grid.
pub fn uniqueness_check(
    problem: &BvpProblem,
    seed_a: f64,
    seed_b: f64,
    opts: &BvpOptions,
) -> Result<UniquenessReport> {
    let solve = |d: f64| {
        solve_bvp(
            problem,
            &BvpOptions {
                delta0: d,
                ..opts.clone()
            },
        )
    };
    let a = solve(seed_a)?.curve;
    let b = solve(seed_b)?.curve;
    Ok(sup_distance(&a, &b))
}

/// Largest `|A - B|` over the nodes of either curve inside their common range.
pub fn sup_distance(a: &ProfileCurve, b: &ProfileCurve) -> UniquenessReport {
    let lo = a.grid_min().max(b.grid_min());
    let hi = a.x_hat().min(b.x_hat());
    let mut best = UniquenessReport {
        sup_distance: 0.0,
        at: lo,
    };
    for &x in a
        .grid()
        .iter()
        .chain(b.grid())
        .filter(|&&x| x >= lo && x <= hi)
    {
        let d = (a.evaluate(x) - b.evaluate(x)).abs();
        if d > best.sup_distance {
            best = UniquenessReport {
                sup_distance: d,
                at: x,
            };
        }
    }
    best
}

/// Positive root of `K(s) = 1 - V ell s / f_star - exp(-V ell s / f_bar)`.
pub fn slope_equation_root(problem: &BvpProblem) -> Result<f64> {
    let p = &problem.params;
    if !p.law.is_linear() {
        return Err(Error::Unsupported(format!(
            "slope equation needs the linear law, got {}",
            p.law.name()
        )));
    }
    slope_root(p.v, p.ell, problem.f_bar, problem.f_star)
}

/// Root finder behind [`slope_equation_root`], in terms of the raw constants.
pub fn slope_root(v: f64, ell: f64, f_bar: f64, f_star: f64) -> Result<f64> {
    if !(f_bar > 0.0 && f_bar <= f_star) {
        return Err(Error::Domain(format!(
            "need 0 < f_bar <= f_star, got {f_bar}, {f_star}"
        )));
    }
    if f_bar >= f_star * (1.0 - 1e-14) {
        return Ok(0.0);
    }
    // with u = V ell s the nonzero root solves (1 - exp(-u/f_bar)) / u = 1 / f_star on (0, f_star]
    let g = |u: f64| -(-u / f_bar).exp_m1() / u - 1.0 / f_star;
    let u = roots::bisect(g, f_star * 1e-12, f_star, 1e-16, roots::DEFAULT_MAX_ITER)?;
    Ok(u / (v * ell))
}

pub fn k_function(v: f64, ell: f64, f_bar: f64, f_star: f64, sigma: f64) -> f64 {
    let u = v * ell * sigma;
    1.0 - u / f_star - (-u / f_bar).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailConcavity {
    pub x_bar: f64,
    /// Second differences with magnitude below this were ignored.
    pub noise: f64,
}

/// Smallest `x_bar >= 0` with convex samples on `x <= -x_bar` and concave
/// samples on `x >= x_bar`; `None` for constant profiles.
pub fn tail_concavity(curve: &ProfileCurve, dx: f64, noise: f64) -> Option<TailConcavity> {
    let (lo, hi) = (curve.grid_min(), curve.x_hat() + 10.0 * dx);
    if !(hi - lo > 2.0 * dx) || curve.values().iter().all(|&w| w == curve.values()[0]) {
        return None;
    }
    let n = ((hi - lo) / dx).floor() as usize;
    let xs: Vec<f64> = (0..=n).map(|k| lo + k as f64 * dx).collect();
    let ws: Vec<f64> = xs.iter().map(|&x| curve.evaluate(x)).collect();
    let mut x_bar: f64 = 0.0;
    for k in 1..n {
        let d2 = ws[k + 1] - 2.0 * ws[k] + ws[k - 1];
        if d2.abs() <= noise {
            continue;
        }
        let x = xs[k];
        if x > 0.0 && d2 > 0.0 {
            x_bar = x_bar.max(x + dx);
        }
        if x < 0.0 && d2 < 0.0 {
            x_bar = x_bar.max(-x + dx);
        }
    }
    Some(TailConcavity { x_bar, noise })
}
