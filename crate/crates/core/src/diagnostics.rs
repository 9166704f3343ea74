//! Distance of car distributions to a profile, the stability experiment,
//! and shape checks of converged profiles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bvp::{self, BvpProblem, TailConcavity};
use crate::csv::CsvTable;
use crate::curve::ProfileCurve;
use crate::error::{Error, Result};
use crate::rates::RateReport;
use crate::sim::{self, LeaderRule, Platoon, SimOptions};
use crate::stats::linear_fit;

pub const DEFAULT_MARGIN: f64 = 1e-6;
pub const DEFAULT_EPS: f64 = 0.02;
pub const GAP_SLACK: f64 = 1e-8;

/// Position where the profile takes the value `rho`, for densities at least
/// `margin` inside the profile's limits.
pub fn profile_inverse(curve: &ProfileCurve, rho: f64, margin: f64) -> Result<f64> {
    let (lo, hi) = (curve.left_limit() + margin, curve.right_limit() - margin);
    if !(rho >= lo && rho <= hi) {
        return Err(Error::Range(format!("density {rho} outside [{lo}, {hi}]")));
    }
    bvp::crossing(curve, rho).map_err(|e| Error::Range(e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub h_plus: f64,
    pub h_minus: f64,
    /// Followers whose density lies inside the admissible range.
    pub contributing: Vec<usize>,
}

impl Envelope {
    pub fn gap(&self) -> f64 {
        self.h_minus - self.h_plus
    }
}

/// Envelope shifts of positions `z` against `curve`.
pub fn envelope_of(z: &[f64], ell: f64, curve: &ProfileCurve, margin: f64) -> Result<Envelope> {
    let mut env = Envelope {
        h_plus: f64::INFINITY,
        h_minus: f64::NEG_INFINITY,
        contributing: vec![],
    };
    for (i, w) in z.windows(2).enumerate() {
        let rho = ell / (w[1] - w[0]);
        let Ok(x) = profile_inverse(curve, rho, margin) else {
            continue;
        };
        let s = w[0] - x;
        env.h_plus = env.h_plus.min(s);
        env.h_minus = env.h_minus.max(s);
        env.contributing.push(i);
    }
    if env.contributing.is_empty() {
        return Err(Error::Degenerate(
            "no car has a density strictly between the profile limits".into(),
        ));
    }
    Ok(env)
}

pub fn envelope_shifts(platoon: &Platoon, curve: &ProfileCurve) -> Result<Envelope> {
    envelope_of(
        platoon.positions(),
        platoon.params().ell,
        curve,
        DEFAULT_MARGIN,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeTrace {
    pub times: Vec<f64>,
    pub h_plus: Vec<f64>,
    pub h_minus: Vec<f64>,
    pub contributing: Vec<Vec<usize>>,
}

impl EnvelopeTrace {
    pub fn gap(&self) -> Vec<f64> {
        self.h_minus
            .iter()
            .zip(&self.h_plus)
            .map(|(a, b)| a - b)
            .collect()
    }

    /// Largest single-step growth of the gap.
    pub fn max_increase(&self) -> f64 {
        self.gap()
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Fraction of steps on which the gap grew by more than `slack`.
    pub fn increase_fraction(&self, slack: f64) -> f64 {
        let g = self.gap();
        if g.len() < 2 {
            return 0.0;
        }
        g.windows(2).filter(|w| w[1] - w[0] > slack).count() as f64 / (g.len() - 1) as f64
    }

    pub fn reduction(&self) -> f64 {
        let g = self.gap();
        g[g.len() - 1] / g[0]
    }

    pub fn to_csv(&self) -> String {
        let mut t = CsvTable::new(&["t", "h_plus", "h_minus", "gap"]);
        for k in 0..self.times.len() {
            t.nums(&[
                self.times[k],
                self.h_plus[k],
                self.h_minus[k],
                self.h_minus[k] - self.h_plus[k],
            ]);
        }
        t.into_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pattern {
    /// One period of a sine on the inner part of the transition, with the
    /// negative lobe rescaled so that the total length of the platoon is kept.
    Dipole,
    /// The dipole with independent uniform factors in `[0.5, 1]` per car.
    Seeded(u64),
    /// `4 (rho - rho_-) (rho_+ - rho) / (rho_+ - rho_-)^2`; lengthens the platoon.
    Bump,
    None,
}

/// Part of the transition, in normalized density, left untouched on each side.
const DIPOLE_EDGE: f64 = 0.1;

/// Spacings of a profile-generated platoon are stretched by `1 + eps * s_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub eps: f64,
    pub pattern: Pattern,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            pattern: Pattern::Dipole,
        }
    }
}

impl Perturbation {
    pub fn none() -> Self {
        Self {
            eps: 0.0,
            pattern: Pattern::None,
        }
    }

    /// Pattern values `s_i` for follower densities `rho` of spacing `ell / rho`.
    pub fn weights(&self, rho: &[f64], rho_minus: f64, rho_plus: f64) -> Vec<f64> {
        let width = rho_plus - rho_minus;
        let unit = |r: f64| (r - rho_minus) / width;
        let mut rng = match self.pattern {
            Pattern::Seeded(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
            _ => None,
        };
        let dipole = |u: f64| {
            if u <= DIPOLE_EDGE || u >= 1.0 - DIPOLE_EDGE {
                0.0
            } else {
                (2.0 * std::f64::consts::PI * (u - DIPOLE_EDGE) / (1.0 - 2.0 * DIPOLE_EDGE)).sin()
            }
        };
        let mut s: Vec<f64> = rho
            .iter()
            .map(|&r| match self.pattern {
                Pattern::None => 0.0,
                Pattern::Bump => (4.0 * unit(r) * (1.0 - unit(r))).clamp(0.0, 1.0),
                Pattern::Dipole => dipole(unit(r)),
                Pattern::Seeded(_) => {
                    dipole(unit(r)) * rng.as_mut().unwrap().random_range(0.5..=1.0)
                }
            })
            .collect();
        if matches!(self.pattern, Pattern::Dipole | Pattern::Seeded(_)) {
            // spacing change of car i is eps * s_i * ell / rho_i; balance the lobes
            let (mut pos, mut neg) = (0.0, 0.0);
            for (v, r) in s.iter().zip(rho) {
                if *v > 0.0 {
                    pos += v / r;
                } else {
                    neg -= v / r;
                }
            }
            if pos > 0.0 && neg > 0.0 {
                let k = pos / neg;
                for v in s.iter_mut().filter(|v| **v < 0.0) {
                    *v *= k;
                }
            }
        }
        s
    }

    /// Perturbed follower densities, kept nondecreasing.
    pub fn apply(&self, rho: &[f64], rho_minus: f64, rho_plus: f64) -> Vec<f64> {
        let s = self.weights(rho, rho_minus, rho_plus);
        let mut out: Vec<f64> = rho
            .iter()
            .zip(&s)
            .map(|(r, s)| r / (1.0 + self.eps * s))
            .collect();
        for i in 1..out.len() {
            out[i] = out[i].max(out[i - 1]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityOptions {
    pub t_end: f64,
    pub dt: f64,
    pub stride: usize,
    pub n_back: usize,
    pub n_fwd: usize,
    pub margin: f64,
}

impl StabilityOptions {
    /// Twenty periods with a 100 + 100 car platoon, sampled once per period.
    ///
    /// The step divides the period exactly, so saved states share the phase of
    /// the car lattice relative to the profile.
    pub fn for_problem(problem: &BvpProblem) -> Self {
        let p = &problem.params;
        let tp = problem.period();
        let per_period = (tp / (sim::DEFAULT_DT_SAFETY * p.ell / p.v))
            .ceil()
            .max(1.0);
        Self {
            t_end: 20.0 * tp,
            dt: tp / per_period,
            stride: per_period as usize,
            n_back: 100,
            n_fwd: 100,
            margin: DEFAULT_MARGIN,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StabilityOutcome {
    pub initial: Platoon,
    pub trace: EnvelopeTrace,
}

/// Positions with the car at index `anchor` fixed and the given follower densities.
pub fn positions_from_densities(anchor_z: f64, anchor: usize, rho: &[f64], ell: f64) -> Vec<f64> {
    let n = rho.len() + 1;
    let mut z = vec![0.0; n];
    z[anchor] = anchor_z;
    for i in anchor..n - 1 {
        z[i + 1] = z[i] + ell / rho[i];
    }
    for i in (0..anchor).rev() {
        z[i] = z[i + 1] - ell / rho[i];
    }
    z
}

pub fn perturbed_platoon(
    problem: &BvpProblem,
    curve: &ProfileCurve,
    pert: &Perturbation,
    opts: &StabilityOptions,
) -> Result<Platoon> {
    let gen = sim::generate_distribution(&problem.params, curve, 0.0, opts.n_back, opts.n_fwd)?;
    let rho = pert.apply(&gen.densities(), curve.left_limit(), curve.right_limit());
    let z = positions_from_densities(gen.positions()[0], 0, &rho, problem.params.ell);
    Platoon::new(z, problem.params.clone(), LeaderRule::trace(curve))
}

/// Simulates a perturbed profile platoon and records its envelope shifts.
pub fn stability_run(
    problem: &BvpProblem,
    curve: &ProfileCurve,
    pert: &Perturbation,
    opts: &StabilityOptions,
) -> Result<StabilityOutcome> {
    let platoon = perturbed_platoon(problem, curve, pert, opts)?;
    let rho = platoon.densities();
    if let Some(i) = (1..rho.len()).find(|&i| rho[i] < rho[i - 1] - 1e-12) {
        return Err(Error::Precondition(format!(
            "initial densities decrease at car {i}"
        )));
    }
    let (lo, hi) = (curve.left_limit(), curve.right_limit());
    if let Some(r) = rho.iter().find(|&&r| r < lo - 1e-8 || r > hi + 1e-8) {
        return Err(Error::Precondition(format!(
            "initial density {r} outside [{lo}, {hi}]"
        )));
    }
    let traj = sim::simulate(
        &platoon,
        SimOptions {
            dt: opts.dt,
            t_end: opts.t_end,
            stride: opts.stride,
            safety: sim::DEFAULT_DT_SAFETY,
        },
    )?;
    let mut trace = EnvelopeTrace {
        times: vec![],
        h_plus: vec![],
        h_minus: vec![],
        contributing: vec![],
    };
    for (t, z) in traj.times.iter().zip(&traj.positions) {
        let env = envelope_of(z, problem.params.ell, curve, opts.margin)?;
        trace.times.push(*t);
        trace.h_plus.push(env.h_plus);
        trace.h_minus.push(env.h_minus);
        trace.contributing.push(env.contributing);
    }
    Ok(StabilityOutcome {
        initial: platoon,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeReport {
    pub concavity: Option<TailConcavity>,
    pub fitted_plus: Option<f64>,
    pub fitted_minus: Option<f64>,
    pub rel_err_plus: Option<f64>,
    pub rel_err_minus: Option<f64>,
    /// `lambda_minus < lambda_plus` from the characteristic equations.
    pub asymmetric: bool,
    /// Same comparison for the fitted rates.
    pub fitted_asymmetric: Option<bool>,
    pub slope_at_origin: f64,
}

impl ShapeReport {
    pub fn rates_match(&self, rel_tol: f64) -> bool {
        matches!((self.rel_err_plus, self.rel_err_minus), (Some(a), Some(b)) if a < rel_tol && b < rel_tol)
    }
}

/// Deviations from the limits used for the tail fits.
pub const FIT_WINDOW: (f64, f64) = (1e-7, 1e-3);

/// Tail concavity, fitted exponential tail rates and the slope at the origin.
pub fn shape_checks(curve: &ProfileCurve, rates: &RateReport, ell: f64) -> ShapeReport {
    let dx = ell / 16.0;
    let concavity = bvp::tail_concavity(curve, dx, 1e-13);
    let (lo, hi) = (
        curve.grid_min(),
        curve.x_hat() + 40.0 / rates.lambda_plus.max(1e-12),
    );
    let n = ((hi - lo) / dx).floor().max(0.0) as usize;
    let xs: Vec<f64> = (0..=n).map(|k| lo + k as f64 * dx).collect();
    let fit = |dev: &dyn Fn(f64) -> f64| -> Option<f64> {
        let (x, y): (Vec<f64>, Vec<f64>) = xs
            .iter()
            .filter_map(|&x| {
                let d = dev(x);
                (d > FIT_WINDOW.0 && d < FIT_WINDOW.1).then(|| (x, d.ln()))
            })
            .unzip();
        linear_fit(&x, &y).ok().map(|f| f.slope.abs())
    };
    let fitted_plus = fit(&|x| rates.rho_plus - curve.evaluate(x));
    let fitted_minus = fit(&|x| curve.evaluate(x) - rates.rho_minus);
    let h = 1e-3 * ell;
    ShapeReport {
        concavity,
        fitted_plus,
        fitted_minus,
        rel_err_plus: fitted_plus.map(|v| (v / rates.lambda_plus - 1.0).abs()),
        rel_err_minus: fitted_minus.map(|v| (v / rates.lambda_minus - 1.0).abs()),
        asymmetric: rates.lambda_minus < rates.lambda_plus,
        fitted_asymmetric: fitted_plus.zip(fitted_minus).map(|(p, m)| m < p),
        slope_at_origin: (curve.evaluate(h) - curve.evaluate(-h)) / (2.0 * h),
    }
}
