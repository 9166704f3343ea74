//! Traveling waves of speed `V sigma` as stationary profiles of the law `phi - sigma`.

use crate::bvp::BvpProblem;
use crate::curve::ProfileCurve;
use crate::error::{Error, Result};
use crate::model::{ModelParams, VelocityLaw};
use crate::sim::{self, LeaderRule, Platoon, SimOptions};

const ADMISSIBILITY_GRID: usize = 1001;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSpec {
    pub sigma: f64,
}

impl FrameSpec {
    pub fn new(sigma: f64) -> Result<Self> {
        if !sigma.is_finite() {
            return Err(Error::Frame(format!("sigma must be finite, got {sigma}")));
        }
        Ok(Self { sigma })
    }

    pub fn law(&self, law: &VelocityLaw) -> VelocityLaw {
        law.shifted(self.sigma)
    }

    /// Parameters whose law is `phi - sigma`.
    pub fn params(&self, params: &ModelParams) -> ModelParams {
        params.with_law(self.law(&params.law))
    }

    /// `V rho (phi(rho) - sigma)`.
    pub fn flux(&self, params: &ModelParams, rho: f64) -> f64 {
        params.v * rho * (params.law.value(rho) - self.sigma)
    }

    /// Lab-frame wave speed.
    pub fn wave_speed(&self, params: &ModelParams) -> f64 {
        params.v * self.sigma
    }

    /// Right state of the moving-frame conjugate pair.
    pub fn conjugate(&self, params: &ModelParams, rho_minus: f64) -> Result<f64> {
        self.params(params)
            .conjugate_density(rho_minus)
            .map_err(|e| Error::Frame(e.to_string()))
    }
}

/// The stationary problem seen from the frame moving at `V sigma`.
pub fn shift_problem(
    params: &ModelParams,
    sigma: f64,
    rho_minus: f64,
    rho_plus: f64,
) -> Result<BvpProblem> {
    let frame = FrameSpec::new(sigma)?;
    if !(0.0..=1.0).contains(&rho_minus) || !(0.0..=1.0).contains(&rho_plus) || rho_minus > rho_plus
    {
        return Err(Error::Frame(format!(
            "need 0 <= rho_minus <= rho_plus <= 1, got ({rho_minus}, {rho_plus})"
        )));
    }
    for k in 0..ADMISSIBILITY_GRID {
        let r = rho_minus + (rho_plus - rho_minus) * k as f64 / (ADMISSIBILITY_GRID - 1) as f64;
        let s = params.law.value(r) - sigma;
        if !(s > 0.0) {
            return Err(Error::Frame(format!(
                "phi({r}) - sigma = {s} is not positive"
            )));
        }
    }
    let (fm, fp) = (frame.flux(params, rho_minus), frame.flux(params, rho_plus));
    if (fm - fp).abs() > 1e-10 {
        return Err(Error::Frame(format!(
            "pair is not conjugate in the moving frame: {fm} vs {fp}"
        )));
    }
    BvpProblem::new(frame.params(params), rho_minus, rho_plus)
        .map_err(|e| Error::Frame(e.to_string()))
}

/// `(f(rho_-) - f(rho_+)) / (rho_- - rho_+)` with the lab-frame flux.
pub fn lab_jump_speed(params: &ModelParams, rho_minus: f64, rho_plus: f64) -> Result<f64> {
    if rho_minus == rho_plus {
        return Err(Error::Degenerate("equal states have no jump speed".into()));
    }
    Ok((params.flux(rho_minus)? - params.flux(rho_plus)?) / (rho_minus - rho_plus))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TravelOptions {
    pub t_end: f64,
    pub dt: f64,
    pub stride: usize,
    pub n_back: usize,
    pub n_fwd: usize,
}

impl TravelOptions {
    /// `t_end` with the default step and a 60 + 60 car platoon.
    pub fn new(params: &ModelParams, t_end: f64) -> Self {
        Self {
            t_end,
            dt: sim::DEFAULT_DT_SAFETY * params.ell / params.v,
            stride: 1,
            n_back: 60,
            n_fwd: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TravelReport {
    pub sigma: f64,
    pub times: Vec<f64>,
    /// Largest `|W(z_i - V sigma t) - rho_i|` over followers at each saved time.
    pub errors: Vec<f64>,
}

impl TravelReport {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Lab-frame platoon generated from the moving-frame profile at `t = 0`,
/// simulated with the original law and compared with `W(x - V sigma t)`.
pub fn verify_traveling(
    curve: &ProfileCurve,
    params: &ModelParams,
    sigma: f64,
    opts: &TravelOptions,
) -> Result<TravelReport> {
    let z = sim::generate_positions(params.ell, curve, 0.0, opts.n_back, opts.n_fwd)?;
    let platoon = Platoon::new(
        z,
        params.clone(),
        LeaderRule::ConstantDensity(curve.right_limit()),
    )?;
    let traj = sim::simulate(
        &platoon,
        SimOptions {
            dt: opts.dt,
            t_end: opts.t_end,
            stride: opts.stride,
            safety: sim::DEFAULT_DT_SAFETY,
        },
    )?;
    let speed = params.v * sigma;
    let errors = traj
        .times
        .iter()
        .zip(&traj.positions)
        .map(|(&t, z)| {
            z.windows(2)
                .map(|w| (curve.evaluate(w[0] - speed * t) - params.ell / (w[1] - w[0])).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(TravelReport {
        sigma,
        times: traj.times,
        errors,
    })
}
