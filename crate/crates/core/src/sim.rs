//! Follow-the-leader particle dynamics.
//!
//! Cars are indexed from the back: car `i` follows car `i + 1`, and the last
//! car is the platoon leader whose speed comes from a [`LeaderRule`].

use std::fmt;
use std::sync::Arc;

use crate::curve::ProfileCurve;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::quad::adaptive_simpson;
use crate::roots;

pub const DEFAULT_DT_SAFETY: f64 = 0.1;
const GAP_SLACK: f64 = 1e-12;

pub type DensityFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum LeaderRule {
    /// Leader drives at `V phi(rho)`.
    ConstantDensity(f64),
    /// Leader drives at `V phi(curve(z_leader))`.
    TraceCurve(DensityFn),
    /// Leader does not move.
    Frozen,
}

impl fmt::Debug for LeaderRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LeaderRule::ConstantDensity(r) => write!(f, "ConstantDensity({r})"),
            LeaderRule::TraceCurve(_) => write!(f, "TraceCurve"),
            LeaderRule::Frozen => write!(f, "Frozen"),
        }
    }
}

impl LeaderRule {
    pub fn trace(curve: &ProfileCurve) -> Self {
        let c = curve.clone();
        LeaderRule::TraceCurve(Arc::new(move |z| c.evaluate(z)))
    }

    /// Density the leader behaves as if it had at position `z`.
    pub fn density(&self, z: f64) -> f64 {
        match self {
            LeaderRule::ConstantDensity(r) => *r,
            LeaderRule::TraceCurve(c) => c(z),
            LeaderRule::Frozen => 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Platoon {
    positions: Vec<f64>,
    params: ModelParams,
    leader: LeaderRule,
}

fn check_order(z: &[f64], ell: f64) -> Result<()> {
    for (i, w) in z.windows(2).enumerate() {
        let gap = w[1] - w[0];
        if !gap.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite gap behind car {}",
                i + 1
            )));
        }
        if gap < ell * (1.0 - GAP_SLACK) {
            return Err(Error::Invariant(format!(
                "cars {i} and {} overlap: gap {gap} < ell {ell}",
                i + 1
            )));
        }
    }
    Ok(())
}

impl Platoon {
    pub fn new(positions: Vec<f64>, params: ModelParams, leader: LeaderRule) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Domain("platoon needs at least one car".into()));
        }
        check_order(&positions, params.ell)?;
        if let LeaderRule::ConstantDensity(r) = leader {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::Domain(format!("leader density {r} outside (0, 1]")));
            }
        }
        Ok(Self {
            positions,
            params,
            leader,
        })
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn leader(&self) -> &LeaderRule {
        &self.leader
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn with_positions(&self, positions: Vec<f64>) -> Result<Self> {
        Self::new(positions, self.params.clone(), self.leader.clone())
    }

    pub fn with_leader(mut self, leader: LeaderRule) -> Self {
        self.leader = leader;
        self
    }

    /// `ell / (z_{i+1} - z_i)`; undefined for the leader.
    pub fn local_density(&self, i: usize) -> Result<f64> {
        if i + 1 >= self.positions.len() {
            return Err(Error::Index(format!(
                "car {i} has no leader in a platoon of {}",
                self.positions.len()
            )));
        }
        Ok(self.params.ell / (self.positions[i + 1] - self.positions[i]))
    }

    /// Densities of all followers.
    pub fn densities(&self) -> Vec<f64> {
        densities(&self.positions, self.params.ell)
    }

    pub fn density_field(&self) -> DensityField {
        let rho = self.densities();
        DensityField {
            cells: self
                .positions
                .windows(2)
                .zip(rho)
                .map(|(w, r)| (w[0], w[1], r))
                .collect(),
        }
    }
}

pub fn densities(z: &[f64], ell: f64) -> Vec<f64> {
    z.windows(2).map(|w| ell / (w[1] - w[0])).collect()
}

/// Piecewise-constant density `rho_i` on `[z_i, z_{i+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub cells: Vec<(f64, f64, f64)>,
}

impl DensityField {
    pub fn value(&self, x: f64) -> Option<f64> {
        let k = self.cells.partition_point(|c| c.1 <= x);
        self.cells.get(k).filter(|c| c.0 <= x).map(|c| c.2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub dt: f64,
    pub t_end: f64,
    /// Save every `stride` steps (the final state is always saved).
    pub stride: usize,
    /// Require `dt <= safety * ell / V`.
    pub safety: f64,
}

impl SimOptions {
    pub fn new(dt: f64, t_end: f64) -> Self {
        Self {
            dt,
            t_end,
            stride: 1,
            safety: DEFAULT_DT_SAFETY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub ell: f64,
    pub times: Vec<f64>,
    pub positions: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn densities(&self, k: usize) -> Vec<f64> {
        densities(&self.positions[k], self.ell)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

fn velocities(params: &ModelParams, leader: &LeaderRule, z: &[f64], out: &mut [f64]) {
    let n = z.len();
    for i in 0..n - 1 {
        let gap = z[i + 1] - z[i];
        let rho = if gap > params.ell {
            params.ell / gap
        } else {
            1.0
        };
        out[i] = params.v * params.law.value(rho);
    }
    out[n - 1] = match leader {
        LeaderRule::Frozen => 0.0,
        other => params.v * params.law.value(other.density(z[n - 1]).clamp(0.0, 1.0)),
    };
}

/// Classical four-stage integration of the car positions.
pub fn simulate(platoon: &Platoon, opts: SimOptions) -> Result<Trajectory> {
    let params = &platoon.params;
    let limit = opts.safety * params.ell / params.v;
    if !(opts.dt > 0.0 && opts.dt <= limit * (1.0 + 1e-12)) {
        return Err(Error::StepSize(format!(
            "dt = {} must lie in (0, {limit}]",
            opts.dt
        )));
    }
    if !(opts.t_end >= 0.0) {
        return Err(Error::Domain(format!(
            "horizon {} must be nonnegative",
            opts.t_end
        )));
    }
    let stride = opts.stride.max(1);
    let n = platoon.len();
    let steps = (opts.t_end / opts.dt - 1e-9).ceil().max(0.0) as usize;
    let mut z = platoon.positions.clone();
    let mut traj = Trajectory {
        ell: params.ell,
        times: vec![0.0],
        positions: vec![z.clone()],
    };
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut t = 0.0;
    for s in 0..steps {
        let h = if s + 1 == steps {
            opts.t_end - s as f64 * opts.dt
        } else {
            opts.dt
        };
        velocities(params, &platoon.leader, &z, &mut k1);
        for i in 0..n {
            tmp[i] = z[i] + 0.5 * h * k1[i];
        }
        velocities(params, &platoon.leader, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = z[i] + 0.5 * h * k2[i];
        }
        velocities(params, &platoon.leader, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = z[i] + h * k3[i];
        }
        velocities(params, &platoon.leader, &tmp, &mut k4);
        for i in 0..n {
            z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        t = (s + 1) as f64 * opts.dt;
        if s + 1 == steps {
            t = opts.t_end;
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite position at t = {t}")));
        }
        if let Err(e) = check_order(&z, params.ell) {
            return Err(Error::StepSize(format!("{e} at t = {t}; use a smaller dt")));
        }
        if (s + 1) % stride == 0 || s + 1 == steps {
            traj.times.push(t);
            traj.positions.push(z.clone());
        }
    }
    let _ = t;
    Ok(traj)
}

/// Cars placed so that each gap is `ell / W(z_i)`, with `z0` at index `n_back`.
pub fn generate_distribution(
    params: &ModelParams,
    curve: &ProfileCurve,
    z0: f64,
    n_back: usize,
    n_fwd: usize,
) -> Result<Platoon> {
    let positions = generate_positions(params.ell, curve, z0, n_back, n_fwd)?;
    Platoon::new(positions, params.clone(), LeaderRule::trace(curve))
}

pub fn generate_positions(
    ell: f64,
    curve: &ProfileCurve,
    z0: f64,
    n_back: usize,
    n_fwd: usize,
) -> Result<Vec<f64>> {
    let w = |z: f64| curve.evaluate(z);
    let mut fwd = vec![z0];
    for _ in 0..n_fwd {
        let z = *fwd.last().unwrap();
        let wz = w(z);
        if !(wz > 0.0 && wz <= 1.0) {
            return Err(Error::Domain(format!("W({z}) = {wz} outside (0, 1]")));
        }
        fwd.push(z + ell / wz);
    }
    let mut back = Vec::with_capacity(n_back);
    let mut next = z0;
    for _ in 0..n_back {
        let z = predecessor(ell, curve, next)?;
        back.push(z);
        next = z;
    }
    back.reverse();
    back.extend(fwd);
    Ok(back)
}

/// Solves `z + ell/W(z) = next` for the follower position `z`.
fn predecessor(ell: f64, curve: &ProfileCurve, next: f64) -> Result<f64> {
    let w = |z: f64| curve.evaluate(z);
    let wn = w(next);
    if !(wn > 0.0) {
        return Err(Error::Domain(format!("W({next}) = {wn} is not positive")));
    }
    let resid = |z: f64| z + ell / w(z) - next;
    let scale = 1.0 + next.abs();
    let tight = 4.0 * f64::EPSILON * scale;
    // damped fixed point z <- next - ell/W(z); halve the damping if the residual grows
    let mut z = next - ell / wn;
    let mut r = resid(z);
    let mut theta = 1.0;
    for _ in 0..roots::DEFAULT_MAX_ITER {
        if r.abs() <= tight {
            return Ok(z);
        }
        let cand = (1.0 - theta) * z + theta * (next - ell / w(z));
        let rc = resid(cand);
        if rc.abs() < r.abs() {
            z = cand;
            r = rc;
        } else {
            theta *= 0.5;
            if theta < 1e-6 {
                break;
            }
        }
    }
    if r.abs() <= 1e-12 * scale {
        return Ok(z);
    }
    // bracket: g(next - ell) >= 0, g(next - ell/W_low) <= 0 for monotone W
    let w_low = curve
        .left_limit()
        .min(curve.values().first().copied().unwrap_or(wn))
        .max(1e-300);
    let lo = next - ell / w_low;
    let hi = next - ell;
    roots::bisect(resid, lo, hi, tight, roots::DEFAULT_MAX_ITER)
        .map_err(|e| Error::Numerical(format!("predecessor of {next} not found: {e}")))
}

/// Maximum of `|W(z_i(t) - speed t) - rho_i(t)|` over saved times and followers.
pub fn trace_error_moving(traj: &Trajectory, curve: &ProfileCurve, speed: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for (t, z) in traj.times.iter().zip(&traj.positions) {
        for (i, w) in z.windows(2).enumerate() {
            let rho = traj.ell / (w[1] - w[0]);
            worst = worst.max((curve.evaluate(z[i] - speed * t) - rho).abs());
        }
    }
    worst
}

pub fn trace_error(traj: &Trajectory, curve: &ProfileCurve) -> f64 {
    trace_error_moving(traj, curve, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Takeover {
    pub car: usize,
    /// First time `z_i(t)` reaches `z_{i+1}(0)`, linearly interpolated.
    pub event: f64,
    /// `int dz / (V phi(W))` over the car's initial gap.
    pub quadrature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodSummary {
    pub takeovers: Vec<Takeover>,
    pub mean: f64,
    pub std: f64,
}

/// Period of every follower in `cars`, measured on a simulated trajectory
/// and by quadrature along `curve`.
pub fn measure_period(
    params: &ModelParams,
    traj: &Trajectory,
    curve: &ProfileCurve,
    cars: std::ops::Range<usize>,
) -> Result<PeriodSummary> {
    let z0 = &traj.positions[0];
    let mut out = Vec::with_capacity(cars.len());
    for i in cars {
        if i + 1 >= z0.len() {
            return Err(Error::Index(format!("car {i} has no leader")));
        }
        let target = z0[i + 1];
        let mut event = None;
        for k in 1..traj.len() {
            let (a, b) = (traj.positions[k - 1][i], traj.positions[k][i]);
            if a < target && b >= target {
                let (ta, tb) = (traj.times[k - 1], traj.times[k]);
                event = Some(ta + (target - a) / (b - a) * (tb - ta));
                break;
            }
        }
        let event = event.ok_or_else(|| {
            Error::Horizon(format!(
                "car {i} did not reach its leader's start by t = {}",
                traj.times.last().copied().unwrap_or(0.0)
            ))
        })?;
        let integrand = |s: f64| 1.0 / (params.v * params.law.value(curve.evaluate(s)));
        let quadrature = adaptive_simpson(integrand, z0[i], target, 1e-10);
        out.push(Takeover {
            car: i,
            event,
            quadrature,
        });
    }
    if out.is_empty() {
        return Err(Error::Index("no cars selected".into()));
    }
    let n = out.len() as f64;
    let mean = out.iter().map(|t| t.event).sum::<f64>() / n;
    let std = (out.iter().map(|t| (t.event - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(PeriodSummary {
        takeovers: out,
        mean,
        std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(ell: f64) -> ModelParams {
        ModelParams::linear(ell, 1.0).unwrap()
    }

    #[test]
    fn local_densities() {
        let p = Platoon::new(vec![0.0, 0.5], params(0.5), LeaderRule::Frozen).unwrap();
        assert_eq!(p.local_density(0).unwrap(), 1.0);
        let p = Platoon::new(vec![0.0, 1.0], params(0.5), LeaderRule::Frozen).unwrap();
        assert_eq!(p.local_density(0).unwrap(), 0.5);
        let p = Platoon::new(vec![0.0, 0.25], params(0.1), LeaderRule::Frozen).unwrap();
        assert!((p.local_density(0).unwrap() - 0.4).abs() < 1e-15);
        assert!(matches!(p.local_density(1), Err(Error::Index(_))));
    }

    #[test]
    fn overlapping_cars_rejected() {
        assert!(Platoon::new(vec![0.0, 0.4], params(0.5), LeaderRule::Frozen).is_err());
        assert!(Platoon::new(
            vec![0.0, 1.0],
            params(0.5),
            LeaderRule::ConstantDensity(0.0)
        )
        .is_err());
    }

    #[test]
    fn bumper_to_bumper_behind_frozen_leader() {
        let p = Platoon::new(vec![0.0, 0.5], params(0.5), LeaderRule::Frozen).unwrap();
        let tr = simulate(&p, SimOptions::new(0.05, 2.0)).unwrap();
        for z in &tr.positions {
            assert_eq!(z, &vec![0.0, 0.5]);
        }
    }

    #[test]
    fn uniform_platoon_translates() {
        let ell = 0.5;
        let rho = 0.4;
        let z: Vec<f64> = (0..20).map(|i| i as f64 * ell / rho).collect();
        let p = Platoon::new(z.clone(), params(ell), LeaderRule::ConstantDensity(rho)).unwrap();
        let t_end = 3.0;
        let tr = simulate(&p, SimOptions::new(0.05, t_end)).unwrap();
        let last = tr.positions.last().unwrap();
        for (a, b) in z.iter().zip(last) {
            assert!((b - a - 0.6 * t_end).abs() < 1e-12);
        }
        for k in 0..tr.len() {
            assert!(tr.densities(k).iter().all(|r| (r - rho).abs() < 1e-12));
        }
    }

    #[test]
    fn dt_limit_enforced() {
        let p = Platoon::new(vec![0.0, 1.0], params(0.5), LeaderRule::Frozen).unwrap();
        assert!(matches!(
            simulate(&p, SimOptions::new(0.2, 1.0)),
            Err(Error::StepSize(_))
        ));
    }

    #[test]
    fn field_cells() {
        let p = Platoon::new(vec![0.0, 1.0], params(0.5), LeaderRule::Frozen).unwrap();
        assert_eq!(p.density_field().cells, vec![(0.0, 1.0, 0.5)]);
        let z: Vec<f64> = (0..5).map(|i| i as f64).collect();
        let f = Platoon::new(z, params(0.5), LeaderRule::Frozen)
            .unwrap()
            .density_field();
        assert!(f.cells.iter().all(|c| c.2 == 0.5));
        assert_eq!(f.value(2.5), Some(0.5));
        assert_eq!(f.value(4.0), None);
    }

    #[test]
    fn generated_from_constant_curves() {
        let p = params(0.5);
        let c = ProfileCurve::constant(0.5);
        let pl = generate_distribution(&p, &c, 0.0, 0, 3).unwrap();
        assert_eq!(pl.positions(), &[0.0, 1.0, 2.0, 3.0]);
        let c = ProfileCurve::constant(1.0);
        let pl = generate_distribution(&p, &c, 0.0, 2, 2).unwrap();
        for w in pl.positions().windows(2) {
            assert!((w[1] - w[0] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_curve_period_and_trace() {
        let p = params(0.5);
        let rho = 0.3;
        let c = ProfileCurve::constant(rho);
        let pl = generate_distribution(&p, &c, 0.0, 5, 5).unwrap();
        let tr = simulate(&pl, SimOptions::new(0.05, 3.0)).unwrap();
        assert!(trace_error(&tr, &c) < 1e-12);
        let per = measure_period(&p, &tr, &c, 0..10).unwrap();
        let tp = 0.5 / p.flux(rho).unwrap();
        for t in &per.takeovers {
            assert!((t.quadrature - tp).abs() < 1e-10);
            assert!((t.event - tp).abs() < 1e-10);
        }
        let short = simulate(&pl, SimOptions::new(0.05, 1.0)).unwrap();
        assert!(matches!(
            measure_period(&p, &short, &c, 0..3),
            Err(Error::Horizon(_))
        ));
    }
}
