//! Model parameters, velocity laws and the LWR flux.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::roots;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Default number of grid points for sampled assumption checks.
pub const DEFAULT_CHECK_GRID: usize = 1001;

/// A caller-supplied velocity law with its derivative.
#[derive(Clone)]
pub struct CustomLaw {
    name: String,
    phi: ScalarFn,
    dphi: ScalarFn,
    /// Declared lower bound on `-phi'`.
    c0_hat: f64,
    /// Declared lower bound on `-f''` for unit speed limit; scaled by `V`.
    c0_unit: f64,
}

impl CustomLaw {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn c0_hat(&self) -> f64 {
        self.c0_hat
    }

    pub fn c0_unit(&self) -> f64 {
        self.c0_unit
    }
}

#[derive(Clone)]
pub enum VelocityLaw {
    /// `phi(rho) = 1 - rho`.
    Linear,
    Custom(CustomLaw),
}

impl fmt::Debug for VelocityLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VelocityLaw::Linear => write!(f, "Linear"),
            VelocityLaw::Custom(c) => f
                .debug_struct("Custom")
                .field("name", &c.name)
                .field("c0_hat", &c.c0_hat)
                .field("c0_unit", &c.c0_unit)
                .finish(),
        }
    }
}

impl VelocityLaw {
    /// Builds a custom law. `phi(0) = 1` and `phi(1) = 0` are enforced here;
    /// the slope and concavity bounds are left to [`ModelParams::check_assumptions`].
    pub fn custom<F, D>(
        name: impl Into<String>,
        phi: F,
        dphi: D,
        c0_hat: f64,
        c0_unit: f64,
    ) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let (p0, p1) = (phi(0.0), phi(1.0));
        if (p0 - 1.0).abs() > 1e-12 || p1.abs() > 1e-12 {
            return Err(Error::Assumption(format!(
                "velocity law must satisfy phi(0)=1 and phi(1)=0, got {p0} and {p1}"
            )));
        }
        if !(c0_hat >= 0.0 && c0_unit >= 0.0) {
            return Err(Error::Assumption(
                "declared bounds must be nonnegative".into(),
            ));
        }
        Ok(VelocityLaw::Custom(CustomLaw {
            name: name.into(),
            phi: Arc::new(phi),
            dphi: Arc::new(dphi),
            c0_hat,
            c0_unit,
        }))
    }

    /// `phi(rho) = sum_k coeffs[k] rho^k`.
    pub fn polynomial(coeffs: Vec<f64>, c0_hat: f64, c0_unit: f64) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Assumption("coeffs must not be empty".into()));
        }
        let d: Vec<f64> = coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, c)| k as f64 * c)
            .collect();
        let name = format!("poly{coeffs:?}");
        let horner = |c: &[f64], x: f64| c.iter().rev().fold(0.0, |acc, &v| acc * x + v);
        Self::custom(
            name,
            move |r| horner(&coeffs, r),
            move |r| horner(&d, r),
            c0_hat,
            c0_unit,
        )
    }

    /// Effective law `phi(rho) - sigma` seen in a frame moving at speed `V*sigma`.
    /// The endpoint normalization does not hold for it, so it bypasses [`VelocityLaw::custom`].
    pub fn shifted(&self, sigma: f64) -> Self {
        if sigma == 0.0 {
            return self.clone();
        }
        let base = self.clone();
        let base_d = self.clone();
        let (c0_hat, c0_unit) = (self.c0_hat(), self.c0_unit());
        VelocityLaw::Custom(CustomLaw {
            name: format!("{}-shift({sigma})", self.name()),
            phi: Arc::new(move |r| base.value(r) - sigma),
            dphi: Arc::new(move |r| base_d.deriv(r)),
            c0_hat,
            c0_unit,
        })
    }

    pub fn name(&self) -> &str {
        match self {
            VelocityLaw::Linear => "linear",
            VelocityLaw::Custom(c) => &c.name,
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, VelocityLaw::Linear)
    }

    pub fn c0_hat(&self) -> f64 {
        match self {
            VelocityLaw::Linear => 1.0,
            VelocityLaw::Custom(c) => c.c0_hat,
        }
    }

    /// Declared concavity bound of `rho * phi(rho)`.
    pub fn c0_unit(&self) -> f64 {
        match self {
            VelocityLaw::Linear => 2.0,
            VelocityLaw::Custom(c) => c.c0_unit,
        }
    }

    /// `phi(rho)` without a range check.
    #[inline]
    pub fn value(&self, rho: f64) -> f64 {
        match self {
            VelocityLaw::Linear => 1.0 - rho,
            VelocityLaw::Custom(c) => (c.phi)(rho),
        }
    }

    /// `phi'(rho)` without a range check.
    #[inline]
    pub fn deriv(&self, rho: f64) -> f64 {
        match self {
            VelocityLaw::Linear => -1.0,
            VelocityLaw::Custom(c) => (c.dphi)(rho),
        }
    }
}

fn check_density(rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Domain(format!("density {rho} outside [0, 1]")));
    }
    Ok(())
}

/// Speed fraction `phi(rho)` for a density in `[0, 1]`.
pub fn phi(law: &VelocityLaw, rho: f64) -> Result<f64> {
    check_density(rho)?;
    Ok(law.value(rho))
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub ell: f64,
    pub v: f64,
    pub law: VelocityLaw,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxInfo {
    pub rho_star: f64,
    pub f_star: f64,
    /// Largest `c` with `f'' <= -c` on the sampled grid.
    pub c0_est: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Largest violation amount (nonpositive when the inequality holds with room).
    pub worst_margin: f64,
    pub at: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
    pub c0_est: f64,
    pub c0_hat_est: f64,
    pub grid_points: usize,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> Vec<&AssumptionCheck> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

impl ModelParams {
    pub fn new(ell: f64, v: f64, law: VelocityLaw) -> Result<Self> {
        if !(ell > 0.0 && ell.is_finite()) {
            return Err(Error::Domain(format!(
                "car length must be positive, got {ell}"
            )));
        }
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Domain(format!(
                "speed limit must be positive, got {v}"
            )));
        }
        Ok(Self { ell, v, law })
    }

    pub fn linear(ell: f64, v: f64) -> Result<Self> {
        Self::new(ell, v, VelocityLaw::Linear)
    }

    /// Same car length and speed, law replaced.
    pub fn with_law(&self, law: VelocityLaw) -> Self {
        Self {
            ell: self.ell,
            v: self.v,
            law,
        }
    }

    /// `f(rho) = V rho phi(rho)`.
    pub fn flux(&self, rho: f64) -> Result<f64> {
        check_density(rho)?;
        Ok(self.flux_unchecked(rho))
    }

    #[inline]
    pub fn flux_unchecked(&self, rho: f64) -> f64 {
        self.v * rho * self.law.value(rho)
    }

    #[inline]
    pub fn flux_deriv(&self, rho: f64) -> f64 {
        self.v * (self.law.value(rho) + rho * self.law.deriv(rho))
    }

    /// Effective concavity bound `c0` for this speed limit.
    pub fn c0_declared(&self) -> f64 {
        self.v * self.law.c0_unit()
    }

    /// Critical density where `f'` vanishes.
    pub fn rho_star(&self) -> Result<FluxInfo> {
        let c0_est = self.c0_estimate(DEFAULT_CHECK_GRID);
        if self.law.is_linear() {
            return Ok(FluxInfo {
                rho_star: 0.5,
                f_star: 0.25 * self.v,
                c0_est,
            });
        }
        // first sign change of f' on a uniform scan; f' may vanish at rho = 1
        let n = DEFAULT_CHECK_GRID;
        let h = 1.0 / (n - 1) as f64;
        let mut bracket = None;
        let mut prev = (0.0, self.flux_deriv(0.0));
        for i in 1..n {
            let r = i as f64 * h;
            let d = self.flux_deriv(r);
            if prev.1 > 0.0 && d <= 0.0 {
                bracket = Some((prev.0, r));
                break;
            }
            prev = (r, d);
        }
        let (lo, hi) = bracket.ok_or_else(|| {
            Error::Assumption(format!(
                "f' does not change sign on [0, 1]: f'(0)={}, f'(1)={}",
                self.flux_deriv(0.0),
                self.flux_deriv(1.0)
            ))
        })?;
        let r = roots::bisect(
            |r| self.flux_deriv(r),
            lo,
            hi,
            1e-15,
            roots::DEFAULT_MAX_ITER,
        )
        .map_err(|e| Error::Assumption(format!("critical density search failed: {e}")))?;
        Ok(FluxInfo {
            rho_star: r,
            f_star: self.flux_unchecked(r),
            c0_est,
        })
    }

    fn c0_estimate(&self, n: usize) -> f64 {
        let h = 1.0 / (n - 1) as f64;
        let f: Vec<f64> = (0..n).map(|i| self.flux_unchecked(i as f64 * h)).collect();
        f.windows(3)
            .map(|w| -(w[0] - 2.0 * w[1] + w[2]) / (h * h))
            .fold(f64::INFINITY, f64::min)
    }

    /// Density `rho_+ >= rho*` carrying the same flux as `rho_minus <= rho*`.
    pub fn conjugate_density(&self, rho_minus: f64) -> Result<f64> {
        check_density(rho_minus)?;
        let info = self.rho_star()?;
        let rs = info.rho_star;
        if rho_minus > rs + 1e-12 {
            return Err(Error::Domain(format!(
                "left state {rho_minus} exceeds the critical density {rs}"
            )));
        }
        if self.law.is_linear() {
            return Ok(1.0 - rho_minus);
        }
        if rho_minus >= rs {
            return Ok(rs);
        }
        let target = self.flux_unchecked(rho_minus);
        let g = |r: f64| self.flux_unchecked(r) - target;
        if g(1.0) > 0.0 {
            return Err(Error::Domain(format!(
                "no conjugate density for {rho_minus}: f(1) exceeds f(rho_minus)"
            )));
        }
        roots::bisect(g, rs, 1.0, 1e-14, roots::DEFAULT_MAX_ITER)
    }

    /// Samples the standing assumptions on a uniform grid of `n` points.
    pub fn check_assumptions(&self, n: usize) -> AssumptionReport {
        let n = n.max(3);
        let h = 1.0 / (n - 1) as f64;
        let grid: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
        let law = &self.law;
        let c0_hat = law.c0_hat();
        let c0 = self.c0_declared();
        let mut checks = Vec::new();

        let e0 = (law.value(0.0) - 1.0).abs();
        let e1 = law.value(1.0).abs();
        checks.push(AssumptionCheck {
            name: "phi_endpoints",
            passed: e0.max(e1) <= 1e-12,
            worst_margin: e0.max(e1),
            at: if e0 >= e1 { 0.0 } else { 1.0 },
        });

        // phi' <= -c0_hat < 0
        let (mut worst, mut at, mut max_dphi) = (f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY);
        for &r in &grid {
            let d = law.deriv(r);
            max_dphi = max_dphi.max(d);
            if d + c0_hat > worst {
                worst = d + c0_hat;
                at = r;
            }
        }
        checks.push(AssumptionCheck {
            name: "phi_decreasing",
            passed: worst <= 0.0 && max_dphi < 0.0,
            worst_margin: worst,
            at,
        });
        let c0_hat_est = -max_dphi;

        let f: Vec<f64> = grid.iter().map(|&r| self.flux_unchecked(r)).collect();
        let fe = f[0].abs().max(f[n - 1].abs());
        checks.push(AssumptionCheck {
            name: "flux_endpoints",
            passed: fe <= 1e-12 * self.v.max(1.0),
            worst_margin: fe,
            at: if f[0].abs() >= f[n - 1].abs() {
                0.0
            } else {
                1.0
            },
        });

        // f'' <= -c0 via second differences
        let (mut worst, mut at, mut c0_est) = (f64::NEG_INFINITY, 0.0, f64::INFINITY);
        for i in 1..n - 1 {
            let dd = f[i - 1] - 2.0 * f[i] + f[i + 1];
            c0_est = c0_est.min(-dd / (h * h));
            let m = dd + c0 * h * h;
            if m > worst {
                worst = m;
                at = grid[i];
            }
        }
        checks.push(AssumptionCheck {
            name: "flux_concave",
            passed: worst <= 1e-10 && c0_est > 0.0,
            worst_margin: worst,
            at,
        });

        let sign_changes = grid
            .windows(2)
            .filter(|w| (self.flux_deriv(w[0]) > 0.0) != (self.flux_deriv(w[1]) > 0.0))
            .count();
        checks.push(AssumptionCheck {
            name: "flux_unique_max",
            passed: sign_changes == 1,
            worst_margin: sign_changes as f64 - 1.0,
            at: f64::NAN,
        });

        // phi'' <= -(2 phi' + c0/V) / rho, equivalent to f'' <= -c0
        let (mut worst, mut at) = (f64::NEG_INFINITY, f64::NAN);
        for i in 1..n - 1 {
            let r = grid[i];
            let d2 =
                (law.value(grid[i - 1]) - 2.0 * law.value(r) + law.value(grid[i + 1])) / (h * h);
            let m = d2 + (2.0 * law.deriv(r) + c0 / self.v) / r;
            if m > worst {
                worst = m;
                at = r;
            }
        }
        checks.push(AssumptionCheck {
            name: "phi_second_order",
            passed: worst <= 1e-6,
            worst_margin: worst,
            at,
        });

        AssumptionReport {
            checks,
            c0_est,
            c0_hat_est,
            grid_points: n,
        }
    }
}
