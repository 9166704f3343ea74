//! Sampled monotone profiles with an analytic right tail.

use crate::interp::MonotoneCubic;

/// `psi(x) = rho_plus - delta * exp(-lambda * x)`, used for `x >= x_hat`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RightTail {
    pub rho_plus: f64,
    pub delta: f64,
    pub lambda: f64,
    pub x_hat: f64,
}

impl RightTail {
    pub fn new(rho_plus: f64, delta: f64, lambda: f64, x_hat: f64) -> Self {
        Self {
            rho_plus,
            delta,
            lambda,
            x_hat,
        }
    }

    pub fn constant(rho: f64, x_hat: f64) -> Self {
        Self {
            rho_plus: rho,
            delta: 0.0,
            lambda: 0.0,
            x_hat,
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        if self.delta == 0.0 {
            self.rho_plus
        } else {
            self.rho_plus - self.delta * (-self.lambda * x).exp()
        }
    }

    #[inline]
    pub fn deriv(&self, x: f64) -> f64 {
        if self.delta == 0.0 {
            0.0
        } else {
            self.lambda * self.delta * (-self.lambda * x).exp()
        }
    }

    /// Perturbation size `delta * exp(-lambda * x_hat)` at the anchor.
    pub fn amplitude_at_anchor(&self) -> f64 {
        self.delta * (-self.lambda * self.x_hat).exp()
    }

    /// The same function expressed in coordinates moved right by `shift`.
    pub fn translated(&self, shift: f64) -> Self {
        Self {
            rho_plus: self.rho_plus,
            delta: self.delta * (self.lambda * shift).exp(),
            lambda: self.lambda,
            x_hat: self.x_hat + shift,
        }
    }
}

/// A monotone density profile: interpolated samples on `[x_min, x_hat]`,
/// the analytic tail beyond `x_hat`, and a constant left limit below `x_min`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileCurve {
    cubic: MonotoneCubic,
    tail: RightTail,
    left_limit: f64,
}

impl ProfileCurve {
    /// `x` ascending and ending at `tail.x_hat`.
    pub fn new(
        x: Vec<f64>,
        w: Vec<f64>,
        slopes: Option<Vec<f64>>,
        tail: RightTail,
        left_limit: f64,
    ) -> Self {
        Self {
            cubic: MonotoneCubic::new(x, w, slopes),
            tail,
            left_limit,
        }
    }

    /// Sampled data with constant extrapolation on both sides.
    pub fn from_samples(x: Vec<f64>, w: Vec<f64>, slopes: Option<Vec<f64>>) -> Self {
        let (first, last, x_last) = (w[0], w[w.len() - 1], x[x.len() - 1]);
        Self::new(x, w, slopes, RightTail::constant(last, x_last), first)
    }

    pub fn constant(rho: f64) -> Self {
        Self::new(
            vec![0.0],
            vec![rho],
            Some(vec![0.0]),
            RightTail::constant(rho, 0.0),
            rho,
        )
    }

    /// `left` for `x < at`, `right` for `x >= at`.
    pub fn step(left: f64, right: f64, at: f64) -> Self {
        Self::new(
            vec![at],
            vec![right],
            Some(vec![0.0]),
            RightTail::constant(right, at),
            left,
        )
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        if x >= self.tail.x_hat {
            self.tail.value(x)
        } else if x < self.cubic.x_min() {
            self.left_limit
        } else {
            self.cubic.eval(x)
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        if x >= self.tail.x_hat {
            self.tail.deriv(x)
        } else if x < self.cubic.x_min() {
            0.0
        } else {
            self.cubic.deriv(x)
        }
    }

    pub fn grid(&self) -> &[f64] {
        self.cubic.x()
    }

    pub fn values(&self) -> &[f64] {
        self.cubic.y()
    }

    pub fn slopes(&self) -> &[f64] {
        self.cubic.slopes()
    }

    pub fn right_tail(&self) -> &RightTail {
        &self.tail
    }

    pub fn left_limit(&self) -> f64 {
        self.left_limit
    }

    pub fn right_limit(&self) -> f64 {
        self.tail.rho_plus
    }

    pub fn grid_min(&self) -> f64 {
        self.cubic.x_min()
    }

    pub fn x_hat(&self) -> f64 {
        self.tail.x_hat
    }

    pub fn with_left_limit(mut self, left_limit: f64) -> Self {
        self.left_limit = left_limit;
        self
    }

    /// The profile `x -> W(x - shift)`.
    pub fn translated(&self, shift: f64) -> Self {
        Self {
            cubic: self.cubic.translated(shift),
            tail: self.tail.translated(shift),
            left_limit: self.left_limit,
        }
    }

    /// True when the curve has settled: `|W(x_min) - W(x_min + ell)| < tol`.
    pub fn is_plateau(&self, ell: f64, tol: f64) -> bool {
        let x = self.grid_min();
        (self.evaluate(x) - self.evaluate(x + ell)).abs() < tol
    }

    /// Rows `(x, W)` for the grid followed by `extra_tail` tail samples spaced `dx`.
    pub fn rows(&self, extra_tail: usize, dx: f64) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = self
            .grid()
            .iter()
            .copied()
            .zip(self.values().iter().copied())
            .collect();
        let xh = self.x_hat();
        for k in 1..=extra_tail {
            let x = xh + k as f64 * dx;
            out.push((x, self.evaluate(x)));
        }
        out
    }
}
