//! Shape-preserving piecewise-cubic Hermite interpolation.
//!
//! Node derivatives either come from the caller (the ODE right-hand side at
//! each node, which keeps the interpolant fourth-order accurate) or are
//! estimated with the Fritsch-Butland harmonic-mean rule. In both cases each
//! interval's end slopes are limited with the Fritsch-Carlson condition so the
//! cubic is monotone wherever the data are.

/// Fritsch-Carlson limiting of the two end slopes of one interval with secant
/// `delta`.
#[inline]
pub fn limit_pair(delta: f64, d0: f64, d1: f64) -> (f64, f64) {
    if delta == 0.0 {
        return (0.0, 0.0);
    }
    let mut a = d0 / delta;
    let mut b = d1 / delta;
    if a < 0.0 {
        a = 0.0;
    }
    if b < 0.0 {
        b = 0.0;
    }
    let s = a * a + b * b;
    if s > 9.0 {
        let tau = 3.0 / s.sqrt();
        a *= tau;
        b *= tau;
    }
    (a * delta, b * delta)
}

/// Evaluates the limited cubic Hermite segment through `(x0, y0)`, `(x1, y1)`.
/// Works for either orientation of the segment.
#[inline]
pub fn hermite_segment(x0: f64, x1: f64, y0: f64, y1: f64, d0: f64, d1: f64, x: f64) -> f64 {
    let h = x1 - x0;
    let delta = (y1 - y0) / h;
    let (d0, d1) = limit_pair(delta, d0, d1);
    let t = (x - x0) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1
}

/// Derivative of the limited Hermite segment at `x`.
#[inline]
pub fn hermite_segment_deriv(x0: f64, x1: f64, y0: f64, y1: f64, d0: f64, d1: f64, x: f64) -> f64 {
    let h = x1 - x0;
    let delta = (y1 - y0) / h;
    let (d0, d1) = limit_pair(delta, d0, d1);
    let t = (x - x0) / h;
    let t2 = t * t;
    let dh00 = (6.0 * t2 - 6.0 * t) / h;
    let dh10 = 3.0 * t2 - 4.0 * t + 1.0;
    let dh01 = (-6.0 * t2 + 6.0 * t) / h;
    let dh11 = 3.0 * t2 - 2.0 * t;
    dh00 * y0 + dh10 * d0 + dh01 * y1 + dh11 * d1
}

/// Fritsch-Butland slope estimates for strictly increasing `x`.
pub fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    assert_eq!(n, y.len());
    match n {
        0 => return vec![],
        1 => return vec![0.0],
        _ => {}
    }
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let del: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    if n == 2 {
        return vec![del[0], del[0]];
    }
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        let (a, b) = (del[i - 1], del[i]);
        if a * b <= 0.0 {
            d[i] = 0.0;
        } else {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            d[i] = (w1 + w2) / (w1 / a + w2 / b);
        }
    }
    d[0] = end_slope(h[0], h[1], del[0], del[1]);
    d[n - 1] = end_slope(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
    d
}

fn end_slope(h0: f64, h1: f64, del0: f64, del1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
    if d * del0 <= 0.0 {
        0.0
    } else if del0 * del1 < 0.0 && d.abs() > 3.0 * del0.abs() {
        3.0 * del0
    } else {
        d
    }
}

/// Monotone cubic interpolant on an ascending grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl MonotoneCubic {
    /// `x` must be strictly increasing; `d` defaults to [`pchip_slopes`].
    pub fn new(x: Vec<f64>, y: Vec<f64>, d: Option<Vec<f64>>) -> Self {
        assert_eq!(x.len(), y.len());
        assert!(!x.is_empty(), "interpolant needs at least one node");
        debug_assert!(x.windows(2).all(|w| w[0] < w[1]));
        let d = d.unwrap_or_else(|| pchip_slopes(&x, &y));
        assert_eq!(d.len(), x.len());
        Self { x, y, d }
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn slopes(&self) -> &[f64] {
        &self.d
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x_min(&self) -> f64 {
        self.x[0]
    }

    pub fn x_max(&self) -> f64 {
        self.x[self.x.len() - 1]
    }

    fn segment(&self, x: f64) -> usize {
        let n = self.x.len();
        let k = self.x.partition_point(|&v| v <= x);
        k.clamp(1, n - 1) - 1
    }

    /// Value at `x`, clamped to the end values outside the grid.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.x.len();
        if n == 1 || x <= self.x[0] {
            return self.y[0];
        }
        if x >= self.x[n - 1] {
            return self.y[n - 1];
        }
        let i = self.segment(x);
        if x == self.x[i] {
            return self.y[i];
        }
        hermite_segment(
            self.x[i],
            self.x[i + 1],
            self.y[i],
            self.y[i + 1],
            self.d[i],
            self.d[i + 1],
            x,
        )
    }

    /// Derivative of the interpolant; zero outside the grid.
    pub fn deriv(&self, x: f64) -> f64 {
        let n = self.x.len();
        if n == 1 || x < self.x[0] || x > self.x[n - 1] {
            return 0.0;
        }
        let i = self.segment(x);
        hermite_segment_deriv(
            self.x[i],
            self.x[i + 1],
            self.y[i],
            self.y[i + 1],
            self.d[i],
            self.d[i + 1],
            x,
        )
    }

    pub fn translated(&self, shift: f64) -> Self {
        Self {
            x: self.x.iter().map(|v| v + shift).collect(),
            y: self.y.clone(),
            d: self.d.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reproduces_nodes() {
        let x = vec![0.0, 0.5, 1.5, 2.0];
        let y = vec![0.1, 0.2, 0.6, 0.61];
        let c = MonotoneCubic::new(x.clone(), y.clone(), None);
        for (xi, yi) in x.iter().zip(&y) {
            assert_eq!(c.eval(*xi), *yi);
        }
    }

    #[test]
    fn exact_slopes_give_fourth_order() {
        // max error should drop ~16x per halving with exact derivatives
        let err = |n: usize| {
            let x: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
            let y: Vec<f64> = x.iter().map(|v| v.tanh()).collect();
            let d: Vec<f64> = x.iter().map(|v| 1.0 / v.cosh().powi(2)).collect();
            let c = MonotoneCubic::new(x, y, Some(d));
            (0..1000)
                .map(|k| {
                    let t = (k as f64 + 0.37) / 1000.0;
                    (c.eval(t) - t.tanh()).abs()
                })
                .fold(0.0, f64::max)
        };
        let r = err(16) / err(32);
        assert!(r > 12.0 && r < 20.0, "ratio {r}");
    }

    #[test]
    fn flat_data_stays_flat() {
        let c = MonotoneCubic::new(vec![0.0, 1.0, 2.0], vec![0.3, 0.3, 0.3], None);
        assert_eq!(c.eval(0.7), 0.3);
        assert_eq!(c.eval(1.5), 0.3);
    }

    proptest! {
        #[test]
        fn monotone_data_monotone_interpolant(
            steps in prop::collection::vec((0.01f64..1.0, 0.0f64..1.0), 3..20),
            a in 0.0f64..1.0, b in 0.0f64..1.0,
        ) {
            let mut x = vec![0.0];
            let mut y = vec![0.0];
            for (dx, dy) in &steps {
                x.push(x.last().unwrap() + dx);
                y.push(y.last().unwrap() + dy * dy * dy);
            }
            let c = MonotoneCubic::new(x.clone(), y, None);
            let span = c.x_max();
            let (p, q) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(c.eval(p * span) <= c.eval(q * span) + 1e-12);
        }
    }
}
