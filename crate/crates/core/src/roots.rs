//! Bracketed scalar root finding.
//!
//! Every solver here starts from an interval on which the function changes
//! sign and never leaves it.

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 200;

fn check_bracket(fa: f64, fb: f64, a: f64, b: f64) -> Result<()> {
    if !fa.is_finite() || !fb.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite value at bracket end: f({a})={fa}, f({b})={fb}"
        )));
    }
    if fa * fb > 0.0 {
        return Err(Error::Numerical(format!(
            "no sign change on [{a}, {b}]: f(a)={fa}, f(b)={fb}"
        )));
    }
    Ok(())
}

/// Plain bisection until the bracket is narrower than `tol`.
pub fn bisect<F>(mut f: F, a: f64, b: f64, tol: f64, max_iter: usize) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let (mut lo, mut hi) = if a <= b { (a, b) } else { (b, a) };
    let mut flo = f(lo);
    let fhi = f(hi);
    check_bracket(flo, fhi, lo, hi)?;
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    for _ in 0..max_iter {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        let fm = f(mid);
        if !fm.is_finite() {
            return Err(Error::Numerical(format!("f({mid}) = {fm}")));
        }
        if fm == 0.0 {
            return Ok(mid);
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    if hi - lo <= tol {
        Ok(0.5 * (lo + hi))
    } else {
        Err(Error::Numerical(format!(
            "bisection did not reach tolerance {tol} in {max_iter} iterations"
        )))
    }
}

/// Safeguarded Newton iteration: a Newton step is accepted only when it lands
/// inside the current bracket and shrinks it fast enough, otherwise bisect.
pub fn newton_bisect<F, D>(
    mut f: F,
    mut df: D,
    a: f64,
    b: f64,
    tol: f64,
    max_iter: usize,
) -> Result<f64>
where
    F: FnMut(f64) -> f64,
    D: FnMut(f64) -> f64,
{
    let (mut lo, mut hi) = if a <= b { (a, b) } else { (b, a) };
    let flo = f(lo);
    let fhi = f(hi);
    check_bracket(flo, fhi, lo, hi)?;
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    // orient so that f(lo) < 0
    let flip = flo > 0.0;
    let g = |x: f64, f: &mut F| if flip { -f(x) } else { f(x) };
    let sgn = if flip { -1.0 } else { 1.0 };

    let mut x = 0.5 * (lo + hi);
    let mut dx_old = hi - lo;
    let mut dx = dx_old;
    let mut fx = g(x, &mut f);
    let mut dfx = sgn * df(x);
    for _ in 0..max_iter {
        if fx == 0.0 {
            return Ok(x);
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton_ok = dfx != 0.0
            && dfx.is_finite()
            && ((x - hi) * dfx - fx) * ((x - lo) * dfx - fx) < 0.0
            && (2.0 * fx).abs() <= (dx_old * dfx).abs();
        dx_old = dx;
        if newton_ok {
            dx = fx / dfx;
            x -= dx;
        } else {
            dx = 0.5 * (hi - lo);
            x = lo + dx;
        }
        if dx.abs() <= tol || hi - lo <= tol {
            return Ok(x);
        }
        fx = g(x, &mut f);
        if !fx.is_finite() {
            return Err(Error::Numerical(format!("f({x}) = {fx}")));
        }
        dfx = sgn * df(x);
    }
    Err(Error::Numerical(format!(
        "Newton-bisection did not reach tolerance {tol} in {max_iter} iterations"
    )))
}
