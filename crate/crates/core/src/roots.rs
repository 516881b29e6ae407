//! Bracketing root finder for monotone scalar functions.

use crate::{Error, Result};
use alloc::format;

/// Bisection on `[lo, hi]` where `f(lo)` and `f(hi)` have opposite signs.
///
/// Stops once the bracket is narrower than `xtol` or can no longer be split
/// in floating point, and returns whichever end of the final bracket has
/// the smaller `|f|`. Pass `xtol = 0.0` to bisect to full precision.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, xtol: f64) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if !(flo.is_finite() || fhi.is_finite()) || flo.signum() == fhi.signum() {
        return Err(Error::Argument(format!(
            "no sign change on [{lo}, {hi}]: f = {flo}, {fhi}"
        )));
    }
    let mut fh = fhi;
    loop {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= xtol || mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
            fh = fm;
        }
    }
    Ok(if flo.abs() <= fh.abs() { lo } else { hi })
}
