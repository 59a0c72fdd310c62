//! Bracketing root finders for monotone scalar equations.

use crate::error::{Error, Result};

/// Bisection for a continuous nondecreasing `f` on `[lo, hi]` with
/// `f(lo) ≤ 0 ≤ f(hi)`.
///
/// Stops when the bracket is narrower than `x_tol` or `|f(mid)| ≤ f_tol`.
pub fn bisect_increasing<F>(mut f: F, mut lo: f64, mut hi: f64, x_tol: f64, f_tol: f64, max_iter: usize) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let f_lo = f(lo);
    let f_hi = f(hi);
    if !(f_lo.is_finite() && f_hi.is_finite()) {
        return Err(Error::NonFinite(format!(
            "bracket endpoints evaluate to f({lo})={f_lo}, f({hi})={f_hi}"
        )));
    }
    if f_lo > 0.0 || f_hi < 0.0 {
        return Err(Error::RootNotBracketed(format!("f({lo})={f_lo}, f({hi})={f_hi}")));
    }
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    for _ in 0..max_iter {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm.abs() <= f_tol || (hi - lo) <= x_tol {
            return Ok(mid);
        }
        if fm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    let fm = f(mid);
    if fm.abs() <= f_tol || (hi - lo) <= x_tol {
        Ok(mid)
    } else {
        Err(Error::NoConvergence(format!(
            "bisection stopped after {max_iter} iterations with bracket [{lo}, {hi}]"
        )))
    }
}

/// Widen `[lo, hi]` geometrically around its midpoint until the increasing
/// function changes sign, giving up after `max_doublings`.
pub fn expand_bracket<F>(mut f: F, mut lo: f64, mut hi: f64, max_doublings: usize) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> f64,
{
    for _ in 0..=max_doublings {
        let (a, b) = (f(lo), f(hi));
        if a <= 0.0 && b >= 0.0 {
            return Ok((lo, hi));
        }
        let width = (hi - lo).max(1.0);
        if a > 0.0 {
            lo -= width;
        }
        if b < 0.0 {
            hi += width;
        }
    }
    Err(Error::RootNotBracketed(format!("no sign change found in [{lo}, {hi}]")))
}
