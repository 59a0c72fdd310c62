//! Scalar expectile machinery: the asymmetric squared loss, its proximal
//! map and effective score, soft thresholding, and empirical expectiles.
//!
//! All functions are pure. The kink at `x = u` is assigned to the lower
//! branch (`x ≤ u`) everywhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roots::bisect_increasing;

/// Expectile level τ together with the error expectile u_τ used as the
/// location of the loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectileSpec {
    pub tau: f64,
    pub u: f64,
}

impl ExpectileSpec {
    pub fn new(tau: f64, u: f64) -> Result<Self> {
        validate_tau(tau)?;
        if !u.is_finite() {
            return Err(Error::param("u", format!("must be finite, got {u}")));
        }
        Ok(Self { tau, u })
    }

    /// Weight |τ − 1{x ≤ u}| applied to the squared deviation.
    #[inline]
    pub fn weight(&self, x: f64) -> f64 {
        if x <= self.u {
            1.0 - self.tau
        } else {
            self.tau
        }
    }
}

pub(crate) fn validate_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::param("tau", format!("must lie in (0, 1), got {tau}")));
    }
    Ok(())
}

fn validate_b(b: f64) -> Result<()> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::param("b", format!("must be positive and finite, got {b}")));
    }
    Ok(())
}

/// ρ_τ(x; u) = |τ − 1{x ≤ u}|·(x − u)².
#[inline]
pub fn expectile_loss(x: f64, spec: &ExpectileSpec) -> f64 {
    let d = x - spec.u;
    spec.weight(x) * d * d
}

/// 2|1{x ≤ u} − τ|·(x − u).
#[inline]
pub fn expectile_subgradient(x: f64, spec: &ExpectileSpec) -> f64 {
    2.0 * spec.weight(x) * (x - spec.u)
}

/// Closed-form minimiser of b·ρ_τ(x) + ½(x − z)².
pub fn prox_expectile(z: f64, b: f64, spec: &ExpectileSpec) -> Result<f64> {
    validate_b(b)?;
    Ok(prox_unchecked(z, b, spec))
}

#[inline]
pub(crate) fn prox_unchecked(z: f64, b: f64, spec: &ExpectileSpec) -> f64 {
    let k = 2.0 * b * spec.weight(z);
    (z + k * spec.u) / (k + 1.0)
}

/// Effective score b·∂ρ_τ evaluated at the proximal point; equals
/// `z − prox_expectile(z, b, spec)`.
pub fn effective_score(z: f64, b: f64, spec: &ExpectileSpec) -> Result<f64> {
    validate_b(b)?;
    Ok(effective_score_unchecked(z, b, spec))
}

#[inline]
pub(crate) fn effective_score_unchecked(z: f64, b: f64, spec: &ExpectileSpec) -> f64 {
    effective_slope(z, b, spec) * (z - spec.u)
}

/// Derivative of the effective score in `z` (piecewise constant).
#[inline]
pub(crate) fn effective_slope(z: f64, b: f64, spec: &ExpectileSpec) -> f64 {
    let k = 2.0 * b * spec.weight(z);
    k / (k + 1.0)
}

/// Effective score rescaled by δ/ω.
pub fn rescaled_score(z: f64, b: f64, spec: &ExpectileSpec, delta: f64, omega: f64) -> Result<f64> {
    validate_b(b)?;
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::param("delta", format!("must be positive, got {delta}")));
    }
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(Error::param("omega", format!("must be positive, got {omega}")));
    }
    Ok(delta / omega * effective_score_unchecked(z, b, spec))
}

/// Rescaled effective score with validated parameters, for use in tight
/// loops over residual vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreFn {
    pub spec: ExpectileSpec,
    pub b: f64,
    /// δ/ω
    pub scale: f64,
}

impl ScoreFn {
    pub fn new(spec: ExpectileSpec, b: f64, delta: f64, omega: f64) -> Result<Self> {
        rescaled_score(spec.u, b, &spec, delta, omega)?;
        Ok(Self {
            spec,
            b,
            scale: delta / omega,
        })
    }

    #[inline]
    pub fn value(&self, z: f64) -> f64 {
        self.scale * effective_score_unchecked(z, self.b, &self.spec)
    }

    /// ∂₁G(z; b)
    #[inline]
    pub fn slope(&self, z: f64) -> f64 {
        self.scale * effective_slope(z, self.b, &self.spec)
    }
}

/// sgn(x)·max(|x| − θ, 0).
pub fn soft_threshold(x: f64, theta: f64) -> Result<f64> {
    if !(theta >= 0.0) {
        return Err(Error::param("theta", format!("must be nonnegative, got {theta}")));
    }
    Ok(soft_threshold_unchecked(x, theta))
}

#[inline]
pub(crate) fn soft_threshold_unchecked(x: f64, theta: f64) -> f64 {
    if x > theta {
        x - theta
    } else if x < -theta {
        x + theta
    } else {
        0.0
    }
}

/// Ratio (2τ − 1)/(1 − τ) appearing in the expectile fixed-point equation.
#[inline]
pub(crate) fn asymmetry_ratio(tau: f64) -> f64 {
    (2.0 * tau - 1.0) / (1.0 - tau)
}

const EXPECTILE_TOL: f64 = 1e-10;

/// Empirical τ-expectile: the root û of
/// û − mean(r) = ((2τ−1)/(1−τ))·mean((r − û)·1{r ≥ û}).
///
/// The defining function is increasing in û, nonpositive at min(r) and
/// nonnegative at max(r), so bisection on that bracket always succeeds.
pub fn sample_expectile(values: &[f64], tau: f64) -> Result<f64> {
    validate_tau(tau)?;
    if values.is_empty() {
        return Err(Error::param("values", "must be nonempty"));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("sample contains {v}")));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if tau == 0.5 {
        return Ok(mean);
    }
    let (min, max) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if min == max {
        return Ok(min);
    }
    let c = asymmetry_ratio(tau);
    let defining = |u: f64| {
        let upper: f64 = values.iter().map(|&r| (r - u).max(0.0)).sum::<f64>() / n;
        u - mean - c * upper
    };
    let scale = (max - min).max(1.0);
    bisect_increasing(defining, min, max, EXPECTILE_TOL * scale, 0.0, 200)
}
