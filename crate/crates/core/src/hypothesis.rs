//! Coordinate-wise heteroscedasticity test on the contrast Δ = (1, −1)
//! between two expectile levels, its analytic power, and empirical
//! size/power summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::joint::JointFit;
use crate::normal;

/// Per-coordinate test output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    #[serde(rename = "t")]
    pub t_stats: Vec<f64>,
    #[serde(rename = "p_value")]
    pub p_values: Vec<f64>,
    #[serde(rename = "reject")]
    pub rejected: Vec<bool>,
    pub alpha: f64,
    pub contrast: [f64; 2],
    /// Σ̂ used for standardisation (row-major 2×2).
    pub sigma: [[f64; 2]; 2],
    pub levels: [f64; 2],
    pub u: [f64; 2],
    /// Δ Σ̂ Δᵀ
    pub contrast_variance: f64,
    pub degraded: bool,
}

pub(crate) fn validate_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param("alpha", format!("must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Δ Σ Δᵀ for Δ = (1, −1).
pub fn contrast_variance(sigma: &[[f64; 2]; 2]) -> f64 {
    sigma[0][0] - sigma[0][1] - sigma[1][0] + sigma[1][1]
}

/// `T_j = (β̃₁,j − β̃₂,j)/√(Δ Σ̂ Δᵀ)`, `P_j = 2(1 − Φ(|T_j|))`, reject when `P_j ≤ α`.
pub fn test_statistics(joint: &JointFit, alpha: f64) -> Result<TestReport> {
    validate_alpha(alpha)?;
    if joint.fits.len() != 2 {
        return Err(Error::param(
            "levels",
            format!("the contrast test needs exactly 2 levels, got {}", joint.fits.len()),
        ));
    }
    let s = &joint.sigma;
    let sigma = [[s[(0, 0)], s[(0, 1)]], [s[(1, 0)], s[(1, 1)]]];
    let var = contrast_variance(&sigma);
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::DegenerateContrast(var));
    }
    let sd = var.sqrt();
    let (b1, b2) = (&joint.fits[0].state.beta_tilde, &joint.fits[1].state.beta_tilde);
    let t_stats: Vec<f64> = b1.iter().zip(b2.iter()).map(|(a, b)| (a - b) / sd).collect();
    let p_values: Vec<f64> = t_stats.iter().map(|t| normal::two_sided_p_value(*t)).collect();
    let rejected = p_values.iter().map(|p| *p <= alpha).collect();
    Ok(TestReport {
        t_stats,
        p_values,
        rejected,
        alpha,
        contrast: [1.0, -1.0],
        sigma,
        levels: [joint.levels[0].tau, joint.levels[1].tau],
        u: [joint.levels[0].u, joint.levels[1].u],
        contrast_variance: var,
        degraded: joint.degraded,
    })
}

/// Rejection probability of one coordinate with heteroscedasticity
/// coefficient `gamma`: `1 − Φ(z_{1−α/2} − γa) + Φ(z_{α/2} − γa)` with
/// `a = (u₁ − u₂)/√(Δ Σ Δᵀ)`.
pub fn power_at(gamma: f64, u1: f64, u2: f64, sigma: &[[f64; 2]; 2], alpha: f64) -> Result<f64> {
    validate_alpha(alpha)?;
    let var = contrast_variance(sigma);
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::DegenerateContrast(var));
    }
    let shift = gamma * (u1 - u2) / var.sqrt();
    if shift == 0.0 {
        return Ok(alpha);
    }
    let upper = normal::sf(normal::quantile(1.0 - alpha / 2.0) - shift);
    let lower = normal::cdf(normal::quantile(alpha / 2.0) - shift);
    Ok(upper + lower)
}

/// Average of [`power_at`] over the supplied coefficients (the empirical
/// measure of Γ₀).
pub fn power_function(gamma_values: &[f64], u1: f64, u2: f64, sigma: &[[f64; 2]; 2], alpha: f64) -> Result<f64> {
    if gamma_values.is_empty() {
        return Err(Error::param("gamma_values", "must be nonempty"));
    }
    let mut total = 0.0;
    for &g in gamma_values {
        total += power_at(g, u1, u2, sigma, alpha)?;
    }
    Ok(total / gamma_values.len() as f64)
}

/// Empirical size and power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub fp: f64,
    /// `None` when the support is empty.
    pub tp: Option<f64>,
}

/// Rejection frequencies over replications (rows) and coordinates: `fp`
/// over coordinates outside `true_support`, `tp` over those inside.
pub fn empirical_rates(p_values: &[Vec<f64>], true_support: &[usize], alpha: f64) -> Result<Rates> {
    if p_values.is_empty() {
        return Err(Error::param("p_values", "need at least one replication"));
    }
    let p = p_values[0].len();
    if p_values.iter().any(|row| row.len() != p) {
        return Err(Error::DimensionMismatch("p-value rows have unequal lengths".into()));
    }
    let mut in_support = vec![false; p];
    for &j in true_support {
        if j >= p {
            return Err(Error::param(
                "true_support",
                format!("index {j} out of range for p = {p}"),
            ));
        }
        in_support[j] = true;
    }
    let s = in_support.iter().filter(|b| **b).count();
    let (mut null_rej, mut alt_rej) = (0usize, 0usize);
    for row in p_values {
        for (j, &pv) in row.iter().enumerate() {
            if pv <= alpha {
                if in_support[j] {
                    alt_rej += 1;
                } else {
                    null_rej += 1;
                }
            }
        }
    }
    let r = p_values.len() as f64;
    let fp = if p > s {
        null_rej as f64 / (r * (p - s) as f64)
    } else {
        0.0
    };
    let tp = (s > 0).then(|| alt_rej as f64 / (r * s as f64));
    Ok(Rates { fp, tp })
}
