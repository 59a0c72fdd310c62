//! Joint fits at several expectile levels on one dataset and the
//! residual-based estimate of their cross-level covariance.
//!
//! For levels k₁, k₂ the covariance of the debiased estimates is estimated
//! without β as `ζ̂_{k₁k₂} = (1/n) Σᵢ G_{k₁}(z_{k₁,i}; b_{k₁})·G_{k₂}(z_{k₂,i}; b_{k₂})`,
//! each score evaluated with its own (τ, u, b, δ, ω).

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::amp::{mean_product, run_amp, AmpFit, AmpSettings};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::expectile::{sample_expectile, validate_tau, ExpectileSpec};

/// Eigenvalue floor used when repairing an indefinite covariance estimate.
pub const PSD_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct JointFit {
    pub fits: Vec<AmpFit>,
    /// K×K estimate Σ̂ with entries ζ̂_{k₁k₂}.
    pub sigma: DMatrix<f64>,
    pub levels: Vec<ExpectileSpec>,
    /// Some level failed to meet the stopping rule.
    pub degraded: bool,
    /// Σ̂ had a negative eigenvalue and was clipped.
    pub psd_repaired: bool,
}

/// Covariance estimate between two fits on the same data.
pub fn cov_estimate(fit1: &AmpFit, fit2: &AmpFit) -> Result<f64> {
    let (a, b) = (&fit1.state.score, &fit2.state.score);
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "score vectors have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(mean_product(a.as_slice(), b.as_slice()))
}

/// Clip eigenvalues below [`PSD_FLOOR`] and rebuild. Returns whether a
/// repair was needed.
pub fn repair_psd(sigma: &mut DMatrix<f64>) -> bool {
    let eig = SymmetricEigen::new(sigma.clone());
    if eig.eigenvalues.iter().all(|v| *v >= 0.0) {
        return false;
    }
    let clipped = eig.eigenvalues.map(|v| v.max(PSD_FLOOR));
    let q = &eig.eigenvectors;
    let mut rebuilt = q * DMatrix::from_diagonal(&clipped) * q.transpose();
    // exact symmetry
    for i in 0..rebuilt.nrows() {
        for j in 0..i {
            let m = 0.5 * (rebuilt[(i, j)] + rebuilt[(j, i)]);
            rebuilt[(i, j)] = m;
            rebuilt[(j, i)] = m;
        }
    }
    *sigma = rebuilt;
    true
}

/// Σ̂ from already fitted levels.
pub fn covariance_matrix(fits: &[AmpFit]) -> Result<(DMatrix<f64>, bool)> {
    let k = fits.len();
    let mut sigma = DMatrix::zeros(k, k);
    for i in 0..k {
        sigma[(i, i)] = fits[i].zeta_sq();
        for j in 0..i {
            let c = cov_estimate(&fits[i], &fits[j])?;
            sigma[(i, j)] = c;
            sigma[(j, i)] = c;
        }
    }
    let repaired = repair_psd(&mut sigma);
    Ok((sigma, repaired))
}

/// Fits every level with [`run_amp`] on the same data (concurrently) and
/// assembles Σ̂.
pub fn fit_joint(data: &Dataset, levels: &[ExpectileSpec], settings: &AmpSettings) -> Result<JointFit> {
    if levels.len() < 2 {
        return Err(Error::param(
            "levels",
            format!("need at least 2 levels, got {}", levels.len()),
        ));
    }
    let fits = levels
        .par_iter()
        .map(|spec| run_amp(data, spec, settings))
        .collect::<Result<Vec<_>>>()?;
    let degraded = fits.iter().any(|f| !f.converged);
    if degraded {
        warn!("at least one expectile level did not converge; the joint fit is degraded");
    }
    let (sigma, psd_repaired) = covariance_matrix(&fits)?;
    Ok(JointFit {
        fits,
        sigma,
        levels: levels.to_vec(),
        degraded,
        psd_repaired,
    })
}

/// Pilot-residual surrogate for the error expectile: fit at τ = 0.5 with
/// u = 0, take `r = y − X β̂`, and return the sample τ-expectile of `r`.
///
/// Consistent under homoscedastic errors only; under heteroscedasticity it
/// targets the expectile of the scaled error.
pub fn estimate_u_tau(data: &Dataset, tau: f64, pilot: &AmpSettings) -> Result<f64> {
    validate_tau(tau)?;
    let pilot_fit = run_amp(data, &ExpectileSpec::new(0.5, 0.0)?, pilot)?;
    if !pilot_fit.converged {
        return Err(Error::NoConvergence(format!(
            "pilot fit did not converge in {} iterations",
            pilot_fit.iterations
        )));
    }
    let r = &data.y - &data.x * &pilot_fit.state.beta_hat;
    sample_expectile(r.as_slice(), tau)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repair_leaves_psd_alone() {
        let mut m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let before = m.clone();
        assert!(!repair_psd(&mut m));
        assert_eq!(m, before);
    }

    #[test]
    fn repair_clips_negative_eigenvalue() {
        let mut m = DMatrix::from_row_slice(2, 2, &[1.0, 1.2, 1.2, 1.0]);
        assert!(repair_psd(&mut m));
        let eig = SymmetricEigen::new(m.clone());
        assert!(eig.eigenvalues.iter().all(|v| *v >= PSD_FLOOR * 0.5));
        assert!(m[(0, 1)].abs() <= (m[(0, 0)] * m[(1, 1)]).sqrt() + 1e-8);
        assert_eq!(m[(0, 1)], m[(1, 0)]);
    }
}
