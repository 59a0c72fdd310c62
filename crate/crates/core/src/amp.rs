//! Approximate message passing for ℓ1-regularised expectile regression.
//!
//! One run alternates three steps from `β̂₀ = 0`:
//!
//! ```text
//! z_t   = y − X β̂_t + (k_t / n) · G(z_{t−1}; b_{t−1})       (Onsager-corrected residual)
//! b_t   : (1/n) Σ ∂₁G(z_t,i; b_t) = 1                        (slope-one score)
//! β̃_t   = β̂_t + Xᵀ G(z_t; b_t),   β̂_{t+1} = η(β̃_t; α ζ_t)
//! ```
//!
//! where `G = (δ/ω)·G̃` is the rescaled effective score of the expectile
//! loss, `k_t = |supp β̂_t|`, `ω_t = max(k_t, 1)/p`, and
//! `ζ_t² = (1/n) Σ G(z_t,i; b_t)²` is the empirical noise level of `β̃_t`.
//! The design is expected to have roughly `N(0, 1/n)` entries.

use log::debug;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::expectile::{soft_threshold_unchecked, ExpectileSpec, ScoreFn};
use crate::roots::bisect_increasing;

/// Bracket for the score parameter b.
pub const B_BRACKET: (f64, f64) = (1e-8, 1e8);
/// Residual tolerance on the slope-one equation.
pub const B_TOL: f64 = 1e-15;
/// Bracket width on log b at which bisection stops.
const LOG_B_TOL: f64 = 1e-13;

/// Default α grid {0.5, 0.75, …, 3.0}.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..=10).map(|i| 0.5 + 0.25 * i as f64).collect()
}

/// Solver controls for [`run_amp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AmpSettings {
    pub alpha_grid: Vec<f64>,
    pub max_iter: usize,
    pub tol: f64,
    /// Sparsity ratio used before any support is available. `None` means
    /// `max(⌊0.05 p⌋, 1)/p`.
    pub omega_init: Option<f64>,
}

impl Default for AmpSettings {
    fn default() -> Self {
        Self {
            alpha_grid: default_alpha_grid(),
            max_iter: 200,
            tol: 1e-6,
            omega_init: None,
        }
    }
}

impl AmpSettings {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha_grid: vec![alpha],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha_grid.is_empty() {
            return Err(Error::param("alpha_grid", "must be nonempty"));
        }
        if let Some(a) = self.alpha_grid.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(Error::param("alpha_grid", format!("entries must be positive, got {a}")));
        }
        if self.max_iter == 0 {
            return Err(Error::param("max_iter", "must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::param("tol", format!("must be positive, got {}", self.tol)));
        }
        if let Some(w) = self.omega_init {
            if !(w > 0.0 && w < 1.0) {
                return Err(Error::param("omega_init", format!("must lie in (0, 1), got {w}")));
            }
        }
        Ok(())
    }

    fn initial_omega(&self, p: usize) -> f64 {
        self.omega_init
            .unwrap_or_else(|| ((0.05 * p as f64).floor().max(1.0)) / p as f64)
    }
}

/// Iterate t of the message-passing recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct AmpState {
    pub t: usize,
    /// β̂_t
    pub beta_hat: DVector<f64>,
    /// β̃_t = β̂_t + Xᵀ G(z_t; b_t)
    pub beta_tilde: DVector<f64>,
    /// Adjusted residuals z_t.
    pub z: DVector<f64>,
    /// G(z_t; b_t), kept for the next Onsager correction and for covariance estimation.
    pub score: DVector<f64>,
    pub b: f64,
    /// Threshold θ_t = α ζ_t applied to β̃_t.
    pub theta: f64,
    /// ζ_emp,t
    pub zeta_emp: f64,
    /// ζ²_emp,t = (1/n) Σ G(z_t,i; b_t)², stored unrounded.
    pub zeta_emp_sq: f64,
    /// Sparsity ratio ω_t used in the rescaling of G.
    pub omega: f64,
    /// |supp β̂_t|
    pub support_size: usize,
}

/// Converged (or best-effort) output of [`run_amp`] for one expectile level.
#[derive(Debug, Clone, PartialEq)]
pub struct AmpFit {
    pub state: AmpState,
    pub converged: bool,
    pub iterations: usize,
    pub alpha: f64,
    pub delta: f64,
    pub omega: f64,
    pub spec: ExpectileSpec,
}

impl AmpFit {
    pub fn score_fn(&self) -> ScoreFn {
        ScoreFn {
            spec: self.spec,
            b: self.state.b,
            scale: self.delta / self.state.omega,
        }
    }

    pub fn zeta_sq(&self) -> f64 {
        self.state.zeta_emp_sq
    }
}

/// (1/n) Σ aᵢ bᵢ, summed left to right.
pub(crate) fn mean_product(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64
}

fn support_size(v: &DVector<f64>) -> usize {
    v.iter().filter(|x| **x != 0.0).count()
}

fn check_shape(data: &Dataset) -> Result<()> {
    if data.n() < 2 {
        return Err(Error::InvalidDataset(format!(
            "message passing needs at least 2 observations, got {}",
            data.n()
        )));
    }
    if data.n() > data.p() {
        return Err(Error::InvalidDataset(format!(
            "message passing path requires n ≤ p, got n = {}, p = {}",
            data.n(),
            data.p()
        )));
    }
    Ok(())
}

/// Adjusted residuals `z_t = y − X β̂_t + (k/n)·G(z_{t−1}; b_{t−1})`.
///
/// `k` counts the nonzeros of `η(β̃_{t−1}; θ_{t−1})`, recomputed from
/// `prev`. With no previous iterate the correction is dropped.
pub fn adjust_residuals(data: &Dataset, beta_hat: &DVector<f64>, prev: Option<&AmpState>) -> Result<DVector<f64>> {
    if beta_hat.len() != data.p() {
        return Err(Error::DimensionMismatch(format!(
            "β̂ has length {} but the design has {} columns",
            beta_hat.len(),
            data.p()
        )));
    }
    let mut z = &data.y - &data.x * beta_hat;
    if let Some(prev) = prev {
        if prev.score.len() != data.n() || prev.beta_tilde.len() != data.p() {
            return Err(Error::DimensionMismatch(
                "previous state does not match the dataset".into(),
            ));
        }
        let k = prev
            .beta_tilde
            .iter()
            .filter(|v| soft_threshold_unchecked(**v, prev.theta) != 0.0)
            .count();
        if k > 0 {
            z.axpy(k as f64 / data.n() as f64, &prev.score, 1.0);
        }
    }
    Ok(z)
}

/// Solves `s/n = c₁(b)·#{z ≤ u}/n + c₂(b)·#{z > u}/n` for b, with
/// `c₁ = 2b(1−τ)/(2b(1−τ)+1)` and `c₂ = 2bτ/(2bτ+1)`.
///
/// The right side increases from 0 to 1 in b, so a root exists exactly when
/// `0 < s < n`. Residuals at the kink count in the lower branch.
pub fn update_b(z: &DVector<f64>, support_size: usize, spec: &ExpectileSpec) -> Result<f64> {
    let n = z.len();
    if support_size == 0 {
        return Err(Error::param(
            "support_size",
            "is zero; substitute s = 1 before solving for b",
        ));
    }
    if support_size >= n {
        return Err(Error::RootNotBracketed(format!(
            "support size {support_size} ≥ n = {n}: the slope-one equation has no finite root"
        )));
    }
    let lower = z.iter().filter(|v| **v <= spec.u).count() as f64 / n as f64;
    solve_slope_one(lower, support_size as f64 / n as f64, spec.tau)
}

/// Root in b of `c₁(b)·lower + c₂(b)·(1 − lower) = target`, searched on a
/// log scale over [`B_BRACKET`].
pub(crate) fn solve_slope_one(lower: f64, target: f64, tau: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::RootNotBracketed(format!(
            "slope-one target {target} lies outside (0, 1)"
        )));
    }
    let upper = 1.0 - lower;
    let equation = |log_b: f64| {
        let b = log_b.exp();
        let k1 = 2.0 * b * (1.0 - tau);
        let k2 = 2.0 * b * tau;
        k1 / (k1 + 1.0) * lower + k2 / (k2 + 1.0) * upper - target
    };
    let log_b = bisect_increasing(equation, B_BRACKET.0.ln(), B_BRACKET.1.ln(), LOG_B_TOL, B_TOL, 400)?;
    Ok(log_b.exp())
}

/// Score, threshold and β̃ update for residuals `z` at iterate `t`.
#[allow(clippy::too_many_arguments)]
fn complete_state(
    data: &Dataset,
    t: usize,
    beta_hat: DVector<f64>,
    z: DVector<f64>,
    s: usize,
    omega: f64,
    spec: &ExpectileSpec,
    delta: f64,
    alpha: f64,
) -> Result<AmpState> {
    let support = support_size(&beta_hat);
    let b = update_b(&z, s, spec)?;
    let g = ScoreFn::new(*spec, b, delta, omega)?;
    let score = z.map(|v| g.value(v));
    let zeta_emp_sq = mean_product(score.as_slice(), score.as_slice());
    let zeta_emp = zeta_emp_sq.sqrt();
    let theta = alpha * zeta_emp;
    let beta_tilde = &beta_hat + data.x.tr_mul(&score);
    if !zeta_emp.is_finite() || beta_tilde.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "iterate {t} produced non-finite values (ζ = {zeta_emp})"
        )));
    }
    Ok(AmpState {
        t,
        beta_hat,
        beta_tilde,
        z,
        score,
        b,
        theta,
        zeta_emp,
        zeta_emp_sq,
        omega,
        support_size: support,
    })
}

/// State at t = 0: β̂ = 0, z = y. The slope-one equation uses `s = ω₀ p`
/// so that the first score already has unit average slope.
pub fn initial_state(data: &Dataset, spec: &ExpectileSpec, omega_init: f64, alpha: f64) -> Result<AmpState> {
    check_shape(data)?;
    let p = data.p();
    let s = ((omega_init * p as f64).round() as usize).clamp(1, data.n() - 1);
    let omega = s as f64 / p as f64;
    let beta_hat = DVector::zeros(p);
    let z = adjust_residuals(data, &beta_hat, None)?;
    complete_state(data, 0, beta_hat, z, s, omega, spec, data.delta(), alpha)
}

/// One full step t → t+1: threshold β̃_t, adjust residuals, re-solve b,
/// refresh ω, ζ, θ and β̃.
pub fn amp_iterate(data: &Dataset, state: &AmpState, spec: &ExpectileSpec, alpha: f64) -> Result<AmpState> {
    check_shape(data)?;
    let beta_hat = state.beta_tilde.map(|v| soft_threshold_unchecked(v, state.theta));
    let z = adjust_residuals(data, &beta_hat, Some(state))?;
    let s = support_size(&beta_hat).max(1);
    let omega = s as f64 / data.p() as f64;
    complete_state(data, state.t + 1, beta_hat, z, s, omega, spec, data.delta(), alpha)
}

fn relative_change(new: &DVector<f64>, old: &DVector<f64>) -> f64 {
    (new - old).norm() / old.norm().max(1.0)
}

/// Runs the recursion for a single α. Returns the last state, whether the
/// stopping rule fired, and the iteration count.
pub fn run_amp_single(
    data: &Dataset,
    spec: &ExpectileSpec,
    alpha: f64,
    omega_init: f64,
    max_iter: usize,
    tol: f64,
) -> Result<(AmpState, bool, usize)> {
    let mut state = initial_state(data, spec, omega_init, alpha)?;
    for it in 1..=max_iter {
        let next = amp_iterate(data, &state, spec, alpha)?;
        let change = relative_change(&next.beta_hat, &state.beta_hat);
        state = next;
        if change < tol {
            return Ok((state, true, it));
        }
    }
    Ok((state, false, max_iter))
}

/// Fits one expectile level, scanning the α grid and keeping the fit with
/// the smallest converged ζ_emp. If no α converges the smallest-ζ finite fit
/// is returned with `converged = false`.
pub fn run_amp(data: &Dataset, spec: &ExpectileSpec, settings: &AmpSettings) -> Result<AmpFit> {
    settings.validate()?;
    check_shape(data)?;
    let omega_init = settings.initial_omega(data.p());
    let mut best: Option<AmpFit> = None;
    let mut first_err: Option<Error> = None;
    for &alpha in &settings.alpha_grid {
        match run_amp_single(data, spec, alpha, omega_init, settings.max_iter, settings.tol) {
            Ok((state, converged, iterations)) => {
                debug!(
                    "tau={} alpha={alpha}: converged={converged} iters={iterations} zeta={:.6} support={}",
                    spec.tau, state.zeta_emp, state.support_size
                );
                let omega = state.omega;
                let candidate = AmpFit {
                    state,
                    converged,
                    iterations,
                    alpha,
                    delta: data.delta(),
                    omega,
                    spec: *spec,
                };
                let better = match &best {
                    None => true,
                    Some(cur) => match (candidate.converged, cur.converged) {
                        (true, false) => true,
                        (false, true) => false,
                        _ => candidate.state.zeta_emp < cur.state.zeta_emp,
                    },
                };
                if better {
                    best = Some(candidate);
                }
            }
            Err(e) => {
                debug!("tau={} alpha={alpha}: failed: {e}", spec.tau);
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.expect("nonempty grid yields a result or an error"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn spec(tau: f64, u: f64) -> ExpectileSpec {
        ExpectileSpec::new(tau, u).unwrap()
    }

    #[test]
    fn update_b_single_branch_closed_forms() {
        let z = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        let (s, n) = (3usize, 10.0);
        let r = s as f64 / n;
        let tau = 0.7;
        let b = update_b(&z, s, &spec(tau, 0.0)).unwrap();
        assert!((b - r / (2.0 * tau * (1.0 - r))).abs() < 1e-9);
        let b = update_b(&z, s, &spec(tau, 100.0)).unwrap();
        assert!((b - r / (2.0 * (1.0 - tau) * (1.0 - r))).abs() < 1e-9);
    }

    #[test]
    fn update_b_mixed_counts_plug_back() {
        let z = DVector::from_fn(100, |i, _| if i < 40 { -1.0 } else { 1.0 });
        let sp = spec(0.8, 0.0);
        let b = update_b(&z, 10, &sp).unwrap();
        let k1 = 2.0 * b * 0.2;
        let k2 = 2.0 * b * 0.8;
        let rhs = k1 / (k1 + 1.0) * 0.4 + k2 / (k2 + 1.0) * 0.6;
        assert!((rhs - 0.1).abs() <= 1e-10);
    }

    #[test]
    fn update_b_edge_errors() {
        let z = DVector::from_element(5, 1.0);
        assert!(matches!(
            update_b(&z, 0, &spec(0.5, 0.0)),
            Err(Error::InvalidParameter { .. })
        ));
        assert!(matches!(
            update_b(&z, 5, &spec(0.5, 0.0)),
            Err(Error::RootNotBracketed(_))
        ));
    }

    #[test]
    fn kink_ties_count_in_lower_branch() {
        let z = DVector::from_vec(vec![0.0, 0.0, 1.0, 1.0]);
        let tau = 0.9;
        let b = update_b(&z, 1, &spec(tau, 0.0)).unwrap();
        let k1 = 2.0 * b * (1.0 - tau);
        let k2 = 2.0 * b * tau;
        assert!((0.5 * k1 / (k1 + 1.0) + 0.5 * k2 / (k2 + 1.0) - 0.25).abs() < 1e-10);
    }

    #[test]
    fn first_residual_is_response() {
        let x = DMatrix::from_fn(3, 4, |i, j| (i + 2 * j) as f64 * 0.1);
        let y = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let data = Dataset::new(y.clone(), x).unwrap();
        let z = adjust_residuals(&data, &DVector::zeros(4), None).unwrap();
        assert_eq!(z, y);
    }

    #[test]
    fn zero_design_stays_at_zero() {
        let data = Dataset::new(DVector::from_vec(vec![0.3, -0.1, 0.8, 0.2]), DMatrix::zeros(4, 8)).unwrap();
        let sp = spec(0.5, 0.0);
        let s0 = initial_state(&data, &sp, 0.25, 1.0).unwrap();
        assert!(s0.beta_tilde.iter().all(|v| *v == 0.0));
        let s1 = amp_iterate(&data, &s0, &sp, 1.0).unwrap();
        assert!(s1.beta_hat.iter().all(|v| *v == 0.0));
        assert!(s1.beta_tilde.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_degenerate_shapes() {
        let one = Dataset::new(DVector::from_vec(vec![1.0]), DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert!(run_amp(&one, &spec(0.5, 0.0), &AmpSettings::default()).is_err());
        let tall = Dataset::new(DVector::zeros(5), DMatrix::from_element(5, 3, 1.0)).unwrap();
        assert!(matches!(
            run_amp(&tall, &spec(0.5, 0.0), &AmpSettings::default()),
            Err(Error::InvalidDataset(_))
        ));
    }

    #[test]
    fn settings_validation() {
        let mut s = AmpSettings::default();
        assert_eq!(s.alpha_grid.len(), 11);
        assert_eq!(*s.alpha_grid.last().unwrap(), 3.0);
        s.alpha_grid = vec![];
        assert!(s.validate().is_err());
        assert!(AmpSettings {
            alpha_grid: vec![-1.0],
            ..AmpSettings::default()
        }
        .validate()
        .is_err());
        assert!(AmpSettings {
            max_iter: 0,
            ..AmpSettings::default()
        }
        .validate()
        .is_err());
        assert!(AmpSettings {
            tol: 0.0,
            ..AmpSettings::default()
        }
        .validate()
        .is_err());
    }
}
