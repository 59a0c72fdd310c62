//! Population recursion for the AMP noise levels.
//!
//! With β̃ ≈ B + ζ̄Z and z ≈ ε + σ̄Z, one step reads
//!
//! ```text
//! σ̄²_t = δ⁻¹·E[(η(B + ζ̄_{t−1}Z; θ_{t−1}) − B)²]
//! E[∂₁G(ε + σ̄_t Z; b_t)] = 1
//! ζ̄²_t = E[G(ε + σ̄_t Z; b_t)²],   θ_t = α·ζ̄_t
//! ```
//!
//! All expectations are Monte-Carlo averages over one fixed draw set, so a
//! trajectory is a deterministic function of the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::amp::solve_slope_one;
use crate::distribution::ErrorDistribution;
use crate::error::{Error, Result};
use crate::expectile::{soft_threshold_unchecked, ExpectileSpec, ScoreFn};

pub const DEFAULT_MC_SAMPLES: usize = 100_000;
pub const MIN_MC_SAMPLES: usize = 10_000;

/// Limiting law of one coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalPrior {
    /// 0 with probability 1 − ω, `sd·N(0, 1)` otherwise.
    SparseNormal { omega: f64, sd: f64 },
    /// 0 with probability 1 − ω, `value` otherwise.
    PointMass { omega: f64, value: f64 },
    /// Uniform over the listed coefficients.
    Empirical { values: Vec<f64> },
}

impl SignalPrior {
    pub fn zero() -> Self {
        SignalPrior::PointMass { omega: 0.0, value: 0.0 }
    }

    /// Coefficients `β₀ + u·γ₀` of one expectile level.
    pub fn from_coefficients(beta0: &[f64], gamma0: &[f64], u: f64) -> Result<Self> {
        if beta0.len() != gamma0.len() {
            return Err(Error::DimensionMismatch(format!(
                "β₀ has length {} but γ₀ has length {}",
                beta0.len(),
                gamma0.len()
            )));
        }
        let values = beta0.iter().zip(gamma0).map(|(b, g)| b + u * g).collect();
        let prior = SignalPrior::Empirical { values };
        prior.validate()?;
        Ok(prior)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SignalPrior::SparseNormal { omega, sd } => {
                check_mixing(*omega)?;
                if !(sd.is_finite() && *sd >= 0.0) {
                    return Err(Error::param("sd", format!("must be finite and nonnegative, got {sd}")));
                }
            }
            SignalPrior::PointMass { omega, value } => {
                check_mixing(*omega)?;
                if !value.is_finite() {
                    return Err(Error::param("value", "must be finite"));
                }
            }
            SignalPrior::Empirical { values } => {
                if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::param("values", "must be nonempty and finite"));
                }
            }
        }
        Ok(())
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            SignalPrior::SparseNormal { omega, sd } => omega * sd * sd,
            SignalPrior::PointMass { omega, value } => omega * value * value,
            SignalPrior::Empirical { values } => values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64,
        }
    }

    /// Draw `i` of a set of size `m`. Empirical priors are cycled rather
    /// than resampled, which removes the sampling noise in E[B²].
    fn draw<R: Rng>(&self, rng: &mut R, i: usize) -> f64 {
        match self {
            SignalPrior::SparseNormal { omega, sd } => {
                let on = rng.random::<f64>() < *omega;
                let g: f64 = rng.sample(StandardNormal);
                if on {
                    sd * g
                } else {
                    0.0
                }
            }
            SignalPrior::PointMass { omega, value } => {
                if rng.random::<f64>() < *omega {
                    *value
                } else {
                    0.0
                }
            }
            SignalPrior::Empirical { values } => values[i % values.len()],
        }
    }
}

fn check_mixing(omega: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::param(
            "omega",
            format!("mixing probability must lie in [0, 1], got {omega}"),
        ));
    }
    Ok(())
}

/// Fixed Monte-Carlo sample shared by every step of a recursion.
#[derive(Debug, Clone)]
pub struct DrawSet {
    pub signal: Vec<f64>,
    pub signal_noise: Vec<f64>,
    pub error: Vec<f64>,
    pub residual_noise: Vec<f64>,
}

impl DrawSet {
    pub fn new(prior: &SignalPrior, err: &ErrorDistribution, mc_samples: usize, seed: u64) -> Result<Self> {
        if mc_samples < MIN_MC_SAMPLES {
            return Err(Error::param(
                "mc_samples",
                format!("must be at least {MIN_MC_SAMPLES}, got {mc_samples}"),
            ));
        }
        prior.validate()?;
        err.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let signal = (0..mc_samples).map(|i| prior.draw(&mut rng, i)).collect();
        let signal_noise = (0..mc_samples).map(|_| rng.sample(StandardNormal)).collect();
        let error = err.sample_n(&mut rng, mc_samples);
        let residual_noise = (0..mc_samples).map(|_| rng.sample(StandardNormal)).collect();
        Ok(Self {
            signal,
            signal_noise,
            error,
            residual_noise,
        })
    }

    pub fn len(&self) -> usize {
        self.signal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signal.is_empty()
    }

    /// Mean and standard error of `(η(B + ζZ; θ) − B)²`, and the fraction of
    /// draws that survive thresholding.
    fn threshold_moments(&self, zeta: f64, theta: f64) -> (f64, f64, f64) {
        let m = self.len() as f64;
        let (mut sum, mut sum_sq, mut active) = (0.0, 0.0, 0usize);
        for (b, z) in self.signal.iter().zip(&self.signal_noise) {
            let eta = soft_threshold_unchecked(b + zeta * z, theta);
            if eta != 0.0 {
                active += 1;
            }
            let d = (eta - b) * (eta - b);
            sum += d;
            sum_sq += d * d;
        }
        let mean = sum / m;
        let var = (sum_sq / m - mean * mean).max(0.0);
        (mean, (var / m).sqrt(), active as f64 / m)
    }
}

/// E[(η(B + ζZ; θ) − B)²] on a draw set with `mc_samples` draws.
pub fn amse(prior: &SignalPrior, zeta: f64, theta: f64, mc_samples: usize, seed: u64) -> Result<f64> {
    Ok(amse_with_error(prior, zeta, theta, mc_samples, seed)?.0)
}

/// [`amse`] together with its Monte-Carlo standard error.
pub fn amse_with_error(prior: &SignalPrior, zeta: f64, theta: f64, mc_samples: usize, seed: u64) -> Result<(f64, f64)> {
    check_scale(zeta, theta)?;
    prior.validate()?;
    if mc_samples == 0 {
        return Err(Error::param("mc_samples", "must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = mc_samples as f64;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for i in 0..mc_samples {
        let b = prior.draw(&mut rng, i);
        let z: f64 = rng.sample(StandardNormal);
        let d = soft_threshold_unchecked(b + zeta * z, theta) - b;
        sum += d * d;
        sum_sq += d * d * d * d;
    }
    let mean = sum / m;
    let var = (sum_sq / m - mean * mean).max(0.0);
    Ok((mean, (var / m).sqrt()))
}

fn check_scale(zeta: f64, theta: f64) -> Result<()> {
    if !(zeta.is_finite() && zeta >= 0.0) {
        return Err(Error::param(
            "zeta",
            format!("must be finite and nonnegative, got {zeta}"),
        ));
    }
    if !(theta.is_finite() && theta >= 0.0) {
        return Err(Error::param(
            "theta",
            format!("must be finite and nonnegative, got {theta}"),
        ));
    }
    Ok(())
}

/// How ω is chosen at each step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum OmegaRule {
    Fixed {
        omega: f64,
    },
    /// Fraction of draws surviving the previous threshold, floored.
    Active {
        floor: f64,
    },
}

/// State after one step of the recursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SePoint {
    pub sigma_bar_sq: f64,
    pub zeta_bar_sq: f64,
    pub theta: f64,
    pub b: f64,
    pub omega: f64,
}

/// Residual half of a step: given σ̄² and ω, solve the population slope-one
/// condition for b and return (ζ̄², b).
fn residual_moments(
    draws: &DrawSet,
    sigma_bar_sq: f64,
    spec: &ExpectileSpec,
    delta: f64,
    omega: f64,
) -> Result<(f64, f64)> {
    let sd = sigma_bar_sq.sqrt();
    let m = draws.len() as f64;
    let lower = draws
        .error
        .iter()
        .zip(&draws.residual_noise)
        .filter(|(e, z)| *e + sd * *z <= spec.u)
        .count() as f64
        / m;
    let b = solve_slope_one(lower, omega / delta, spec.tau)?;
    let g = ScoreFn::new(*spec, b, delta, omega)?;
    let zeta_bar_sq = draws
        .error
        .iter()
        .zip(&draws.residual_noise)
        .map(|(e, z)| {
            let v = g.value(e + sd * z);
            v * v
        })
        .sum::<f64>()
        / m;
    Ok((zeta_bar_sq, b))
}

fn check_common(delta: f64, alpha: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::param("delta", format!("must lie in (0, 1], got {delta}")));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::param("alpha", format!("must be positive, got {alpha}")));
    }
    Ok(())
}

fn finish(sigma_bar_sq: f64, zeta_bar_sq: f64, b: f64, omega: f64, alpha: f64) -> Result<SePoint> {
    let point = SePoint {
        sigma_bar_sq,
        zeta_bar_sq,
        theta: alpha * zeta_bar_sq.sqrt(),
        b,
        omega,
    };
    if [point.sigma_bar_sq, point.zeta_bar_sq, point.theta, point.b]
        .iter()
        .any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite(format!("state evolution produced {point:?}")));
    }
    Ok(point)
}

/// Starting point: β̂₀ = 0 gives σ̄²₀ = δ⁻¹E[B²].
pub fn se_initial(draws: &DrawSet, spec: &ExpectileSpec, delta: f64, omega: f64, alpha: f64) -> Result<SePoint> {
    check_common(delta, alpha)?;
    let m = draws.len() as f64;
    let sigma_bar_sq = draws.signal.iter().map(|b| b * b).sum::<f64>() / m / delta;
    let (zeta_bar_sq, b) = residual_moments(draws, sigma_bar_sq, spec, delta, omega)?;
    finish(sigma_bar_sq, zeta_bar_sq, b, omega, alpha)
}

/// One step of the recursion from `prev`.
pub fn se_step(
    prev: &SePoint,
    draws: &DrawSet,
    spec: &ExpectileSpec,
    delta: f64,
    omega: OmegaRule,
    alpha: f64,
) -> Result<SePoint> {
    check_common(delta, alpha)?;
    check_scale(prev.zeta_bar_sq.sqrt(), prev.theta)?;
    let (mse, _, active) = draws.threshold_moments(prev.zeta_bar_sq.sqrt(), prev.theta);
    let sigma_bar_sq = mse / delta;
    let omega = match omega {
        OmegaRule::Fixed { omega } => omega,
        OmegaRule::Active { floor } => active.max(floor),
    };
    let (zeta_bar_sq, b) = residual_moments(draws, sigma_bar_sq, spec, delta, omega)?;
    finish(sigma_bar_sq, zeta_bar_sq, b, omega, alpha)
}

fn default_max_iter() -> usize {
    100
}
fn default_tol() -> f64 {
    1e-9
}
fn default_mc() -> usize {
    DEFAULT_MC_SAMPLES
}
fn default_omega_floor() -> f64 {
    1e-3
}

/// Parameters of a full recursion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeSettings {
    pub delta: f64,
    pub alpha: f64,
    /// ω at t = 0.
    pub omega_init: f64,
    /// `None` refreshes ω from the surviving fraction each step.
    #[serde(default)]
    pub omega_fixed: Option<f64>,
    #[serde(default = "default_omega_floor")]
    pub omega_floor: f64,
    #[serde(default = "default_mc")]
    pub mc_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Relative change in ζ̄² below which the recursion stops.
    #[serde(default = "default_tol")]
    pub tol: f64,
}

impl SeSettings {
    /// Defaults for an n×p problem: ω₀ = max(⌊0.05p⌋, 1)/p and floor 1/p.
    pub fn for_dimensions(n: usize, p: usize, alpha: f64) -> Self {
        let p_f = p as f64;
        Self {
            delta: n as f64 / p_f,
            alpha,
            omega_init: ((0.05 * p_f).floor().max(1.0)) / p_f,
            omega_fixed: None,
            omega_floor: 1.0 / p_f,
            mc_samples: DEFAULT_MC_SAMPLES,
            seed: 0,
            max_iter: default_max_iter(),
            tol: default_tol(),
        }
    }

    fn rule(&self) -> OmegaRule {
        match self.omega_fixed {
            Some(omega) => OmegaRule::Fixed { omega },
            None => OmegaRule::Active {
                floor: self.omega_floor,
            },
        }
    }
}

/// Trajectory of a recursion; entry t is the state after step t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeParams {
    pub sigma_bar_sq: Vec<f64>,
    pub zeta_bar_sq: Vec<f64>,
    pub theta_seq: Vec<f64>,
    pub b_seq: Vec<f64>,
    pub omega_seq: Vec<f64>,
    pub converged: bool,
    pub alpha: f64,
}

impl SeParams {
    pub fn len(&self) -> usize {
        self.zeta_bar_sq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zeta_bar_sq.is_empty()
    }

    pub fn last(&self) -> Option<SePoint> {
        let t = self.len().checked_sub(1)?;
        Some(SePoint {
            sigma_bar_sq: self.sigma_bar_sq[t],
            zeta_bar_sq: self.zeta_bar_sq[t],
            theta: self.theta_seq[t],
            b: self.b_seq[t],
            omega: self.omega_seq[t],
        })
    }

    fn push(&mut self, p: &SePoint) {
        self.sigma_bar_sq.push(p.sigma_bar_sq);
        self.zeta_bar_sq.push(p.zeta_bar_sq);
        self.theta_seq.push(p.theta);
        self.b_seq.push(p.b);
        self.omega_seq.push(p.omega);
    }
}

/// Runs the recursion until ζ̄² settles or `max_iter` steps.
pub fn run_state_evolution(
    prior: &SignalPrior,
    err: &ErrorDistribution,
    spec: &ExpectileSpec,
    settings: &SeSettings,
) -> Result<SeParams> {
    if settings.max_iter == 0 {
        return Err(Error::param("max_iter", "must be at least 1"));
    }
    if !(settings.tol > 0.0) {
        return Err(Error::param("tol", format!("must be positive, got {}", settings.tol)));
    }
    let draws = DrawSet::new(prior, err, settings.mc_samples, settings.seed)?;
    run_on_draws(&draws, spec, settings)
}

/// [`run_state_evolution`] on a prepared draw set.
pub fn run_on_draws(draws: &DrawSet, spec: &ExpectileSpec, settings: &SeSettings) -> Result<SeParams> {
    let omega0 = settings.omega_fixed.unwrap_or(settings.omega_init);
    let mut point = se_initial(draws, spec, settings.delta, omega0, settings.alpha)?;
    let mut out = SeParams {
        sigma_bar_sq: Vec::new(),
        zeta_bar_sq: Vec::new(),
        theta_seq: Vec::new(),
        b_seq: Vec::new(),
        omega_seq: Vec::new(),
        converged: false,
        alpha: settings.alpha,
    };
    out.push(&point);
    for _ in 1..settings.max_iter {
        let next = se_step(&point, draws, spec, settings.delta, settings.rule(), settings.alpha)?;
        out.push(&next);
        let change = (next.zeta_bar_sq - point.zeta_bar_sq).abs();
        point = next;
        if change <= settings.tol * point.zeta_bar_sq.max(f64::MIN_POSITIVE) {
            out.converged = true;
            break;
        }
    }
    Ok(out)
}

/// Runs the recursion for each α and keeps the trajectory with the smallest
/// final ζ̄², mirroring the α-selection of the solver. α values whose
/// recursion fails are skipped.
pub fn select_alpha(
    prior: &SignalPrior,
    err: &ErrorDistribution,
    spec: &ExpectileSpec,
    settings: &SeSettings,
    alpha_grid: &[f64],
) -> Result<SeParams> {
    if alpha_grid.is_empty() {
        return Err(Error::param("alpha_grid", "must be nonempty"));
    }
    let draws = DrawSet::new(prior, err, settings.mc_samples, settings.seed)?;
    let mut best: Option<SeParams> = None;
    let mut first_err = None;
    for &alpha in alpha_grid {
        let s = SeSettings {
            alpha,
            ..settings.clone()
        };
        match run_on_draws(&draws, spec, &s) {
            Ok(run) => {
                let better = match &best {
                    None => true,
                    Some(b) => {
                        (run.converged, -run.zeta_bar_sq[run.len() - 1]) > (b.converged, -b.zeta_bar_sq[b.len() - 1])
                    }
                };
                if better {
                    best = Some(run);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.expect("grid is nonempty"))
}
