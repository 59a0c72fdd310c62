//! Monte-Carlo harness for size and power studies.
//!
//! A scenario fixes the design and the coefficient vectors from
//! `design_seed`; only the errors change between replications, drawn from
//! an independent ChaCha stream per replication. Replications run in
//! parallel and are reduced in index order, so results do not depend on
//! scheduling.

use std::time::Instant;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amp::AmpSettings;
use crate::dataset::Dataset;
use crate::decorrelation::puffer_transform;
use crate::distribution::{distribution_expectile, ErrorDistribution};
use crate::error::{Error, Result};
use crate::expectile::{validate_tau, ExpectileSpec};
use crate::hypothesis::{empirical_rates, test_statistics, validate_alpha};
use crate::joint::{estimate_u_tau, fit_joint};
use crate::normal;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Fraction of replications that may fail before a run is aborted.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

/// Where the heteroscedasticity support sits relative to β₀'s support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GammaPlacement {
    #[default]
    Disjoint,
    Overlap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::InvalidConfig(format!(
                "unknown profile `{other}` (expected desk or paper)"
            ))),
        }
    }
}

fn default_schema() -> u32 {
    CONFIG_SCHEMA_VERSION
}
fn default_beta_scale() -> f64 {
    3.0
}
fn default_gamma_pattern() -> Vec<f64> {
    vec![3.0, 1.0, -5.0, -5.0, -3.0]
}
fn default_alpha() -> f64 {
    0.05
}
fn default_true() -> bool {
    true
}

/// Full description of one simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub n: usize,
    pub p: usize,
    /// Nonzeros of β₀.
    pub s: usize,
    /// Nonzero β₀ entries are `beta_scale·N(0, 1)`.
    #[serde(default = "default_beta_scale")]
    pub beta_scale: f64,
    #[serde(default = "default_gamma_pattern")]
    pub gamma_pattern: Vec<f64>,
    #[serde(default)]
    pub gamma_placement: GammaPlacement,
    pub heteroscedastic: bool,
    pub error: ErrorDistribution,
    pub replications: usize,
    pub design_seed: u64,
    pub error_seed: u64,
    pub levels: [f64; 2],
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Use the population expectiles of `error`; otherwise the pilot surrogate.
    #[serde(default = "default_true")]
    pub use_true_u: bool,
    /// AR(1) correlation of the design columns; `None` gives an iid design.
    #[serde(default)]
    pub ar_rho: Option<f64>,
    /// Apply the puffer transformation before fitting.
    #[serde(default)]
    pub decorrelate: bool,
    #[serde(default)]
    pub amp: AmpSettings,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return bad(format!(
                "unsupported schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.n < 2 || self.p < self.n {
            return bad(format!("need 2 ≤ n ≤ p, got n = {}, p = {}", self.n, self.p));
        }
        let g = self.gamma_pattern.len();
        if self.s > self.p {
            return bad(format!("s = {} exceeds p = {}", self.s, self.p));
        }
        match self.gamma_placement {
            GammaPlacement::Disjoint if self.s + g > self.p => {
                return bad(format!("disjoint supports need s + {g} ≤ p"));
            }
            GammaPlacement::Overlap if g > self.p => {
                return bad(format!("gamma support of size {g} does not fit"));
            }
            _ => {}
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if !(self.beta_scale.is_finite()) || self.gamma_pattern.iter().any(|v| !v.is_finite()) {
            return bad("coefficients must be finite".into());
        }
        for &tau in &self.levels {
            validate_tau(tau)?;
        }
        validate_alpha(self.alpha)?;
        if let Some(rho) = self.ar_rho {
            if !(rho > -1.0 && rho < 1.0) {
                return bad(format!("ar_rho must lie in (−1, 1), got {rho}"));
            }
        }
        self.error.validate()?;
        self.amp.validate()?;
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    /// Applies the dimensions and replication count of a profile:
    /// desk = (100, 200, 100), paper = (250, 500, 400).
    pub fn with_profile(mut self, profile: Profile) -> Self {
        let (n, p, r) = match profile {
            Profile::Desk => (100, 200, 100),
            Profile::Paper => (250, 500, 400),
        };
        self.n = n;
        self.p = p;
        self.replications = r;
        self
    }

    /// Named scenarios from the simulation study, at desk scale. Apply
    /// [`SimConfig::with_profile`] for the full-scale profile.
    pub fn preset(name: &str) -> Result<Self> {
        let normal = ErrorDistribution::simulation_menu()[0].1.clone();
        let t3 = ErrorDistribution::simulation_menu()[1].1.clone();
        let base = SimConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            name: name.to_string(),
            n: 100,
            p: 200,
            s: 5,
            beta_scale: 3.0,
            gamma_pattern: default_gamma_pattern(),
            gamma_placement: GammaPlacement::Disjoint,
            heteroscedastic: false,
            error: normal,
            replications: 100,
            design_seed: 20240101,
            error_seed: 777,
            levels: [0.2, 0.8],
            alpha: 0.05,
            use_true_u: true,
            ar_rho: None,
            decorrelate: false,
            amp: AmpSettings::default(),
        };
        let cfg = match name {
            "null_normal" | "high_sparsity_null" => base,
            "null_t3" => SimConfig { error: t3, ..base },
            "high_sparsity" => SimConfig {
                heteroscedastic: true,
                ..base
            },
            "high_sparsity_06" => SimConfig {
                heteroscedastic: true,
                levels: [0.6, 0.8],
                ..base
            },
            "medium_sparsity_null" => SimConfig { s: 50, ..base },
            "medium_sparsity" => SimConfig {
                s: 50,
                heteroscedastic: true,
                ..base
            },
            "ar03_null" => SimConfig {
                ar_rho: Some(0.3),
                decorrelate: true,
                ..base
            },
            "ar03" => SimConfig {
                ar_rho: Some(0.3),
                decorrelate: true,
                heteroscedastic: true,
                ..base
            },
            "ar07_null" => SimConfig {
                ar_rho: Some(0.7),
                decorrelate: true,
                ..base
            },
            "ar07" => SimConfig {
                ar_rho: Some(0.7),
                decorrelate: true,
                heteroscedastic: true,
                ..base
            },
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown preset `{other}`; known presets: {}",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(cfg)
    }
}

pub const PRESETS: &[&str] = &[
    "null_normal",
    "null_t3",
    "high_sparsity",
    "high_sparsity_06",
    "medium_sparsity_null",
    "medium_sparsity",
    "ar03_null",
    "ar03",
    "ar07_null",
    "ar07",
];

/// Fixed part of a scenario: design and true coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub beta0: DVector<f64>,
    pub gamma0: DVector<f64>,
    pub beta_support: Vec<usize>,
    pub gamma_support: Vec<usize>,
}

/// One replication's data with its truth.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub data: Dataset,
    pub design: Design,
    pub errors: DVector<f64>,
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Design matrix and coefficients drawn from `design_seed`. Columns have
/// variance 1/n; with `ar_rho` each row is AR(1) across columns.
pub fn generate_design(cfg: &SimConfig) -> Result<Design> {
    cfg.validate()?;
    let (n, p) = (cfg.n, cfg.p);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.design_seed);
    let scale = 1.0 / (n as f64).sqrt();
    let x = match cfg.ar_rho {
        None => DMatrix::from_fn(n, p, |_, _| standard_normal(&mut rng) * scale),
        Some(rho) => {
            let innov = (1.0 - rho * rho).sqrt();
            let mut x = DMatrix::zeros(n, p);
            for i in 0..n {
                let mut prev = standard_normal(&mut rng);
                x[(i, 0)] = prev * scale;
                for j in 1..p {
                    prev = rho * prev + innov * standard_normal(&mut rng);
                    x[(i, j)] = prev * scale;
                }
            }
            x
        }
    };
    // The γ₀ positions are drawn even when the model is homoscedastic, so the
    // flag does not shift β₀.
    let g = cfg.gamma_pattern.len();
    let picks = match cfg.gamma_placement {
        GammaPlacement::Disjoint => cfg.s + g,
        GammaPlacement::Overlap => cfg.s.max(g),
    };
    let idx = sample_indices(&mut rng, p, picks).into_vec();
    let beta_support: Vec<usize> = idx[..cfg.s].to_vec();
    let gamma_support: Vec<usize> = match (cfg.heteroscedastic, cfg.gamma_placement) {
        (false, _) => Vec::new(),
        (true, GammaPlacement::Disjoint) => idx[cfg.s..cfg.s + g].to_vec(),
        (true, GammaPlacement::Overlap) => idx[..g].to_vec(),
    };
    let mut beta0 = DVector::zeros(p);
    for &j in &beta_support {
        beta0[j] = cfg.beta_scale * standard_normal(&mut rng);
    }
    let mut gamma0 = DVector::zeros(p);
    for (&j, &v) in gamma_support.iter().zip(&cfg.gamma_pattern) {
        gamma0[j] = v;
    }
    Ok(Design {
        x,
        beta0,
        gamma0,
        beta_support,
        gamma_support,
    })
}

/// Error stream for one replication: `error_seed` with the replication
/// index as ChaCha stream id.
pub fn replication_rng(error_seed: u64, replication: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(error_seed);
    rng.set_stream(replication as u64);
    rng
}

/// Responses `y = Xβ₀ + (1 + Xγ₀)∘ε` (or `Xβ₀ + ε` when homoscedastic).
pub fn simulate_response(cfg: &SimConfig, design: &Design, replication: usize) -> Result<Scenario> {
    let mut rng = replication_rng(cfg.error_seed, replication);
    let errors = DVector::from_vec(cfg.error.sample_n(&mut rng, cfg.n));
    let mean = &design.x * &design.beta0;
    let y = if cfg.heteroscedastic {
        let spread = (&design.x * &design.gamma0).add_scalar(1.0);
        mean + spread.component_mul(&errors)
    } else {
        mean + &errors
    };
    Ok(Scenario {
        data: Dataset::new(y, design.x.clone())?,
        design: design.clone(),
        errors,
    })
}

/// Design, coefficients, and one replication's response.
pub fn generate_scenario(cfg: &SimConfig, replication: usize) -> Result<Scenario> {
    let design = generate_design(cfg)?;
    simulate_response(cfg, &design, replication)
}

/// Per-replication diagnostics kept in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub replication: usize,
    pub u: [f64; 2],
    pub sigma: [[f64; 2]; 2],
    pub alpha_selected: [f64; 2],
    pub iterations: [usize; 2],
    pub converged: bool,
    pub psd_repaired: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub replication: usize,
    pub error: String,
}

/// Aggregated simulation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub name: String,
    pub fp: f64,
    pub tp: Option<f64>,
    pub alpha: f64,
    pub levels: [f64; 2],
    pub replications_requested: usize,
    pub replications_used: usize,
    pub beta_support: Vec<usize>,
    pub gamma_support: Vec<usize>,
    pub gamma0: Vec<f64>,
    /// Rows are replications (in index order), columns coordinates.
    pub p_values: Vec<Vec<f64>>,
    /// T_j of null coordinates pooled over replications, for QQ plots.
    pub null_t_stats: Vec<f64>,
    pub summaries: Vec<ReplicationSummary>,
    pub failures: Vec<ReplicationFailure>,
    /// Wall-clock time; not part of the serialised report so that reports
    /// stay reproducible.
    #[serde(skip)]
    pub elapsed_seconds: f64,
}

/// Output of one replication of the full pipeline.
#[derive(Debug, Clone)]
pub struct ReplicationOutcome {
    pub summary: ReplicationSummary,
    pub t_stats: Vec<f64>,
    pub p_values: Vec<f64>,
    pub beta_tilde: [Vec<f64>; 2],
}

/// Error expectiles for the two levels according to `cfg.use_true_u`.
pub fn level_specs(cfg: &SimConfig, data: &Dataset) -> Result<[ExpectileSpec; 2]> {
    let mut out = [ExpectileSpec { tau: 0.5, u: 0.0 }; 2];
    for (slot, &tau) in out.iter_mut().zip(&cfg.levels) {
        let u = if cfg.use_true_u {
            distribution_expectile(&cfg.error, tau)?
        } else {
            estimate_u_tau(data, tau, &cfg.amp)?
        };
        *slot = ExpectileSpec::new(tau, u)?;
    }
    Ok(out)
}

/// Runs the pipeline on one replication: optional decorrelation, error
/// expectiles, joint fit, and the contrast test.
pub fn run_replication(cfg: &SimConfig, design: &Design, replication: usize) -> Result<ReplicationOutcome> {
    let scenario = simulate_response(cfg, design, replication)?;
    let data = if cfg.decorrelate {
        puffer_transform(&scenario.data)?.0
    } else {
        scenario.data
    };
    let levels = level_specs(cfg, &data)?;
    let joint = fit_joint(&data, &levels, &cfg.amp)?;
    let report = test_statistics(&joint, cfg.alpha)?;
    let summary = ReplicationSummary {
        replication,
        u: [levels[0].u, levels[1].u],
        sigma: report.sigma,
        alpha_selected: [joint.fits[0].alpha, joint.fits[1].alpha],
        iterations: [joint.fits[0].iterations, joint.fits[1].iterations],
        converged: !joint.degraded,
        psd_repaired: joint.psd_repaired,
    };
    Ok(ReplicationOutcome {
        summary,
        t_stats: report.t_stats,
        p_values: report.p_values,
        beta_tilde: [
            joint.fits[0].state.beta_tilde.as_slice().to_vec(),
            joint.fits[1].state.beta_tilde.as_slice().to_vec(),
        ],
    })
}

/// Runs every replication and aggregates empirical size and power.
pub fn run_simulation(cfg: &SimConfig) -> Result<SimResult> {
    let start = Instant::now();
    cfg.validate()?;
    let design = generate_design(cfg)?;
    let outcomes: Vec<Result<ReplicationOutcome>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| run_replication(cfg, &design, r))
        .collect();

    let mut failures = Vec::new();
    let mut used = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(o) => used.push(o),
            Err(e) => failures.push(ReplicationFailure {
                replication: r,
                error: e.to_string(),
            }),
        }
    }
    if !failures.is_empty() {
        let frac = failures.len() as f64 / cfg.replications as f64;
        if frac >= MAX_FAILURE_FRACTION || used.is_empty() {
            return Err(Error::TooManyFailures {
                failed: failures.len(),
                total: cfg.replications,
                first: failures[0].error.clone(),
            });
        }
        warn!(
            "{} of {} replications failed and were excluded",
            failures.len(),
            cfg.replications
        );
    }

    let p_values: Vec<Vec<f64>> = used.iter().map(|o| o.p_values.clone()).collect();
    let rates = empirical_rates(&p_values, &design.gamma_support, cfg.alpha)?;
    let mut is_alt = vec![false; cfg.p];
    for &j in &design.gamma_support {
        is_alt[j] = true;
    }
    let null_t_stats = used
        .iter()
        .flat_map(|o| {
            o.t_stats
                .iter()
                .enumerate()
                .filter(|(j, _)| !is_alt[*j])
                .map(|(_, t)| *t)
                .collect::<Vec<_>>()
        })
        .collect();

    Ok(SimResult {
        name: cfg.name.clone(),
        fp: rates.fp,
        tp: rates.tp,
        alpha: cfg.alpha,
        levels: cfg.levels,
        replications_requested: cfg.replications,
        replications_used: used.len(),
        beta_support: design.beta_support.clone(),
        gamma_support: design.gamma_support.clone(),
        gamma0: design.gamma0.as_slice().to_vec(),
        p_values,
        null_t_stats,
        summaries: used.into_iter().map(|o| o.summary).collect(),
        failures,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Normal QQ pairs `(Φ⁻¹((i − ½)/m), x₍ᵢ₎)`.
pub fn qq_export(t_stats: &[f64]) -> Result<Vec<(f64, f64)>> {
    if t_stats.is_empty() {
        return Err(Error::param("t_stats", "must be nonempty"));
    }
    let mut sorted = t_stats.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let m = sorted.len() as f64;
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, v)| (normal::quantile((i as f64 + 0.5) / m), v))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(name: &str) -> SimConfig {
        SimConfig {
            n: 40,
            p: 80,
            replications: 4,
            ..SimConfig::preset(name).unwrap()
        }
    }

    #[test]
    fn presets_are_valid() {
        for name in PRESETS {
            let cfg = SimConfig::preset(name).unwrap();
            cfg.validate().unwrap();
            cfg.clone().with_profile(Profile::Paper).validate().unwrap();
        }
        assert!(SimConfig::preset("nope").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = SimConfig::preset("ar03").unwrap();
        let text = cfg.to_toml_string();
        assert_eq!(SimConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = small("null_normal");
        cfg.schema_version = 9;
        assert!(cfg.validate().is_err());
        let mut cfg = small("high_sparsity");
        cfg.s = 78;
        assert!(cfg.validate().is_err());
        let mut cfg = small("null_normal");
        cfg.replications = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn homoscedastic_flag_ignores_gamma() {
        let cfg = small("null_normal");
        let sc = generate_scenario(&cfg, 0).unwrap();
        assert!(sc.design.gamma0.iter().all(|v| *v == 0.0));
        let direct = &sc.design.x * &sc.design.beta0 + &sc.errors;
        assert_eq!(sc.data.y, direct);
    }

    #[test]
    fn zero_gamma_matches_homoscedastic_path() {
        let mut het = small("high_sparsity");
        het.gamma_pattern = vec![0.0; 5];
        let homo = SimConfig {
            heteroscedastic: false,
            ..het.clone()
        };
        let a = generate_scenario(&het, 2).unwrap();
        let b = generate_scenario(&homo, 2).unwrap();
        assert_eq!(a.data.y, b.data.y);
    }

    #[test]
    fn seed_isolation() {
        let cfg = small("high_sparsity");
        let other = SimConfig {
            error_seed: cfg.error_seed + 1,
            ..cfg.clone()
        };
        let a = generate_scenario(&cfg, 1).unwrap();
        let b = generate_scenario(&other, 1).unwrap();
        assert_eq!(a.design, b.design);
        assert_ne!(a.errors, b.errors);
        let c = generate_scenario(&cfg, 2).unwrap();
        assert_ne!(a.errors, c.errors);
    }

    #[test]
    fn supports_are_disjoint_by_default() {
        let cfg = small("high_sparsity");
        let d = generate_design(&cfg).unwrap();
        assert_eq!(d.beta_support.len(), 5);
        assert_eq!(d.gamma_support.len(), 5);
        assert!(d.gamma_support.iter().all(|j| !d.beta_support.contains(j)));
        let overlap = SimConfig {
            gamma_placement: GammaPlacement::Overlap,
            ..cfg
        };
        let d = generate_design(&overlap).unwrap();
        assert_eq!(d.gamma_support, d.beta_support);
    }

    #[test]
    fn qq_edges() {
        let pairs = qq_export(&[3.0]).unwrap();
        assert_eq!(pairs, vec![(0.0, 3.0)]);
        let m = 9;
        let exact: Vec<f64> = (0..m)
            .map(|i| normal::quantile((i as f64 + 0.5) / m as f64))
            .rev()
            .collect();
        for (a, b) in qq_export(&exact).unwrap() {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(qq_export(&[]).is_err());
    }

    #[test]
    fn tiny_simulation_is_deterministic() {
        let cfg = small("high_sparsity");
        let a = run_simulation(&cfg).unwrap();
        let b = run_simulation(&cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.p_values.len(), a.replications_used);
        assert!(a.tp.is_some());
        assert!((0.0..=1.0).contains(&a.fp));
    }
}
