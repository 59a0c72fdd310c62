//! Error laws used for simulation, state evolution, and population
//! expectiles.

use rand::Rng;
use rand_distr::{Distribution, Normal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::expectile::{asymmetry_ratio, validate_tau};
use crate::normal;
use crate::roots::{bisect_increasing, expand_bracket};

/// Parametric family of a regression error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorLaw {
    Normal {
        mean: f64,
        sd: f64,
    },
    StudentT {
        df: f64,
    },
    Laplace {
        location: f64,
        scale: f64,
    },
    MixtureNormal {
        weights: Vec<f64>,
        means: Vec<f64>,
        variances: Vec<f64>,
    },
    Empirical {
        samples: Vec<f64>,
    },
}

/// An error law, optionally centred and rescaled to a target standard
/// deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDistribution {
    #[serde(flatten)]
    pub law: ErrorLaw,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_to_sd: Option<f64>,
}

impl ErrorDistribution {
    pub fn new(law: ErrorLaw, scale_to_sd: Option<f64>) -> Result<Self> {
        let d = Self { law, scale_to_sd };
        d.validate()?;
        Ok(d)
    }

    pub fn standard_normal() -> Self {
        Self {
            law: ErrorLaw::Normal { mean: 0.0, sd: 1.0 },
            scale_to_sd: None,
        }
    }

    /// Returns the same law centred and scaled to standard deviation `sd`.
    pub fn scaled_to(mut self, sd: f64) -> Result<Self> {
        self.scale_to_sd = Some(sd);
        self.validate()?;
        Ok(self)
    }

    /// The six error laws of the simulation study, in table order:
    /// N(0,1), t₃, Laplace(0,1) (each centred and scaled to sd 0.5), and the
    /// three normal mixtures.
    pub fn simulation_menu() -> Vec<(&'static str, ErrorDistribution)> {
        let scaled = |law| ErrorDistribution {
            law,
            scale_to_sd: Some(0.5),
        };
        let plain = |law| ErrorDistribution { law, scale_to_sd: None };
        vec![
            ("normal", scaled(ErrorLaw::Normal { mean: 0.0, sd: 1.0 })),
            ("t3", scaled(ErrorLaw::StudentT { df: 3.0 })),
            (
                "laplace",
                scaled(ErrorLaw::Laplace {
                    location: 0.0,
                    scale: 1.0,
                }),
            ),
            (
                "mix_right",
                plain(ErrorLaw::MixtureNormal {
                    weights: vec![0.9, 0.1],
                    means: vec![-0.2, 1.8],
                    variances: vec![0.25, 0.01],
                }),
            ),
            (
                "mix_left",
                plain(ErrorLaw::MixtureNormal {
                    weights: vec![0.9, 0.1],
                    means: vec![0.2, -1.8],
                    variances: vec![0.25, 0.01],
                }),
            ),
            (
                "mix_wide",
                plain(ErrorLaw::MixtureNormal {
                    weights: vec![0.95, 0.05],
                    means: vec![0.0, 0.0],
                    variances: vec![0.25, 4.0],
                }),
            ),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        match &self.law {
            ErrorLaw::Normal { mean, sd } => {
                if !mean.is_finite() || !(*sd > 0.0 && sd.is_finite()) {
                    return bad(format!("normal law needs finite mean and sd > 0, got ({mean}, {sd})"));
                }
            }
            ErrorLaw::StudentT { df } => {
                if !(*df > 2.0 && df.is_finite()) {
                    return bad(format!("student-t law needs df > 2 for a finite variance, got {df}"));
                }
            }
            ErrorLaw::Laplace { location, scale } => {
                if !location.is_finite() || !(*scale > 0.0 && scale.is_finite()) {
                    return bad(format!("laplace law needs scale > 0, got ({location}, {scale})"));
                }
            }
            ErrorLaw::MixtureNormal {
                weights,
                means,
                variances,
            } => {
                if weights.is_empty() || weights.len() != means.len() || weights.len() != variances.len() {
                    return bad("mixture weights, means and variances must be nonempty and equally long".into());
                }
                if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
                    return bad("mixture weights must be nonnegative".into());
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return bad(format!("mixture weights must sum to 1, got {total}"));
                }
                if means.iter().any(|m| !m.is_finite()) || variances.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return bad("mixture components need finite means and positive variances".into());
                }
            }
            ErrorLaw::Empirical { samples } => {
                if samples.is_empty() || samples.iter().any(|s| !s.is_finite()) {
                    return bad("empirical law needs a nonempty finite sample".into());
                }
            }
        }
        if let Some(sd) = self.scale_to_sd {
            if !(sd > 0.0 && sd.is_finite()) {
                return bad(format!("post-scaling sd must be strictly positive, got {sd}"));
            }
            if self.base_variance() <= 0.0 {
                return bad("cannot rescale a law with zero variance".into());
            }
        }
        Ok(())
    }

    fn base_mean(&self) -> f64 {
        match &self.law {
            ErrorLaw::Normal { mean, .. } => *mean,
            ErrorLaw::StudentT { .. } => 0.0,
            ErrorLaw::Laplace { location, .. } => *location,
            ErrorLaw::MixtureNormal { weights, means, .. } => weights.iter().zip(means).map(|(w, m)| w * m).sum(),
            ErrorLaw::Empirical { samples } => samples.iter().sum::<f64>() / samples.len() as f64,
        }
    }

    fn base_variance(&self) -> f64 {
        match &self.law {
            ErrorLaw::Normal { sd, .. } => sd * sd,
            ErrorLaw::StudentT { df } => df / (df - 2.0),
            ErrorLaw::Laplace { scale, .. } => 2.0 * scale * scale,
            ErrorLaw::MixtureNormal {
                weights,
                means,
                variances,
            } => {
                let mu = self.base_mean();
                weights
                    .iter()
                    .zip(means.iter().zip(variances))
                    .map(|(w, (m, v))| w * (v + (m - mu) * (m - mu)))
                    .sum()
            }
            ErrorLaw::Empirical { samples } => {
                let mu = self.base_mean();
                samples.iter().map(|s| (s - mu) * (s - mu)).sum::<f64>() / samples.len() as f64
            }
        }
    }

    /// (shift, factor) such that the delivered variable is factor·(X − shift).
    fn affine(&self) -> (f64, f64) {
        match self.scale_to_sd {
            Some(sd) => (self.base_mean(), sd / self.base_variance().sqrt()),
            None => (0.0, 1.0),
        }
    }

    pub fn mean(&self) -> f64 {
        let (shift, factor) = self.affine();
        factor * (self.base_mean() - shift)
    }

    pub fn variance(&self) -> f64 {
        let (_, factor) = self.affine();
        factor * factor * self.base_variance()
    }

    pub fn sd(&self) -> f64 {
        self.variance().sqrt()
    }

    /// E[(X − c)₊] of the unscaled law.
    fn base_upper_partial_moment(&self, c: f64) -> f64 {
        match &self.law {
            ErrorLaw::Normal { mean, sd } => normal_upper_partial_moment(c, *mean, *sd),
            ErrorLaw::StudentT { df } => {
                let t = StudentsT::new(0.0, 1.0, *df).expect("validated df");
                // ∫_c^∞ y f(y) dy = (ν + c²)/(ν − 1)·f(c) for the standard t law
                let tail_first_moment = (df + c * c) / (df - 1.0) * t.pdf(c);
                tail_first_moment - c * t.sf(c)
            }
            ErrorLaw::Laplace { location, scale } => {
                let d = c - location;
                if d >= 0.0 {
                    0.5 * scale * (-d / scale).exp()
                } else {
                    -d + 0.5 * scale * (d / scale).exp()
                }
            }
            ErrorLaw::MixtureNormal {
                weights,
                means,
                variances,
            } => weights
                .iter()
                .zip(means.iter().zip(variances))
                .map(|(w, (m, v))| w * normal_upper_partial_moment(c, *m, v.sqrt()))
                .sum(),
            ErrorLaw::Empirical { samples } => {
                samples.iter().map(|s| (s - c).max(0.0)).sum::<f64>() / samples.len() as f64
            }
        }
    }

    /// Upper partial moment E[(ε − u)₊] = ∫_{[u,∞)} (y − u) dF(y).
    pub fn upper_partial_moment(&self, u: f64) -> f64 {
        let (shift, factor) = self.affine();
        factor * self.base_upper_partial_moment(shift + u / factor)
    }

    /// Draw one variate.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (shift, factor) = self.affine();
        let x = match &self.law {
            ErrorLaw::Normal { mean, sd } => Normal::new(*mean, *sd).expect("validated").sample(rng),
            ErrorLaw::StudentT { df } => StudentT::new(*df).expect("validated").sample(rng),
            ErrorLaw::Laplace { location, scale } => {
                let v: f64 = rng.random::<f64>() - 0.5;
                location - scale * v.signum() * (1.0 - 2.0 * v.abs()).ln()
            }
            ErrorLaw::MixtureNormal {
                weights,
                means,
                variances,
            } => {
                let pick: f64 = rng.random();
                let mut acc = 0.0;
                let mut k = weights.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if pick < acc {
                        k = i;
                        break;
                    }
                }
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                means[k] + variances[k].sqrt() * z
            }
            ErrorLaw::Empirical { samples } => samples[rng.random_range(0..samples.len())],
        };
        factor * (x - shift)
    }

    pub fn sample_n<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.sample(rng)).collect()
    }

    /// True when the law is symmetric about its mean.
    pub fn is_symmetric(&self) -> bool {
        match &self.law {
            ErrorLaw::Normal { .. } | ErrorLaw::StudentT { .. } | ErrorLaw::Laplace { .. } => true,
            ErrorLaw::MixtureNormal { .. } | ErrorLaw::Empirical { .. } => false,
        }
    }
}

/// E[(X − c)₊] for X ~ N(μ, σ²): σ·φ(d) − (c − μ)·(1 − Φ(d)) with d = (c − μ)/σ.
fn normal_upper_partial_moment(c: f64, mu: f64, sigma: f64) -> f64 {
    let d = (c - mu) / sigma;
    sigma * normal::pdf(d) - (c - mu) * normal::sf(d)
}

const EXPECTILE_TOL: f64 = 1e-10;

/// Population τ-expectile u_τ solving
/// u − E(ε) = ((2τ−1)/(1−τ))·E[(ε − u)₊].
pub fn distribution_expectile(dist: &ErrorDistribution, tau: f64) -> Result<f64> {
    validate_tau(tau)?;
    dist.validate()?;
    let mean = dist.mean();
    if tau == 0.5 {
        return Ok(mean);
    }
    let c = asymmetry_ratio(tau);
    let defining = |u: f64| u - mean - c * dist.upper_partial_moment(u);
    let sd = dist.sd();
    let (lo, hi) = expand_bracket(defining, mean - 10.0 * sd, mean + 10.0 * sd, 60)?;
    bisect_increasing(defining, lo, hi, EXPECTILE_TOL * sd.max(1e-300), 0.0, 400)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expectile::sample_expectile;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn monte_carlo_partial_moment(d: &ErrorDistribution, u: f64, n: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        (0..n).map(|_| (d.sample(&mut rng) - u).max(0.0)).sum::<f64>() / n as f64
    }

    #[test]
    fn median_level_gives_mean() {
        for (_, d) in ErrorDistribution::simulation_menu() {
            assert!((distribution_expectile(&d, 0.5).unwrap() - d.mean()).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_laws_have_antisymmetric_expectiles() {
        for (_, d) in ErrorDistribution::simulation_menu().into_iter().take(3) {
            let a = distribution_expectile(&d, 0.8).unwrap();
            let b = distribution_expectile(&d, 0.2).unwrap();
            assert!((a + b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn scaled_laws_have_requested_moments() {
        for (name, d) in ErrorDistribution::simulation_menu().into_iter().take(3) {
            assert!(d.mean().abs() < 1e-15, "{name}");
            assert!((d.sd() - 0.5).abs() < 1e-12, "{name}");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = ErrorDistribution::simulation_menu()[1].1.clone();
        let xs = d.sample_n(&mut rng, 400_000);
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!(m.abs() < 0.01);
    }

    #[test]
    fn partial_moments_match_monte_carlo() {
        for (name, d) in ErrorDistribution::simulation_menu() {
            for &u in &[-0.4, 0.0, 0.3] {
                let exact = d.upper_partial_moment(u);
                let mc = monte_carlo_partial_moment(&d, u, 400_000);
                assert!((exact - mc).abs() < 0.01, "{name} u={u}: {exact} vs {mc}");
            }
        }
    }

    #[test]
    fn normal_expectile_matches_large_sample() {
        let d = ErrorDistribution::standard_normal();
        let exact = distribution_expectile(&d, 0.8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs = d.sample_n(&mut rng, 1_000_000);
        let emp = sample_expectile(&xs, 0.8).unwrap();
        assert!((exact - emp).abs() < 0.005, "{exact} vs {emp}");
    }

    #[test]
    fn expectile_increases_with_level() {
        for (name, d) in ErrorDistribution::simulation_menu() {
            let mut prev = f64::NEG_INFINITY;
            for i in 1..20 {
                let u = distribution_expectile(&d, i as f64 / 20.0).unwrap();
                assert!(u > prev, "{name}");
                prev = u;
            }
        }
    }

    #[test]
    fn validation_rejects_bad_laws() {
        let bad_mix = ErrorDistribution::new(
            ErrorLaw::MixtureNormal {
                weights: vec![0.5, 0.6],
                means: vec![0.0, 0.0],
                variances: vec![1.0, 1.0],
            },
            None,
        );
        assert!(bad_mix.is_err());
        let neg = ErrorDistribution::new(
            ErrorLaw::MixtureNormal {
                weights: vec![1.5, -0.5],
                means: vec![0.0, 0.0],
                variances: vec![1.0, 1.0],
            },
            None,
        );
        assert!(neg.is_err());
        assert!(ErrorDistribution::standard_normal().scaled_to(0.0).is_err());
        assert!(ErrorDistribution::new(ErrorLaw::StudentT { df: 2.0 }, None).is_err());
    }

    #[test]
    fn serde_shape() {
        let d = ErrorDistribution::simulation_menu()[0].1.clone();
        let s = serde_json::to_string(&d).unwrap();
        assert_eq!(s, r#"{"kind":"normal","mean":0.0,"sd":1.0,"scale_to_sd":0.5}"#);
        let back: ErrorDistribution = serde_json::from_str(&s).unwrap();
        assert_eq!(back, d);
    }
}
