//! Goodness-of-fit checks for pooled test statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    /// sup |F̂ₙ − Φ|
    pub statistic: f64,
    /// Asymptotic p-value from the Kolmogorov distribution.
    pub p_value: f64,
    pub n: usize,
}

/// Survival function of the Kolmogorov distribution,
/// `P(K > x) = 2 Σ_{k≥1} (−1)^{k−1} e^{−2k²x²}`.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.2 {
        // the alternating series converges too slowly here and the value is 1 to double precision
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov test against N(0, 1), using the
/// small-sample correction `(√n + 0.12 + 0.11/√n)·D` in the p-value.
pub fn ks_standard_normal(values: &[f64]) -> Result<KsResult> {
    if values.is_empty() {
        return Err(Error::param("values", "must be nonempty"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("values", "must be finite"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, v) in sorted.iter().enumerate() {
        let f = normal::cdf(*v);
        d = d.max(((i + 1) as f64 / nf - f).abs()).max((f - i as f64 / nf).abs());
    }
    let root = nf.sqrt();
    let p_value = kolmogorov_sf((root + 0.12 + 0.11 / root) * d);
    Ok(KsResult {
        statistic: d,
        p_value,
        n,
    })
}

/// Least-squares slope of sample on theoretical quantiles.
pub fn qq_slope(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::param("pairs", "need at least two points"));
    }
    let m = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::param("pairs", "theoretical quantiles are constant"));
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn kolmogorov_reference_points() {
        // classical critical values
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 2e-4);
        assert!((kolmogorov_sf(1.6276) - 0.01).abs() < 1e-4);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
        assert!(kolmogorov_sf(5.0) < 1e-20);
    }

    #[test]
    fn normal_sample_passes_and_shifted_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert!(ks_standard_normal(&z).unwrap().p_value > 0.01);
        let shifted: Vec<f64> = z.iter().map(|v| v * 1.2).collect();
        assert!(ks_standard_normal(&shifted).unwrap().p_value < 0.01);
    }

    #[test]
    fn single_point_statistic() {
        let r = ks_standard_normal(&[0.0]).unwrap();
        assert!((r.statistic - 0.5).abs() < 1e-15);
    }

    #[test]
    fn slope_of_exact_line() {
        let pairs: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 2.0 * i as f64 + 1.0)).collect();
        assert!((qq_slope(&pairs).unwrap() - 2.0).abs() < 1e-12);
    }
}
