use nalgebra::{DMatrix, DVector};
use npamp::dataset::Dataset;
use npamp::decorrelation::{d_hat_entry, puffer_transform};
use npamp::sim::{generate_design, simulate_response, SimConfig};

fn mean_abs_offdiag_corr(x: &DMatrix<f64>) -> f64 {
    let (n, p) = x.shape();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(p);
    for j in 0..p {
        let c = x.column(j);
        let m = c.sum() / n as f64;
        let centred = c.map(|v| v - m);
        let norm = centred.norm();
        cols.push(centred / norm);
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for a in 0..p {
        for b in 0..a {
            total += cols[a].dot(&cols[b]).abs();
            count += 1;
        }
    }
    total / count as f64
}

fn ar_scenario(rho: f64) -> (Dataset, DVector<f64>, DVector<f64>) {
    let cfg = SimConfig {
        ar_rho: Some(rho),
        ..SimConfig::preset("null_normal").unwrap()
    };
    let design = generate_design(&cfg).unwrap();
    let sc = simulate_response(&cfg, &design, 0).unwrap();
    (sc.data, design.beta0, sc.errors)
}

#[test]
fn flattens_singular_values() {
    let (data, _, _) = ar_scenario(0.3);
    let (n, p) = (data.n(), data.p());
    let (out, tf) = puffer_transform(&data).unwrap();
    assert!(tf.singular_values.iter().all(|d| *d > 1.0 / (n as f64).sqrt()));
    let target = (p as f64 / n as f64).sqrt();
    let sv = out.x.clone().singular_values();
    assert_eq!(sv.len(), n);
    for s in sv.iter() {
        assert!((s - target).abs() < 1e-8, "{s} vs {target}");
    }
    assert_eq!(tf.f, tf.f.transpose());
}

#[test]
fn d_hat_rule_is_exact() {
    let (data, _, _) = ar_scenario(0.3);
    let n = data.n();
    let (_, tf) = puffer_transform(&data).unwrap();
    let cut = 1.0 / (n as f64).sqrt();
    for (d, h) in tf.singular_values.iter().zip(tf.d_hat.iter()) {
        let want = if *d <= cut { (n as f64).sqrt() } else { 1.0 / *d };
        assert_eq!(h.to_bits(), want.to_bits());
    }

    // a design with a near-null direction exercises the √n branch
    let mut x = data.x.clone();
    let first = x.row(0).clone_owned();
    x.set_row(1, &(first * 1.000_000_001));
    let degenerate = Dataset::new(data.y.clone(), x).unwrap();
    let (_, tf) = puffer_transform(&degenerate).unwrap();
    let low = tf.singular_values.iter().filter(|d| **d <= cut).count();
    assert!(low >= 1);
    for (d, h) in tf.singular_values.iter().zip(tf.d_hat.iter()) {
        assert_eq!(h.to_bits(), d_hat_entry(*d, n).to_bits());
        if *d <= cut {
            assert_eq!(*h, (n as f64).sqrt());
        }
    }
    assert_eq!(d_hat_entry(cut, n), (n as f64).sqrt());
    assert_eq!(d_hat_entry(2.0, n), 0.5);
}

#[test]
fn preserves_the_linear_model() {
    let (data, beta, _) = ar_scenario(0.3);
    let (out, tf) = puffer_transform(&data).unwrap();
    // homoscedastic preset: y − Xβ is the error vector
    let eps = &data.y - &data.x * &beta;
    let lhs = &out.y - &out.x * &beta;
    let rhs = &tf.f * eps;
    assert!((lhs - rhs).amax() < 1e-10);

    let exact = Dataset::new(&data.x * &beta, data.x.clone()).unwrap();
    let (out, _) = puffer_transform(&exact).unwrap();
    assert!((&out.y - &out.x * &beta).amax() < 1e-10);
}

#[test]
fn reduces_column_correlation() {
    let (data, _, _) = ar_scenario(0.3);
    let before = mean_abs_offdiag_corr(&data.x);
    let (out, _) = puffer_transform(&data).unwrap();
    let after = mean_abs_offdiag_corr(&out.x);
    assert!(after < 0.5 * before, "mean |corr| {before} → {after}");
}

#[test]
fn rejects_tall_designs_and_is_deterministic() {
    let tall = Dataset::new(DVector::zeros(5), DMatrix::from_fn(5, 3, |i, j| (i + 2 * j) as f64)).unwrap();
    assert!(puffer_transform(&tall).is_err());
    let (data, _, _) = ar_scenario(0.7);
    let a = puffer_transform(&data).unwrap();
    let b = puffer_transform(&data).unwrap();
    assert_eq!(a.1, b.1);
    assert_eq!(a.0.y, b.0.y);
}
