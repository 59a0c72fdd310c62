use npamp::diagnostics::qq_slope;
use npamp::sim::{generate_design, qq_export, run_simulation, simulate_response, Profile, SimConfig};

#[test]
fn design_entries_have_variance_one_over_n() {
    let cfg = SimConfig::preset("null_normal").unwrap();
    let d = generate_design(&cfg).unwrap();
    let (n, p) = (cfg.n as f64, cfg.p as f64);
    let m2 = d.x.iter().map(|v| v * v).sum::<f64>() / (n * p);
    // Var(x²) = 2/n² for x ~ N(0, 1/n)
    let se = (2.0f64).sqrt() / n / (n * p).sqrt();
    assert!((m2 - 1.0 / n).abs() <= 3.0 * se, "{m2} vs {}", 1.0 / n);
    for j in 0..cfg.p {
        let col = d.x.column(j).norm_squared();
        // each column: n·col ~ χ²_n
        assert!((col - 1.0).abs() < 6.0 * (2.0 / n).sqrt());
    }
}

#[test]
fn ar_rows_have_the_requested_correlation() {
    let cfg = SimConfig::preset("ar07_null").unwrap();
    let d = generate_design(&cfg).unwrap();
    let (n, p) = (cfg.n, cfg.p);
    let mut lag1 = 0.0;
    let mut var = 0.0;
    for i in 0..n {
        for j in 0..p {
            var += d.x[(i, j)] * d.x[(i, j)];
            if j + 1 < p {
                lag1 += d.x[(i, j)] * d.x[(i, j + 1)];
            }
        }
    }
    let var = var / (n * p) as f64;
    let rho = lag1 / (n * (p - 1)) as f64 / var;
    assert!((var * n as f64 - 1.0).abs() < 0.05, "n·var = {}", var * n as f64);
    assert!((rho - 0.7).abs() < 0.03, "lag-1 correlation {rho}");
}

#[test]
fn reports_are_deterministic() {
    let cfg = SimConfig {
        replications: 8,
        ..SimConfig::preset("high_sparsity").unwrap()
    };
    let a = serde_json::to_string(&run_simulation(&cfg).unwrap()).unwrap();
    let b = serde_json::to_string(&run_simulation(&cfg).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn seeds_are_isolated() {
    let cfg = SimConfig::preset("high_sparsity").unwrap();
    let d0 = generate_design(&cfg).unwrap();

    let other_errors = SimConfig {
        error_seed: cfg.error_seed + 1,
        ..cfg.clone()
    };
    let d1 = generate_design(&other_errors).unwrap();
    assert_eq!(d0.x, d1.x);
    assert_eq!(d0.beta0, d1.beta0);
    assert_eq!(d0.gamma0, d1.gamma0);
    let e0 = simulate_response(&cfg, &d0, 3).unwrap().errors;
    let e1 = simulate_response(&other_errors, &d1, 3).unwrap().errors;
    assert_ne!(e0, e1);

    let other_design = SimConfig {
        design_seed: cfg.design_seed + 1,
        ..cfg.clone()
    };
    let d2 = generate_design(&other_design).unwrap();
    assert_ne!(d0.x, d2.x);
    assert_eq!(simulate_response(&other_design, &d2, 3).unwrap().errors, e0);

    // replication r does not depend on how many replications run
    let short = SimConfig {
        replications: 3,
        ..cfg.clone()
    };
    let long = SimConfig {
        replications: 6,
        ..cfg.clone()
    };
    let a = run_simulation(&short).unwrap();
    let b = run_simulation(&long).unwrap();
    assert_eq!(a.p_values[..], b.p_values[..3]);
    assert_ne!(simulate_response(&cfg, &d0, 4).unwrap().errors, e0);
}

#[test]
fn profiles_set_scale() {
    let desk = SimConfig::preset("null_normal").unwrap().with_profile(Profile::Desk);
    assert_eq!((desk.n, desk.p, desk.replications), (100, 200, 100));
    let full = desk.with_profile(Profile::Paper);
    assert_eq!((full.n, full.p, full.replications), (250, 500, 400));
}

#[test]
fn pooled_null_qq_is_close_to_the_diagonal() {
    let cfg = SimConfig {
        replications: 50,
        ..SimConfig::preset("null_normal").unwrap()
    };
    let res = run_simulation(&cfg).unwrap();
    assert!(res.null_t_stats.len() >= 10_000);
    let pairs = qq_export(&res.null_t_stats).unwrap();
    let slope = qq_slope(&pairs).unwrap();
    assert!((0.9..=1.1).contains(&slope), "QQ slope {slope}");
}
