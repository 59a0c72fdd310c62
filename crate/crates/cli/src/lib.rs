//! Command-line front end. [`run_cli`] parses arguments, dispatches a
//! subcommand, and maps failures to exit codes: 0 success, 1 invalid input
//! or usage, 2 numerical failure.

use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;

use npamp::amp::{run_amp, AmpSettings};
use npamp::decorrelation::puffer_transform;
use npamp::distribution::distribution_expectile;
use npamp::expectile::ExpectileSpec;
use npamp::hypothesis::test_statistics;
use npamp::io::{output, parse_dataset, write_dataset, write_json, write_qq_csv, write_se_csv};
use npamp::joint::{estimate_u_tau, fit_joint};
use npamp::sim::{generate_design, qq_export, run_simulation, Profile, SimConfig};
use npamp::state_evolution::{run_state_evolution, select_alpha, SeSettings, SignalPrior};
use npamp::{Error, Result};

/// Environment variable overriding the worker-thread count.
pub const THREADS_ENV: &str = "NPAMP_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "npamp",
    version,
    about = "Sparse expectile regression by message passing and a coordinate-wise heteroscedasticity test"
)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one expectile level.
    Fit(FitArgs),
    /// Test every coordinate for a heteroscedasticity effect.
    Test(TestArgs),
    /// Run a simulation scenario.
    Simulate(SimulateArgs),
    /// Trace the state-evolution recursion of a scenario.
    Se(SeArgs),
    /// Apply the puffer transformation to a dataset.
    Decorrelate(DecorrelateArgs),
}

#[derive(Debug, Args)]
struct SolverArgs {
    /// Comma-separated threshold multipliers.
    #[arg(long, value_delimiter = ',')]
    alpha_grid: Option<Vec<f64>>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
}

impl SolverArgs {
    fn settings(&self) -> Result<AmpSettings> {
        let mut s = AmpSettings::default();
        if let Some(g) = &self.alpha_grid {
            s.alpha_grid = g.clone();
        }
        if let Some(m) = self.max_iter {
            s.max_iter = m;
        }
        if let Some(t) = self.tol {
            s.tol = t;
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    tau: f64,
    /// Error expectile; estimated from pilot residuals when omitted.
    #[arg(long, allow_negative_numbers = true)]
    u_tau: Option<f64>,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum USource {
    Pilot,
    Value,
}

#[derive(Debug, Args)]
struct TestArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    tau1: f64,
    #[arg(long)]
    tau2: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = USource::Pilot)]
    u_source: USource,
    #[arg(long, allow_negative_numbers = true)]
    u1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    u2: Option<f64>,
    /// Apply the puffer transformation before fitting.
    #[arg(long)]
    decorrelate: bool,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProfileArg {
    Desk,
    Paper,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Paper => Profile::Paper,
        }
    }
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Preset name or path to a TOML scenario file.
    #[arg(long, default_value = "null_normal")]
    config: String,
    /// Overrides n, p and the replication count.
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
    #[arg(long)]
    design_seed: Option<u64>,
    #[arg(long)]
    error_seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<SimConfig> {
        let path = Path::new(&self.config);
        let mut cfg = if path.is_file() {
            SimConfig::from_toml_str(&std::fs::read_to_string(path)?)?
        } else {
            SimConfig::preset(&self.config)?
        };
        if let Some(p) = self.profile {
            cfg = cfg.with_profile(p.into());
        }
        if let Some(s) = self.design_seed {
            cfg.design_seed = s;
        }
        if let Some(s) = self.error_seed {
            cfg.error_seed = s;
        }
        if let Some(r) = self.replications {
            cfg.replications = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write QQ pairs of the pooled null statistics here.
    #[arg(long)]
    qq_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SeArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Expectile level; defaults to the scenario's first level.
    #[arg(long)]
    tau: Option<f64>,
    /// Threshold multiplier; chosen from the scenario's grid when omitted.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DecorrelateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// JSON report of the `fit` subcommand.
#[derive(Debug, Serialize)]
pub struct FitReport {
    pub tau: f64,
    pub u: f64,
    pub alpha: f64,
    pub converged: bool,
    pub iterations: usize,
    pub b: f64,
    pub theta: f64,
    pub zeta: f64,
    pub omega: f64,
    pub delta: f64,
    pub support_size: usize,
    pub beta_hat: Vec<f64>,
    pub beta_tilde: Vec<f64>,
}

fn fit(args: FitArgs) -> Result<()> {
    let data = parse_dataset(&args.input)?;
    let settings = args.solver.settings()?;
    let u = match args.u_tau {
        Some(u) => u,
        None => estimate_u_tau(&data, args.tau, &settings)?,
    };
    let spec = ExpectileSpec::new(args.tau, u)?;
    let f = run_amp(&data, &spec, &settings)?;
    if !f.converged {
        warn!("no threshold multiplier met the stopping rule; reporting the best effort fit");
    }
    let report = FitReport {
        tau: spec.tau,
        u: spec.u,
        alpha: f.alpha,
        converged: f.converged,
        iterations: f.iterations,
        b: f.state.b,
        theta: f.state.theta,
        zeta: f.state.zeta_emp,
        omega: f.omega,
        delta: f.delta,
        support_size: f.state.support_size,
        beta_hat: f.state.beta_hat.as_slice().to_vec(),
        beta_tilde: f.state.beta_tilde.as_slice().to_vec(),
    };
    write_json(args.out.as_deref(), &report)
}

fn test(args: TestArgs) -> Result<()> {
    if args.tau1 == args.tau2 {
        return Err(Error::InvalidParameter {
            name: "tau2",
            reason: "the two expectile levels must differ".into(),
        });
    }
    let settings = args.solver.settings()?;
    let mut data = parse_dataset(&args.input)?;
    if args.decorrelate {
        data = puffer_transform(&data)?.0;
    }
    let (u1, u2) = match args.u_source {
        USource::Value => match (args.u1, args.u2) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::InvalidParameter {
                    name: "u1/u2",
                    reason: "--u-source value needs both --u1 and --u2".into(),
                })
            }
        },
        USource::Pilot => {
            if args.u1.is_some() || args.u2.is_some() {
                warn!("--u1/--u2 are ignored unless --u-source value is given");
            }
            (
                estimate_u_tau(&data, args.tau1, &settings)?,
                estimate_u_tau(&data, args.tau2, &settings)?,
            )
        }
    };
    let levels = [ExpectileSpec::new(args.tau1, u1)?, ExpectileSpec::new(args.tau2, u2)?];
    let joint = fit_joint(&data, &levels, &settings)?;
    let report = test_statistics(&joint, args.alpha)?;
    info!(
        "{} of {} coordinates rejected at level {}",
        report.rejected.iter().filter(|r| **r).count(),
        report.rejected.len(),
        args.alpha
    );
    write_json(args.out.as_deref(), &report)
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let cfg = args.scenario.load()?;
    info!(
        "running `{}`: n = {}, p = {}, R = {}",
        cfg.name, cfg.n, cfg.p, cfg.replications
    );
    let result = run_simulation(&cfg)?;
    info!("finished in {:.1} s", result.elapsed_seconds);
    if let Some(path) = &args.qq_out {
        let pairs = qq_export(&result.null_t_stats)?;
        write_qq_csv(output(Some(path))?, &pairs)?;
    }
    write_json(args.out.as_deref(), &result)
}

fn se(args: SeArgs) -> Result<()> {
    let cfg = args.scenario.load()?;
    let tau = args.tau.unwrap_or(cfg.levels[0]);
    let u = distribution_expectile(&cfg.error, tau)?;
    let spec = ExpectileSpec::new(tau, u)?;
    let design = generate_design(&cfg)?;
    let prior = SignalPrior::from_coefficients(design.beta0.as_slice(), design.gamma0.as_slice(), u)?;
    let mut settings = SeSettings::for_dimensions(cfg.n, cfg.p, args.alpha.unwrap_or(1.0));
    if let Some(it) = args.iterations {
        settings.max_iter = it;
    }
    if let Some(m) = args.mc_samples {
        settings.mc_samples = m;
    }
    if let Some(s) = args.seed {
        settings.seed = s;
    }
    let trajectory = match args.alpha {
        Some(_) => run_state_evolution(&prior, &cfg.error, &spec, &settings)?,
        None => select_alpha(&prior, &cfg.error, &spec, &settings, &cfg.amp.alpha_grid)?,
    };
    info!(
        "alpha = {}, {} steps, converged = {}",
        trajectory.alpha,
        trajectory.len(),
        trajectory.converged
    );
    write_se_csv(output(args.out.as_deref())?, &trajectory)
}

fn decorrelate(args: DecorrelateArgs) -> Result<()> {
    let data = parse_dataset(&args.input)?;
    let (out, t) = puffer_transform(&data)?;
    let floored = t
        .singular_values
        .iter()
        .filter(|d| **d <= 1.0 / (data.n() as f64).sqrt())
        .count();
    if floored > 0 {
        warn!("{floored} singular values fell below 1/√n and were capped");
    }
    write_dataset(&args.out, &out)
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got `{raw}`"))?;
    // A second call in the same process (tests) keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs the tool with `argv` (including the program name) and returns the
/// process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return 1;
    }
    let outcome = match cli.command {
        Command::Fit(a) => fit(a),
        Command::Test(a) => test(a),
        Command::Simulate(a) => simulate(a),
        Command::Se(a) => se(a),
        Command::Decorrelate(a) => decorrelate(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
