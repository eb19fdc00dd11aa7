//! privynth command line: synthesize output-noise covariances, attack them
//! with the optimal adversary, and compare designs.
//!
//! Every command writes `report.json` into the output directory; commands
//! with plot-bound output add CSV files next to it. Failures print one line
//! of JSON to stderr and exit with 2 (unreadable or invalid input) or 3
//! (well-formed but infeasible problem).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use privynth::error::Error;
use privynth::lti::{LtiSystem, StackedSystem};
use privynth::{baselines, hvac, io, mechanism, montecarlo, structured};
use serde::Serialize;
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "privynth",
    version,
    about = "Noise covariance synthesis for privacy-aware data release",
    propagate_version = true
)]
struct RunConfig {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the distortion-optimal noise for a prescribed confusion covariance
    Design(DesignArgs),
    /// Approximate the prescription with per-step uncorrelated noise blocks
    DesignBlockdiag(BlockArgs),
    /// Maximize the adversary's uncertainty volume under a distortion budget
    DesignEntropy(EntropyArgs),
    /// Isotropic baseline: the same variance on every released coordinate
    DesignDp(DpArgs),
    /// Monte Carlo adversary attack against the synthesized design
    Simulate(SimulateArgs),
    /// Multi-zone thermal case study end to end
    Casestudy(CasestudyArgs),
    /// Build prescribed, entropy, and isotropic designs at matched budgets and compare
    Compare(CompareArgs),
    /// Check that a system document survives parse, render, parse bit-exactly
    Validate(ValidateArgs),
}

#[derive(Args)]
struct OutArg {
    /// Directory receiving report.json and any CSV artifacts
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SystemArg {
    /// System matrices as JSON (keys A, C, optional B, D, dt)
    #[arg(long)]
    system: PathBuf,
    /// Release length in steps
    #[arg(long, short = 'K')]
    horizon: usize,
}

#[derive(Args)]
struct DesignArgs {
    #[command(flatten)]
    system: SystemArg,
    /// Prescribed confusion covariance as JSON (nested arrays or {"Sigma_v": ...})
    #[arg(long)]
    sigma_v: PathBuf,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct BlockArgs {
    #[command(flatten)]
    system: SystemArg,
    /// Prescribed confusion covariance as JSON
    #[arg(long)]
    sigma_v: PathBuf,
    /// Gradient iteration budget per phase
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Convergence threshold on the precision mismatch
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct EntropyArgs {
    #[command(flatten)]
    system: SystemArg,
    /// Output distortion budget tr Sigma
    #[arg(long)]
    eps_p: f64,
    /// Ascent iteration budget
    #[arg(long, default_value_t = 5000)]
    max_iter: usize,
    /// Stationarity threshold
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct DpArgs {
    #[command(flatten)]
    system: SystemArg,
    /// Per-coordinate noise variance
    #[arg(long)]
    sigma: f64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    system: SystemArg,
    /// Prescribed confusion covariance as JSON
    #[arg(long)]
    sigma_v: PathBuf,
    /// Number of perturb-release-attack rounds
    #[arg(long, default_value_t = 2000)]
    trials: usize,
    /// Master seed; same seed, same report
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Coverage confidence level; gamma defaults to the chi-square quantile
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Coverage ellipsoid level, overriding the alpha-derived quantile
    #[arg(long)]
    gamma: Option<f64>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct CasestudyArgs {
    /// Case-study configuration JSON; {} or omitted runs the default
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the configured parameter-sampling seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured trial count
    #[arg(long)]
    trials: Option<usize>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    system: SystemArg,
    /// Prescribed confusion covariance as JSON
    #[arg(long)]
    sigma_v: PathBuf,
    /// Distortion budget for the entropy design; defaults to the
    /// prescription's achieved budget
    #[arg(long)]
    eps_p: Option<f64>,
    /// Per-coordinate variance for the isotropic design; defaults to the
    /// matched budget spread over all released coordinates
    #[arg(long)]
    sigma: Option<f64>,
    /// Ellipsoid level for the reported semi-axes
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct ValidateArgs {
    /// System matrices as JSON
    #[arg(long)]
    system: PathBuf,
    #[command(flatten)]
    out: OutArg,
}

fn main() -> ExitCode {
    let cli = RunConfig::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code: u8 = if err.is_infeasible() { 3 } else { 2 };
            eprintln!(
                "{}",
                json!({ "error": err.to_string(), "exit_code": code })
            );
            ExitCode::from(code)
        }
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Design(args) => design(args),
        Command::DesignBlockdiag(args) => design_blockdiag(args),
        Command::DesignEntropy(args) => design_entropy(args),
        Command::DesignDp(args) => design_dp(args),
        Command::Simulate(args) => simulate(args),
        Command::Casestudy(args) => casestudy(args),
        Command::Compare(args) => compare(args),
        Command::Validate(args) => validate(args),
    }
}

fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))
}

fn load_stacked(args: &SystemArg) -> Result<(LtiSystem, StackedSystem), Error> {
    let system = io::parse_system(&read_text(&args.system)?)?;
    let stacked = system.stack(args.horizon)?;
    Ok((system, stacked))
}

fn load_matrix(path: &Path, name: &str) -> Result<DMatrix<f64>, Error> {
    io::parse_matrix(&read_text(path)?, name)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), Error> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::InvalidInput(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents)
        .map_err(|e| Error::InvalidInput(format!("cannot write {}: {e}", path.display())))?;
    println!("{}", path.display());
    Ok(())
}

/// Wrap a payload as `{"meta": ..., "report": ...}` and write report.json.
/// The timestamp lives only under `meta`; everything under `report` is a
/// pure function of the inputs.
fn write_report<T: Serialize>(dir: &Path, command: &str, payload: &T) -> Result<(), Error> {
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let doc = json!({
        "meta": { "command": command, "timestamp_unix": timestamp },
        "report": serde_json::to_value(payload)
            .map_err(|e| Error::InvalidInput(format!("report serialization failed: {e}")))?,
    });
    let text = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::InvalidInput(format!("report serialization failed: {e}")))?;
    write_file(dir, "report.json", &(text + "\n"))
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("{}", json!({ "warning": w }));
    }
}

fn design(args: DesignArgs) -> Result<(), Error> {
    let (_, stacked) = load_stacked(&args.system)?;
    let sigma_v = load_matrix(&args.sigma_v, "Sigma_v")?;
    let design = mechanism::design_optimal(&stacked, &sigma_v, None)?;
    warn_all(&design.warnings);
    write_report(
        &args.out.out,
        "design",
        &io::MechanismDesignFile::from_design(&design),
    )
}

fn design_blockdiag(args: BlockArgs) -> Result<(), Error> {
    let (_, stacked) = load_stacked(&args.system)?;
    let sigma_v = load_matrix(&args.sigma_v, "Sigma_v")?;
    let design = structured::design_block_diagonal(&stacked, &sigma_v, args.max_iter, args.tol)?;
    write_report(
        &args.out.out,
        "design-blockdiag",
        &io::BlockDesignFile::from_design(&design),
    )
}

fn design_entropy(args: EntropyArgs) -> Result<(), Error> {
    let (_, stacked) = load_stacked(&args.system)?;
    let design = baselines::design_entropy(&stacked, args.eps_p, args.max_iter, args.tol)?;
    write_report(
        &args.out.out,
        "design-entropy",
        &io::EntropyDesignFile::from_design(&design),
    )
}

fn design_dp(args: DpArgs) -> Result<(), Error> {
    let (_, stacked) = load_stacked(&args.system)?;
    let design = baselines::design_isotropic(&stacked, args.sigma)?;
    write_report(
        &args.out.out,
        "design-dp",
        &io::IsotropicDesignFile::from_design(&design),
    )
}

#[derive(Serialize)]
struct SimulateReport {
    design: io::MechanismDesignFile,
    coverage: io::CoverageFile,
}

fn simulate(args: SimulateArgs) -> Result<(), Error> {
    let (system, stacked) = load_stacked(&args.system)?;
    let sigma_v = load_matrix(&args.sigma_v, "Sigma_v")?;
    let design = mechanism::design_optimal(&stacked, &sigma_v, None)?;
    warn_all(&design.warnings);

    let n = stacked.state_dim();
    let gamma = match args.gamma {
        Some(g) => g,
        None => montecarlo::chi2_quantile(n, args.alpha)?,
    };
    // Coverage of the unbiased adversary does not depend on the true state,
    // so the run uses the origin and zero input.
    let x0 = DVector::zeros(n);
    let u = DVector::zeros(stacked.input_dim() * stacked.horizon);
    let cfg = montecarlo::TrialConfig {
        trials: args.trials,
        seed: args.seed,
        gamma,
        alpha: args.gamma.is_none().then_some(args.alpha),
        ellipsoid_cov: Some(sigma_v.clone()),
    };
    let coverage =
        montecarlo::run_adversary_trials(&system, args.system.horizon, &x0, &u, &design.sigma, &cfg)?;
    if coverage.ill_conditioned {
        warn_all(&["noise covariance is ill conditioned; estimates may be degraded".into()]);
    }

    if n >= 2 {
        let ellipse = montecarlo::project_ellipsoid(&coverage.target_cov, (0, 1), gamma, 256)?;
        let mut csv = String::from("x,y\n");
        for (x, y) in &ellipse.boundary {
            csv.push_str(&format!("{x},{y}\n"));
        }
        write_file(&args.out.out, "ellipse.csv", &csv)?;
    }
    write_report(
        &args.out.out,
        "simulate",
        &SimulateReport {
            design: io::MechanismDesignFile::from_design(&design),
            coverage: io::CoverageFile::from_report(&coverage),
        },
    )
}

fn casestudy(args: CasestudyArgs) -> Result<(), Error> {
    let mut config = match &args.config {
        Some(path) => io::parse_case_study_config(&read_text(path)?)?,
        None => hvac::CaseStudyConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(trials) = args.trials {
        config.trials = trials;
    }
    let outcome = hvac::run_case_study(&config)?;
    write_file(
        &args.out.out,
        "trajectories.csv",
        &io::trajectories_csv(&outcome),
    )?;
    write_file(
        &args.out.out,
        "ellipses.csv",
        &io::case_study_ellipses_csv(&outcome),
    )?;
    write_report(
        &args.out.out,
        "casestudy",
        &io::CaseStudyReportFile::from_outcome(&outcome),
    )
}

fn compare(args: CompareArgs) -> Result<(), Error> {
    let (_, stacked) = load_stacked(&args.system)?;
    let sigma_v = load_matrix(&args.sigma_v, "Sigma_v")?;
    let prescribed = mechanism::design_optimal(&stacked, &sigma_v, None)?;
    warn_all(&prescribed.warnings);

    let budget = args.eps_p.unwrap_or(prescribed.trace);
    let entropy = baselines::design_entropy(&stacked, budget, 5000, 1e-8)?;
    let per_coordinate = args
        .sigma
        .unwrap_or(budget / stacked.stacked_dim() as f64);
    let isotropic = baselines::design_isotropic(&stacked, per_coordinate)?;

    let report = baselines::compare_mechanisms(
        &[
            ("prescribed".to_string(), prescribed.sigma.clone()),
            ("entropy".to_string(), entropy.sigma.clone()),
            ("isotropic".to_string(), isotropic.sigma.clone()),
        ],
        &stacked,
        args.gamma,
    )?;
    write_file(
        &args.out.out,
        "comparison.csv",
        &io::comparison_csv(&report),
    )?;
    write_report(
        &args.out.out,
        "compare",
        &io::ComparisonFile::from_report(&report),
    )
}

fn validate(args: ValidateArgs) -> Result<(), Error> {
    let text = read_text(&args.system)?;
    let bit_exact = io::validate_system_roundtrip(&text)?;
    if !bit_exact {
        return Err(Error::InvalidInput(format!(
            "{} does not survive a parse-render-parse roundtrip",
            args.system.display()
        )));
    }
    write_report(
        &args.out.out,
        "validate",
        &json!({ "system": args.system.display().to_string(), "roundtrip_bit_exact": true }),
    )
}
