//! Command-line front end.
//!
//! Exit codes: 0 success, 1 numerical or internal failure, 2 usage error,
//! 3 data or configuration error, 4 verification failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{load_csv, parse_key_values, GammaGrid, OutcomeType, RunConfig};
use crate::error::{Error, Result};
use crate::inference::{analyze, SensitivityCurve};
use crate::oracle::rosenbaum::default_a_grid;
use crate::oracle::{
    analytic_truth, ground_truth_ade, verify_model_implication, verify_propositions,
    PropositionSettings, RosenbaumModel,
};
use crate::rng::{stream_rng, STREAM_DATA};
use crate::sim::{coverage_experiment, emit_table, CoverageOptions, DgpCoefficients, DgpSpec, DoseFamily};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_VERIFICATION: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "adesens", version, about = "Sensitivity analysis for average derivative effects")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the bound curve and its confidence limits on a CSV dataset.
    Analyze(AnalyzeArgs),
    /// Run the coverage experiment for one simulation design.
    Simulate(SimulateArgs),
    /// Compare the stratum LP to the closed-form bounds on random instances.
    VerifyBounds(VerifyBoundsArgs),
    /// Check the implications of the latent-confounder density model.
    VerifyModel(VerifyModelArgs),
    /// Monte Carlo ADE for one simulation design.
    GroundTruth(GroundTruthArgs),
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// CSV with columns y, a, x1..xd.
    #[arg(long)]
    data: PathBuf,
    /// continuous or binary; overrides the config file.
    #[arg(long)]
    outcome: Option<String>,
    /// key = value run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    gamma_min: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma_max: f64,
    #[arg(long, default_value_t = 101)]
    points: usize,
    /// Value whose crossing is reported.
    #[arg(long, default_value_t = 0.0)]
    reference: f64,
    /// Fold seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value = "gaussian")]
    dose: String,
    #[arg(long, default_value = "continuous")]
    outcome: String,
    #[arg(long, default_value_t = 2.0)]
    delta: f64,
    #[arg(long, default_value_t = std::f64::consts::LN_2)]
    zeta: f64,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Monte Carlo draws for binary-outcome truth.
    #[arg(long, default_value_t = 1_000_000)]
    truth_mc: usize,
    /// Run configuration plus optional dgp.* keys; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV output path.
    #[arg(long, default_value = "coverage.csv")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct VerifyBoundsArgs {
    #[arg(long, default_value_t = 1000)]
    instances: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// JSON-lines report; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyModelArgs {
    #[arg(long, default_value_t = std::f64::consts::LN_2)]
    gamma_r: f64,
    #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
    a_min: f64,
    #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
    a_max: f64,
    #[arg(long, default_value_t = 41)]
    points: usize,
    /// Scale the normalizer of stratum u by (1 + value·u); nonzero values are a negative control.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    mis_normalize: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GroundTruthArgs {
    #[arg(long, default_value = "gaussian")]
    dose: String,
    #[arg(long, default_value = "continuous")]
    outcome: String,
    #[arg(long, default_value_t = 2.0)]
    delta: f64,
    #[arg(long, default_value_t = std::f64::consts::LN_2)]
    zeta: f64,
    #[arg(long, default_value_t = 1_000_000)]
    n_mc: usize,
    /// Seed for the coefficient draw and the Monte Carlo stream.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure of a command, mapped to an exit code.
enum Failure {
    Error(Error),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Io(_)
        | Error::Parse { .. }
        | Error::EmptyDataset
        | Error::Domain(_)
        | Error::Config(_)
        | Error::Unsupported(_)
        | Error::DegenerateExposure => EXIT_DATA,
        Error::Verification(_) => EXIT_VERIFICATION,
        Error::Numerical(_) | Error::Internal(_) => EXIT_FAILURE,
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::VerifyBounds(a) => cmd_verify_bounds(a),
        Command::VerifyModel(a) => cmd_verify_model(a),
        Command::GroundTruth(a) => cmd_ground_truth(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            EXIT_VERIFICATION
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn write_output(path: Option<&Path>, contents: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(parent) = p.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent)?;
                }
            }
            fs::write(p, contents)?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(contents.as_bytes())?;
        }
    }
    Ok(())
}

fn read_config(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))
}

fn opt_f64(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Per-γ CSV mirror of the curve JSON.
pub fn curve_csv(curve: &SensitivityCurve) -> String {
    let mut s = String::from("gamma,psi_min,psi_max,ci_lower,ci_upper,sim_lower,sim_upper\n");
    for row in curve.to_json().grid {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.gamma, row.psi_min, row.psi_max, row.ci_lower, row.ci_upper, row.sim_lower, row.sim_upper
        ));
    }
    s
}

fn cmd_analyze(args: AnalyzeArgs) -> std::result::Result<(), Failure> {
    let mut config = match &args.config {
        Some(p) => RunConfig::from_text(&read_config(p)?)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &args.outcome {
        config.outcome_type = o.parse()?;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    let grid = GammaGrid::new(args.gamma_min, args.gamma_max, args.points)?;
    let data = load_csv(&args.data, config.outcome_type)?;
    let curve = analyze(&data, &config, &grid, None, args.reference)?;
    let json = serde_json::to_string_pretty(&curve.to_json())
        .map_err(|e| Error::Internal(e.to_string()))?;
    fs::create_dir_all(&args.out_dir).map_err(Error::from)?;
    fs::write(args.out_dir.join("curve.json"), json + "\n").map_err(Error::from)?;
    fs::write(args.out_dir.join("curve.csv"), curve_csv(&curve)).map_err(Error::from)?;
    println!(
        "n={} a_hat={} b_hat={} crossing point={} pointwise={} simultaneous={}",
        curve.n,
        curve.a_hat,
        curve.b_hat,
        opt_f64(curve.crossings.point),
        opt_f64(curve.crossings.pointwise),
        opt_f64(curve.crossings.simultaneous)
    );
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> std::result::Result<(), Failure> {
    let dose: DoseFamily = args.dose.parse()?;
    let outcome: OutcomeType = args.outcome.parse()?;
    let mut spec = DgpSpec::new(dose, outcome, args.delta);
    let mut config = RunConfig::default();
    if let Some(p) = &args.config {
        for (key, value) in parse_key_values(&read_config(p)?)? {
            if !spec.set(&key, &value)? && !config.set(&key, &value)? {
                return Err(Error::config(format!("unknown configuration key '{key}'")).into());
            }
        }
    }
    // explicit flags win over the file
    spec.dose = dose;
    spec.outcome = outcome;
    spec.delta = args.delta;
    spec.zeta = args.zeta;
    config.outcome_type = outcome;
    let mut opts = CoverageOptions::new(args.n, args.reps, args.seed);
    opts.truth_mc = args.truth_mc;
    let report = coverage_experiment(&spec, &opts, &config)?;
    let (text, csv) = emit_table(std::slice::from_ref(&report))?;
    write_output(Some(&args.out), &csv)?;
    print!("{text}");
    for f in &report.failures {
        eprintln!("replication {} failed: {}", f.rep, f.message);
    }
    if report.rate_floor_events > 0 {
        eprintln!("gamma rate floored {} times", report.rate_floor_events);
    }
    Ok(())
}

fn cmd_verify_bounds(args: VerifyBoundsArgs) -> std::result::Result<(), Failure> {
    let n_continuous = args.instances / 5;
    let n_binary = args.instances - n_continuous;
    let report = verify_propositions(PropositionSettings::new(n_binary, n_continuous), args.seed)?;
    write_output(args.out.as_deref(), &report.to_json_lines())?;
    let failed: Vec<String> = report.failures().map(|r| r.instance_id.to_string()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verification(format!("instances {}", failed.join(","))))
    }
}

fn cmd_verify_model(args: VerifyModelArgs) -> std::result::Result<(), Failure> {
    if args.points == 0 || !(args.a_max >= args.a_min) {
        return Err(Error::config("need points >= 1 and a_max >= a_min").into());
    }
    let model = RosenbaumModel::standard_normal(args.gamma_r)?.mis_normalized(args.mis_normalize);
    let grid = default_a_grid(args.a_min, args.a_max, args.points);
    let report = verify_model_implication(&model, &grid, &[])?;
    write_output(args.out.as_deref(), &report.to_json_lines())?;
    let first = report.failures().next().map(|c| {
        format!(
            "{} at u={} a={} a'={} value={}",
            c.check,
            opt_f64(c.u),
            opt_f64(c.a),
            opt_f64(c.a_prime),
            c.value
        )
    });
    match first {
        None => Ok(()),
        Some(msg) => Err(Failure::Verification(msg)),
    }
}

#[derive(serde::Serialize)]
struct GroundTruthJson {
    dose: DoseFamily,
    outcome: OutcomeType,
    delta: f64,
    zeta: f64,
    coefficients: DgpCoefficients,
    value: f64,
    se: f64,
    n_mc: usize,
    analytic: Option<f64>,
}

fn cmd_ground_truth(args: GroundTruthArgs) -> std::result::Result<(), Failure> {
    let mut spec = DgpSpec::new(args.dose.parse()?, args.outcome.parse()?, args.delta);
    spec.zeta = args.zeta;
    spec.validate()?;
    let coefs = DgpCoefficients::draw(&mut stream_rng(args.seed, STREAM_DATA));
    let est = ground_truth_ade(&spec, &coefs, args.n_mc, args.seed)?;
    let out = GroundTruthJson {
        dose: spec.dose,
        outcome: spec.outcome,
        delta: spec.delta,
        zeta: spec.zeta,
        analytic: analytic_truth(&spec, &coefs),
        coefficients: coefs,
        value: est.value,
        se: est.se,
        n_mc: est.n_mc,
    };
    let json = serde_json::to_string(&out).map_err(|e| Error::Internal(e.to_string()))?;
    write_output(args.out.as_deref(), &(json + "\n"))?;
    Ok(())
}
