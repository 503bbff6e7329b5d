//! `funmed` command line: fit a functional mediation model to a
//! long-format CSV, simulate a synthetic dataset, or run the Monte Carlo
//! performance study.
//!
//! Exit codes: 0 success, 2 input error, 3 fit/convergence failure.
//! Failures print a machine-readable JSON error record to stderr.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use funmed::data::{read_long_csv, write_long_csv, ColumnSpec};
use funmed::error::Error;
use funmed::funreg::PresmoothMethod;
use funmed::glm::Link;
use funmed::mediation::{bootstrap_mediation, fit_mediation, MediationConfig};
use funmed::simulate::{generate_dataset, run_simulation_study, Scenario};
use funmed::tvem::CurveEstimate;

#[derive(Parser)]
#[command(
    name = "funmed",
    version,
    about = "Functional mediation analysis for longitudinal mediators and distal outcomes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the two-stage mediation model to a long-format CSV.
    Fit(FitArgs),
    /// Generate a synthetic dataset in the same CSV schema `fit` reads.
    Simulate(SimulateArgs),
    /// Run the Monte Carlo performance study.
    Study(StudyArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum InterpolateArg {
    Linear,
    Spline,
}

impl From<InterpolateArg> for PresmoothMethod {
    fn from(value: InterpolateArg) -> Self {
        match value {
            InterpolateArg::Linear => PresmoothMethod::LinearInterpolation,
            InterpolateArg::Spline => PresmoothMethod::PerSubjectSpline,
        }
    }
}

#[derive(Args, Serialize)]
struct FitArgs {
    /// Long-format CSV with a header row.
    #[arg(long, env = "FUNMED_INPUT")]
    input: PathBuf,
    /// Subject id column.
    #[arg(long, env = "FUNMED_ID", default_value = "subject_id")]
    id: String,
    /// Observation time column.
    #[arg(long, env = "FUNMED_TIME", default_value = "time")]
    time: String,
    /// Mediator value column.
    #[arg(long, env = "FUNMED_MEDIATOR", default_value = "mediator")]
    mediator: String,
    /// Treatment column (values 0/1).
    #[arg(long, env = "FUNMED_TREATMENT", default_value = "treatment")]
    treatment: String,
    /// Outcome column.
    #[arg(long, env = "FUNMED_OUTCOME", default_value = "outcome")]
    outcome: String,
    /// Baseline covariate column; repeatable.
    #[arg(long = "covariate", env = "FUNMED_COVARIATE", value_delimiter = ',')]
    covariates: Vec<String>,
    /// Model the outcome with a logistic link.
    #[arg(long, env = "FUNMED_BINARY_OUTCOME")]
    binary_outcome: bool,
    /// Presmoothing method for subject trajectories.
    #[arg(long, env = "FUNMED_INTERPOLATE", value_enum, default_value = "linear")]
    interpolate: InterpolateArg,
    /// Bootstrap replicates; 0 skips bootstrap inference.
    #[arg(long, env = "FUNMED_NBOOT", default_value_t = 500)]
    nboot: usize,
    #[arg(long, env = "FUNMED_SEED", default_value_t = 1)]
    seed: u64,
    /// Drop subjects with fewer mediator records than this.
    #[arg(long, env = "FUNMED_MIN_OBS", default_value_t = 1)]
    min_obs: usize,
    /// Evaluation grid size shared by both stages.
    #[arg(long, env = "FUNMED_GRID_SIZE", default_value_t = 100)]
    grid_size: usize,
    #[arg(long, env = "FUNMED_CI_LEVEL", default_value_t = 0.95)]
    ci_level: f64,
    #[arg(long, env = "FUNMED_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[arg(long, env = "FUNMED_N_SUBJECTS", default_value_t = 500)]
    n_subjects: usize,
    /// Dense generation grid size.
    #[arg(long, env = "FUNMED_GRID_POINTS", default_value_t = 100)]
    grid_points: usize,
    /// Probability each observation is deleted.
    #[arg(long, env = "FUNMED_MISSING_RATE", default_value_t = 0.6)]
    missing_rate: f64,
    /// Marginal SD of the mediator noise process.
    #[arg(long, env = "FUNMED_NOISE_SD", default_value_t = 2.0)]
    noise_sd: f64,
    /// Lag-1 correlation between adjacent grid points.
    #[arg(long, env = "FUNMED_AR1_CORR", default_value_t = 0.8)]
    ar1_corr: f64,
    #[arg(long, env = "FUNMED_BETA0", default_value_t = 0.0)]
    beta0: f64,
    #[arg(long, env = "FUNMED_BETA_X", default_value_t = 0.2)]
    beta_x: f64,
    #[arg(long, env = "FUNMED_SEED", default_value_t = 1)]
    seed: u64,
    /// Output CSV path.
    #[arg(long, env = "FUNMED_OUT", default_value = "simulated.csv")]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct StudyArgs {
    #[arg(long, env = "FUNMED_N_SUBJECTS", default_value_t = 500)]
    n_subjects: usize,
    #[arg(long, env = "FUNMED_N_DATASETS", default_value_t = 200)]
    n_datasets: usize,
    /// Bootstrap replicates per dataset; 0 skips bootstrap inference.
    #[arg(long, env = "FUNMED_NBOOT", default_value_t = 199)]
    nboot: usize,
    #[arg(long, env = "FUNMED_MISSING_RATE", default_value_t = 0.6)]
    missing_rate: f64,
    #[arg(long, env = "FUNMED_SEED", default_value_t = 1)]
    seed: u64,
    #[arg(long, env = "FUNMED_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    error: ErrorBody<'a>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    message: String,
    exit_code: u8,
}

fn report_error(err: &Error) -> ExitCode {
    let (kind, code) = if err.is_input_error() {
        ("input", 2u8)
    } else {
        ("fit", 3u8)
    };
    let record = ErrorRecord {
        error: ErrorBody {
            kind,
            message: err.to_string(),
            exit_code: code,
        },
    };
    eprintln!(
        "{}",
        serde_json::to_string(&record).unwrap_or_else(|_| err.to_string())
    );
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Study(args) => cmd_study(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => report_error(&err),
    }
}

#[derive(Serialize)]
struct ScalarReport {
    estimate: f64,
    se: f64,
}

#[derive(Serialize)]
struct IndirectReport {
    estimate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    ci_normal: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ci_basic: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ci_percentile: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_value: Option<f64>,
    n_boot: usize,
    n_failed: usize,
}

#[derive(Serialize)]
struct StageReport {
    chosen_lambda: f64,
    converged: bool,
    effective_df: f64,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct GridReport {
    t_min: f64,
    t_max: f64,
    size: usize,
}

#[derive(Serialize)]
struct FitReport<'a> {
    version: &'static str,
    command: &'static str,
    seed: u64,
    config: &'a FitArgs,
    n_subjects_read: usize,
    n_subjects_used: usize,
    n_dropped: usize,
    dropped_ids: &'a [String],
    n_records: usize,
    grid: GridReport,
    total_effect: funmed::mediation::TotalEffect,
    direct_effect: ScalarReport,
    indirect_effect: IndirectReport,
    decomposition_gap: f64,
    mediator_model: StageReport,
    outcome_model: StageReport,
}

fn write_curve_rows<W: Write>(
    w: &mut csv::Writer<W>,
    label: Option<&str>,
    grid: &[f64],
    curve: &CurveEstimate,
    level: f64,
) -> Result<(), Error> {
    let (lower, upper) = curve.pointwise_ci(level)?;
    for (i, &t) in grid.iter().enumerate() {
        let mut row: Vec<String> = Vec::with_capacity(6);
        if let Some(name) = label {
            row.push(name.to_string());
        }
        row.push(format!("{t}"));
        row.push(format!("{}", curve.estimate[i]));
        row.push(format!("{}", curve.se[i]));
        row.push(format!("{}", lower[i]));
        row.push(format!("{}", upper[i]));
        w.write_record(&row)?;
    }
    Ok(())
}

fn create_file(path: &Path) -> Result<BufWriter<File>, Error> {
    Ok(BufWriter::new(File::create(path)?))
}

fn cmd_fit(args: &FitArgs) -> Result<(), Error> {
    let columns = ColumnSpec {
        id: args.id.clone(),
        time: args.time.clone(),
        mediator: args.mediator.clone(),
        treatment: args.treatment.clone(),
        outcome: args.outcome.clone(),
        covariates: args.covariates.clone(),
    };
    let file = File::open(&args.input)?;
    let data = read_long_csv(file, &columns)?;
    for s in data.subjects() {
        if s.treatment != 0.0 && s.treatment != 1.0 {
            return Err(Error::InvalidInput(format!(
                "treatment must be coded 0/1; subject {} has {}",
                s.id, s.treatment
            )));
        }
    }
    let config = MediationConfig {
        outcome_link: if args.binary_outcome {
            Link::Logit
        } else {
            Link::Identity
        },
        grid_size: args.grid_size,
        min_obs: args.min_obs,
        nboot: args.nboot.max(1),
        seed: args.seed,
        ci_level: args.ci_level,
        presmooth: args.interpolate.into(),
        ..MediationConfig::default()
    };
    let result = fit_mediation(&data, &config)?;
    let boot = if args.nboot > 0 {
        Some(bootstrap_mediation(&data, &config)?)
    } else {
        None
    };

    std::fs::create_dir_all(&args.out_dir)?;

    let grid = result.tvem.grid.points().to_vec();
    let mut tvem_csv = csv::Writer::from_writer(create_file(&args.out_dir.join("tvem_curves.csv"))?);
    tvem_csv.write_record(["function", "t", "estimate", "se", "lower", "upper"])?;
    write_curve_rows(&mut tvem_csv, Some("alpha0"), &grid, &result.tvem.alpha0, args.ci_level)?;
    write_curve_rows(&mut tvem_csv, Some("alphaX"), &grid, &result.tvem.alpha_x, args.ci_level)?;
    for (name, curve) in args.covariates.iter().zip(&result.tvem.alpha_c) {
        write_curve_rows(&mut tvem_csv, Some(name), &grid, curve, args.ci_level)?;
    }
    tvem_csv.flush()?;

    let mut funreg_csv =
        csv::Writer::from_writer(create_file(&args.out_dir.join("funreg_curve.csv"))?);
    funreg_csv.write_record(["t", "estimate", "se", "lower", "upper"])?;
    write_curve_rows(
        &mut funreg_csv,
        None,
        result.funreg.grid.points(),
        &result.funreg.beta_m,
        args.ci_level,
    )?;
    funreg_csv.flush()?;

    if let Some(boot) = &boot {
        let mut boot_csv = csv::Writer::from_writer(create_file(
            &args.out_dir.join("bootstrap_replicates.csv"),
        )?);
        boot_csv.write_record(["replicate", "indirect_effect"])?;
        for (i, r) in boot.replicates.iter().enumerate() {
            boot_csv.write_record([format!("{}", i + 1), format!("{r}")])?;
        }
        boot_csv.flush()?;
    }

    let report = FitReport {
        version: env!("CARGO_PKG_VERSION"),
        command: "fit",
        seed: args.seed,
        config: args,
        n_subjects_read: data.n_subjects(),
        n_subjects_used: result.n_subjects_used,
        n_dropped: result.n_dropped,
        dropped_ids: &result.dropped_ids,
        n_records: data.n_records(),
        grid: GridReport {
            t_min: result.tvem.grid.t_min(),
            t_max: result.tvem.grid.t_max(),
            size: result.tvem.grid.len(),
        },
        total_effect: result.total_effect,
        direct_effect: ScalarReport {
            estimate: result.direct_effect.estimate,
            se: result.direct_effect.se,
        },
        indirect_effect: IndirectReport {
            estimate: result.indirect_effect,
            ci_normal: boot.as_ref().map(|b| b.ci_normal),
            ci_basic: boot.as_ref().map(|b| b.ci_basic),
            ci_percentile: boot.as_ref().map(|b| b.ci_percentile),
            p_value: boot.as_ref().map(|b| b.p_value),
            n_boot: args.nboot,
            n_failed: boot.as_ref().map_or(0, |b| b.n_failed),
        },
        decomposition_gap: result.decomposition_gap,
        mediator_model: StageReport {
            chosen_lambda: result.tvem.chosen_lambda,
            converged: result.tvem.glm.converged,
            effective_df: result.tvem.glm.effective_df,
            warnings: result.tvem.glm.warnings.clone(),
        },
        outcome_model: StageReport {
            chosen_lambda: result.funreg.chosen_lambda,
            converged: result.funreg.glm.converged,
            effective_df: result.funreg.glm.effective_df,
            warnings: result.funreg.glm.warnings.clone(),
        },
    };
    let mut json = create_file(&args.out_dir.join("result.json"))?;
    serde_json::to_writer_pretty(&mut json, &report)
        .map_err(|e| Error::InvalidInput(format!("cannot serialize result: {e}")))?;
    json.write_all(b"\n")?;
    json.flush()?;

    println!(
        "total effect    {:+.4} (se {:.4}, p {:.4})",
        result.total_effect.estimate, result.total_effect.se, result.total_effect.p_value
    );
    println!(
        "direct effect   {:+.4} (se {:.4})",
        result.direct_effect.estimate, result.direct_effect.se
    );
    match &boot {
        Some(b) => println!(
            "indirect effect {:+.4} (percentile CI [{:+.4}, {:+.4}], p {:.4})",
            result.indirect_effect, b.ci_percentile.0, b.ci_percentile.1, b.p_value
        ),
        None => println!("indirect effect {:+.4} (no bootstrap)", result.indirect_effect),
    }
    println!(
        "subjects used {} / dropped {}; outputs in {}",
        result.n_subjects_used,
        result.n_dropped,
        args.out_dir.display()
    );
    Ok(())
}

fn scenario_from(args: &SimulateArgs) -> Scenario {
    let mut scenario = Scenario::new(args.n_subjects, args.seed);
    scenario.n_grid = args.grid_points;
    scenario.missing_rate = args.missing_rate;
    scenario.mediator_noise_sd = args.noise_sd;
    scenario.ar1_corr = args.ar1_corr;
    scenario.beta0 = args.beta0;
    scenario.beta_x = args.beta_x;
    scenario
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Error> {
    let scenario = scenario_from(args);
    let data = generate_dataset(&scenario)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let file = create_file(&args.out)?;
    write_long_csv(file, &data, &ColumnSpec::default())?;
    println!(
        "wrote {} records for {} subjects to {}",
        data.n_records(),
        data.n_subjects(),
        args.out.display()
    );
    Ok(())
}

fn cmd_study(args: &StudyArgs) -> Result<(), Error> {
    let mut scenario = Scenario::new(args.n_subjects, args.seed);
    scenario.missing_rate = args.missing_rate;
    let report = run_simulation_study(&scenario, args.n_datasets, args.nboot)?;

    std::fs::create_dir_all(&args.out_dir)?;
    report.write_csv(create_file(&args.out_dir.join("study_report.csv"))?)?;
    let mut json = create_file(&args.out_dir.join("study_report.json"))?;
    serde_json::to_writer_pretty(&mut json, &report)
        .map_err(|e| Error::InvalidInput(format!("cannot serialize report: {e}")))?;
    json.write_all(b"\n")?;
    json.flush()?;

    println!(
        "{} of {} replications succeeded (N={}, nboot={})",
        report.n_successful, report.n_datasets, report.n_subjects, report.nboot
    );
    println!(
        "alphaX: bias {:+.4}, rmse {:.4}, pointwise coverage {:.4}",
        report.alpha_x.bias, report.alpha_x.rmse, report.alpha_x.pointwise_coverage
    );
    println!(
        "betaX : bias {:+.4}, rmse {:.4}, coverage {:.4}",
        report.beta_x.bias, report.beta_x.rmse, report.beta_x.coverage
    );
    if let Some(p) = &report.indirect.percentile {
        println!(
            "indirect (percentile): coverage {:.4}, power {:.4}",
            p.coverage, p.power
        );
    }
    println!("report written to {}", args.out_dir.display());
    Ok(())
}
