use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use udmc_core::dynamics::{identify_params, read_log_file, IdentifyOptions, DEFAULT_TS};
use udmc_core::ocp::{gradient_survey, OcpConfig};
use udmc_core::potential::{PFParams, VehicleFieldVariant};
use udmc_core::sim::{
    default_predictors, run_batch, run_trial, train_predictors, CompiledScenario, Predictors, Scenario,
    TrainingOptions, TrialConfig,
};
use udmc_core::{Error, Result};

/// Potential-field augmented MPC for urban driving: closed-loop runs,
/// robustness batches, predictor training and model checks.
#[derive(Debug, Parser)]
#[command(name = "udmc", version)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one closed-loop trial and write its metrics and logs.
    Run(RunArgs),
    /// Run seeded randomised trials and report the success rate.
    Batch(BatchArgs),
    /// Train the vehicle and pedestrian motion predictors.
    TrainPredictor(TrainArgs),
    /// Identify vehicle model parameters from a logged trajectory.
    Identify(IdentifyArgs),
    /// Compare analytic and finite-difference gradients of the horizon cost.
    CheckGradients(GradientArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Variant {
    Circles,
    Ellipse,
}

#[derive(Debug, Args)]
struct ControllerArgs {
    /// Built-in scenario name or path to a scenario file.
    #[arg(long)]
    scenario: String,
    /// Potential-field parameter file.
    #[arg(long)]
    pf_params: Option<PathBuf>,
    /// Solver configuration file.
    #[arg(long)]
    ocp_config: Option<PathBuf>,
    /// Trained predictor file; trained on the fly when absent.
    #[arg(long)]
    predictor: Option<PathBuf>,
    #[arg(long, value_enum)]
    pf_variant: Option<Variant>,
    /// Use current obstacle poses over the whole horizon.
    #[arg(long)]
    no_prediction: bool,
    /// Drop the time-to-collision field.
    #[arg(long)]
    no_ttc: bool,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    ctl: ControllerArgs,
    /// Draw a randomised traffic layout with this seed (the same layout as
    /// batch trial `seed`); the scripted layout is used when absent.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write the per-iteration solver trace.
    #[arg(long)]
    trace_solver: bool,
}

#[derive(Debug, Args)]
struct BatchArgs {
    #[command(flatten)]
    ctl: ControllerArgs,
    /// Seed of the first trial; trial i uses seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 40)]
    trials: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 400)]
    vehicle_records: usize,
    #[arg(long, default_value_t = 200)]
    pedestrian_records: usize,
    /// Output model file.
    #[arg(long, default_value = "predictors.json")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct IdentifyArgs {
    /// Logged trajectory with columns px, py, phi, vx, vy, omega, a, delta.
    #[arg(long)]
    log: PathBuf,
    /// Sample time when the log has no time column, s.
    #[arg(long)]
    ts: Option<f64>,
    /// Fix the vehicle mass, kg.
    #[arg(long)]
    known_mass: Option<f64>,
    #[arg(long, default_value = "vehicle_params.toml")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GradientArgs {
    #[arg(long)]
    pf_params: Option<PathBuf>,
    #[arg(long)]
    ocp_config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pf_variant: Option<Variant>,
    #[arg(long, default_value_t = 200)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_configs(pf: Option<&Path>, ocp: Option<&Path>, variant: Option<Variant>) -> Result<(PFParams, OcpConfig)> {
    let pf = match pf {
        Some(p) => PFParams::load(p)?,
        None => PFParams::default(),
    };
    let mut ocp = match ocp {
        Some(p) => OcpConfig::load(p)?,
        None => OcpConfig::default(),
    };
    match variant {
        Some(Variant::Circles) => ocp.pf_variant = VehicleFieldVariant::Circles,
        Some(Variant::Ellipse) => ocp.pf_variant = VehicleFieldVariant::Ellipse,
        None => {}
    }
    Ok((pf, ocp))
}

fn trial_config(a: &ControllerArgs, trace_solver: bool) -> Result<TrialConfig> {
    let (pf, mut ocp) = load_configs(a.pf_params.as_deref(), a.ocp_config.as_deref(), a.pf_variant)?;
    if a.no_ttc {
        ocp.ttc = false;
    }
    Ok(TrialConfig {
        ocp,
        pf,
        prediction: !a.no_prediction,
        trace_solver,
    })
}

/// Predictors for a closed-loop run, or none for the no-prediction ablation.
fn predictors(a: &ControllerArgs, owned: &mut Option<Predictors>) -> Result<Option<&'static Predictors>> {
    if a.no_prediction {
        return Ok(None);
    }
    if let Some(path) = &a.predictor {
        *owned = Some(Predictors::load(path)?);
        return Ok(None);
    }
    info!("training motion predictors");
    default_predictors().map(Some)
}

fn run(a: &RunArgs) -> Result<()> {
    let cfg = trial_config(&a.ctl, a.trace_solver)?;
    let base = Scenario::resolve(&a.ctl.scenario)?;
    let scenario = match a.seed {
        Some(seed) => base.randomized(seed)?,
        None => base,
    };
    let sc = CompiledScenario::new(scenario)?;
    let mut owned = None;
    let cached = predictors(&a.ctl, &mut owned)?;
    let result = run_trial(&sc, &cfg, owned.as_ref().or(cached))?;
    result.write_to(&a.out)?;
    let m = &result.metrics;
    println!(
        "{}: {} in {:.2} s, collisions {}, trv {}, ib {}, ttc alarm {:.2} s{}",
        m.scenario,
        if m.success { "success" } else { "failure" },
        m.travel_time,
        m.collisions,
        m.trv,
        m.ib,
        m.ttc_alarm_duration,
        m.failure_cause.as_ref().map(|c| format!(" ({c})")).unwrap_or_default()
    );
    println!("wrote {}", a.out.display());
    Ok(())
}

fn batch(a: &BatchArgs) -> Result<()> {
    let cfg = trial_config(&a.ctl, false)?;
    let template = Scenario::resolve(&a.ctl.scenario)?;
    let mut owned = None;
    let cached = predictors(&a.ctl, &mut owned)?;
    let report = run_batch(&template, a.trials, a.seed, &cfg, owned.as_ref().or(cached))?;
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("batch.json"), report.to_json()?)?;
    report.write_csv(std::fs::File::create(a.out.join("batch.csv"))?)?;
    println!(
        "{}: {}/{} successful ({:.1}%)",
        report.scenario,
        report.successes,
        report.trials,
        100.0 * report.success_rate
    );
    for (seed, cause) in &report.failures {
        println!("  seed {seed}: {cause}");
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let opts = TrainingOptions {
        seed: a.seed,
        vehicle_records: a.vehicle_records,
        pedestrian_records: a.pedestrian_records,
        ..TrainingOptions::default()
    };
    let p = train_predictors(&opts)?;
    p.save(&a.out)?;
    println!(
        "trained on {} vehicle and {} pedestrian records, wrote {}",
        p.vehicle.len(),
        p.pedestrian.len(),
        a.out.display()
    );
    Ok(())
}

fn identify(a: &IdentifyArgs) -> Result<()> {
    let (log, logged_ts) = read_log_file(&a.log)?;
    let ts = a.ts.or(logged_ts).unwrap_or(DEFAULT_TS);
    let opts = IdentifyOptions {
        known_mass: a.known_mass,
        ..IdentifyOptions::default()
    };
    let id = identify_params(&log, ts, &opts)?;
    std::fs::write(&a.out, toml::to_string(&id.params)?)?;
    let p = &id.params;
    println!(
        "lf {:.6} lr {:.6} kf {:.6} kr {:.6} m {:.6} iz {:.6}",
        p.lf, p.lr, p.kf, p.kr, p.m_mass, p.iz
    );
    println!(
        "residual per sample {:.6e} after {} iterations, wrote {}",
        id.residual_per_sample,
        id.iterations,
        a.out.display()
    );
    Ok(())
}

fn check_gradients(a: &GradientArgs) -> Result<bool> {
    let (pf, ocp) = load_configs(a.pf_params.as_deref(), a.ocp_config.as_deref(), a.pf_variant)?;
    let survey = gradient_survey(&ocp, &pf, a.points, a.seed)?;
    let passed = survey.passed(a.tol);
    let report = format!(
        "points {}\ncoordinates {}\nnonsmooth_skipped {}\nmax_rel_error {:.6e}\ntolerance {:.6e}\nresult {}\n",
        survey.points,
        survey.coordinates,
        survey.nonsmooth,
        survey.max_rel_error,
        a.tol,
        if passed { "pass" } else { "fail" }
    );
    print!("{report}");
    if let Some(out) = &a.out {
        std::fs::write(out, &report)?;
    }
    Ok(passed)
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error[{}]: {e}", e.category());
    ExitCode::from(1)
}

fn main() -> ExitCode {
    // Usage errors exit with status 2 through clap.
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let outcome = match &cli.command {
        Command::Run(a) => run(a),
        Command::Batch(a) => batch(a),
        Command::TrainPredictor(a) => train(a),
        Command::Identify(a) => identify(a),
        Command::CheckGradients(a) => match check_gradients(a) {
            Ok(true) => Ok(()),
            Ok(false) => {
                eprintln!(
                    "error[gradient_mismatch]: gradient check exceeded tolerance {:e}",
                    a.tol
                );
                return ExitCode::from(1);
            }
            Err(e) => Err(e),
        },
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
