mod report;
mod sweep;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ccpdi::sim::{run_experiment, ExperimentConfig, RobotDescription, SpineMode};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Output directories given as relative paths are placed under this root.
pub const OUTPUT_ROOT_VAR: &str = "CCPDI_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "ccpdi", version, about = "Quadruped trot experiments with a CCPDI-enabled convex MPC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop experiment. Exits 0 when stable, 2 on a fall, 1 on errors.
    Run(RunArgs),
    /// Run every (stiffness, rest length) cell of the sweep grid and write map.csv.
    Sweep(SweepArgs),
    /// Aggregate metrics of finished runs into report.csv.
    Report(ReportArgs),
    /// Check a robot description file and print its derived quantities.
    ValidateRobot { file: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args)]
struct Overrides {
    /// Experiment file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Robot description file (TOML); the built-in quadruped when absent.
    #[arg(long)]
    robot: Option<PathBuf>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    ccpdi: Option<Toggle>,
    /// Output directory, relative to $CCPDI_OUTPUT_ROOT when that is set.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Overrides,
    #[arg(long, value_parser = ["rigid", "compliant"])]
    spine: Option<String>,
    /// Spine stiffness in N/m.
    #[arg(long)]
    ks: Option<f64>,
    /// Spine rest length in m.
    #[arg(long)]
    lrest: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Overrides,
    /// Stiffness grid, comma separated.
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<f64>>,
    /// Rest length grid, comma separated.
    #[arg(long, value_delimiter = ',')]
    lrest: Option<Vec<f64>>,
    /// Worker threads; all cores by default.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories holding summary.json and the CSV logs.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Report file; `report.csv` in the run directory for a single run.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write a gnuplot script for the runs.
    #[arg(long)]
    gnuplot: bool,
}

pub fn resolve_output(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) => PathBuf::from(root).join(path),
        None => path.to_path_buf(),
    }
}

struct Loaded {
    robot: RobotDescription,
    cfg: ExperimentConfig,
}

fn load(common: &Overrides) -> ccpdi::Result<Loaded> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(r) = &common.robot {
        cfg.robot = Some(r.clone());
    }
    if let Some(d) = common.duration {
        cfg.duration = d;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = common.ccpdi {
        cfg.ccpdi = matches!(t, Toggle::On);
    }
    if let Some(o) = &common.output {
        cfg.output = Some(o.clone());
    }
    let robot = match &cfg.robot {
        Some(path) => RobotDescription::load(path)?,
        None => RobotDescription::default(),
    };
    Ok(Loaded { robot, cfg })
}

fn default_run_name(cfg: &ExperimentConfig) -> String {
    let ccpdi = if cfg.ccpdi { "on" } else { "off" };
    format!("run-{}-ccpdi-{ccpdi}-seed{}", cfg.spine.name(), cfg.seed)
}

fn cmd_run(args: &RunArgs) -> ccpdi::Result<ExitCode> {
    let Loaded { robot, mut cfg } = load(&args.common)?;
    if let Some(s) = &args.spine {
        cfg.spine = s.parse::<SpineMode>()?;
    }
    if args.ks.is_some() {
        cfg.spine_stiffness = args.ks;
    }
    if args.lrest.is_some() {
        cfg.spine_rest_length = args.lrest;
    }
    cfg.validate()?;
    let dir = resolve_output(&cfg.output.clone().unwrap_or_else(|| default_run_name(&cfg).into()));
    let log = run_experiment(&robot, &cfg)?;
    let metrics = log.default_metrics()?;
    log.write(&dir, &metrics)?;
    println!("{}: {} after {:.3} s", dir.display(), log.status.name(), log.duration);
    if let Some(t) = log.status.failure_time() {
        println!("failure at t = {t:.3} s");
        return Ok(ExitCode::from(2));
    }
    println!("mean prediction error {:.6}, GRF spread {:.4} N", metrics.mean_prediction_error, metrics.grf_spread);
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(file: &Path) -> ccpdi::Result<ExitCode> {
    let robot = RobotDescription::load(file)?;
    let r = robot.validate()?;
    println!("{}: ok", robot.name);
    println!("total mass      {:.4} kg", r.total_mass);
    println!("spine damping   {:.4} N s/m", r.spine_damping);
    println!("standing knee   {:.4} rad", r.standing_knee);
    if r.always_tensioned {
        println!("warning: spine rest length lies outside its travel bounds");
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => sweep::cmd_sweep(a),
        Command::Report(a) => report::cmd_report(a),
        Command::ValidateRobot { file } => cmd_validate(file),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(1)
    })
}
