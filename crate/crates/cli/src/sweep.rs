use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ccpdi::sim::{run_experiment, ExperimentConfig, RobotDescription, RunLog, RunMetrics, SpineMode};

use crate::{load, resolve_output, Loaded, SweepArgs};

pub const MAP_HEADER: [&str; 10] =
    ["k_s", "l_rest", "status", "fall_time", "duration", "mean_eps_yy", "grf_spread", "height_rmse", "pitch_rmse", "reason"];

struct Cell {
    stiffness: f64,
    rest_length: f64,
}

impl Cell {
    fn dir_name(&self) -> String {
        format!("k{}_l{}", self.stiffness, self.rest_length)
    }
}

enum Outcome {
    Done(RunLog, RunMetrics),
    Error(String),
}

fn run_cell(robot: &RobotDescription, base: &ExperimentConfig, cell: &Cell, out: &Path) -> Outcome {
    let cfg = ExperimentConfig {
        spine: SpineMode::Compliant,
        spine_stiffness: Some(cell.stiffness),
        spine_rest_length: Some(cell.rest_length),
        ..base.clone()
    };
    let result = run_experiment(robot, &cfg).and_then(|log| {
        let metrics = log.default_metrics()?;
        write_atomically(&out.join(cell.dir_name()), &log, &metrics)?;
        Ok((log, metrics))
    });
    match result {
        Ok((log, metrics)) => Outcome::Done(log, metrics),
        Err(e) => Outcome::Error(e.to_string()),
    }
}

/// Writes into a sibling temporary directory and renames it into place, so a
/// cell directory is either complete or absent.
fn write_atomically(dir: &Path, log: &RunLog, metrics: &RunMetrics) -> ccpdi::Result<()> {
    let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("cell");
    let tmp = dir.with_file_name(format!(".{name}.partial"));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    log.write(&tmp, metrics)?;
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&tmp, dir)?;
    Ok(())
}

fn map_row(cell: &Cell, outcome: &Outcome) -> Vec<String> {
    let mut row = vec![cell.stiffness.to_string(), cell.rest_length.to_string()];
    match outcome {
        Outcome::Done(log, m) => {
            let reason = match &log.status {
                ccpdi::sim::RunStatus::Fell { reason, .. } | ccpdi::sim::RunStatus::Diverged { reason, .. } => reason.clone(),
                ccpdi::sim::RunStatus::Stable => String::new(),
            };
            row.extend([
                log.status.name().to_string(),
                log.status.failure_time().map(|t| t.to_string()).unwrap_or_default(),
                log.duration.to_string(),
                m.mean_prediction_error.to_string(),
                m.grf_spread.to_string(),
                m.tracking_rmse[0].to_string(),
                m.tracking_rmse[2].to_string(),
                reason,
            ]);
        }
        Outcome::Error(message) => {
            row.extend(["error".to_string(), String::new(), String::new(), String::new(), String::new(), String::new(), String::new()]);
            row.push(message.clone());
        }
    }
    row
}

pub fn cmd_sweep(args: &SweepArgs) -> ccpdi::Result<ExitCode> {
    let Loaded { robot, mut cfg } = load(&args.common)?;
    if let Some(ks) = &args.ks {
        cfg.sweep.stiffness = ks.clone();
    }
    if let Some(ls) = &args.lrest {
        cfg.sweep.rest_length = ls.clone();
    }
    cfg.spine = SpineMode::Compliant;
    cfg.validate()?;
    cfg.validate_sweep()?;
    let out = resolve_output(&cfg.output.clone().unwrap_or_else(|| PathBuf::from(format!("sweep-seed{}", cfg.seed))));
    fs::create_dir_all(&out)?;

    let cells: Vec<Cell> = cfg
        .sweep
        .stiffness
        .iter()
        .flat_map(|&stiffness| cfg.sweep.rest_length.iter().map(move |&rest_length| Cell { stiffness, rest_length }))
        .collect();
    let jobs = args.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).clamp(1, cells.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Outcome>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cell) = cells.get(i) else { break };
                let outcome = run_cell(&robot, &cfg, cell, &out);
                results.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(outcome);
            });
        }
    });
    let results = results.into_inner().unwrap_or_else(|e| e.into_inner());

    let map_path = out.join("map.csv");
    let csv_err = |e: csv::Error| ccpdi::Error::Config { key: "map.csv".into(), message: e.to_string() };
    let mut w = csv::Writer::from_path(&map_path).map_err(csv_err)?;
    w.write_record(MAP_HEADER).map_err(csv_err)?;
    let mut failed = 0;
    for (cell, outcome) in cells.iter().zip(&results) {
        let outcome = outcome.as_ref().expect("every cell is visited once");
        if !matches!(outcome, Outcome::Done(log, _) if !log.status.failed()) {
            failed += 1;
        }
        w.write_record(map_row(cell, outcome)).map_err(csv_err)?;
    }
    w.flush()?;
    println!("{}: {} cells, {failed} failed", map_path.display(), cells.len());
    Ok(ExitCode::SUCCESS)
}
