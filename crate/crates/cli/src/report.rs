use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ccpdi::sim::robot::LEG_NAMES;
use ccpdi::sim::{RunLog, RunMetrics};

use crate::{resolve_output, ReportArgs};

pub fn report_header() -> Vec<String> {
    let mut h: Vec<String> =
        ["run", "spine", "ccpdi", "status", "fall_time", "ticks", "mean_eps_yy", "max_eps_yy"].map(String::from).to_vec();
    h.extend(LEG_NAMES.iter().map(|leg| format!("{leg}_grf_mean")));
    h.extend(["grf_spread", "rmse_height", "rmse_roll", "rmse_pitch", "rmse_yaw"].map(String::from));
    h
}

fn report_row(dir: &Path, log: &RunLog, m: &RunMetrics) -> Vec<String> {
    let mut row = vec![
        dir.display().to_string(),
        log.spine.name().to_string(),
        if log.ccpdi { "on" } else { "off" }.to_string(),
        log.status.name().to_string(),
        log.status.failure_time().map(|t| t.to_string()).unwrap_or_default(),
        log.states.len().to_string(),
        m.mean_prediction_error.to_string(),
        m.max_prediction_error.to_string(),
    ];
    row.extend(m.leg_grf_means.iter().map(|g| g.to_string()));
    row.push(m.grf_spread.to_string());
    row.extend(m.tracking_rmse.iter().map(|r| r.to_string()));
    row
}

fn gnuplot_script(report: &Path, runs: &[PathBuf]) -> String {
    let mut s = String::from("set datafile separator ','\nset key autotitle columnhead\nset xlabel 't [s]'\n");
    s += "set terminal pngcairo size 1200,900\n";
    let out = report.with_extension("states.png");
    let _ = writeln!(s, "set output '{}'\nset multiplot layout 2,2", out.display());
    for (column, title) in [(4, "height [m]"), (5, "roll [rad]"), (6, "pitch [rad]"), (7, "yaw [rad]")] {
        let curves: Vec<String> = runs
            .iter()
            .map(|r| format!("'{}' using 1:{column} with lines title '{}'", r.join("states.csv").display(), r.display()))
            .collect();
        let _ = writeln!(s, "set ylabel '{title}'\nplot {}", curves.join(", \\\n     "));
    }
    s += "unset multiplot\n";
    let out = report.with_extension("grf.png");
    let _ = writeln!(s, "set output '{}'\nset style data histogram\nset style fill solid 0.6\nset ylabel 'mean GRF norm [N]'", out.display());
    let first = 9;
    let cols: Vec<String> =
        (0..4).map(|i| format!("'{}' using {}:xtic(2) title '{}'", report.display(), first + i, LEG_NAMES[i])).collect();
    let _ = writeln!(s, "unset xlabel\nplot {}", cols.join(", \\\n     "));
    s
}

pub fn cmd_report(args: &ReportArgs) -> ccpdi::Result<ExitCode> {
    let mut rows = Vec::new();
    let mut ratio = (None, None);
    for dir in &args.runs {
        let log = RunLog::read(dir)?;
        let metrics = log.default_metrics()?;
        if log.spine == ccpdi::sim::SpineMode::Compliant {
            let slot = if log.ccpdi { &mut ratio.0 } else { &mut ratio.1 };
            slot.get_or_insert(metrics.mean_prediction_error);
        }
        rows.push(report_row(dir, &log, &metrics));
    }
    let path = match (&args.output, args.runs.as_slice()) {
        (Some(p), _) => resolve_output(p),
        (None, [single]) => single.join("report.csv"),
        (None, _) => resolve_output(Path::new("report.csv")),
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let csv_err = |e: csv::Error| ccpdi::Error::Config { key: "report.csv".into(), message: e.to_string() };
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(report_header()).map_err(csv_err)?;
    for row in &rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush()?;
    println!("{}: {} runs", path.display(), rows.len());
    if let (Some(on), Some(off)) = ratio {
        println!("mean eps_yy with CCPDI {on:.6}, without {off:.6}, ratio {:.3}", off / on);
    }
    if args.gnuplot {
        let script = path.with_extension("gp");
        fs::write(&script, gnuplot_script(&path, &args.runs))?;
        println!("{}", script.display());
    }
    Ok(ExitCode::SUCCESS)
}
