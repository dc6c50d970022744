//! Run logs, their CSV and summary files, and the metrics computed from them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpc::QpStatus;

use super::robot::{SpineMode, LEG_NAMES};

/// Bumped whenever a CSV column is added, removed or reordered.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunStatus {
    Stable,
    Fell { time: f64, reason: String },
    Diverged { time: f64, reason: String },
}

impl RunStatus {
    pub fn name(&self) -> &'static str {
        match self {
            RunStatus::Stable => "stable",
            RunStatus::Fell { .. } => "fell",
            RunStatus::Diverged { .. } => "diverged",
        }
    }

    pub fn failed(&self) -> bool {
        !matches!(self, RunStatus::Stable)
    }

    pub fn failure_time(&self) -> Option<f64> {
        match self {
            RunStatus::Stable => None,
            RunStatus::Fell { time, .. } | RunStatus::Diverged { time, .. } => Some(*time),
        }
    }
}

/// Centroid state at one MPC tick.
#[derive(Clone, Debug, PartialEq)]
pub struct StateRow {
    pub time: f64,
    pub position: [f64; 3],
    /// Roll, pitch, yaw.
    pub euler: [f64; 3],
    pub linear_velocity: [f64; 3],
    pub angular_velocity: [f64; 3],
    pub trunk_height: f64,
    /// NaN for the rigid trunk.
    pub spine_length: f64,
    pub spine_rate: f64,
}

/// First-step planned ground reaction forces and solver diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct GrfRow {
    pub time: f64,
    pub status: QpStatus,
    pub iterations: usize,
    pub kkt: f64,
    pub objective: f64,
    pub contacts: [bool; 4],
    pub forces: [[f64; 3]; 4],
}

/// Composite pitch inertia about the centroid over the horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct InertiaRow {
    pub time: f64,
    /// CCPDI prediction per step.
    pub predicted: Vec<f64>,
    /// What the MPC was given per step.
    pub used: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunLog {
    pub spine: SpineMode,
    pub ccpdi: bool,
    pub config_hash: String,
    pub nominal_height: f64,
    pub horizon: usize,
    /// Trotting starts here; earlier ticks are the standing phase.
    pub gait_start: f64,
    pub status: RunStatus,
    pub duration: f64,
    pub states: Vec<StateRow>,
    pub grf: Vec<GrfRow>,
    pub inertia: Vec<InertiaRow>,
    pub reach_clamps: usize,
    pub small_angle_violations: usize,
    pub qp_failures: usize,
}

/// Aggregates written to the summary and to `report.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub mean_prediction_error: f64,
    pub max_prediction_error: f64,
    pub leg_grf_means: [f64; 4],
    pub grf_spread: f64,
    /// RMS of height error, roll, pitch and yaw.
    pub tracking_rmse: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub spine: SpineMode,
    pub ccpdi: bool,
    pub config_sha256: String,
    pub nominal_height: f64,
    pub horizon: usize,
    pub gait_start: f64,
    #[serde(flatten)]
    pub status: RunStatus,
    pub duration: f64,
    pub ticks: usize,
    pub reach_clamps: usize,
    pub small_angle_violations: usize,
    pub qp_failures: usize,
    pub metrics: RunMetrics,
}

fn csv_error(file: &str, e: impl std::fmt::Display) -> Error {
    Error::Config { key: file.into(), message: e.to_string() }
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn parse(file: &str, field: Option<&str>) -> Result<f64> {
    let text = field.ok_or_else(|| csv_error(file, "missing column"))?;
    text.parse().map_err(|e| csv_error(file, format!("bad number {text:?}: {e}")))
}

fn parse_status(file: &str, text: Option<&str>) -> Result<QpStatus> {
    match text {
        Some("solved") => Ok(QpStatus::Solved),
        Some("max_iterations") => Ok(QpStatus::MaxIterations),
        Some("infeasible") => Ok(QpStatus::Infeasible),
        other => Err(csv_error(file, format!("unknown solver status {other:?}"))),
    }
}

impl RunLog {
    pub fn new(spine: SpineMode, ccpdi: bool, config_hash: String, nominal_height: f64, horizon: usize) -> Self {
        Self {
            spine,
            ccpdi,
            config_hash,
            nominal_height,
            horizon,
            gait_start: 0.0,
            status: RunStatus::Stable,
            duration: 0.0,
            states: Vec::new(),
            grf: Vec::new(),
            inertia: Vec::new(),
            reach_clamps: 0,
            small_angle_violations: 0,
            qp_failures: 0,
        }
    }

    pub fn state_header() -> Vec<String> {
        [
            "time", "x", "y", "height", "roll", "pitch", "yaw", "vx", "vy", "vz", "wx", "wy", "wz", "trunk_height",
            "spine_length", "spine_rate",
        ]
        .map(String::from)
        .to_vec()
    }

    pub fn grf_header() -> Vec<String> {
        let mut h: Vec<String> = ["time", "status", "iterations", "kkt", "objective"].map(String::from).to_vec();
        for leg in LEG_NAMES {
            for c in ["contact", "fx", "fy", "fz"] {
                h.push(format!("{leg}_{c}"));
            }
        }
        h
    }

    pub fn inertia_header(horizon: usize) -> Vec<String> {
        let mut h = vec!["time".to_string()];
        h.extend((0..horizon).map(|k| format!("predicted_yy_{k}")));
        h.extend((0..horizon).map(|k| format!("used_yy_{k}")));
        h
    }

    /// Writes the three CSVs and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path, metrics: &RunMetrics) -> Result<()> {
        fs::create_dir_all(dir)?;
        let open = |name: &str| csv::Writer::from_path(dir.join(name)).map_err(|e| csv_error(name, e));

        let mut w = open("states.csv")?;
        w.write_record(Self::state_header()).map_err(|e| csv_error("states.csv", e))?;
        for r in &self.states {
            let mut rec = vec![num(r.time)];
            rec.extend(r.position.iter().chain(&r.euler).chain(&r.linear_velocity).chain(&r.angular_velocity).map(|&x| num(x)));
            rec.extend([num(r.trunk_height), num(r.spine_length), num(r.spine_rate)]);
            w.write_record(rec).map_err(|e| csv_error("states.csv", e))?;
        }
        w.flush()?;

        let mut w = open("grf.csv")?;
        w.write_record(Self::grf_header()).map_err(|e| csv_error("grf.csv", e))?;
        for r in &self.grf {
            let mut rec = vec![num(r.time), r.status.name().into(), r.iterations.to_string(), num(r.kkt), num(r.objective)];
            for leg in 0..4 {
                rec.push(u8::from(r.contacts[leg]).to_string());
                rec.extend(r.forces[leg].iter().map(|&f| num(f)));
            }
            w.write_record(rec).map_err(|e| csv_error("grf.csv", e))?;
        }
        w.flush()?;

        let mut w = open("inertia.csv")?;
        w.write_record(Self::inertia_header(self.horizon)).map_err(|e| csv_error("inertia.csv", e))?;
        for r in &self.inertia {
            let mut rec = vec![num(r.time)];
            rec.extend(r.predicted.iter().chain(&r.used).map(|&x| num(x)));
            w.write_record(rec).map_err(|e| csv_error("inertia.csv", e))?;
        }
        w.flush()?;

        let summary = serde_json::to_string_pretty(&self.summary(metrics)).map_err(|e| csv_error("summary.json", e))?;
        fs::write(dir.join("summary.json"), summary + "\n")?;
        Ok(())
    }

    pub fn summary(&self, metrics: &RunMetrics) -> Summary {
        Summary {
            schema_version: SCHEMA_VERSION,
            spine: self.spine,
            ccpdi: self.ccpdi,
            config_sha256: self.config_hash.clone(),
            nominal_height: self.nominal_height,
            horizon: self.horizon,
            gait_start: self.gait_start,
            status: self.status.clone(),
            duration: self.duration,
            ticks: self.states.len(),
            reach_clamps: self.reach_clamps,
            small_angle_violations: self.small_angle_violations,
            qp_failures: self.qp_failures,
            metrics: metrics.clone(),
        }
    }

    /// Reloads a run written by [`RunLog::write`].
    pub fn read(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("summary.json"))
            .map_err(|e| csv_error("summary.json", format!("cannot read {}: {e}", dir.display())))?;
        let s: Summary = serde_json::from_str(&text).map_err(|e| csv_error("summary.json", e))?;
        if s.schema_version != SCHEMA_VERSION {
            return Err(csv_error("summary.json", format!("schema version {} unsupported", s.schema_version)));
        }
        let mut log = RunLog::new(s.spine, s.ccpdi, s.config_sha256, s.nominal_height, s.horizon);
        log.gait_start = s.gait_start;
        log.status = s.status;
        log.duration = s.duration;
        log.reach_clamps = s.reach_clamps;
        log.small_angle_violations = s.small_angle_violations;
        log.qp_failures = s.qp_failures;

        let rows = |name: &str, header: Vec<String>| -> Result<Vec<csv::StringRecord>> {
            let mut r = csv::Reader::from_path(dir.join(name)).map_err(|e| csv_error(name, e))?;
            let found: Vec<String> = r.headers().map_err(|e| csv_error(name, e))?.iter().map(String::from).collect();
            if found != header {
                return Err(csv_error(name, "unexpected columns"));
            }
            r.records().map(|x| x.map_err(|e| csv_error(name, e))).collect()
        };

        for rec in rows("states.csv", Self::state_header())? {
            let f = |i: usize| parse("states.csv", rec.get(i));
            let v3 = |i: usize| -> Result<[f64; 3]> { Ok([f(i)?, f(i + 1)?, f(i + 2)?]) };
            log.states.push(StateRow {
                time: f(0)?,
                position: v3(1)?,
                euler: v3(4)?,
                linear_velocity: v3(7)?,
                angular_velocity: v3(10)?,
                trunk_height: f(13)?,
                spine_length: f(14)?,
                spine_rate: f(15)?,
            });
        }
        for rec in rows("grf.csv", Self::grf_header())? {
            let f = |i: usize| parse("grf.csv", rec.get(i));
            let mut contacts = [false; 4];
            let mut forces = [[0.0; 3]; 4];
            for leg in 0..4 {
                let b = 5 + 4 * leg;
                contacts[leg] = f(b)? != 0.0;
                forces[leg] = [f(b + 1)?, f(b + 2)?, f(b + 3)?];
            }
            log.grf.push(GrfRow {
                time: f(0)?,
                status: parse_status("grf.csv", rec.get(1))?,
                iterations: f(2)? as usize,
                kkt: f(3)?,
                objective: f(4)?,
                contacts,
                forces,
            });
        }
        let n = log.horizon;
        for rec in rows("inertia.csv", Self::inertia_header(n))? {
            let f = |i: usize| parse("inertia.csv", rec.get(i));
            log.inertia.push(InertiaRow {
                time: f(0)?,
                predicted: (1..=n).map(f).collect::<Result<_>>()?,
                used: (n + 1..=2 * n).map(f).collect::<Result<_>>()?,
            });
        }
        Ok(log)
    }

    /// Trotting ticks before any failure.
    pub fn window(&self) -> (f64, f64) {
        (self.gait_start, self.status.failure_time().unwrap_or(f64::INFINITY))
    }

    /// Metrics over [`RunLog::window`].
    pub fn default_metrics(&self) -> Result<RunMetrics> {
        let (start, end) = self.window();
        self.metrics(start, end)
    }

    /// Metrics over ticks in `[start, end)`.
    pub fn metrics(&self, start: f64, end: f64) -> Result<RunMetrics> {
        let in_window = |t: f64| t >= start && t < end;
        let errors: Vec<f64> =
            prediction_errors(&self.inertia)?.into_iter().filter(|(t, _)| in_window(*t)).map(|(_, e)| e).collect();
        let leg_grf_means = leg_grf_means(&self.grf, start, end);
        let rows: Vec<&StateRow> = self.states.iter().filter(|r| in_window(r.time)).collect();
        let rms = |f: &dyn Fn(&StateRow) -> f64| {
            if rows.is_empty() {
                return f64::NAN;
            }
            (rows.iter().map(|r| f(r).powi(2)).sum::<f64>() / rows.len() as f64).sqrt()
        };
        Ok(RunMetrics {
            mean_prediction_error: mean(&errors),
            max_prediction_error: errors.iter().copied().fold(f64::NAN, f64::max),
            grf_spread: grf_spread(&leg_grf_means),
            leg_grf_means,
            tracking_rmse: [
                rms(&|r| r.position[2] - self.nominal_height),
                rms(&|r| r.euler[0]),
                rms(&|r| r.euler[1]),
                rms(&|r| r.euler[2]),
            ],
        })
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// `ε_yy(t)`: worst relative error over the horizon between the pitch inertia
/// handed to the MPC for step `k` and the one measured `k` ticks later.
/// Ticks whose horizon runs past the end of the log are skipped.
pub fn prediction_errors(rows: &[InertiaRow]) -> Result<Vec<(f64, f64)>> {
    if let Some(r) = rows.iter().find(|r| !(r.predicted.first().is_some_and(|&v| v > 0.0))) {
        return Err(Error::InvalidArgument(format!("nonpositive pitch inertia at t = {}", r.time)));
    }
    let mut out = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let n = row.used.len();
        if i + n > rows.len() {
            break;
        }
        let worst = (0..n)
            .map(|k| {
                let truth = rows[i + k].predicted[0];
                ((row.used[k] - truth) / truth).abs()
            })
            .fold(0.0, f64::max);
        out.push((row.time, worst));
    }
    Ok(out)
}

/// Mean planned force norm per leg over its stance ticks in `[start, end)`.
pub fn leg_grf_means(rows: &[GrfRow], start: f64, end: f64) -> [f64; 4] {
    [0, 1, 2, 3].map(|leg| {
        let norms: Vec<f64> = rows
            .iter()
            .filter(|r| r.time >= start && r.time < end && r.contacts[leg])
            .map(|r| r.forces[leg].iter().map(|f| f * f).sum::<f64>().sqrt())
            .collect();
        mean(&norms)
    })
}

/// Largest deviation of a leg mean from the all-leg mean.
pub fn grf_spread(means: &[f64; 4]) -> f64 {
    let all = means.iter().sum::<f64>() / 4.0;
    means.iter().map(|m| (m - all).abs()).fold(0.0, f64::max)
}
