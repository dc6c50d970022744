//! Closed-loop trot experiment: configuration, the run loop and its fall checks.

use std::path::{Path, PathBuf};

use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mpc::{MpcConfig, QpStatus, StateVector, GRAVITY, POS};
use crate::spatial::{Rotation3, Transform3, Twist};

use super::control::{Controller, GaitSchedule, SwingConfig, TickRecord};
use super::log::{GrfRow, InertiaRow, RunLog, RunStatus, StateRow};
use super::plant::{step_simulation, Plant, SimState};
use super::robot::{RobotDescription, SpineMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub stiffness: Vec<f64>,
    pub rest_length: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { stiffness: vec![10.0, 20.0, 30.0, 40.0, 50.0], rest_length: vec![0.155, 0.165, 0.18, 0.195, 0.21] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Robot description file, relative to the experiment file.
    pub robot: Option<PathBuf>,
    pub spine: SpineMode,
    pub ccpdi: bool,
    pub duration: f64,
    pub seed: u64,
    pub dt: f64,
    /// Scale of the seeded initial-condition perturbation.
    pub perturbation: f64,
    pub spine_stiffness: Option<f64>,
    pub spine_rest_length: Option<f64>,
    pub output: Option<PathBuf>,
    pub gait: GaitSchedule,
    pub mpc: MpcConfig,
    pub swing: SwingConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            robot: None,
            spine: SpineMode::Compliant,
            ccpdi: true,
            duration: 20.0,
            seed: 0,
            dt: 1e-3,
            perturbation: 1.0,
            spine_stiffness: None,
            spine_rest_length: None,
            output: None,
            gait: GaitSchedule::default(),
            mpc: MpcConfig::default(),
            swing: SwingConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

fn config_error(key: &str, message: &str) -> Error {
    Error::Config { key: key.into(), message: message.into() }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        crate::error::parse_toml(text, "experiment")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error("experiment", &format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let (Some(robot), Some(dir)) = (&cfg.robot, path.parent()) {
            if robot.is_relative() {
                cfg.robot = Some(dir.join(robot));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(config_error("duration", "must be positive"));
        }
        if !(self.dt > 0.0 && self.dt <= 1e-3) {
            return Err(config_error("dt", "must lie in (0, 0.001]"));
        }
        if !(self.perturbation >= 0.0) {
            return Err(config_error("perturbation", "must be nonnegative"));
        }
        self.mpc.validate().map_err(|e| config_error("mpc", &e.to_string()))?;
        self.gait.validate()?;
        let ratio = self.mpc.dt / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return Err(config_error("mpc.dt", "must be a whole multiple of dt"));
        }
        let s = &self.swing;
        if !(s.height >= 0.0 && s.kp >= 0.0 && s.kd >= 0.0) {
            return Err(config_error("swing", "gains and height must be nonnegative"));
        }
        if self.spine_stiffness.is_some_and(|k| !(k > 0.0)) {
            return Err(config_error("spine_stiffness", "must be positive"));
        }
        if self.spine_rest_length.is_some_and(|l| !(l > 0.0)) {
            return Err(config_error("spine_rest_length", "must be positive"));
        }
        Ok(())
    }

    pub fn validate_sweep(&self) -> Result<()> {
        if self.sweep.stiffness.is_empty() {
            return Err(config_error("sweep.stiffness", "grid must not be empty"));
        }
        if self.sweep.rest_length.is_empty() {
            return Err(config_error("sweep.rest_length", "grid must not be empty"));
        }
        Ok(())
    }

    /// Robot description with the spine overrides applied.
    pub fn apply_overrides(&self, desc: &RobotDescription) -> RobotDescription {
        let mut d = desc.clone();
        if let Some(k) = self.spine_stiffness {
            d.spine.stiffness = k;
        }
        if let Some(l) = self.spine_rest_length {
            d.spine.rest_length = l;
        }
        d
    }

    /// SHA-256 over the resolved robot and experiment settings.
    pub fn hash(&self, desc: &RobotDescription) -> String {
        let mut cfg = self.clone();
        cfg.robot = None;
        cfg.output = None;
        let text = serde_json::json!({ "robot": self.apply_overrides(desc), "experiment": cfg }).to_string();
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn ticks_per_solve(&self) -> usize {
        (self.mpc.dt / self.dt).round() as usize
    }
}

/// Standing pose with feet just loaded, plus a small seeded perturbation.
pub fn initial_state(desc: &RobotDescription, plant: &Plant, perturbation: f64, rng: &mut ChaCha8Rng) -> Result<SimState> {
    let angles = desc.standing_joint_angles();
    let mut q = DVector::zeros(plant.num_joints());
    for links in &plant.leg_links {
        for (j, &l) in links.iter().enumerate() {
            q[l] = angles[j];
        }
    }
    if let Some(s) = plant.spine {
        q[s.link] = s.rest_length.clamp(s.min_length, s.max_length);
    }
    let mut state = plant.rest_state(Transform3::identity(), q);
    let kin = plant.kinematics(&state)?;
    let lowest = (0..plant.feet.len()).map(|f| plant.foot_position(&kin, f).z).fold(f64::INFINITY, f64::min);
    let sink = plant.total_mass() * plant.gravity.abs() / (plant.feet.len() as f64 * plant.contact.stiffness);
    state.base_pose.translation.z = -lowest - sink;

    let mut u = |scale: f64| perturbation * scale * rng.gen_range(-1.0..1.0);
    let (roll, pitch) = (u(0.01), u(0.01));
    state.base_pose.rotation = Rotation3::from_euler_zyx(roll, pitch, 0.0);
    let twist = Twist::new(Vector3::new(u(0.05), u(0.05), u(0.05)), Vector3::new(u(0.02), u(0.02), u(0.01)));
    for i in 0..3 {
        state.v[i] = twist.angular[i];
        state.v[3 + i] = twist.linear[i];
    }
    Ok(state)
}

/// Controller for `plant` regulating the unperturbed standing centroid height
/// with zero velocity and zero attitude.
pub fn controller_for<'a>(desc: &'a RobotDescription, plant: &'a Plant, cfg: &ExperimentConfig) -> Result<Controller<'a>> {
    let mut ctrl = Controller::new(desc, plant, cfg.spine, cfg.gait.clone(), cfg.mpc, cfg.swing.clone(), cfg.ccpdi);
    let nominal = initial_state(desc, plant, 0.0, &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut reference = StateVector::zeros();
    reference[POS + 2] = plant.center_of_mass(&plant.kinematics(&nominal)?).z;
    reference[GRAVITY] = plant.gravity;
    ctrl.reference = reference;
    Ok(ctrl)
}

fn fall_reason(desc: &RobotDescription, state: &SimState) -> Option<String> {
    let height = state.base_pose.translation.z;
    let pitch = state.base_pose.rotation.euler_zyx().y;
    if height < 0.5 * desc.stance_height {
        return Some(format!("trunk height {height:.3} m below half of nominal"));
    }
    if pitch.abs() > 1.0 {
        return Some(format!("pitch {pitch:.3} rad beyond 1 rad"));
    }
    None
}

fn record_tick(log: &mut RunLog, rec: &TickRecord, state: &SimState, ccpdi: bool) {
    let m = &rec.measurement;
    let c = &m.centroidal;
    let (spine_length, spine_rate) = m.spine.unwrap_or((f64::NAN, f64::NAN));
    log.states.push(StateRow {
        time: rec.time,
        position: c.position.into(),
        euler: [c.euler_zyx.x, c.euler_zyx.y, c.euler_zyx.z],
        linear_velocity: c.linear_velocity.into(),
        angular_velocity: c.angular_velocity.into(),
        trunk_height: state.base_pose.translation.z,
        spine_length,
        spine_rate,
    });
    let s = &rec.solution;
    let forces = s.first_forces();
    log.grf.push(GrfRow {
        time: rec.time,
        status: s.status,
        iterations: s.iterations,
        kkt: s.residuals.max(),
        objective: s.objective,
        contacts: rec.contacts,
        forces: [0, 1, 2, 3].map(|leg| forces[leg].into()),
    });
    let yy = |k: usize| rec.schedule.centered_inertias[k].rotational_block()[(1, 1)];
    let predicted: Vec<f64> = (0..rec.schedule.horizon()).map(yy).collect();
    let used = if ccpdi { predicted.clone() } else { vec![predicted[0]; predicted.len()] };
    log.inertia.push(InertiaRow { time: rec.time, predicted, used });
}

/// Runs one closed-loop trot and returns its log. Falls and divergence end
/// the run early and are reported in the status, not as errors.
pub fn run_experiment(desc: &RobotDescription, cfg: &ExperimentConfig) -> Result<RunLog> {
    cfg.validate()?;
    let desc = cfg.apply_overrides(desc);
    desc.validate()?;
    let plant = desc.build_plant(cfg.spine)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = initial_state(&desc, &plant, cfg.perturbation, &mut rng)?;

    let mut ctrl = controller_for(&desc, &plant, cfg)?;
    let nominal_height = ctrl.reference[POS + 2];
    let mut log = RunLog::new(cfg.spine, cfg.ccpdi, cfg.hash(&desc), nominal_height, cfg.mpc.horizon);
    log.gait_start = cfg.gait.start;
    let every = cfg.ticks_per_solve();
    let steps = (cfg.duration / cfg.dt).round() as usize;
    log.status = RunStatus::Stable;
    for step in 0..steps {
        let kin = plant.kinematics(&state)?;
        if step % every == 0 {
            let rec = ctrl.mpc_tick(&state, &kin)?;
            if !rec.measurement.centroidal.small_angle_valid() {
                log.small_angle_violations += 1;
            }
            if rec.solution.status != QpStatus::Solved {
                log.qp_failures += 1;
            }
            record_tick(&mut log, &rec, &state, cfg.ccpdi);
        }
        let m = ctrl.measure(&state, &kin);
        let tau = ctrl.torques(&state, &m);
        state = match step_simulation(&plant, &state, &tau, cfg.dt) {
            Ok(s) => s,
            Err(Error::Diverged { time, reason }) => {
                log.status = RunStatus::Diverged { time, reason };
                break;
            }
            Err(e) => return Err(e),
        };
        if let Some(reason) = fall_reason(&desc, &state) {
            log.status = RunStatus::Fell { time: state.time, reason };
            break;
        }
    }
    log.reach_clamps = ctrl.reach_clamps;
    log.duration = state.time;
    Ok(log)
}
