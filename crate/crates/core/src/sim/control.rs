//! Trot scheduling, swing-leg tracking, stance force mapping and the MPC tick.

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpc::{
    inject_ccpdi, solve_grf_qp, CentroidalState, FootholdPlan, MpcConfig, MpcProblem, MpcSolution, StateVector,
};
use crate::tree::{compute_ccpdi, CcpdiSchedule};

use super::plant::{Kinematics, Plant, SimState};
use super::robot::{RobotDescription, SpineMode, JOINTS_PER_LEG};

/// Periodic contact schedule with a standing phase before it starts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaitSchedule {
    pub period: f64,
    pub duty: f64,
    /// Phase offset of each leg, in periods.
    pub offsets: [f64; 4],
    /// All feet stay down until this time.
    pub start: f64,
}

impl Default for GaitSchedule {
    fn default() -> Self {
        Self::trot(0.3, 0.3)
    }
}

impl GaitSchedule {
    /// Diagonal pairs in anti-phase with duty factor one half.
    pub fn trot(period: f64, start: f64) -> Self {
        Self { period, duty: 0.5, offsets: [0.0, 0.5, 0.5, 0.0], start }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0) {
            return Err(Error::Config { key: "gait.period".into(), message: "must be positive".into() });
        }
        if !(self.duty > 0.0 && self.duty < 1.0) {
            return Err(Error::Config { key: "gait.duty".into(), message: "must lie in (0, 1)".into() });
        }
        if !(self.start >= 0.0) {
            return Err(Error::Config { key: "gait.start".into(), message: "must be nonnegative".into() });
        }
        Ok(())
    }

    /// Phase of `leg` in `[0, 1)`, or `None` while standing.
    pub fn phase(&self, leg: usize, t: f64) -> Option<f64> {
        if t < self.start {
            return None;
        }
        let p = (t - self.start) / self.period + self.offsets[leg];
        Some(p - p.floor())
    }

    pub fn in_stance(&self, leg: usize, t: f64) -> bool {
        self.phase(leg, t).is_none_or(|p| p < self.duty)
    }

    /// Swing progress in `[0, 1)` while the leg is in the air.
    pub fn swing_progress(&self, leg: usize, t: f64) -> Option<f64> {
        self.phase(leg, t).filter(|&p| p >= self.duty).map(|p| (p - self.duty) / (1.0 - self.duty))
    }

    pub fn swing_duration(&self) -> f64 {
        self.period * (1.0 - self.duty)
    }

    pub fn stance_duration(&self) -> f64 {
        self.period * self.duty
    }

    /// Time until `leg` next touches down; zero while it is in stance.
    pub fn time_to_touchdown(&self, leg: usize, t: f64) -> f64 {
        self.swing_progress(leg, t).map_or(0.0, |s| (1.0 - s) * self.swing_duration())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwingConfig {
    pub height: f64,
    pub kp: f64,
    pub kd: f64,
    /// Velocity feedback gain on the foothold, in seconds.
    pub velocity_gain: f64,
}

impl Default for SwingConfig {
    fn default() -> Self {
        Self { height: 0.06, kp: 400.0, kd: 8.0, velocity_gain: 0.05 }
    }
}

/// Desired foot position and velocity along a swing.
pub fn swing_reference(
    start: &Vector3<f64>,
    target: &Vector3<f64>,
    height: f64,
    progress: f64,
    duration: f64,
) -> (Vector3<f64>, Vector3<f64>) {
    let s = progress.clamp(0.0, 1.0);
    let blend = s * s * (3.0 - 2.0 * s);
    let blend_rate = 6.0 * s * (1.0 - s) / duration;
    let bump = 64.0 * (s * (1.0 - s)).powi(3);
    let bump_rate = 192.0 * (s * (1.0 - s)).powi(2) * (1.0 - 2.0 * s) / duration;
    let mut p = start + (target - start) * blend;
    p.z += height * bump;
    let mut v = (target - start) * blend_rate;
    v.z += height * bump_rate;
    (p, v)
}

/// Cartesian PD force mapped through the leg Jacobian transpose.
pub fn swing_torques(
    jacobian: &Matrix3<f64>,
    foot: &Vector3<f64>,
    foot_velocity: &Vector3<f64>,
    desired: &Vector3<f64>,
    desired_velocity: &Vector3<f64>,
    kp: f64,
    kd: f64,
) -> Vector3<f64> {
    jacobian.transpose() * ((desired - foot) * kp + (desired_velocity - foot_velocity) * kd)
}

/// Joint torques that make a stance foot push the ground with `-force`.
pub fn stance_torques(jacobian: &Matrix3<f64>, force: &Vector3<f64>) -> Vector3<f64> {
    -jacobian.transpose() * force
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwingPlan {
    pub start: Vector3<f64>,
    pub target: Vector3<f64>,
    /// The target was pulled back inside the leg's reach.
    pub clamped: bool,
}

/// Controller inputs measured from the plant.
#[derive(Clone, Debug)]
pub struct Measurement {
    pub centroidal: CentroidalState,
    pub feet: [Vector3<f64>; 4],
    pub foot_velocities: [Vector3<f64>; 4],
    /// Ground projection of the point below each hip pitch axis.
    pub hips: [Vector3<f64>; 4],
    pub leg_jacobians: [Matrix3<f64>; 4],
    pub spine: Option<(f64, f64)>,
}

/// Everything the MPC tick produced, for logging.
#[derive(Clone, Debug)]
pub struct TickRecord {
    pub time: f64,
    pub measurement: Measurement,
    pub schedule: CcpdiSchedule<f64>,
    pub contacts: [bool; 4],
    pub inertias_used: Vec<Matrix3<f64>>,
    pub solution: MpcSolution,
}

pub struct Controller<'a> {
    pub desc: &'a RobotDescription,
    pub plant: &'a Plant,
    pub mode: SpineMode,
    pub gait: GaitSchedule,
    pub mpc: MpcConfig,
    pub swing: SwingConfig,
    pub ccpdi: bool,
    pub reference: StateVector,
    pub forces: [Vector3<f64>; 4],
    pub swings: [Option<SwingPlan>; 4],
    pub reach_clamps: usize,
}

fn leg_matrix(plant: &Plant, kin: &Kinematics, leg: usize) -> Matrix3<f64> {
    let full = plant.foot_jacobian(kin, leg);
    let mut j = Matrix3::zeros();
    for (c, &link) in plant.leg_links[leg].iter().enumerate() {
        for r in 0..3 {
            j[(r, c)] = full[(r, 6 + link)];
        }
    }
    j
}

impl<'a> Controller<'a> {
    pub fn new(
        desc: &'a RobotDescription,
        plant: &'a Plant,
        mode: SpineMode,
        gait: GaitSchedule,
        mpc: MpcConfig,
        swing: SwingConfig,
        ccpdi: bool,
    ) -> Self {
        Self {
            desc,
            plant,
            mode,
            gait,
            mpc,
            swing,
            ccpdi,
            reference: StateVector::zeros(),
            forces: [Vector3::zeros(); 4],
            swings: [None, None, None, None],
            reach_clamps: 0,
        }
    }

    /// Composite predicted inertia schedule for the current configuration.
    pub fn schedule(&self, state: &SimState) -> Result<CcpdiSchedule<f64>> {
        let spine = self.plant.spine.map(|s| (state.q[s.link], state.v[6 + s.link]));
        let mut legs = [[(0.0, 0.0); JOINTS_PER_LEG]; 4];
        for (leg, links) in self.plant.leg_links.iter().enumerate() {
            for (j, &l) in links.iter().enumerate() {
                legs[leg][j] = (state.q[l], state.v[6 + l]);
            }
        }
        let tree = self.desc.prediction_tree(spine, &legs, state.base_twist())?;
        compute_ccpdi(&tree, self.mpc.dt, self.mpc.horizon)
    }

    /// Ground-truth centroidal state and per-leg kinematics.
    pub fn measure(&self, state: &SimState, kin: &Kinematics) -> Measurement {
        let spine = self.plant.spine.map(|s| (state.q[s.link], state.v[6 + s.link]));
        let pose = &state.base_pose;
        let rot = pose.rotation.matrix();
        let mass = self.plant.total_mass();
        let centroidal = CentroidalState {
            euler_zyx: pose.rotation.euler_zyx(),
            position: self.plant.center_of_mass(kin),
            angular_velocity: rot * state.base_twist().angular,
            linear_velocity: self.plant.linear_momentum(kin) / mass,
            gravity_z: self.plant.gravity,
        };

        let mut feet = [Vector3::zeros(); 4];
        let mut foot_velocities = [Vector3::zeros(); 4];
        let mut hips = [Vector3::zeros(); 4];
        let mut leg_jacobians = [Matrix3::zeros(); 4];
        for leg in 0..4 {
            feet[leg] = self.plant.foot_position(kin, leg);
            foot_velocities[leg] = self.plant.foot_velocity(kin, state, leg);
            leg_jacobians[leg] = leg_matrix(self.plant, kin, leg);
            let abad = &self.plant.links[self.plant.leg_links[leg][0]];
            let side = if leg % 2 == 0 { 1.0 } else { -1.0 };
            let local = abad.joint.parent_mount.transform_point(&Vector3::new(0.0, side * self.desc.leg.abad_length, 0.0));
            let mut h = kin.poses[abad.parent].transform_point(&local);
            h.z = 0.0;
            hips[leg] = h;
        }
        Measurement { centroidal, feet, foot_velocities, hips, leg_jacobians, spine }
    }

    /// Raibert-style foothold for the next touchdown of `leg`.
    pub fn foothold(&self, m: &Measurement, leg: usize, t: f64) -> (Vector3<f64>, bool) {
        let v = m.centroidal.linear_velocity;
        let v_des = Vector3::new(self.reference[crate::mpc::VEL], self.reference[crate::mpc::VEL + 1], 0.0);
        let vxy = Vector3::new(v.x, v.y, 0.0);
        let lead = self.gait.time_to_touchdown(leg, t) + 0.5 * self.gait.stance_duration();
        let mut target = m.hips[leg] + vxy * lead + (vxy - v_des) * self.swing.velocity_gain;
        target.z = 0.0;
        let reach = 0.5 * (self.desc.leg.thigh_length + self.desc.leg.shank_length);
        let offset = target - m.hips[leg];
        if offset.norm() > reach {
            target = m.hips[leg] + offset * (reach / offset.norm());
            return (target, true);
        }
        (target, false)
    }

    /// Builds and solves the QP for the current instant.
    pub fn mpc_tick(&mut self, state: &SimState, kin: &Kinematics) -> Result<TickRecord> {
        let m = self.measure(state, kin);
        let schedule = self.schedule(state)?;
        let t = state.time;
        let n = self.mpc.horizon;
        let p0 = m.centroidal.position;
        let mut contacts = Vec::with_capacity(n);
        let mut offsets = Vec::with_capacity(n);
        for k in 0..n {
            let tk = t + k as f64 * self.mpc.dt;
            let mut ck = vec![false; 4];
            let mut rk = vec![Vector3::zeros(); 4];
            for leg in 0..4 {
                ck[leg] = self.gait.in_stance(leg, tk);
                let same_stance = self.gait.in_stance(leg, t) && (0..=k).all(|j| self.gait.in_stance(leg, t + j as f64 * self.mpc.dt));
                let foot = if same_stance { m.feet[leg] } else { self.foothold(&m, leg, t).0 };
                rk[leg] = foot - p0;
            }
            contacts.push(ck);
            offsets.push(rk);
        }
        let plan = FootholdPlan { contacts, offsets };
        let inertias = inject_ccpdi(&schedule, m.centroidal.yaw(), self.ccpdi, n)?;
        let mut reference = self.reference;
        reference[crate::mpc::POS] = p0.x;
        reference[crate::mpc::POS + 1] = p0.y;
        let problem = MpcProblem::new(
            self.mpc,
            self.plant.total_mass(),
            &m.centroidal,
            vec![reference; n],
            plan,
            inertias.clone(),
        )?;
        let solution = solve_grf_qp(&problem);
        for leg in 0..4 {
            self.forces[leg] = solution.first_forces()[leg];
        }
        let contacts = [0, 1, 2, 3].map(|leg| self.gait.in_stance(leg, t));
        Ok(TickRecord { time: t, measurement: m, schedule, contacts, inertias_used: inertias, solution })
    }

    /// Joint torques for one simulation step.
    pub fn torques(&mut self, state: &SimState, m: &Measurement) -> DVector<f64> {
        let t = state.time;
        let mut tau = DVector::zeros(self.plant.num_joints());
        for leg in 0..4 {
            let j = &m.leg_jacobians[leg];
            let leg_tau = match self.gait.swing_progress(leg, t) {
                None => {
                    self.swings[leg] = None;
                    stance_torques(j, &self.forces[leg])
                }
                Some(progress) => {
                    let (target, clamped) = self.foothold(m, leg, t);
                    let plan = self.swings[leg].get_or_insert_with(|| SwingPlan { start: m.feet[leg], target, clamped });
                    plan.target = target;
                    if clamped && !plan.clamped {
                        self.reach_clamps += 1;
                    }
                    plan.clamped |= clamped;
                    let mut goal = plan.target;
                    goal.z = plan.start.z.min(0.0) - 0.002;
                    let start = plan.start;
                    let (p, v) = swing_reference(&start, &goal, self.swing.height, progress, self.gait.swing_duration());
                    swing_torques(j, &m.feet[leg], &m.foot_velocities[leg], &p, &v, self.swing.kp, self.swing.kd)
                }
            };
            for (c, &link) in self.plant.leg_links[leg].iter().enumerate() {
                tau[link] = leg_tau[c];
            }
        }
        tau
    }
}
