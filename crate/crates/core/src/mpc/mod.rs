//! Convex centroidal MPC over ground reaction forces.
//!
//! State layout (13 entries, world frame):
//!
//! ```text
//!   0..3   Θ = [roll, pitch, yaw]
//!   3..6   p      centroid position
//!   6..9   ω      angular velocity
//!   9..12  ṗ      centroid velocity
//!   12     g_z    gravity (negative up)
//! ```
//!
//! Continuous dynamics under small roll and pitch:
//!
//! ```text
//!   Θ̇ = R_z(ψ)ᵀ ω        ṗ = ṗ
//!   ω̇ = Î⁻¹ Σ rᵢ × fᵢ     p̈ = Σ fᵢ / m + g_z e_z
//! ```
//!
//! The gyroscopic term `ω × Îω` is dropped. The input stacks one force per
//! foot, `[f_0, f_1, …]`, and `rᵢ` runs from the centroid to foot `i`.

pub mod qp;

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector, Vector3};

use crate::error::{Error, Result};
use crate::spatial::{skew, Rotation3};
use crate::tree::CcpdiSchedule;
use qp::{DenseQp, LeastSquaresFactor};
pub use qp::{KktResiduals, QpSettings, QpStatus};

pub const STATE_DIM: usize = 13;
pub const THETA: usize = 0;
pub const POS: usize = 3;
pub const OMEGA: usize = 6;
pub const VEL: usize = 9;
pub const GRAVITY: usize = 12;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CentroidalState {
    pub euler_zyx: Vector3<f64>,
    pub position: Vector3<f64>,
    pub angular_velocity: Vector3<f64>,
    pub linear_velocity: Vector3<f64>,
    pub gravity_z: f64,
}

impl CentroidalState {
    pub fn at_rest(position: Vector3<f64>, yaw: f64, gravity_z: f64) -> Self {
        Self {
            euler_zyx: Vector3::new(0.0, 0.0, yaw),
            position,
            angular_velocity: Vector3::zeros(),
            linear_velocity: Vector3::zeros(),
            gravity_z,
        }
    }

    pub fn to_vector(&self) -> StateVector {
        let mut x = StateVector::zeros();
        x.fixed_rows_mut::<3>(THETA).copy_from(&self.euler_zyx);
        x.fixed_rows_mut::<3>(POS).copy_from(&self.position);
        x.fixed_rows_mut::<3>(OMEGA).copy_from(&self.angular_velocity);
        x.fixed_rows_mut::<3>(VEL).copy_from(&self.linear_velocity);
        x[GRAVITY] = self.gravity_z;
        x
    }

    pub fn from_vector(x: &StateVector) -> Self {
        Self {
            euler_zyx: x.fixed_rows::<3>(THETA).into_owned(),
            position: x.fixed_rows::<3>(POS).into_owned(),
            angular_velocity: x.fixed_rows::<3>(OMEGA).into_owned(),
            linear_velocity: x.fixed_rows::<3>(VEL).into_owned(),
            gravity_z: x[GRAVITY],
        }
    }

    pub fn yaw(&self) -> f64 {
        self.euler_zyx.z
    }

    /// Whether roll and pitch stay inside the range the linear model covers.
    pub fn small_angle_valid(&self) -> bool {
        let half_pi = std::f64::consts::FRAC_PI_2;
        self.euler_zyx.x.abs() < half_pi && self.euler_zyx.y.abs() < half_pi
    }
}

/// Contact flags and centroid-to-foot vectors per prediction step.
#[derive(Clone, Debug, PartialEq)]
pub struct FootholdPlan {
    pub contacts: Vec<Vec<bool>>,
    pub offsets: Vec<Vec<Vector3<f64>>>,
}

impl FootholdPlan {
    /// Same feet and contacts at every step.
    pub fn constant(horizon: usize, contacts: &[bool], offsets: &[Vector3<f64>]) -> Self {
        Self { contacts: vec![contacts.to_vec(); horizon], offsets: vec![offsets.to_vec(); horizon] }
    }

    pub fn horizon(&self) -> usize {
        self.contacts.len()
    }

    pub fn num_feet(&self) -> usize {
        self.contacts.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let nf = self.num_feet();
        if self.offsets.len() != self.contacts.len() {
            return Err(Error::InvalidArgument("foothold plan: contacts and offsets differ in length".into()));
        }
        for (c, r) in self.contacts.iter().zip(&self.offsets) {
            if c.len() != nf || r.len() != nf {
                return Err(Error::InvalidArgument("foothold plan: foot count changes across steps".into()));
            }
            if r.iter().any(|v| !v.iter().all(|x| x.is_finite())) {
                return Err(Error::InvalidArgument("foothold plan: non-finite offset".into()));
            }
        }
        Ok(())
    }
}

/// Diagonal tracking and force weights.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcWeights {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub euler: [f64; 3],
    pub angular_velocity: [f64; 3],
    pub force: [f64; 3],
}

impl Default for MpcWeights {
    fn default() -> Self {
        Self {
            position: [1e-5, 1e-5, 2e3],
            velocity: [1e3, 1e3, 1e2],
            euler: [1e2, 4e2, 1e2],
            angular_velocity: [1e1, 1e1, 1e1],
            force: [1e-8, 1e-8, 1e-8],
        }
    }
}

impl MpcWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.position, self.velocity, self.euler, self.angular_velocity, self.force];
        if all.iter().flatten().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("MPC weights must be finite and nonnegative".into()));
        }
        Ok(())
    }

    pub fn state_diagonal(&self) -> StateVector {
        let mut q = StateVector::zeros();
        for a in 0..3 {
            q[THETA + a] = self.euler[a];
            q[POS + a] = self.position[a];
            q[OMEGA + a] = self.angular_velocity[a];
            q[VEL + a] = self.velocity[a];
        }
        q
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    pub horizon: usize,
    pub dt: f64,
    pub friction: f64,
    /// Upper bound on normal force per foot; `None` picks `12 m |g_z| / N_f`.
    pub force_max: Option<f64>,
    pub weights: MpcWeights,
    pub solver: QpSettings,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self { horizon: 10, dt: 0.03, friction: 0.6, force_max: None, weights: MpcWeights::default(), solver: QpSettings::default() }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("MPC horizon must be positive".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidArgument("MPC dt must be positive".into()));
        }
        if !(self.friction > 0.0) {
            return Err(Error::InvalidArgument("friction coefficient must be positive".into()));
        }
        if let Some(f) = self.force_max {
            if !(f > 0.0) {
                return Err(Error::InvalidArgument("force_max must be positive".into()));
            }
        }
        self.weights.validate()
    }

    pub fn force_max_for(&self, mass: f64, gravity_z: f64, num_feet: usize) -> f64 {
        self.force_max.unwrap_or(4.0 * mass * gravity_z.abs() / num_feet.max(1) as f64 * 3.0)
    }
}

/// Continuous-time `(A_c, B_c)` for one prediction step.
pub fn build_continuous_dynamics(
    state: &CentroidalState,
    offsets: &[Vector3<f64>],
    mass: f64,
    inertia: &Matrix3<f64>,
) -> Result<(StateMatrix, DMatrix<f64>)> {
    if !(mass > 0.0) {
        return Err(Error::InvalidArgument("mass must be positive".into()));
    }
    let inv = inertia.cholesky().ok_or(Error::SingularInertia)?.inverse();
    let rz = Rotation3::rot_z(state.yaw());

    let mut a = StateMatrix::zeros();
    a.fixed_view_mut::<3, 3>(THETA, OMEGA).copy_from(&rz.matrix().transpose());
    a.fixed_view_mut::<3, 3>(POS, VEL).copy_from(&Matrix3::identity());
    a[(VEL + 2, GRAVITY)] = 1.0;

    let mut b = DMatrix::zeros(STATE_DIM, 3 * offsets.len());
    for (i, r) in offsets.iter().enumerate() {
        b.fixed_view_mut::<3, 3>(OMEGA, 3 * i).copy_from(&(inv * skew(r)));
        b.fixed_view_mut::<3, 3>(VEL, 3 * i).copy_from(&(Matrix3::identity() / mass));
    }
    Ok((a, b))
}

/// World-frame rotational inertia per prediction step.
///
/// Disabled, the step-0 tensor is reused for the whole horizon.
pub fn inject_ccpdi(schedule: &CcpdiSchedule<f64>, yaw: f64, enabled: bool, horizon: usize) -> Result<Vec<Matrix3<f64>>> {
    if schedule.horizon() < horizon {
        return Err(Error::InvalidArgument(format!(
            "inertia schedule covers {} steps, horizon needs {horizon}",
            schedule.horizon()
        )));
    }
    let rz = *Rotation3::rot_z(yaw).matrix();
    Ok((0..horizon)
        .map(|k| {
            let source = if enabled { k } else { 0 };
            let local = schedule.centered_inertias[source].rotational_block();
            let world = rz * local * rz.transpose();
            (world + world.transpose()) * 0.5
        })
        .collect())
}

/// Zero-order-hold discretization through the exponential of `[[A, B], [0, 0]]`.
pub fn discretize(a: &DMatrix<f64>, b: &DMatrix<f64>, dt: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument("dt must be positive".into()));
    }
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::InvalidArgument("dimension mismatch between A and B".into()));
    }
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(b * dt));
    let e = aug.exp();
    Ok((e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned()))
}

/// Everything needed to pose one QP.
#[derive(Clone, Debug, PartialEq)]
pub struct MpcProblem {
    pub config: MpcConfig,
    pub mass: f64,
    pub initial: StateVector,
    /// Targets for steps `1..=N`.
    pub reference: Vec<StateVector>,
    pub plan: FootholdPlan,
    pub inertias: Vec<Matrix3<f64>>,
    pub a_d: Vec<DMatrix<f64>>,
    pub b_d: Vec<DMatrix<f64>>,
    pub force_max: f64,
}

impl MpcProblem {
    pub fn new(
        config: MpcConfig,
        mass: f64,
        state: &CentroidalState,
        reference: Vec<StateVector>,
        plan: FootholdPlan,
        inertias: Vec<Matrix3<f64>>,
    ) -> Result<Self> {
        config.validate()?;
        plan.validate()?;
        let n = config.horizon;
        if plan.horizon() < n || reference.len() < n || inertias.len() < n {
            return Err(Error::InvalidArgument("plan, reference and inertia schedule must cover the horizon".into()));
        }
        let mut a_d = Vec::with_capacity(n);
        let mut b_d = Vec::with_capacity(n);
        for k in 0..n {
            let ik = &inertias[k];
            if (ik - ik.transpose()).amax() > 1e-9 * ik.amax() {
                return Err(Error::InvalidInertia(format!("step {k} inertia is not symmetric")));
            }
            let (ac, bc) = build_continuous_dynamics(state, &plan.offsets[k], mass, ik)?;
            let (ad, bd) = discretize(&DMatrix::from_iterator(STATE_DIM, STATE_DIM, ac.iter().copied()), &bc, config.dt)?;
            a_d.push(ad);
            b_d.push(bd);
        }
        let force_max = config.force_max_for(mass, state.gravity_z, plan.num_feet());
        Ok(Self { config, mass, initial: state.to_vector(), reference, plan, inertias, a_d, b_d, force_max })
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    /// QP variable index of each stance foot's force, per step.
    pub fn variable_map(&self) -> Vec<Vec<Option<usize>>> {
        let mut next = 0;
        (0..self.horizon())
            .map(|k| {
                self.plan.contacts[k]
                    .iter()
                    .map(|&c| {
                        c.then(|| {
                            next += 3;
                            next - 3
                        })
                    })
                    .collect()
            })
            .collect()
    }

    /// Condensed QP together with the affine map `x_k = free_k + Γ_k U`.
    pub fn condense(&self) -> CondensedQp {
        let n = self.horizon();
        let map = self.variable_map();
        let nv = map.iter().flatten().flatten().count() * 3;
        let nf = self.plan.num_feet();

        let mut free = Vec::with_capacity(n + 1);
        let mut gamma = Vec::with_capacity(n + 1);
        free.push(DVector::from_column_slice(self.initial.as_slice()));
        gamma.push(DMatrix::zeros(STATE_DIM, nv));
        for k in 0..n {
            let next_free = &self.a_d[k] * &free[k];
            let mut next_gamma = &self.a_d[k] * &gamma[k];
            for i in 0..nf {
                if let Some(v) = map[k][i] {
                    let cols = self.b_d[k].columns(3 * i, 3);
                    next_gamma.columns_mut(v, 3).copy_from(&cols);
                }
            }
            free.push(next_free);
            gamma.push(next_gamma);
        }

        let q = self.config.weights.state_diagonal();
        let r = self.config.weights.force;
        let rows = STATE_DIM * n + nv;
        let mut fm = DMatrix::zeros(rows, nv);
        let mut ft = DVector::zeros(rows);
        let root2 = std::f64::consts::SQRT_2;
        for k in 1..=n {
            let reference = &self.reference[k - 1];
            for s in 0..STATE_DIM {
                let w = (q[s]).sqrt() * root2;
                if w == 0.0 {
                    continue;
                }
                let row = STATE_DIM * (k - 1) + s;
                for c in 0..nv {
                    fm[(row, c)] = w * gamma[k][(s, c)];
                }
                ft[row] = -w * (free[k][s] - reference[s]);
            }
        }
        for v in 0..nv {
            fm[(STATE_DIM * n + v, v)] = (r[v % 3]).sqrt() * root2;
        }

        let mu = self.config.friction;
        let rows_per_foot = 6;
        let nc = nv / 3 * rows_per_foot;
        let mut a = DMatrix::zeros(nc, nv);
        let mut b = DVector::zeros(nc);
        for (f, v) in (0..nv).step_by(3).enumerate() {
            let r0 = f * rows_per_foot;
            let rows: [([f64; 3], f64); 6] = [
                ([1.0, 0.0, -mu], 0.0),
                ([-1.0, 0.0, -mu], 0.0),
                ([0.0, 1.0, -mu], 0.0),
                ([0.0, -1.0, -mu], 0.0),
                ([0.0, 0.0, -1.0], 0.0),
                ([0.0, 0.0, 1.0], self.force_max),
            ];
            for (j, (coef, bound)) in rows.iter().enumerate() {
                for c in 0..3 {
                    a[(r0 + j, v + c)] = coef[c];
                }
                b[r0 + j] = *bound;
            }
        }

        let qp = DenseQp::from_factor(LeastSquaresFactor { matrix: fm, target: ft }, a, b);
        CondensedQp { qp, free, gamma, map }
    }

    /// Forces per step and foot from a stacked QP vector.
    pub fn unpack(&self, map: &[Vec<Option<usize>>], u: &DVector<f64>) -> Vec<Vec<Vector3<f64>>> {
        map.iter()
            .map(|row| {
                row.iter().map(|v| v.map_or_else(Vector3::zeros, |v| Vector3::new(u[v], u[v + 1], u[v + 2]))).collect()
            })
            .collect()
    }

    pub fn pack(&self, map: &[Vec<Option<usize>>], forces: &[Vec<Vector3<f64>>]) -> DVector<f64> {
        let nv = map.iter().flatten().flatten().count() * 3;
        let mut u = DVector::zeros(nv);
        for (row, fk) in map.iter().zip(forces) {
            for (v, f) in row.iter().zip(fk) {
                if let Some(v) = v {
                    u.rows_mut(*v, 3).copy_from(f);
                }
            }
        }
        u
    }

    /// Propagates the discrete dynamics under the given per-step forces.
    pub fn rollout(&self, forces: &[Vec<Vector3<f64>>]) -> Vec<StateVector> {
        let mut x = DVector::from_column_slice(self.initial.as_slice());
        let mut out = vec![self.initial];
        for k in 0..self.horizon() {
            let mut u = DVector::zeros(3 * self.plan.num_feet());
            for (i, f) in forces[k].iter().enumerate() {
                u.rows_mut(3 * i, 3).copy_from(f);
            }
            x = &self.a_d[k] * &x + &self.b_d[k] * u;
            out.push(StateVector::from_column_slice(x.as_slice()));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CondensedQp {
    pub qp: DenseQp,
    pub free: Vec<DVector<f64>>,
    pub gamma: Vec<DMatrix<f64>>,
    pub map: Vec<Vec<Option<usize>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpcSolution {
    /// `forces[k][i]`: zero for feet in swing.
    pub forces: Vec<Vec<Vector3<f64>>>,
    /// States `x_0..=x_N` implied by the QP.
    pub predicted: Vec<StateVector>,
    pub multipliers: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub polished: bool,
    pub residuals: KktResiduals,
    pub objective: f64,
}

impl MpcSolution {
    pub fn first_forces(&self) -> &[Vector3<f64>] {
        self.forces.first().map_or(&[], Vec::as_slice)
    }
}

pub fn solve_grf_qp(problem: &MpcProblem) -> MpcSolution {
    let condensed = problem.condense();
    let sol = qp::solve(&condensed.qp, &problem.config.solver);
    let forces = problem.unpack(&condensed.map, &sol.x);
    let predicted = condensed
        .free
        .iter()
        .zip(&condensed.gamma)
        .map(|(f, g)| StateVector::from_column_slice((f + g * &sol.x).as_slice()))
        .collect();
    MpcSolution {
        forces,
        predicted,
        objective: condensed.qp.objective(&sol.x),
        multipliers: sol.multipliers,
        status: sol.status,
        iterations: sol.iterations,
        polished: sol.polished,
        residuals: sol.residuals,
    }
}

/// Optimality residuals of `solution.forces` with `solution.multipliers`.
pub fn kkt_check(problem: &MpcProblem, solution: &MpcSolution) -> KktResiduals {
    let condensed = problem.condense();
    let u = problem.pack(&condensed.map, &solution.forces);
    let z = if solution.multipliers.len() == condensed.qp.num_constraints() {
        solution.multipliers.clone()
    } else {
        DVector::zeros(condensed.qp.num_constraints())
    };
    qp::kkt_residuals(&condensed.qp, &u, &z)
}

/// Largest friction-pyramid or force-bound violation across the horizon.
pub fn friction_violation(problem: &MpcProblem, solution: &MpcSolution) -> f64 {
    let mu = problem.config.friction;
    let mut worst = 0.0f64;
    for (k, fk) in solution.forces.iter().enumerate() {
        for (i, f) in fk.iter().enumerate() {
            if problem.plan.contacts[k][i] {
                worst = worst
                    .max(f.x.abs() - mu * f.z)
                    .max(f.y.abs() - mu * f.z)
                    .max(-f.z)
                    .max(f.z - problem.force_max);
            } else {
                worst = worst.max(f.norm());
            }
        }
    }
    worst
}
