//! Floating-base rigid multibody plant with point-foot ground contact and an
//! optional prismatic spine.
//!
//! Generalized velocity `ν = [V₀; q̇]` stacks the base twist in the base frame
//! and one rate per joint. Body 0 is the base; link `i` is body `i + 1` and
//! owns coordinate `6 + i`.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3, Vector6};

use crate::deformable::SpatialInertia;
use crate::error::{Error, Result};
use crate::spatial::{adjoint_of, exp_twist, skew, Transform3, Twist};
use crate::tree::JointModel;

#[derive(Clone, Debug, PartialEq)]
pub struct PlantLink {
    pub name: String,
    /// Parent body index; 0 is the base.
    pub parent: usize,
    /// One-dof joint.
    pub joint: JointModel<f64>,
    /// Inertia in the link frame.
    pub inertia: SpatialInertia<f64>,
}

/// Contact point on a body.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FootPoint {
    pub body: usize,
    pub offset: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spine {
    /// Link index of the prismatic spine joint.
    pub link: usize,
    pub stiffness: f64,
    pub damping: f64,
    pub rest_length: f64,
    pub min_length: f64,
    pub max_length: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactParams {
    pub stiffness: f64,
    pub damping: f64,
    pub tangential_stiffness: f64,
    pub tangential_damping: f64,
    pub friction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plant {
    pub base: SpatialInertia<f64>,
    pub links: Vec<PlantLink>,
    pub feet: Vec<FootPoint>,
    /// Link indices of each leg's joints, hip to foot.
    pub leg_links: Vec<Vec<usize>>,
    pub spine: Option<Spine>,
    pub gravity: f64,
    pub joint_damping: f64,
    pub contact: ContactParams,
    /// Flat ground at `z = 0`; disabled for free-flight tests.
    pub ground: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub time: f64,
    pub base_pose: Transform3<f64>,
    pub q: DVector<f64>,
    /// `[V₀; q̇]`.
    pub v: DVector<f64>,
    /// Tangential spring anchor of each foot while in contact.
    pub anchors: Vec<Option<Vector3<f64>>>,
    /// Ground force on each foot during the last step, world frame.
    pub contact_forces: Vec<Vector3<f64>>,
}

impl SimState {
    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.v.iter()).all(|x| x.is_finite())
            && self.base_pose.translation.iter().all(|x| x.is_finite())
            && self.base_pose.rotation.matrix().iter().all(|x| x.is_finite())
    }

    pub fn base_twist(&self) -> Twist<f64> {
        Twist::new(
            Vector3::new(self.v[0], self.v[1], self.v[2]),
            Vector3::new(self.v[3], self.v[4], self.v[5]),
        )
    }
}

/// Poses, twists and Jacobians of every body at one state.
#[derive(Clone, Debug)]
pub struct Kinematics {
    pub poses: Vec<Transform3<f64>>,
    /// Motion transform from the parent frame into the link frame.
    pub parent_x: Vec<Matrix6<f64>>,
    pub modes: Vec<Vector6<f64>>,
    pub twists: Vec<Vector6<f64>>,
    /// Body-frame Jacobians, `V_b = J_b ν`.
    pub jacobians: Vec<DMatrix<f64>>,
}

fn cross_motion(v: &Vector6<f64>, u: &Vector6<f64>) -> Vector6<f64> {
    let (w, lin) = (v.fixed_rows::<3>(0), v.fixed_rows::<3>(3));
    let (uw, ul) = (u.fixed_rows::<3>(0), u.fixed_rows::<3>(3));
    let a = w.cross(&uw);
    let b = w.cross(&ul) + lin.cross(&uw);
    Vector6::new(a.x, a.y, a.z, b.x, b.y, b.z)
}

fn cross_force(v: &Vector6<f64>, f: &Vector6<f64>) -> Vector6<f64> {
    let (w, lin) = (v.fixed_rows::<3>(0), v.fixed_rows::<3>(3));
    let (n, fl) = (f.fixed_rows::<3>(0), f.fixed_rows::<3>(3));
    let a = w.cross(&n) + lin.cross(&fl);
    let b = w.cross(&fl);
    Vector6::new(a.x, a.y, a.z, b.x, b.y, b.z)
}

impl Plant {
    pub fn num_joints(&self) -> usize {
        self.links.len()
    }

    pub fn num_dofs(&self) -> usize {
        6 + self.links.len()
    }

    pub fn num_bodies(&self) -> usize {
        1 + self.links.len()
    }

    pub fn body_inertia(&self, body: usize) -> &SpatialInertia<f64> {
        if body == 0 {
            &self.base
        } else {
            &self.links[body - 1].inertia
        }
    }

    pub fn total_mass(&self) -> f64 {
        (0..self.num_bodies()).map(|b| self.body_inertia(b).mass()).sum()
    }

    pub fn spine_dof(&self) -> Option<usize> {
        self.spine.map(|s| 6 + s.link)
    }

    /// State at rest with the base at `base_pose` and joints at `q`.
    pub fn rest_state(&self, base_pose: Transform3<f64>, q: DVector<f64>) -> SimState {
        SimState {
            time: 0.0,
            base_pose,
            q,
            v: DVector::zeros(self.num_dofs()),
            anchors: vec![None; self.feet.len()],
            contact_forces: vec![Vector3::zeros(); self.feet.len()],
        }
    }

    pub fn kinematics(&self, state: &SimState) -> Result<Kinematics> {
        let nb = self.num_bodies();
        let n = self.num_dofs();
        let mut poses = Vec::with_capacity(nb);
        let mut parent_x = Vec::with_capacity(nb);
        let mut modes = Vec::with_capacity(nb);
        let mut twists = Vec::with_capacity(nb);
        let mut jacobians = Vec::with_capacity(nb);

        poses.push(state.base_pose);
        parent_x.push(Matrix6::identity());
        modes.push(Vector6::zeros());
        twists.push(state.v.fixed_rows::<6>(0).into_owned());
        let mut j0 = DMatrix::zeros(6, n);
        j0.view_mut((0, 0), (6, 6)).copy_from(&Matrix6::identity());
        jacobians.push(j0);

        for (i, link) in self.links.iter().enumerate() {
            let q = [state.q[i]];
            let pose = link.joint.child_pose(&q)?;
            let x = *adjoint_of(&pose).inverse().matrix();
            let phi = link.joint.free_modes(&q)?;
            let s = Vector6::from_iterator(phi.column(0).iter().copied());
            let p = link.parent;
            poses.push(poses[p] * pose);
            twists.push(x * twists[p] + s * state.v[6 + i]);
            let mut jac = DMatrix::from_column_slice(6, 6, x.as_slice()) * &jacobians[p];
            for r in 0..6 {
                jac[(r, 6 + i)] += s[r];
            }
            jacobians.push(jac);
            parent_x.push(x);
            modes.push(s);
        }
        Ok(Kinematics { poses, parent_x, modes, twists, jacobians })
    }

    /// `M(q) = Σ Jᵢᵀ Iᵢ Jᵢ`.
    pub fn mass_matrix(&self, kin: &Kinematics) -> DMatrix<f64> {
        let n = self.num_dofs();
        let mut m = DMatrix::zeros(n, n);
        for b in 0..self.num_bodies() {
            let j = &kin.jacobians[b];
            let ij = DMatrix::from_column_slice(6, 6, self.body_inertia(b).matrix().as_slice()) * j;
            m.gemm_tr(1.0, j, &ij, 1.0);
        }
        (&m + m.transpose()) * 0.5
    }

    /// Coriolis, centrifugal and gravity terms by recursive Newton–Euler.
    pub fn bias_forces(&self, state: &SimState, kin: &Kinematics) -> DVector<f64> {
        let nb = self.num_bodies();
        let g_body = state.base_pose.rotation.matrix().transpose() * Vector3::new(0.0, 0.0, -self.gravity);
        let mut acc = vec![Vector6::zeros(); nb];
        acc[0] = Vector6::new(0.0, 0.0, 0.0, g_body.x, g_body.y, g_body.z);
        let mut forces = vec![Vector6::zeros(); nb];
        for b in 0..nb {
            if b > 0 {
                let p = self.links[b - 1].parent;
                let qd = state.v[6 + b - 1];
                acc[b] = kin.parent_x[b] * acc[p] + cross_motion(&kin.twists[b], &(kin.modes[b] * qd));
            }
            let inertia = self.body_inertia(b).matrix();
            forces[b] = inertia * acc[b] + cross_force(&kin.twists[b], &(inertia * kin.twists[b]));
        }
        let mut tau = DVector::zeros(self.num_dofs());
        for b in (1..nb).rev() {
            tau[6 + b - 1] = kin.modes[b].dot(&forces[b]);
            let p = self.links[b - 1].parent;
            let back = kin.parent_x[b].transpose() * forces[b];
            forces[p] += back;
        }
        tau.rows_mut(0, 6).copy_from(&forces[0]);
        tau
    }

    pub fn foot_position(&self, kin: &Kinematics, foot: usize) -> Vector3<f64> {
        let f = self.feet[foot];
        kin.poses[f.body].transform_point(&f.offset)
    }

    /// World-frame point Jacobian of a foot.
    pub fn foot_jacobian(&self, kin: &Kinematics, foot: usize) -> DMatrix<f64> {
        let f = self.feet[foot];
        let j = &kin.jacobians[f.body];
        let ang = j.rows(0, 3);
        let lin = j.rows(3, 3);
        let local = lin - skew(&f.offset) * ang;
        let r = kin.poses[f.body].rotation.matrix();
        DMatrix::from_column_slice(3, 3, r.as_slice()) * local
    }

    pub fn foot_velocity(&self, kin: &Kinematics, state: &SimState, foot: usize) -> Vector3<f64> {
        let v = self.foot_jacobian(kin, foot) * &state.v;
        Vector3::new(v[0], v[1], v[2])
    }

    /// Whole-body center of mass in the world frame.
    pub fn center_of_mass(&self, kin: &Kinematics) -> Vector3<f64> {
        let mut sum = Vector3::zeros();
        for b in 0..self.num_bodies() {
            let i = self.body_inertia(b);
            sum += kin.poses[b].transform_point(&i.com()) * i.mass();
        }
        sum / self.total_mass()
    }

    /// Linear momentum in the world frame.
    pub fn linear_momentum(&self, kin: &Kinematics) -> Vector3<f64> {
        let mut sum = Vector3::zeros();
        for b in 0..self.num_bodies() {
            let h = self.body_inertia(b).matrix() * kin.twists[b];
            sum += kin.poses[b].rotation.rotate(&Vector3::new(h[3], h[4], h[5]));
        }
        sum
    }

    /// Kinetic plus gravitational, spine-spring and contact-spring energy.
    pub fn energy(&self, state: &SimState, kin: &Kinematics) -> f64 {
        let m = self.mass_matrix(kin);
        let kinetic = 0.5 * state.v.dot(&(&m * &state.v));
        let potential = -self.total_mass() * self.gravity * self.center_of_mass(kin).z;
        let mut springs = 0.0;
        if let Some(s) = self.spine {
            springs += 0.5 * s.stiffness * (state.q[s.link] - s.rest_length).powi(2);
        }
        if self.ground {
            for i in 0..self.feet.len() {
                let p = self.foot_position(kin, i);
                if p.z < 0.0 {
                    springs += 0.5 * self.contact.stiffness * p.z * p.z;
                }
                if let Some(a) = state.anchors[i] {
                    let d = Vector3::new(p.x - a.x, p.y - a.y, 0.0);
                    springs += 0.5 * self.contact.tangential_stiffness * d.norm_squared();
                }
            }
        }
        kinetic + potential + springs
    }
}

/// Contact force and its implicit stiffness/damping for one foot.
struct FootContact {
    force: Vector3<f64>,
    stiffness: Matrix3<f64>,
    damping: Matrix3<f64>,
    anchor: Option<Vector3<f64>>,
}

impl Plant {
    fn foot_contact(&self, p: &Vector3<f64>, v: &Vector3<f64>, anchor: Option<Vector3<f64>>) -> FootContact {
        let c = &self.contact;
        let none = FootContact { force: Vector3::zeros(), stiffness: Matrix3::zeros(), damping: Matrix3::zeros(), anchor: None };
        if !self.ground || p.z >= 0.0 {
            return none;
        }
        let normal = c.stiffness * (-p.z) - c.damping * v.z;
        if normal <= 0.0 {
            return none;
        }
        let anchor = anchor.unwrap_or(Vector3::new(p.x, p.y, 0.0));
        let tangential = Vector3::new(
            -c.tangential_stiffness * (p.x - anchor.x) - c.tangential_damping * v.x,
            -c.tangential_stiffness * (p.y - anchor.y) - c.tangential_damping * v.y,
            0.0,
        );
        let cap = c.friction * normal;
        let mut stiffness = Matrix3::from_diagonal(&Vector3::new(0.0, 0.0, c.stiffness));
        let mut damping = Matrix3::from_diagonal(&Vector3::new(0.0, 0.0, c.damping));
        let (tangential, anchor) = if tangential.norm() > cap {
            let capped = tangential * (cap / tangential.norm());
            (capped, Vector3::new(p.x + capped.x / c.tangential_stiffness, p.y + capped.y / c.tangential_stiffness, 0.0))
        } else {
            stiffness[(0, 0)] = c.tangential_stiffness;
            stiffness[(1, 1)] = c.tangential_stiffness;
            damping[(0, 0)] = c.tangential_damping;
            damping[(1, 1)] = c.tangential_damping;
            (tangential, anchor)
        };
        FootContact { force: tangential + Vector3::new(0.0, 0.0, normal), stiffness, damping, anchor: Some(anchor) }
    }
}

/// Advances the plant by one linearly implicit Euler step.
///
/// Springs and dampers of the contacts, the spine and the joints enter the
/// velocity solve implicitly; positions then integrate the new velocity.
/// `torques` holds one actuator torque per joint; the spine entry is ignored.
pub fn step_simulation(plant: &Plant, state: &SimState, torques: &DVector<f64>, dt: f64) -> Result<SimState> {
    let n = plant.num_dofs();
    if torques.len() != plant.num_joints() {
        return Err(Error::InvalidArgument(format!("expected {} torques, got {}", plant.num_joints(), torques.len())));
    }
    if !(dt > 0.0 && dt <= 1e-3) {
        return Err(Error::InvalidArgument(format!("simulation dt must be in (0, 1 ms], got {dt}")));
    }
    let kin = plant.kinematics(state)?;
    let mass = plant.mass_matrix(&kin);
    let mut force = -plant.bias_forces(state, &kin);
    let mut stiff = DMatrix::zeros(n, n);
    let mut damp = DMatrix::zeros(n, n);

    let spine_dof = plant.spine_dof();
    for i in 0..plant.num_joints() {
        let dof = 6 + i;
        if Some(dof) == spine_dof {
            continue;
        }
        force[dof] += torques[i] - plant.joint_damping * state.v[dof];
        damp[(dof, dof)] += plant.joint_damping;
    }
    if let Some(s) = plant.spine {
        let dof = 6 + s.link;
        force[dof] += -s.stiffness * (state.q[s.link] - s.rest_length) - s.damping * state.v[dof];
        stiff[(dof, dof)] += s.stiffness;
        damp[(dof, dof)] += s.damping;
    }

    let mut anchors = Vec::with_capacity(plant.feet.len());
    let mut contact_forces = Vec::with_capacity(plant.feet.len());
    for i in 0..plant.feet.len() {
        let p = plant.foot_position(&kin, i);
        let jac = plant.foot_jacobian(&kin, i);
        let vel = &jac * &state.v;
        let c = plant.foot_contact(&p, &Vector3::new(vel[0], vel[1], vel[2]), state.anchors[i]);
        if c.anchor.is_some() {
            force += jac.tr_mul(&DVector::from_column_slice(c.force.as_slice()));
            let k = DMatrix::from_column_slice(3, 3, c.stiffness.as_slice());
            let d = DMatrix::from_column_slice(3, 3, c.damping.as_slice());
            stiff += jac.tr_mul(&(k * &jac));
            damp += jac.tr_mul(&(d * &jac));
        }
        anchors.push(c.anchor);
        contact_forces.push(c.force);
    }

    let system = &mass + &damp * dt + &stiff * (dt * dt);
    let chol = system.cholesky().ok_or_else(|| Error::Diverged { time: state.time, reason: "mass matrix lost definiteness".into() })?;
    let rhs = &mass * &state.v + (&damp * &state.v + &force) * dt;
    let mut v = chol.solve(&rhs);

    let mut q = &state.q + v.rows(6, plant.num_joints()) * dt;
    if let Some(s) = plant.spine {
        let dof = 6 + s.link;
        let l = state.q[s.link];
        let next = l + dt * v[dof];
        let target = if next < s.min_length {
            Some(((s.min_length - l) / dt).max(0.0))
        } else if next > s.max_length {
            Some(((s.max_length - l) / dt).min(0.0))
        } else {
            None
        };
        if let Some(rate) = target {
            let mut e = DVector::zeros(n);
            e[dof] = 1.0;
            let w = chol.solve(&e);
            v += &w * ((rate - v[dof]) / w[dof]);
            q = &state.q + v.rows(6, plant.num_joints()) * dt;
        }
        q[s.link] = q[s.link].clamp(s.min_length, s.max_length);
    }

    let base_twist = Twist::new(Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5]));
    let mut base_pose = state.base_pose * exp_twist(&(base_twist * dt));
    base_pose.rotation = base_pose.rotation.renormalized();

    let next = SimState { time: state.time + dt, base_pose, q, v, anchors, contact_forces };
    if !next.is_finite() {
        return Err(Error::Diverged { time: next.time, reason: "non-finite state".into() });
    }
    Ok(next)
}
