//! Brute-force reference implementations shared by the integration and
//! acceptance tests. Nothing here calls the inertia-composition code it is
//! used to check; only the spatial primitives are shared.

#![allow(dead_code)]

use ccpdi::deformable::{DeformableBody, SubBodyParams, SubBodyState};
use ccpdi::mpc::{CentroidalState, FootholdPlan, MpcConfig, MpcProblem, MpcWeights};
use ccpdi::sim::{Plant, SimState};
use ccpdi::spatial::{exp_twist, skew, Rotation3, Transform3, Twist};
use ccpdi::tree::{DeformableTree, JointModel, JointState, TreeLink};
use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Matrix6, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn max_abs(m: &Matrix6<f64>) -> f64 {
    m.abs().max()
}

pub fn rel_err6(a: &Matrix6<f64>, reference: &Matrix6<f64>) -> f64 {
    (a - reference).abs().max() / reference.abs().max().max(1e-300)
}

// ---------------------------------------------------------------- random models

pub fn random_unit(r: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn random_vec(r: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
    Vector3::new(r.gen_range(-scale..scale), r.gen_range(-scale..scale), r.gen_range(-scale..scale))
}

pub fn random_rotation(r: &mut ChaCha8Rng) -> Rotation3<f64> {
    Rotation3::from_scaled_axis(&(random_unit(r) * r.gen_range(0.0..3.0)))
}

pub fn random_transform(r: &mut ChaCha8Rng, reach: f64) -> Transform3<f64> {
    Transform3::new(random_rotation(r), random_vec(r, reach))
}

/// Twist with `|ω| ≤ max_w` and `|v| ≤ max_v`.
pub fn random_twist(r: &mut ChaCha8Rng, max_w: f64, max_v: f64) -> Twist<f64> {
    Twist::new(random_unit(r) * r.gen_range(0.0..max_w), random_unit(r) * r.gen_range(0.0..max_v))
}

pub fn random_params(r: &mut ChaCha8Rng) -> SubBodyParams<f64> {
    let mass = r.gen_range(0.2..3.0);
    let size = Vector3::new(r.gen_range(0.02..0.4), r.gen_range(0.02..0.4), r.gen_range(0.02..0.4));
    let k = mass / 12.0;
    let diag = Vector3::new(
        k * (size.y * size.y + size.z * size.z),
        k * (size.x * size.x + size.z * size.z),
        k * (size.x * size.x + size.y * size.y),
    );
    let rot = random_rotation(r);
    let inertia = rot.matrix() * Matrix3::from_diagonal(&diag) * rot.matrix().transpose();
    let inertia = (inertia + inertia.transpose()) * 0.5;
    SubBodyParams::new(mass, random_vec(r, 0.15), inertia).unwrap()
}

/// Body with `n` sub-bodies; non-anchor sub-bodies get random poses and twists.
pub fn random_body(r: &mut ChaCha8Rng, n: usize, max_w: f64, max_v: f64) -> DeformableBody<f64> {
    let params = (0..n).map(|_| random_params(r)).collect();
    let mut states = vec![SubBodyState::anchor()];
    for _ in 1..n {
        let twist = if max_w == 0.0 && max_v == 0.0 { Twist::zero() } else { random_twist(r, max_w, max_v) };
        states.push(SubBodyState::new(random_transform(r, 0.3), twist));
    }
    DeformableBody::new(params, states).unwrap()
}

pub fn random_joint(r: &mut ChaCha8Rng) -> (JointModel<f64>, JointState<f64>) {
    let parent_mount = random_transform(r, 0.3);
    let child_mount = random_transform(r, 0.1);
    let axis = random_unit(r);
    let joint = if r.gen_bool(0.7) {
        JointModel::revolute(axis, parent_mount, child_mount)
    } else {
        JointModel::prismatic(axis, parent_mount, child_mount)
    };
    let state = JointState::single(r.gen_range(-1.5..1.5), r.gen_range(-2.0..2.0));
    (joint, state)
}

/// Random tree of `bodies` bodies with up to `max_sub` sub-bodies each.
pub fn random_tree(r: &mut ChaCha8Rng, bodies: usize, max_sub: usize, max_w: f64, max_v: f64) -> DeformableTree<f64> {
    let root_twist = random_twist(r, 1.0, 1.0);
    let n_root = r.gen_range(1..=max_sub);
    let mut tree = DeformableTree::new(random_body(r, n_root, max_w, max_v), root_twist);
    for i in 1..bodies {
        let n = r.gen_range(1..=max_sub);
        let body = random_body(r, n, max_w, max_v);
        let parent = r.gen_range(0..i);
        let parent_sub_body = r.gen_range(0..tree.body(parent).len());
        let (joint, state) = random_joint(r);
        tree.add_body(body, TreeLink { parent, parent_sub_body, joint, state }).unwrap();
    }
    tree
}

// ---------------------------------------------------------------- SE(3) oracles

/// 4×4 se(3) matrix of a twist.
pub fn hat(v: &Twist<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&v.angular));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&v.linear);
    m
}

/// Frame pose after holding body twist `v` for `dt`, integrating `Ṫ = T [V]` with RK4.
pub fn integrate_constant_twist(v: &Twist<f64>, dt: f64, substeps: usize) -> Matrix4<f64> {
    let h = dt / substeps as f64;
    let a = hat(v);
    let mut t = Matrix4::identity();
    for _ in 0..substeps {
        let k1 = t * a;
        let k2 = (t + k1 * (h / 2.0)) * a;
        let k3 = (t + k2 * (h / 2.0)) * a;
        let k4 = (t + k3 * h) * a;
        t += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    t
}

/// Scaling-and-squaring Taylor exponential of a 4×4 matrix.
pub fn expm4(m: &Matrix4<f64>) -> Matrix4<f64> {
    let norm = m.abs().max();
    let mut squarings = 0;
    let mut scaled = *m;
    while scaled.abs().max() > 0.125 && squarings < 60 {
        scaled /= 2.0;
        squarings += 1;
    }
    let _ = norm;
    let mut term = Matrix4::identity();
    let mut sum = Matrix4::identity();
    for n in 1..30 {
        term = term * scaled / n as f64;
        sum += term;
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}

/// Matrix logarithm of a rigid transform as a twist `[φ; ρ]` (trace-based branch).
pub fn log_se3(t: &Matrix4<f64>) -> Twist<f64> {
    let r = t.fixed_view::<3, 3>(0, 0).into_owned();
    let p = t.fixed_view::<3, 1>(0, 3).into_owned();
    let cos = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let angle = cos.acos();
    if angle < 1e-12 {
        return Twist::new(Vector3::zeros(), p);
    }
    let w_hat = (r - r.transpose()) * (angle / (2.0 * angle.sin()));
    let w = Vector3::new(w_hat[(2, 1)], w_hat[(0, 2)], w_hat[(1, 0)]);
    let k = skew(&w);
    let a = angle;
    let v_inv = Matrix3::identity() - k * 0.5 + k * k * ((1.0 - a * a.sin() / (2.0 * (1.0 - a.cos()))) / (a * a));
    Twist::new(w, v_inv * p)
}

pub fn homogeneous(t: &Transform3<f64>) -> Matrix4<f64> {
    t.to_homogeneous()
}

// ---------------------------------------------------------------- particle clouds

/// Point masses standing in for a rigid sub-body.
#[derive(Clone, Debug)]
pub struct ParticleCloud {
    pub particles: Vec<(f64, Vector3<f64>)>,
}

impl ParticleCloud {
    /// `n` equal particles whose mass, CoM and second moments reproduce `p` exactly.
    pub fn matching(p: &SubBodyParams<f64>, n: usize, r: &mut ChaCha8Rng) -> Self {
        let raw: Vec<Vector3<f64>> = (0..n).map(|_| random_vec(r, 1.0)).collect();
        let mean = raw.iter().fold(Vector3::zeros(), |a, x| a + x) / n as f64;
        let centered: Vec<Vector3<f64>> = raw.iter().map(|x| x - mean).collect();
        let cov = centered.iter().fold(Matrix3::zeros(), |a, x| a + x * x.transpose()) / n as f64;
        // I_cm = m (tr(Σ) 1 − Σ)  ⇒  Σ = (tr(I_cm)/2 · 1 − I_cm) / m.
        let target = (Matrix3::identity() * (p.rot_inertia.trace() / 2.0) - p.rot_inertia) / p.mass;
        let map = sqrt_psd(&target) * inv_sqrt_pd(&cov);
        let w = p.mass / n as f64;
        let particles = centered.iter().map(|x| (w, map * x + p.com)).collect();
        Self { particles }
    }

    /// Uniform Monte Carlo samples of a solid box centered on the origin.
    pub fn solid_box(mass: f64, size: Vector3<f64>, n: usize, r: &mut ChaCha8Rng) -> Self {
        let w = mass / n as f64;
        let particles = (0..n)
            .map(|_| {
                let x = Vector3::new(
                    r.gen_range(-0.5..0.5) * size.x,
                    r.gen_range(-0.5..0.5) * size.y,
                    r.gen_range(-0.5..0.5) * size.z,
                );
                (w, x)
            })
            .collect();
        Self { particles }
    }

    pub fn transformed(&self, t: &Transform3<f64>) -> Self {
        Self { particles: self.particles.iter().map(|(m, x)| (*m, t.transform_point(x))).collect() }
    }

    pub fn mass(&self) -> f64 {
        self.particles.iter().map(|(m, _)| m).sum()
    }
}

fn sqrt_psd(m: &Matrix3<f64>) -> Matrix3<f64> {
    let e = SymmetricEigen::new(*m);
    let d = e.eigenvalues.map(|x| x.max(0.0).sqrt());
    e.eigenvectors * Matrix3::from_diagonal(&d) * e.eigenvectors.transpose()
}

fn inv_sqrt_pd(m: &Matrix3<f64>) -> Matrix3<f64> {
    let e = SymmetricEigen::new(*m);
    let d = e.eigenvalues.map(|x| 1.0 / x.sqrt());
    e.eigenvectors * Matrix3::from_diagonal(&d) * e.eigenvectors.transpose()
}

/// Direct summation of point masses into the 6×6 block pattern.
pub fn cloud_inertia(cloud: &ParticleCloud) -> Matrix6<f64> {
    let mut mass = 0.0;
    let mut first = Vector3::zeros();
    let mut second = Matrix3::zeros();
    for (m, x) in &cloud.particles {
        mass += m;
        first += x * *m;
        second += (Matrix3::identity() * x.norm_squared() - x * x.transpose()) * *m;
    }
    assemble(mass, &first, &second)
}

/// Builds `[[J, S(h)], [S(h)ᵀ, m 1]]` from mass, first moment `h` and second moment `J` about the origin.
pub fn assemble(mass: f64, first: &Vector3<f64>, second: &Matrix3<f64>) -> Matrix6<f64> {
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(second);
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&skew(first));
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&skew(first).transpose());
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&(Matrix3::identity() * mass));
    out
}

/// Mass moments of a rigid sub-body placed at `pose`, accumulated into `(m, h, J)`.
fn accumulate_moments(
    p: &SubBodyParams<f64>,
    pose: &Transform3<f64>,
    acc: &mut (f64, Vector3<f64>, Matrix3<f64>),
) {
    let c = pose.transform_point(&p.com);
    let r = pose.rotation.matrix();
    let icm = r * p.rot_inertia * r.transpose();
    acc.0 += p.mass;
    acc.1 += c * p.mass;
    acc.2 += icm + (Matrix3::identity() * c.norm_squared() - c * c.transpose()) * p.mass;
}

/// Instantaneous body inertia by summing mass moments of posed sub-bodies.
pub fn body_inertia_by_moments(body: &DeformableBody<f64>, poses: &[Transform3<f64>]) -> Matrix6<f64> {
    let mut acc = (0.0, Vector3::zeros(), Matrix3::zeros());
    for (p, pose) in body.sub_params().iter().zip(poses) {
        accumulate_moments(p, pose, &mut acc);
    }
    assemble(acc.0, &acc.1, &acc.2)
}

/// Sub-body poses after holding their twists for `k` steps of `dt`.
pub fn rolled_sub_poses(body: &DeformableBody<f64>, dt: f64, k: usize) -> Vec<Transform3<f64>> {
    body.sub_states()
        .iter()
        .map(|s| {
            let step = exp_twist(&(s.twist * dt));
            (0..k).fold(s.pose, |acc, _| acc * step)
        })
        .collect()
}

/// Composite inertia of the whole tree in the root frame after rolling every
/// sub-body forward `k` steps with joints frozen, by flat summation of mass moments.
pub fn rollout_inertia(tree: &DeformableTree<f64>, dt: f64, k: usize) -> Matrix6<f64> {
    let n = tree.len();
    let sub_poses: Vec<Vec<Transform3<f64>>> = tree.bodies().iter().map(|b| rolled_sub_poses(b, dt, k)).collect();
    let mut body_in_root = vec![Transform3::identity(); n];
    for i in 1..n {
        let link = tree.link(i);
        let joint = link.joint.child_pose(&link.state.q).unwrap();
        body_in_root[i] = body_in_root[link.parent] * sub_poses[link.parent][link.parent_sub_body] * joint;
    }
    let mut acc = (0.0, Vector3::zeros(), Matrix3::zeros());
    for i in 0..n {
        for (p, pose) in tree.body(i).sub_params().iter().zip(&sub_poses[i]) {
            accumulate_moments(p, &(body_in_root[i] * *pose), &mut acc);
        }
    }
    assemble(acc.0, &acc.1, &acc.2)
}

/// Classic composite inertia of the frozen configuration (rollout with `k = 0`).
pub fn flat_sum_ccrbi(tree: &DeformableTree<f64>) -> Matrix6<f64> {
    rollout_inertia(tree, 1.0, 0)
}

/// Pose of body `i` in the root frame at the current configuration.
pub fn body_pose_in_root(tree: &DeformableTree<f64>, i: usize) -> Transform3<f64> {
    if i == 0 {
        return Transform3::identity();
    }
    let link = tree.link(i);
    let sub = tree.body(link.parent).sub_states()[link.parent_sub_body].pose;
    body_pose_in_root(tree, link.parent) * sub * link.joint.child_pose(&link.state.q).unwrap()
}

// ---------------------------------------------------------------- linear systems

/// `x(dt)` for `ẋ = A x + B u` with constant `u`, by RK4 with `substeps` steps.
pub fn rk4_linear(a: &DMatrix<f64>, b: &DMatrix<f64>, x0: &DVector<f64>, u: &DVector<f64>, dt: f64, substeps: usize) -> DVector<f64> {
    let h = dt / substeps as f64;
    let bu = b * u;
    let f = |x: &DVector<f64>| a * x + &bu;
    let mut x = x0.clone();
    for _ in 0..substeps {
        let k1 = f(&x);
        let k2 = f(&(&x + &k1 * (h / 2.0)));
        let k3 = f(&(&x + &k2 * (h / 2.0)));
        let k4 = f(&(&x + &k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    x
}

/// Minimum-norm contact forces that hold `mass` still against gravity with
/// feet at `offsets` from the centroid: solves `Σf = m g ẑ`, `Σ r×f = 0`.
pub fn static_force_allocation(mass: f64, g: f64, offsets: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let n = offsets.len();
    let mut a = DMatrix::zeros(6, 3 * n);
    for (i, r) in offsets.iter().enumerate() {
        a.view_mut((0, 3 * i), (3, 3)).copy_from(&Matrix3::identity());
        a.view_mut((3, 3 * i), (3, 3)).copy_from(&skew(r));
    }
    let mut rhs = DVector::zeros(6);
    rhs[2] = mass * g;
    let f = a.clone().pseudo_inverse(1e-12).unwrap() * rhs;
    (0..n).map(|i| Vector3::new(f[3 * i], f[3 * i + 1], f[3 * i + 2])).collect()
}

pub const FIXTURE_MASS: f64 = 10.0;
pub const FIXTURE_GRAVITY: f64 = -9.81;

pub fn fixture_inertia() -> Matrix3<f64> {
    Matrix3::new(0.06, 0.0, 0.002, 0.0, 0.16, 0.0, 0.002, 0.0, 0.19)
}

pub fn symmetric_stance() -> Vec<Vector3<f64>> {
    vec![
        Vector3::new(0.17, 0.11, -0.25),
        Vector3::new(0.17, -0.11, -0.25),
        Vector3::new(-0.17, 0.11, -0.25),
        Vector3::new(-0.17, -0.11, -0.25),
    ]
}

/// Four feet in stance around a robot resting at its reference.
pub fn static_mpc_problem(weights: MpcWeights) -> MpcProblem {
    let config = MpcConfig { weights, ..MpcConfig::default() };
    let n = config.horizon;
    let state = CentroidalState::at_rest(Vector3::new(0.0, 0.0, 0.25), 0.0, FIXTURE_GRAVITY);
    let plan = FootholdPlan::constant(n, &[true; 4], &symmetric_stance());
    MpcProblem::new(config, FIXTURE_MASS, &state, vec![state.to_vector(); n], plan, vec![fixture_inertia(); n]).unwrap()
}

// ---------------------------------------------------------------- simulator

/// Foot position derivative with respect to each joint coordinate, by
/// central differences of the forward kinematics.
pub fn finite_difference_leg_jacobian(plant: &Plant, state: &SimState, leg: usize) -> Matrix3<f64> {
    let h = 1e-6;
    let mut j = Matrix3::zeros();
    for (c, &link) in plant.leg_links[leg].iter().enumerate() {
        let mut plus = state.clone();
        plus.q[link] += h;
        let mut minus = state.clone();
        minus.q[link] -= h;
        let p = plant.foot_position(&plant.kinematics(&plus).unwrap(), leg);
        let m = plant.foot_position(&plant.kinematics(&minus).unwrap(), leg);
        j.set_column(c, &((p - m) / (2.0 * h)));
    }
    j
}

/// Minimum-norm foot forces that hold `state` still: the unactuated rows
/// (base and spine) are balanced by the feet alone.
pub fn supporting_forces(plant: &Plant, state: &SimState) -> Vec<Vector3<f64>> {
    let kin = plant.kinematics(state).unwrap();
    let bias = plant.bias_forces(state, &kin);
    let jt = stacked_foot_jacobian_transpose(plant, &kin);
    let mut passive: Vec<usize> = (0..6).collect();
    if let Some(d) = plant.spine_dof() {
        passive.push(d);
    }
    let a = DMatrix::from_fn(passive.len(), jt.ncols(), |r, c| jt[(passive[r], c)]);
    let b = DVector::from_fn(passive.len(), |r, _| bias[passive[r]]);
    let force = a.transpose() * (&a * a.transpose()).lu().solve(&b).unwrap();
    (0..plant.feet.len()).map(|f| Vector3::new(force[3 * f], force[3 * f + 1], force[3 * f + 2])).collect()
}

/// Joint torques that balance gravity at the current configuration while
/// the feet carry `forces`.
pub fn holding_torques(plant: &Plant, state: &SimState, forces: &[Vector3<f64>]) -> DVector<f64> {
    let mut still = state.clone();
    still.v.fill(0.0);
    let kin = plant.kinematics(&still).unwrap();
    let bias = plant.bias_forces(&still, &kin);
    let jt = stacked_foot_jacobian_transpose(plant, &kin);
    let f = DVector::from_iterator(3 * forces.len(), forces.iter().flat_map(|f| f.iter().copied()));
    let generalized = bias - jt * f;
    DVector::from_fn(plant.num_joints(), |i, _| generalized[6 + i])
}

fn stacked_foot_jacobian_transpose(plant: &Plant, kin: &ccpdi::sim::plant::Kinematics) -> DMatrix<f64> {
    let n = plant.num_dofs();
    let mut jt = DMatrix::zeros(n, 3 * plant.feet.len());
    for f in 0..plant.feet.len() {
        jt.view_mut((0, 3 * f), (n, 3)).copy_from(&plant.foot_jacobian(kin, f).transpose());
    }
    jt
}
