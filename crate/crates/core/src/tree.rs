//! Deformable multibody trees: joints, twist propagation through joints and
//! deforming sub-bodies, and centroidal composite predictive deformed inertia
//! (CCPDI) over a prediction horizon.
//!
//! Body 0 is the floating root. Every other body `i` hangs from sub-body
//! `ps(i)` of its parent `p(i) < i` through a joint whose configuration is
//! frozen over the horizon; only sub-body deformation is extrapolated.

use nalgebra::{DMatrix, Vector3};

use crate::deformable::{compute_pdi, DeformableBody, PdiSchedule, SpatialInertia};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spatial::{adjoint_of, exp_twist, AdjointTransform, Transform3, Twist};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JointKind {
    Revolute,
    Prismatic,
    /// Six-dof fictitious joint between the root and the world.
    Floating,
}

impl JointKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Revolute => "revolute",
            Self::Prismatic => "prismatic",
            Self::Floating => "floating",
        }
    }
}

/// Joint between a parent sub-body frame and a child body frame.
///
/// The child pose in the parent sub-body frame is
/// `parent_mount · exp([S₀]q₀) ⋯ exp([Sₙ]qₙ) · child_mount`
/// with the free modes `Sₘ` given in the joint frame.
#[derive(Clone, Debug, PartialEq)]
pub struct JointModel<T: Real> {
    pub kind: JointKind,
    pub modes: Vec<Twist<T>>,
    pub parent_mount: Transform3<T>,
    pub child_mount: Transform3<T>,
}

impl<T: Real> JointModel<T> {
    pub fn revolute(axis: Vector3<T>, parent_mount: Transform3<T>, child_mount: Transform3<T>) -> Self {
        Self {
            kind: JointKind::Revolute,
            modes: vec![Twist::new(axis.normalize(), Vector3::zeros())],
            parent_mount,
            child_mount,
        }
    }

    pub fn prismatic(axis: Vector3<T>, parent_mount: Transform3<T>, child_mount: Transform3<T>) -> Self {
        Self {
            kind: JointKind::Prismatic,
            modes: vec![Twist::new(Vector3::zeros(), axis.normalize())],
            parent_mount,
            child_mount,
        }
    }

    /// Rotations about x, y, z followed by translations along x, y, z.
    pub fn floating() -> Self {
        let mut modes = Vec::with_capacity(6);
        for a in 0..3 {
            modes.push(Twist::new(Vector3::ith(a, T::one()), Vector3::zeros()));
        }
        for a in 0..3 {
            modes.push(Twist::new(Vector3::zeros(), Vector3::ith(a, T::one())));
        }
        Self {
            kind: JointKind::Floating,
            modes,
            parent_mount: Transform3::identity(),
            child_mount: Transform3::identity(),
        }
    }

    pub fn dof(&self) -> usize {
        self.modes.len()
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.dof() {
            return Err(Error::JointDimension { kind: self.kind.name(), expected: self.dof(), got: n });
        }
        Ok(())
    }

    /// Pose of the child body frame in the parent sub-body frame.
    pub fn child_pose(&self, q: &[T]) -> Result<Transform3<T>> {
        self.check_dim(q.len())?;
        let motion = self
            .modes
            .iter()
            .zip(q)
            .fold(Transform3::identity(), |acc, (s, &qi)| acc * exp_twist(&(*s * qi)));
        Ok(self.parent_mount * motion * self.child_mount)
    }

    /// Free modes `Φ` expressed in the child body frame, one column per coordinate.
    pub fn free_modes(&self, q: &[T]) -> Result<DMatrix<T>> {
        self.check_dim(q.len())?;
        let n = self.dof();
        let mut phi = DMatrix::zeros(6, n);
        // Mode m sees the motion of the modes after it plus the child mount.
        let mut tail = self.child_mount;
        for m in (0..n).rev() {
            let col = adjoint_of(&tail).inverse().apply(&self.modes[m]).to_vector();
            phi.column_mut(m).copy_from(&col);
            tail = exp_twist(&(self.modes[m] * q[m])) * tail;
        }
        Ok(phi)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointState<T: Real> {
    pub q: Vec<T>,
    pub qdot: Vec<T>,
}

impl<T: Real> JointState<T> {
    pub fn new(q: Vec<T>, qdot: Vec<T>) -> Self {
        Self { q, qdot }
    }

    pub fn single(q: T, qdot: T) -> Self {
        Self::new(vec![q], vec![qdot])
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.qdot).all(|x| x.is_finite())
    }
}

/// Adjoint of the parent sub-body frame relative to the child body frame at `q`.
pub fn joint_adjoint<T: Real>(joint: &JointModel<T>, state: &JointState<T>) -> Result<AdjointTransform<T>> {
    Ok(adjoint_of(&joint.child_pose(&state.q)?).inverse())
}

fn joint_rate_twist<T: Real>(joint: &JointModel<T>, state: &JointState<T>) -> Result<Twist<T>> {
    joint.check_dim(state.qdot.len())?;
    let phi = joint.free_modes(&state.q)?;
    let v = phi * nalgebra::DVector::from_column_slice(&state.qdot);
    Ok(Twist::new(Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5])))
}

/// `ⁱV = ⁱX_p ᵖV + Φ q̇` across a joint hanging from a rigid parent.
pub fn propagate_twist_rigid<T: Real>(
    parent_twist: &Twist<T>,
    joint: &JointModel<T>,
    state: &JointState<T>,
) -> Result<Twist<T>> {
    let x = joint_adjoint(joint, state)?;
    Ok(x.apply(parent_twist) + joint_rate_twist(joint, state)?)
}

/// Propagates a parent body twist through a deforming parent sub-body and the joint.
///
/// `pat` is the step-`k` PAT of the parent sub-body the joint hangs from and
/// `sub_twist` that sub-body's own twist relative to the parent frame. Returns
/// the child twist and the step-`k` inter-body adjoint `ⁱX_p⁽ᵏ⁾ = ⁱX_ps(q) · Y⁽ᵏ⁾`.
pub fn propagate_twist_deformable<T: Real>(
    parent_twist: &Twist<T>,
    pat: &AdjointTransform<T>,
    sub_twist: &Twist<T>,
    joint: &JointModel<T>,
    state: &JointState<T>,
) -> Result<(Twist<T>, AdjointTransform<T>)> {
    let x_joint = joint_adjoint(joint, state)?;
    let sub_frame_twist = pat.apply(parent_twist) + *sub_twist;
    let child = x_joint.apply(&sub_frame_twist) + joint_rate_twist(joint, state)?;
    Ok((child, x_joint * *pat))
}

/// Connection of a non-root body to its parent.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeLink<T: Real> {
    pub parent: usize,
    pub parent_sub_body: usize,
    pub joint: JointModel<T>,
    pub state: JointState<T>,
}

/// Deformable multibody tree in topological order.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformableTree<T: Real> {
    bodies: Vec<DeformableBody<T>>,
    /// `links[i - 1]` connects body `i`.
    links: Vec<TreeLink<T>>,
    root_twist: Twist<T>,
}

impl<T: Real> DeformableTree<T> {
    pub fn new(root: DeformableBody<T>, root_twist: Twist<T>) -> Self {
        Self { bodies: vec![root], links: Vec::new(), root_twist }
    }

    /// Appends a body and returns its index.
    pub fn add_body(&mut self, body: DeformableBody<T>, link: TreeLink<T>) -> Result<usize> {
        let index = self.bodies.len();
        if link.parent >= index {
            return Err(Error::Topology(format!("parent {} of body {index} is not earlier in the order", link.parent)));
        }
        let parent_len = self.bodies[link.parent].len();
        if link.parent_sub_body >= parent_len {
            return Err(Error::Topology(format!(
                "body {index} hangs from sub-body {} but body {} has {parent_len}",
                link.parent_sub_body, link.parent
            )));
        }
        if link.joint.kind == JointKind::Floating {
            return Err(Error::Topology(format!("floating joint on non-root body {index}")));
        }
        link.joint.check_dim(link.state.q.len())?;
        link.joint.check_dim(link.state.qdot.len())?;
        self.bodies.push(body);
        self.links.push(link);
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.bodies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bodies.is_empty()
    }

    pub fn bodies(&self) -> &[DeformableBody<T>] {
        &self.bodies
    }

    pub fn body(&self, i: usize) -> &DeformableBody<T> {
        &self.bodies[i]
    }

    pub fn body_mut(&mut self, i: usize) -> &mut DeformableBody<T> {
        &mut self.bodies[i]
    }

    /// Link of body `i ≥ 1`.
    pub fn link(&self, i: usize) -> &TreeLink<T> {
        &self.links[i - 1]
    }

    pub fn set_joint_state(&mut self, i: usize, state: JointState<T>) -> Result<()> {
        let link = &mut self.links[i - 1];
        link.joint.check_dim(state.q.len())?;
        link.joint.check_dim(state.qdot.len())?;
        link.state = state;
        Ok(())
    }

    pub fn root_twist(&self) -> &Twist<T> {
        &self.root_twist
    }

    pub fn set_root_twist(&mut self, v: Twist<T>) {
        self.root_twist = v;
    }

    pub fn parent(&self, i: usize) -> usize {
        self.links[i - 1].parent
    }

    /// Bodies attached to sub-body `j` of body `i`.
    pub fn successors(&self, i: usize, j: usize) -> Vec<usize> {
        self.links
            .iter()
            .enumerate()
            .filter(|(_, l)| l.parent == i && l.parent_sub_body == j)
            .map(|(n, _)| n + 1)
            .collect()
    }

    pub fn mass(&self) -> T {
        self.bodies.iter().fold(T::zero(), |acc, b| acc + b.mass())
    }

    /// Re-checks the ordering invariants.
    pub fn validate(&self) -> Result<()> {
        for (n, link) in self.links.iter().enumerate() {
            let i = n + 1;
            if link.parent >= i {
                return Err(Error::Topology(format!("parent {} of body {i} is not earlier in the order", link.parent)));
            }
            if link.parent_sub_body >= self.bodies[link.parent].len() {
                return Err(Error::Topology(format!("invalid parent sub-body for body {i}")));
            }
        }
        Ok(())
    }

    /// Twist of every body in its own frame at the current instant.
    pub fn body_twists(&self) -> Result<Vec<Twist<T>>> {
        let mut twists = vec![self.root_twist; self.len()];
        for i in 1..self.len() {
            let link = self.link(i);
            let parent = &self.bodies[link.parent];
            let sub = parent.sub_states()[link.parent_sub_body];
            let pat = adjoint_of(&sub.pose).inverse();
            let (v, _) = propagate_twist_deformable(&twists[link.parent], &pat, &sub.twist, &link.joint, &link.state)?;
            twists[i] = v;
        }
        Ok(twists)
    }
}

/// Centroidal composite inertia over the horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct CcpdiSchedule<T: Real> {
    /// Composite inertia of the whole tree in the root frame, per step.
    pub root_inertias: Vec<SpatialInertia<T>>,
    /// Composite centroid in the root frame, per step.
    pub centroids: Vec<Vector3<T>>,
    /// Composite inertia in the center-body frame, per step.
    pub centered_inertias: Vec<SpatialInertia<T>>,
    /// Root twist seen from the step-0 center-body frame.
    pub center_twist: Twist<T>,
    pub dt: T,
}

impl<T: Real> CcpdiSchedule<T> {
    pub fn horizon(&self) -> usize {
        self.root_inertias.len()
    }

    pub fn mass(&self) -> T {
        self.root_inertias[0].mass()
    }
}

/// PDI schedules of every body, in body order.
pub fn compute_pdi_all<T: Real>(tree: &DeformableTree<T>, dt: T, horizon: usize) -> Result<Vec<PdiSchedule<T>>> {
    tree.bodies.iter().map(|b| compute_pdi(b, dt, horizon)).collect()
}

/// Leaf-to-root composition of predicted inertias for every step of the horizon.
pub fn compute_ccpdi<T: Real>(tree: &DeformableTree<T>, dt: T, horizon: usize) -> Result<CcpdiSchedule<T>> {
    tree.validate()?;
    let pdis = compute_pdi_all(tree, dt, horizon)?;
    let joint_adjoints = tree
        .links
        .iter()
        .map(|l| joint_adjoint(&l.joint, &l.state))
        .collect::<Result<Vec<_>>>()?;

    let mut root_inertias = Vec::with_capacity(horizon);
    let mut centroids = Vec::with_capacity(horizon);
    let mut centered_inertias = Vec::with_capacity(horizon);
    let mut center_twist = Twist::zero();

    for k in 0..horizon {
        let mut composite: Vec<SpatialInertia<T>> = pdis.iter().map(|p| *p.inertia(k)).collect();
        for i in (1..tree.len()).rev() {
            let link = tree.link(i);
            let x = joint_adjoints[i - 1] * *pdis[link.parent].pat(link.parent_sub_body, k);
            let contribution = composite[i].congruence(&x);
            composite[link.parent] += contribution;
        }
        let root = composite[0];
        let centroid = root.com();
        let to_center = adjoint_of(&Transform3::from_translation(centroid));
        let centered = root.congruence(&to_center);
        if k == 0 {
            center_twist = to_center.inverse().apply(&tree.root_twist);
        }
        root_inertias.push(root);
        centroids.push(centroid);
        centered_inertias.push(centered);
    }

    Ok(CcpdiSchedule { root_inertias, centroids, centered_inertias, center_twist, dt })
}
