//! Deformable bodies as ordered sets of rigid sub-bodies, their instantaneous
//! spatial inertia, and predictive deformed inertia (PDI) over a horizon.
//!
//! Sub-body 0 carries the body's parent frame: its pose is the identity and
//! its twist is zero. Every other sub-body `j` has a pose `T_j` relative to
//! sub-body 0 and a twist `V_j` of its frame relative to sub-body 0, expressed
//! in its own frame. Prediction holds each `V_j` constant across the horizon.

use std::ops::{Add, AddAssign};

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::scalar::{lit, tol, Real};
use crate::spatial::{adjoint_of, exp_se3, skew, twist_to_screw, vee, AdjointTransform, Transform3, Twist};

/// Mass properties of one sub-body in its own frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubBodyParams<T: Real> {
    pub mass: T,
    /// Center of mass in the sub-body frame.
    pub com: Vector3<T>,
    /// Rotational inertia about the CoM, axes parallel to the sub-body frame.
    pub rot_inertia: Matrix3<T>,
}

impl<T: Real> SubBodyParams<T> {
    pub fn new(mass: T, com: Vector3<T>, rot_inertia: Matrix3<T>) -> Result<Self> {
        let p = Self { mass, com, rot_inertia };
        p.validate()?;
        Ok(p)
    }

    pub fn point_mass(mass: T, com: Vector3<T>) -> Result<Self> {
        Self::new(mass, com, Matrix3::zeros())
    }

    /// Solid box of the given edge lengths centered on `com`.
    pub fn uniform_box(mass: T, com: Vector3<T>, size: Vector3<T>) -> Result<Self> {
        let k = mass / lit(12.0);
        let (x2, y2, z2) = (size.x * size.x, size.y * size.y, size.z * size.z);
        let inertia = Matrix3::from_diagonal(&Vector3::new(k * (y2 + z2), k * (x2 + z2), k * (x2 + y2)));
        Self::new(mass, com, inertia)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > T::zero()) {
            return Err(Error::InvalidSubBody("mass must be positive".into()));
        }
        let i = &self.rot_inertia;
        let scale = i.abs().max().max(T::one());
        if (i - i.transpose()).abs().max() > tol::<T>(1.0e-12) * scale {
            return Err(Error::InvalidSubBody("rotational inertia is not symmetric".into()));
        }
        let eig = SymmetricEigen::new(*i).eigenvalues;
        let slack = tol::<T>(1.0e-12) * scale;
        if eig.iter().any(|&e| e < -slack) {
            return Err(Error::InvalidSubBody("rotational inertia is not positive semidefinite".into()));
        }
        for a in 0..3 {
            let (b, c) = ((a + 1) % 3, (a + 2) % 3);
            if eig[a] + eig[b] < eig[c] - slack {
                return Err(Error::InvalidSubBody("principal moments violate the triangle inequality".into()));
            }
        }
        Ok(())
    }
}

/// Live pose and twist of a sub-body relative to the body's parent frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubBodyState<T: Real> {
    pub pose: Transform3<T>,
    pub twist: Twist<T>,
}

impl<T: Real> SubBodyState<T> {
    pub fn new(pose: Transform3<T>, twist: Twist<T>) -> Self {
        Self { pose, twist }
    }

    pub fn anchor() -> Self {
        Self::new(Transform3::identity(), Twist::zero())
    }
}

/// 6×6 spatial inertia in angular-first layout,
/// `[[Ī, m S(r)], [m S(r)ᵀ, m 1]]` with `Ī = I_cm + m S(r) S(r)ᵀ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialInertia<T: Real>(Matrix6<T>);

impl<T: Real> SpatialInertia<T> {
    pub fn zero() -> Self {
        Self(Matrix6::zeros())
    }

    /// Assembles the block form from mass, CoM and rotational inertia about the CoM.
    pub fn from_mass_com(mass: T, com: &Vector3<T>, rot_inertia_cm: &Matrix3<T>) -> Self {
        let s = skew(com);
        let mut m = Matrix6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(rot_inertia_cm + s * s.transpose() * mass));
        m.fixed_view_mut::<3, 3>(0, 3).copy_from(&(s * mass));
        m.fixed_view_mut::<3, 3>(3, 0).copy_from(&(s.transpose() * mass));
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&(Matrix3::identity() * mass));
        Self(m)
    }

    pub fn point_mass(mass: T, position: &Vector3<T>) -> Self {
        Self::from_mass_com(mass, position, &Matrix3::zeros())
    }

    /// Wraps a raw matrix after checking the structural invariants.
    pub fn from_matrix(m: Matrix6<T>) -> Result<Self> {
        let i = Self(m);
        i.validate()?;
        Ok(i)
    }

    pub fn matrix(&self) -> &Matrix6<T> {
        &self.0
    }

    /// Mass read from the lower-right block.
    pub fn mass(&self) -> T {
        (self.0[(3, 3)] + self.0[(4, 4)] + self.0[(5, 5)]) / lit(3.0)
    }

    /// Center of mass read from the coupling block.
    pub fn com(&self) -> Vector3<T> {
        let m = self.mass();
        if m.is_zero() {
            return Vector3::zeros();
        }
        vee(&self.0.fixed_view::<3, 3>(0, 3).into_owned()) / m
    }

    /// Upper-left block `Ī` (rotational inertia about the frame origin).
    pub fn rotational_block(&self) -> Matrix3<T> {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Rotational inertia about the CoM, `Ī − m S(r) S(r)ᵀ`.
    pub fn rotational_about_com(&self) -> Matrix3<T> {
        let s = skew(&self.com());
        self.rotational_block() - s * s.transpose() * self.mass()
    }

    /// `Yᵀ I Y`: re-expresses the inertia in the frame `Y` maps twists into.
    pub fn congruence(&self, y: &AdjointTransform<T>) -> Self {
        Self(y.transpose_matrix() * self.0 * y.matrix())
    }

    pub fn kinetic_energy(&self, v: &Twist<T>) -> T {
        let x = v.to_vector();
        (x.transpose() * self.0 * x)[(0, 0)] * lit(0.5)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.0;
        let scale = m.abs().max().max(T::one());
        let eps = tol::<T>(1.0e-10) * scale;
        if (m - m.transpose()).abs().max() > eps {
            return Err(Error::InvalidInertia("not symmetric".into()));
        }
        let mass = self.mass();
        if !(mass > T::zero()) {
            return Err(Error::InvalidInertia("mass must be positive".into()));
        }
        let lower = m.fixed_view::<3, 3>(3, 3) - Matrix3::identity() * mass;
        if lower.abs().max() > eps {
            return Err(Error::InvalidInertia("lower-right block is not m·I".into()));
        }
        let upper = m.fixed_view::<3, 3>(0, 3).into_owned();
        if (upper + upper.transpose()).abs().max() > eps {
            return Err(Error::InvalidInertia("coupling block is not skew".into()));
        }
        let about_com = self.rotational_about_com();
        let eig = SymmetricEigen::new((about_com + about_com.transpose()) * lit::<T>(0.5)).eigenvalues;
        if eig.iter().any(|&e| e < -eps) {
            return Err(Error::InvalidInertia("rotational inertia about CoM is not PSD".into()));
        }
        Ok(())
    }
}

impl<T: Real> Add for SpatialInertia<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self(self.0 + rhs.0)
    }
}

impl<T: Real> AddAssign for SpatialInertia<T> {
    fn add_assign(&mut self, rhs: Self) {
        self.0 += rhs.0;
    }
}

/// Inertia of one sub-body expressed in its own frame.
pub fn sub_body_inertia<T: Real>(p: &SubBodyParams<T>) -> Result<SpatialInertia<T>> {
    p.validate()?;
    Ok(SpatialInertia::from_mass_com(p.mass, &p.com, &p.rot_inertia))
}

/// `X⁻ᵀ I X⁻¹`: moves an inertia from a child frame into the parent frame,
/// where `X` is the adjoint of the child pose in the parent.
pub fn transform_inertia<T: Real>(inertia: &SpatialInertia<T>, x: &AdjointTransform<T>) -> SpatialInertia<T> {
    inertia.congruence(&x.inverse())
}

/// Rigid or deformable body made of sub-bodies.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformableBody<T: Real> {
    sub_params: Vec<SubBodyParams<T>>,
    sub_states: Vec<SubBodyState<T>>,
}

impl<T: Real> DeformableBody<T> {
    pub fn new(sub_params: Vec<SubBodyParams<T>>, sub_states: Vec<SubBodyState<T>>) -> Result<Self> {
        if sub_params.is_empty() {
            return Err(Error::InvalidBody("a body needs at least one sub-body".into()));
        }
        if sub_params.len() != sub_states.len() {
            return Err(Error::InvalidBody(format!(
                "{} sub-body parameter sets but {} states",
                sub_params.len(),
                sub_states.len()
            )));
        }
        for p in &sub_params {
            p.validate()?;
        }
        let b = Self { sub_params, sub_states };
        b.check_anchor(&b.sub_states[0])?;
        Ok(b)
    }

    /// Single sub-body at rest: an ordinary rigid body.
    pub fn rigid(params: SubBodyParams<T>) -> Result<Self> {
        Self::new(vec![params], vec![SubBodyState::anchor()])
    }

    fn check_anchor(&self, s: &SubBodyState<T>) -> Result<()> {
        if *s != SubBodyState::anchor() {
            return Err(Error::InvalidBody("sub-body 0 must have identity pose and zero twist".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sub_params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sub_params.is_empty()
    }

    pub fn sub_params(&self) -> &[SubBodyParams<T>] {
        &self.sub_params
    }

    pub fn sub_states(&self) -> &[SubBodyState<T>] {
        &self.sub_states
    }

    pub fn mass(&self) -> T {
        self.sub_params.iter().fold(T::zero(), |acc, p| acc + p.mass)
    }

    /// Updates the live state of sub-body `j`; the anchor stays fixed.
    pub fn set_sub_state(&mut self, j: usize, state: SubBodyState<T>) -> Result<()> {
        if j >= self.len() {
            return Err(Error::InvalidBody(format!("sub-body {j} out of range")));
        }
        if j == 0 {
            self.check_anchor(&state)?;
        }
        self.sub_states[j] = state;
        Ok(())
    }

    /// True when no sub-body moves relative to the anchor.
    pub fn is_rigid(&self) -> bool {
        self.sub_states.iter().all(|s| s.twist.is_zero())
    }
}

/// Sum of all sub-body inertias expressed in the body's parent frame.
pub fn instantaneous_body_inertia<T: Real>(b: &DeformableBody<T>) -> SpatialInertia<T> {
    b.sub_params
        .iter()
        .zip(&b.sub_states)
        .fold(SpatialInertia::zero(), |acc, (p, s)| {
            let local = SpatialInertia::from_mass_com(p.mass, &p.com, &p.rot_inertia);
            acc + local.congruence(&adjoint_of(&s.pose).inverse())
        })
}

/// Per-step PDI tensors and per-sub-body predictive adjoint transformations.
#[derive(Clone, Debug, PartialEq)]
pub struct PdiSchedule<T: Real> {
    inertias: Vec<SpatialInertia<T>>,
    /// `pats[j][k]`: adjoint mapping parent-frame twists into the predicted frame of sub-body `j`.
    pats: Vec<Vec<AdjointTransform<T>>>,
    dt: T,
}

impl<T: Real> PdiSchedule<T> {
    pub fn horizon(&self) -> usize {
        self.inertias.len()
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn inertia(&self, k: usize) -> &SpatialInertia<T> {
        &self.inertias[k]
    }

    pub fn inertias(&self) -> &[SpatialInertia<T>] {
        &self.inertias
    }

    pub fn pat(&self, sub_body: usize, k: usize) -> &AdjointTransform<T> {
        &self.pats[sub_body][k]
    }

    pub fn sub_body_count(&self) -> usize {
        self.pats.len()
    }
}

/// Predicts the body inertia `horizon` steps ahead with constant sub-body twists.
///
/// For each sub-body the one-step increment `exp([S]θ)` over `dt` gives the
/// incremental adjoint `X̃`; the PAT starts at `X⁻¹` and is advanced by
/// `X̃⁻¹` every step. The predicted sub-body inertia is `Y⁽ᵏ⁾ᵀ I Y⁽ᵏ⁾` and the
/// body inertia is the sum over sub-bodies.
pub fn compute_pdi<T: Real>(b: &DeformableBody<T>, dt: T, horizon: usize) -> Result<PdiSchedule<T>> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidArgument("dt must be positive".into()));
    }
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let mut inertias = vec![SpatialInertia::zero(); horizon];
    let mut pats = Vec::with_capacity(b.len());
    for (p, s) in b.sub_params.iter().zip(&b.sub_states) {
        let local = SpatialInertia::from_mass_com(p.mass, &p.com, &p.rot_inertia);
        let increment = adjoint_of(&exp_se3(&twist_to_screw(&s.twist, dt)));
        let piat = increment.inverse();
        let mut y = adjoint_of(&s.pose).inverse();
        let mut per_step = Vec::with_capacity(horizon);
        for slot in inertias.iter_mut() {
            *slot += local.congruence(&y);
            per_step.push(y);
            y = piat * y;
        }
        pats.push(per_step);
    }
    Ok(PdiSchedule { inertias, pats, dt })
}
