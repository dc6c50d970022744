//! SE(3) algebra with angular-first twists.
//!
//! A [`Transform3`] `T = (R, p)` gives the pose of a child frame in a parent
//! frame. Its adjoint `Ad(T) = [[R, 0], [S(p)R, R]]` maps a twist expressed in
//! the child frame into the parent frame. Spatial inertias transform with the
//! matching congruence, see [`crate::deformable::SpatialInertia::congruence`].

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::scalar::{lit, tol, Real};

/// Below this rotational travel the exponential falls back to its series form.
pub const SMALL_ANGLE: f64 = 1.0e-9;

/// Skew-symmetric matrix `S(v)` with `S(v) w = v × w`.
pub fn skew<T: Real>(v: &Vector3<T>) -> Matrix3<T> {
    let z = T::zero();
    Matrix3::new(z, -v.z, v.y, v.z, z, -v.x, -v.y, v.x, z)
}

/// Inverse of [`skew`] applied to the antisymmetric part of `m`.
pub fn vee<T: Real>(m: &Matrix3<T>) -> Vector3<T> {
    let half = lit::<T>(0.5);
    Vector3::new(
        (m[(2, 1)] - m[(1, 2)]) * half,
        (m[(0, 2)] - m[(2, 0)]) * half,
        (m[(1, 0)] - m[(0, 1)]) * half,
    )
}

/// Proper rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation3<T: Real>(Matrix3<T>);

impl<T: Real> Rotation3<T> {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Checks `RᵀR = I` and `det R = +1`.
    pub fn from_matrix(m: Matrix3<T>) -> Result<Self> {
        let err = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det = m.determinant();
        let limit = tol::<T>(1.0e-10);
        if err > limit || (det - T::one()).abs() > limit {
            return Err(Error::InvalidRotation {
                orthonormality: nalgebra::try_convert(err).unwrap_or(f64::NAN),
                det: nalgebra::try_convert(det).unwrap_or(f64::NAN),
            });
        }
        Ok(Self(m))
    }

    /// Wraps a matrix the caller has already established to be a rotation.
    pub(crate) fn from_matrix_unchecked(m: Matrix3<T>) -> Self {
        Self(m)
    }

    /// Rodrigues formula for the rotation vector `phi` (axis times angle).
    pub fn from_scaled_axis(phi: &Vector3<T>) -> Self {
        let angle = phi.norm();
        let k = skew(phi);
        if angle < lit(SMALL_ANGLE) {
            return Self(Matrix3::identity() + k + k * k * lit::<T>(0.5));
        }
        let a = angle.sin() / angle;
        let b = (T::one() - angle.cos()) / (angle * angle);
        Self(Matrix3::identity() + k * a + k * k * b)
    }

    pub fn rot_x(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Self(Matrix3::new(o, z, z, z, c, -s, z, s, c))
    }

    pub fn rot_y(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Self(Matrix3::new(c, z, s, z, o, z, -s, z, c))
    }

    pub fn rot_z(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Self(Matrix3::new(c, -s, z, s, c, z, z, z, o))
    }

    /// `R = Rz(yaw) Ry(pitch) Rx(roll)`.
    pub fn from_euler_zyx(roll: T, pitch: T, yaw: T) -> Self {
        Self::rot_z(yaw) * Self::rot_y(pitch) * Self::rot_x(roll)
    }

    /// ZYX Euler angles `[roll, pitch, yaw]`.
    pub fn euler_zyx(&self) -> Vector3<T> {
        let m = &self.0;
        let pitch = (-m[(2, 0)]).max(-T::one()).min(T::one()).asin();
        let roll = m[(2, 1)].atan2(m[(2, 2)]);
        let yaw = m[(1, 0)].atan2(m[(0, 0)]);
        Vector3::new(roll, pitch, yaw)
    }

    pub fn matrix(&self) -> &Matrix3<T> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn rotate(&self, v: &Vector3<T>) -> Vector3<T> {
        self.0 * v
    }

    /// Re-orthonormalizes after long products.
    pub fn renormalized(&self) -> Self {
        let svd = self.0.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut m = u * vt;
        if m.determinant() < T::zero() {
            let mut u = u;
            u.column_mut(2).neg_mut();
            m = u * vt;
        }
        Self(m)
    }
}

impl<T: Real> Mul for Rotation3<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self(self.0 * rhs.0)
    }
}

/// Rigid transform: pose of a child frame expressed in its parent frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform3<T: Real> {
    pub rotation: Rotation3<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> Transform3<T> {
    pub fn new(rotation: Rotation3<T>, translation: Vector3<T>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Rotation3::identity(), Vector3::zeros())
    }

    pub fn from_translation(p: Vector3<T>) -> Self {
        Self::new(Rotation3::identity(), p)
    }

    pub fn from_rotation(r: Rotation3<T>) -> Self {
        Self::new(r, Vector3::zeros())
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.inverse();
        Self::new(rt, -(rt.rotate(&self.translation)))
    }

    /// Maps a point from child coordinates into parent coordinates.
    pub fn transform_point(&self, x: &Vector3<T>) -> Vector3<T> {
        self.rotation.rotate(x) + self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<T> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<T>) -> Result<Self> {
        let r = Rotation3::from_matrix(m.fixed_view::<3, 3>(0, 0).into_owned())?;
        Ok(Self::new(r, m.fixed_view::<3, 1>(0, 3).into_owned()))
    }
}

impl<T: Real> Mul for Transform3<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self::new(
            self.rotation * rhs.rotation,
            self.rotation.rotate(&rhs.translation) + self.translation,
        )
    }
}

/// Spatial velocity `[ω; v]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist<T: Real> {
    pub angular: Vector3<T>,
    pub linear: Vector3<T>,
}

impl<T: Real> Twist<T> {
    pub fn new(angular: Vector3<T>, linear: Vector3<T>) -> Self {
        Self { angular, linear }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn from_vector(v: &Vector6<T>) -> Self {
        Self::new(v.fixed_rows::<3>(0).into_owned(), v.fixed_rows::<3>(3).into_owned())
    }

    pub fn to_vector(&self) -> Vector6<T> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.angular);
        v.fixed_rows_mut::<3>(3).copy_from(&self.linear);
        v
    }

    pub fn is_zero(&self) -> bool {
        self.angular.iter().chain(self.linear.iter()).all(|x| x.is_zero())
    }

    pub fn is_finite(&self) -> bool {
        self.angular.iter().chain(self.linear.iter()).all(|x| x.is_finite())
    }

    /// Motion cross product `self ×ₘ other`.
    pub fn cross_motion(&self, other: &Self) -> Self {
        Self::new(
            self.angular.cross(&other.angular),
            self.angular.cross(&other.linear) + self.linear.cross(&other.angular),
        )
    }
}

impl<T: Real> Add for Twist<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.angular + rhs.angular, self.linear + rhs.linear)
    }
}

impl<T: Real> Sub for Twist<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.angular - rhs.angular, self.linear - rhs.linear)
    }
}

impl<T: Real> Neg for Twist<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.angular, -self.linear)
    }
}

impl<T: Real> Mul<T> for Twist<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.angular * s, self.linear * s)
    }
}

/// 6×6 adjoint of a rigid transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdjointTransform<T: Real>(Matrix6<T>);

impl<T: Real> AdjointTransform<T> {
    pub fn identity() -> Self {
        Self(Matrix6::identity())
    }

    /// `Ad(T) = [[R, 0], [S(p)R, R]]`.
    pub fn from_transform(t: &Transform3<T>) -> Self {
        let r = t.rotation.matrix();
        let mut m = Matrix6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
        m.fixed_view_mut::<3, 3>(3, 0).copy_from(&(skew(&t.translation) * r));
        Self(m)
    }

    /// Validates the block structure of an arbitrary 6×6 matrix.
    pub fn from_matrix(m: Matrix6<T>) -> Result<Self> {
        let t = Self(m).to_transform()?;
        let rebuilt = Self::from_transform(&t);
        let err = (rebuilt.0 - m).abs().max();
        if err > tol::<T>(1.0e-10) {
            return Err(Error::InvalidArgument(format!(
                "matrix lacks adjoint block structure (error {:e})",
                nalgebra::try_convert::<T, f64>(err).unwrap_or(f64::NAN)
            )));
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Matrix6<T> {
        &self.0
    }

    pub fn transpose_matrix(&self) -> Matrix6<T> {
        self.0.transpose()
    }

    /// Recovers `(R, p)` from the blocks.
    pub fn to_transform(&self) -> Result<Transform3<T>> {
        let r = Rotation3::from_matrix(self.0.fixed_view::<3, 3>(0, 0).into_owned())?;
        let sp = self.0.fixed_view::<3, 3>(3, 0) * r.matrix().transpose();
        Ok(Transform3::new(r, vee(&sp)))
    }

    /// Closed-form inverse `[[Rᵀ, 0], [-Rᵀ B Rᵀ, Rᵀ]]` with `B = S(p)R`.
    pub fn inverse(&self) -> Self {
        let rt = self.0.fixed_view::<3, 3>(0, 0).transpose();
        let b = self.0.fixed_view::<3, 3>(3, 0).into_owned();
        let mut m = Matrix6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&rt);
        m.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-(rt * b * rt)));
        Self(m)
    }

    pub fn apply(&self, v: &Twist<T>) -> Twist<T> {
        Twist::from_vector(&(self.0 * v.to_vector()))
    }
}

impl<T: Real> Mul for AdjointTransform<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self(self.0 * rhs.0)
    }
}

/// Shorthand for [`AdjointTransform::from_transform`].
pub fn adjoint_of<T: Real>(t: &Transform3<T>) -> AdjointTransform<T> {
    AdjointTransform::from_transform(t)
}

/// Normalized screw axis and travel along it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScrewDecomposition<T: Real> {
    pub axis: Twist<T>,
    pub travel: T,
}

impl<T: Real> ScrewDecomposition<T> {
    /// The twist `S θ` the exponential acts on.
    pub fn scaled(&self) -> Twist<T> {
        self.axis * self.travel
    }
}

/// Screw axis and travel reached by holding `twist` for `dt` seconds.
///
/// The axis is normalized on its angular part when that is nonzero, otherwise
/// on its linear part. A zero twist returns a unit x-translation axis with zero travel.
pub fn twist_to_screw<T: Real>(twist: &Twist<T>, dt: T) -> ScrewDecomposition<T> {
    debug_assert!(dt > T::zero(), "dt must be positive");
    let w = twist.angular.norm();
    if w > T::zero() {
        return ScrewDecomposition { axis: *twist * (T::one() / w), travel: w * dt };
    }
    let v = twist.linear.norm();
    if v > T::zero() {
        return ScrewDecomposition { axis: *twist * (T::one() / v), travel: v * dt };
    }
    ScrewDecomposition {
        axis: Twist::new(Vector3::zeros(), Vector3::x()),
        travel: T::zero(),
    }
}

/// Closed-form `exp([S]θ)`.
pub fn exp_se3<T: Real>(screw: &ScrewDecomposition<T>) -> Transform3<T> {
    exp_twist(&screw.scaled())
}

/// Closed-form exponential of the se(3) element `xi = [φ; ρ]`.
pub fn exp_twist<T: Real>(xi: &Twist<T>) -> Transform3<T> {
    let phi = &xi.angular;
    let angle = phi.norm();
    let k = skew(phi);
    let k2 = k * k;
    let (rot, jac) = if angle < lit(SMALL_ANGLE) {
        let half = lit::<T>(0.5);
        (Matrix3::identity() + k + k2 * half, Matrix3::identity() + k * half)
    } else {
        let a2 = angle * angle;
        let (s, c) = angle.sin_cos();
        let b = (T::one() - c) / a2;
        (
            Matrix3::identity() + k * (s / angle) + k2 * b,
            Matrix3::identity() + k * b + k2 * ((angle - s) / (a2 * angle)),
        )
    };
    Transform3::new(Rotation3::from_matrix_unchecked(rot), jac * xi.linear)
}
