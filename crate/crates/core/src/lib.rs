//! Predictive deformed inertia for deformable multibody systems and a convex
//! centroidal MPC that consumes it.
//!
//! The inertia layer ([`spatial`], [`deformable`], [`tree`]) is generic over
//! the scalar type; the aliases below fix it to `f64` (suffix `d`) or `f32`
//! (suffix `f`). The controller ([`mpc`]) and the simulator ([`sim`]) work in `f64`.

pub mod deformable;
pub mod error;
pub mod mpc;
pub mod scalar;
pub mod sim;
pub mod spatial;
pub mod tree;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Rotation3d = spatial::Rotation3<f64>;
pub type Transform3d = spatial::Transform3<f64>;
pub type Twistd = spatial::Twist<f64>;
pub type AdjointTransformd = spatial::AdjointTransform<f64>;
pub type ScrewDecompositiond = spatial::ScrewDecomposition<f64>;
pub type SubBodyParamsd = deformable::SubBodyParams<f64>;
pub type SubBodyStated = deformable::SubBodyState<f64>;
pub type SpatialInertiad = deformable::SpatialInertia<f64>;
pub type DeformableBodyd = deformable::DeformableBody<f64>;
pub type PdiScheduled = deformable::PdiSchedule<f64>;
pub type JointModeld = tree::JointModel<f64>;
pub type JointStated = tree::JointState<f64>;
pub type DeformableTreed = tree::DeformableTree<f64>;
pub type CcpdiScheduled = tree::CcpdiSchedule<f64>;

pub type Rotation3f = spatial::Rotation3<f32>;
pub type Transform3f = spatial::Transform3<f32>;
pub type Twistf = spatial::Twist<f32>;
pub type AdjointTransformf = spatial::AdjointTransform<f32>;
pub type SpatialInertiaf = deformable::SpatialInertia<f32>;
pub type DeformableBodyf = deformable::DeformableBody<f32>;
pub type DeformableTreef = tree::DeformableTree<f32>;
pub type CcpdiSchedulef = tree::CcpdiSchedule<f32>;
