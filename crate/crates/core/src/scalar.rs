//! Scalar abstraction shared by the spatial, deformable-body and tree layers.

use nalgebra::RealField;
use num_traits::FromPrimitive;

/// Real scalar the inertia math is generic over (`f64` in production, `f32` supported).
pub trait Real: RealField + Copy + FromPrimitive {}

impl<T: RealField + Copy + FromPrimitive> Real for T {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

/// Validation tolerance: `nominal` for f64, loosened near the precision floor of narrower types.
#[inline]
pub(crate) fn tol<T: Real>(nominal: f64) -> T {
    let floor = T::default_epsilon() * lit::<T>(1.0e4);
    let nominal = lit::<T>(nominal);
    if floor > nominal {
        floor
    } else {
        nominal
    }
}
