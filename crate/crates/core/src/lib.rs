//! Alignment BGK dynamics for rigid-body attitudes.
//!
//! Each agent carries a rotation `A` in SO(3). The kinetic model relaxes the
//! attitude density towards a von Mises law built from the mean flux `J`.
//! This crate computes the equilibria of that model, their stability, the
//! gradient flow of the flux, an exact particle system and the coefficients
//! of the macroscopic limit.
//!
//! The geometry layer ([`so3`], [`quad`]) is generic over the scalar type
//! through [`Real`]. The numerical models are written for `f64`; the aliases
//! below fix the scalar for them.

pub mod equilibria;
pub mod error;
pub mod flow;
pub mod hydro;
pub mod output;
pub mod particles;
pub mod quad;
pub mod so3;
pub mod vonmises;

pub use error::{Error, Result};

/// Floating point scalar usable by the geometry layer.
pub trait Real:
    num_traits::Float + num_traits::FromPrimitive + std::fmt::Debug + Send + Sync + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Convert an `f64` literal into `T`.
#[inline]
pub(crate) fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).unwrap()
}

pub type Mat3 = so3::Matrix3<f64>;
pub type Rotation = so3::Rotation3<f64>;
pub type Quat = so3::Quaternion<f64>;
pub type QuatClass = so3::QuaternionClass<f64>;
pub type DiagTriple = so3::Diag3<f64>;
pub type Ssvd = so3::SpecialSvd<f64>;
pub type Sym4 = so3::Symmetric4<f64>;

pub type Mat3f = so3::Matrix3<f32>;
pub type Rotationf = so3::Rotation3<f32>;
