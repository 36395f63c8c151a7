//! Body-schema learning and reflex control for a simulated tendon-driven arm
//! on a mecanum base.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common case.

pub mod base;
pub mod dynamic_schema;
pub mod error;
pub mod linalg;
pub mod nn;
pub mod plant;
pub mod qp;
pub mod reflex;
pub mod scalar;
pub mod static_schema;

pub use error::{Error, Result};
pub use scalar::Real;

pub type ArmPlantF64 = plant::ArmPlant<f64>;
pub type ArmPlantF32 = plant::ArmPlant<f32>;
pub type ThermalPlantF64 = plant::ThermalPlant<f64>;
pub type MatF64 = linalg::Mat<f64>;
pub type StaticNetF64 = static_schema::StaticNet<f64>;
pub type ThermalParamsF64 = reflex::ThermalParams<f64>;
