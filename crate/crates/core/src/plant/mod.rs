//! Simulated ground truth: tendon-driven arm, hanging object, motor heating.

pub mod arm;
pub(crate) mod chain;
pub mod commander;
pub mod dynamics;
pub mod thermal;

pub use arm::{ActuatorLimits, ArmPlant, Equilibrium, MomentArms};
pub use commander::{distribute_tension, Command, GeometricCommander};
pub use dynamics::{
    hand_point, mechanical_energy, step_dynamics, step_dynamics_with, tip_direction, tip_point, FlexibleObject,
    ObjectKind, SimState, StepOptions,
};
pub use thermal::ThermalPlant;
