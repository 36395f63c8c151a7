//! Experiment runner and integration layer: scenario configs, the three
//! desk-scale scenarios, metric and trajectory files, teleoperation server,
//! demonstration recording and replay.

pub mod config;
pub mod error;
pub mod output;
pub mod scenarios;
pub mod teleop;
pub mod train;

pub use config::{ScenarioConfig, ScenarioId};
pub use error::{Error, Result};
pub use scenarios::{run_scenario, ScenarioOutput};
