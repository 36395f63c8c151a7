//! Stand-alone schema training: `tendon train <static|dynamic> --config <path>`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tendon_core::dynamic_schema::{swing_dataset, DynConfig, DynamicsNet, SwingConfig, SwingTask};
use tendon_core::plant::{ArmPlant, FlexibleObject};
use tendon_core::static_schema::{StaticConfig, StaticNet};

use crate::config::PlantOverrides;
use crate::error::{Error, Result};
use crate::output::{metrics_json, write_file};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SchemaKind {
    Static,
    Dynamic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    #[serde(default)]
    pub plant: PlantOverrides,
    /// Mass held at the hand while sampling static data, kg.
    #[serde(default)]
    pub payload_mass: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub static_schema: StaticConfig,
    #[serde(default)]
    pub dynamic_schema: DynConfig,
    /// Pendulum lengths for dynamic data, m.
    #[serde(default = "default_lengths")]
    pub lengths: Vec<f64>,
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_samples() -> usize {
    3600
}

fn default_lengths() -> Vec<f64> {
    vec![0.2, 0.4]
}

fn default_trajectories() -> usize {
    200
}

fn default_steps() -> usize {
    50
}

impl TrainConfig {
    pub fn load(path: &Path, out_dir: Option<PathBuf>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if out_dir.is_some() {
            cfg.out_dir = out_dir;
        }
        Ok(cfg)
    }
}

/// Trains the schema, writes it with a `train_report.json` into `dir` and
/// returns the report.
pub fn train_schema(kind: SchemaKind, cfg: &TrainConfig, dir: &Path) -> Result<serde_json::Value> {
    let mut plant = cfg.plant.apply(&ArmPlant::default_arm())?;
    if !(cfg.payload_mass >= 0.0) {
        return Err(Error::Config("payload_mass must be non-negative".into()));
    }
    plant.payload_mass = cfg.payload_mass;
    std::fs::create_dir_all(dir)?;
    let report = match kind {
        SchemaKind::Static => {
            let (net, report) = StaticNet::train_initial(&plant, cfg.samples, &cfg.static_schema, cfg.seed)?;
            net.save(&dir.join("static_schema.bin"))?;
            serde_json::json!({
                "schema": "static",
                "final_loss": report.loss_history.last(),
                "holdout_rmse": report.holdout.per_mask,
                "loss_history": report.loss_history,
            })
        }
        SchemaKind::Dynamic => {
            let tasks = cfg
                .lengths
                .iter()
                .map(|&l| SwingTask::new(&plant, FlexibleObject::pendulum(l, 0.1, 0.02), SwingConfig::default()))
                .collect::<tendon_core::Result<Vec<_>>>()?;
            let trajs = swing_dataset(&tasks, cfg.trajectories, cfg.steps, cfg.seed.wrapping_add(1))?;
            let (net, report) = DynamicsNet::train(&trajs, &cfg.dynamic_schema, cfg.seed)?;
            net.save(&dir.join("dynamic_schema.bin"))?;
            let holdout: Vec<_> = report.holdout_indices.iter().map(|&i| trajs[i].clone()).collect();
            let rmse = if holdout.is_empty() { None } else { Some(net.one_step_rmse(&holdout)?) };
            serde_json::json!({
                "schema": "dynamic",
                "final_loss": report.loss_history.last(),
                "holdout_one_step_rmse": rmse,
                "object_pb": (0..tasks.len() as u32).map(|id| net.pb_for(id)).collect::<tendon_core::Result<Vec<_>>>()?,
                "loss_history": report.loss_history,
            })
        }
    };
    write_file(dir, "train_report.json", metrics_json(&report)?.as_bytes())?;
    Ok(report)
}
