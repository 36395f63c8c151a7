//! The three scripted experiments. Each is a pure function of its config.

pub mod muscle_addition;
pub mod table_setting;
pub mod teach_demo;

use std::path::{Path, PathBuf};

use serde::Serialize;
use tendon_core::plant::ArmPlant;

use crate::config::{ScenarioConfig, ScenarioId};
use crate::error::{Error, Result};
use crate::output::{metrics_json, write_file, Table};

#[derive(Clone, Debug)]
pub struct ScenarioOutput {
    pub scenario: ScenarioId,
    pub seed: u64,
    pub metrics: serde_json::Value,
    pub tables: Vec<Table>,
    /// Recorded demonstration (JSON lines), if the scenario makes one.
    pub demonstration: Option<String>,
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    scenario: &'static str,
    seed: u64,
    metrics: &'a serde_json::Value,
}

impl ScenarioOutput {
    /// The exact bytes of `metrics.json`.
    pub fn metrics_json(&self) -> Result<String> {
        metrics_json(&MetricsFile { scenario: self.scenario.name(), seed: self.seed, metrics: &self.metrics })
    }

    /// Writes `metrics.json`, one `<table>.csv` per table and
    /// `demonstration.jsonl` when present.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut paths = vec![write_file(dir, "metrics.json", self.metrics_json()?.as_bytes())?];
        for t in &self.tables {
            paths.push(write_file(dir, &format!("{}.csv", t.name), &t.to_csv()?)?);
        }
        if let Some(d) = &self.demonstration {
            paths.push(write_file(dir, "demonstration.jsonl", d.as_bytes())?);
        }
        Ok(paths)
    }
}

/// Validates `cfg`, runs its scenario and returns metrics and tables. Files
/// are written by [`ScenarioOutput::write`].
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutput> {
    cfg.validate()?;
    let plant = cfg.plant.apply(&ArmPlant::default_arm())?;
    let name = cfg.scenario.name();
    let ctx = |e| match e {
        Error::Core(source) => Error::Scenario { scenario: name, source },
        other => other,
    };
    let (metrics, tables, demonstration) = match cfg.scenario {
        ScenarioId::TeachDemo => {
            let (m, t, d) = teach_demo::run(cfg, &plant).map_err(ctx)?;
            (serde_json::to_value(m)?, t, Some(d))
        }
        ScenarioId::MuscleAddition => {
            let (m, t) = muscle_addition::run(cfg, &plant).map_err(ctx)?;
            (serde_json::to_value(m)?, t, None)
        }
        ScenarioId::TableSetting => {
            let (m, t) = table_setting::run(cfg, &plant).map_err(ctx)?;
            (serde_json::to_value(m)?, t, None)
        }
    };
    Ok(ScenarioOutput { scenario: cfg.scenario, seed: cfg.seed, metrics, tables, demonstration })
}
