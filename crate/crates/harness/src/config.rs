//! Scenario configuration. Unknown keys are rejected everywhere and the seed
//! has no default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tendon_core::dynamic_schema::{CompareOptions, DynConfig};
use tendon_core::plant::ArmPlant;
use tendon_core::reflex::{ReflexMode, RelaxOptions};
use tendon_core::static_schema::{ControlOptions, StaticConfig};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ScenarioId {
    TeachDemo,
    MuscleAddition,
    TableSetting,
}

impl ScenarioId {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioId::TeachDemo => "teach_demo",
            ScenarioId::MuscleAddition => "muscle_addition",
            ScenarioId::TableSetting => "table_setting",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioId,
    pub seed: u64,
    #[serde(default)]
    pub plant: PlantOverrides,
    #[serde(default)]
    pub static_schema: StaticConfig,
    #[serde(default)]
    pub dynamic_schema: DynConfig,
    #[serde(default)]
    pub reflex: ReflexSettings,
    #[serde(default)]
    pub teach_demo: TeachDemoParams,
    #[serde(default)]
    pub muscle_addition: MuscleAdditionParams,
    #[serde(default)]
    pub table_setting: TableSettingParams,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ScenarioConfig {
    /// Defaults for everything but the scenario and the seed.
    pub fn new(scenario: ScenarioId, seed: u64) -> Self {
        Self {
            scenario,
            seed,
            plant: Default::default(),
            static_schema: Default::default(),
            dynamic_schema: Default::default(),
            reflex: Default::default(),
            teach_demo: Default::default(),
            muscle_addition: Default::default(),
            table_setting: Default::default(),
            out_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and applies command-line values on top. A value
    /// given on both sides must agree for the scenario; seed and output
    /// directory from the command line win.
    pub fn load(
        path: Option<&Path>,
        scenario: Option<ScenarioId>,
        seed: Option<u64>,
        out_dir: Option<PathBuf>,
    ) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => serde_json::Value::Object(Default::default()),
        };
        let obj = value.as_object_mut().ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
        if let Some(s) = scenario {
            let name = serde_json::Value::String(s.name().into());
            match obj.get("scenario") {
                Some(v) if *v != name => {
                    return Err(Error::Config(format!("config is for scenario {v}, command line asks for {name}")));
                }
                _ => {
                    obj.insert("scenario".into(), name);
                }
            }
        }
        if let Some(seed) = seed {
            obj.insert("seed".into(), seed.into());
        }
        if let Some(dir) = out_dir {
            obj.insert("out_dir".into(), serde_json::to_value(dir)?);
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.apply(&ArmPlant::default_arm())?;
        self.reflex.validate()?;
        let p = &self.muscle_addition;
        if p.samples < 1000 {
            return Err(Error::Config("muscle_addition.samples must be at least 1000".into()));
        }
        if !(p.payload_mass >= 0.0) {
            return Err(Error::Config("muscle_addition.payload_mass must be non-negative".into()));
        }
        let t = &self.table_setting;
        if t.lengths.len() < 2 || t.target_object >= t.lengths.len() {
            return Err(Error::Config("table_setting needs two or more objects and a valid target_object".into()));
        }
        if t.trajectories < 2 * t.lengths.len() || t.steps < 2 {
            return Err(Error::Config("table_setting needs several trajectories per object".into()));
        }
        if t.waypoints.is_empty() {
            return Err(Error::Config("table_setting needs at least one waypoint".into()));
        }
        let d = &self.teach_demo;
        if !(d.drive_time >= 0.0 && d.stroke_time > 0.0 && d.cocontraction >= 0.0) {
            return Err(Error::Config("teach_demo times and co-contraction must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantOverrides {
    /// Multiplies every muscle elasticity.
    pub elastic_k_scale: Option<f64>,
    pub link_masses: Option<Vec<f64>>,
    pub damping: Option<Vec<f64>>,
}

impl PlantOverrides {
    pub fn apply(&self, plant: &ArmPlant<f64>) -> Result<ArmPlant<f64>> {
        let mut p = plant.clone();
        if let Some(s) = self.elastic_k_scale {
            if !(s > 0.0) {
                return Err(Error::Config("plant.elastic_k_scale must be positive".into()));
            }
            p.elastic_k.iter_mut().for_each(|k| *k *= s);
        }
        if let Some(m) = &self.link_masses {
            p.link_masses = m.clone();
        }
        if let Some(d) = &self.damping {
            p.damping = d.clone();
        }
        p.validate().map_err(|e| Error::Config(format!("plant overrides: {e}")))?;
        Ok(p)
    }
}

/// Which reflex owns the tensions, and the stiffness target if any.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReflexSettings {
    pub mode: ReflexMode,
    /// Joint stiffness target, N·m/rad.
    pub k_ref: Option<f64>,
    pub relax: RelaxOptions,
}

impl Default for ReflexSettings {
    fn default() -> Self {
        Self { mode: ReflexMode::Relaxation, k_ref: None, relax: RelaxOptions::default() }
    }
}

impl ReflexSettings {
    pub fn validate(&self) -> Result<()> {
        self.mode.check_command(self.k_ref).map_err(|e| Error::Config(e.to_string()))?;
        if self.k_ref.is_some_and(|k| !(k > 0.0)) {
            return Err(Error::Config("reflex.k_ref must be positive".into()));
        }
        Ok(())
    }
}

/// A scripted teaching session: drive to the table, wipe back and forth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeachDemoParams {
    /// Forward base speed, m/s.
    pub drive_speed: f64,
    /// s.
    pub drive_time: f64,
    /// Hand speed while wiping, m/s.
    pub wipe_speed: f64,
    pub wipe_strokes: usize,
    /// Duration of one stroke, s.
    pub stroke_time: f64,
    /// Lift raised while driving, m/s.
    pub lift_speed: f64,
    /// Tension floor held while teaching, N.
    pub cocontraction: f64,
}

impl Default for TeachDemoParams {
    fn default() -> Self {
        Self {
            drive_speed: 0.25,
            drive_time: 2.0,
            wipe_speed: 0.1,
            wipe_strokes: 4,
            stroke_time: 0.5,
            lift_speed: 0.05,
            cocontraction: 20.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MuscleAdditionParams {
    /// Equilibrium samples drawn for each training run.
    pub samples: usize,
    /// Mass held at the hand, kg.
    pub payload_mass: f64,
    /// Posture held under load, rad.
    pub posture: [f64; 2],
    pub control: ControlOptions,
    /// Seconds simulated while settling into each command.
    pub settle_time: f64,
}

impl Default for MuscleAdditionParams {
    fn default() -> Self {
        Self {
            samples: 3600,
            payload_mass: 1.0,
            posture: [1.0, 0.3],
            control: ControlOptions::default(),
            settle_time: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableSettingParams {
    /// Pendulum lengths of the objects seen in training, m.
    pub lengths: Vec<f64>,
    pub object_mass: f64,
    pub object_damping: f64,
    /// Index into `lengths` of the object swung fast.
    pub target_object: usize,
    pub trajectories: usize,
    pub steps: usize,
    pub compare: CompareOptions,
    /// Base route to the table, `[x, y, ψ]` each.
    pub waypoints: Vec<[f64; 3]>,
    /// Relative uniform wheel-speed noise.
    pub wheel_noise: f64,
}

impl Default for TableSettingParams {
    fn default() -> Self {
        Self {
            lengths: vec![0.2, 0.4],
            object_mass: 0.1,
            object_damping: 0.02,
            target_object: 1,
            trajectories: 200,
            steps: 50,
            compare: CompareOptions::default(),
            waypoints: vec![[1.0, 0.0, 0.0], [1.0, 1.0, std::f64::consts::FRAC_PI_2]],
            wheel_noise: 0.02,
        }
    }
}
