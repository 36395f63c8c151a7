//! Heavy payload: learn the 4-muscle arm, hold a posture, add an assisting
//! shoulder flexor, grow the schema, relearn, hold the posture again.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tendon_core::plant::{step_dynamics, ArmPlant, FlexibleObject, SimState};
use tendon_core::static_schema::{generate_samples, Mask, SensorTriple, StaticNet};

use crate::config::ScenarioConfig;
use crate::error::Result;
use crate::output::Table;

#[derive(Clone, Debug, Serialize)]
pub struct MuscleAdditionMetrics {
    pub payload_mass: f64,
    pub posture: [f64; 2],
    pub max_tension_before: f64,
    pub max_tension_after: f64,
    /// `100 · (1 − after / before)`.
    pub reduction_percent: f64,
    pub tensions_before: Vec<f64>,
    pub tensions_after: Vec<f64>,
    pub theta_before: Vec<f64>,
    pub theta_after: Vec<f64>,
    /// Held-out `[θ rad, f N, l m]` RMSE per mask.
    pub holdout_before: Vec<[f64; 3]>,
    pub holdout_after: Vec<[f64; 3]>,
    /// Old outputs of the grown schema equal the original's before relearning.
    pub old_channels_bit_equal: bool,
}

/// Equilibrium reached under a schema command.
struct Held {
    theta: Vec<f64>,
    tensions: Vec<f64>,
    l_ref: Vec<f64>,
}

fn hold(
    net: &StaticNet<f64>,
    plant: &ArmPlant<f64>,
    cfg: &ScenarioConfig,
    current: &SensorTriple<f64>,
) -> Result<Held> {
    let p = &cfg.muscle_addition;
    let res = net.solve_control(plant, &p.posture, None, current, &p.control)?;
    let eq = plant.quasi_static_solve_from(&p.posture, &res.l_ref, &[0.0, 0.0], 0.0)?;
    Ok(Held { theta: eq.theta, tensions: eq.tensions, l_ref: res.l_ref })
}

fn bit_equal(old: &StaticNet<f64>, grown: &StaticNet<f64>, samples: &[SensorTriple<f64>]) -> Result<bool> {
    let (nj, nm) = (old.n_joints, old.n_muscles);
    let m = &grown.norm.mean;
    for t in samples {
        for mask in Mask::ALL {
            let a = old.complete(&t.with_mask(mask))?;
            let mut f = t.f.clone();
            f.push(m[nj + nm]);
            let mut l = t.l.clone();
            l.push(m[nj + 2 * nm + 1]);
            let b = grown.complete(&SensorTriple { theta: t.theta.clone(), f, l, ..t.with_mask(mask) })?;
            if a.theta != b.theta || a.f[..] != b.f[..nm] || a.l[..] != b.l[..nm] {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn settle(plant: &ArmPlant<f64>, cfg: &ScenarioConfig, held: &Held, phase: &str, table: &mut Table) -> Result<()> {
    let p = &cfg.muscle_addition;
    let obj = FlexibleObject::none();
    let mut state = SimState::at_rest(plant, &obj, &p.posture, &held.l_ref);
    let dt = 0.002;
    let steps = (p.settle_time / dt).round() as usize;
    for k in 0..=steps {
        if k % 10 == 0 {
            let f = plant.tensions(&state.theta, &state.lengths);
            let mut row = vec![phase.to_string(), (k as f64 * dt).to_string()];
            row.extend(state.theta.iter().map(|v| v.to_string()));
            row.extend((0..5).map(|i| f.get(i).map(|v| v.to_string()).unwrap_or_default()));
            table.push_cells(row);
        }
        if k < steps {
            state = step_dynamics(plant, &obj, &state, &held.l_ref, dt)?;
        }
    }
    Ok(())
}

pub fn run(cfg: &ScenarioConfig, plant: &ArmPlant<f64>) -> Result<(MuscleAdditionMetrics, Vec<Table>)> {
    let p = &cfg.muscle_addition;
    let sc = &cfg.static_schema;
    let mut heavy = plant.clone();
    heavy.payload_mass = p.payload_mass;
    let (net, report) = StaticNet::train_initial(&heavy, p.samples, sc, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let current = generate_samples(&heavy, 1, sc, &mut rng)?.remove(0);
    let before = hold(&net, &heavy, cfg, &current)?;

    let mut grown = net.grow_dimensions(1, cfg.seed)?;
    let probe = generate_samples(&heavy, 20, sc, &mut rng)?;
    let old_channels_bit_equal = bit_equal(&net, &grown, &probe)?;

    let assisted = heavy.with_assist_flexor()?;
    let data = generate_samples(&assisted, p.samples, sc, &mut rng)?;
    let n_hold = ((p.samples as f64) * sc.holdout_fraction).round() as usize;
    let (train, holdout) = data.split_at(p.samples - n_hold);
    grown.fit(train, sc.epochs, sc.lr, sc.batch, &mut rng)?;
    let holdout_after = grown.evaluate(holdout).per_mask;
    let current = generate_samples(&assisted, 1, sc, &mut rng)?.remove(0);
    let after = hold(&grown, &assisted, cfg, &current)?;

    let mut table = Table::new("muscle_addition", &["phase", "t", "theta1", "theta2", "f1", "f2", "f3", "f4", "f5"]);
    settle(&heavy, cfg, &before, "before", &mut table)?;
    settle(&assisted, cfg, &after, "after", &mut table)?;

    let max = |v: &[f64]| v.iter().copied().fold(f64::MIN, f64::max);
    let (max_before, max_after) = (max(&before.tensions), max(&after.tensions));
    let metrics = MuscleAdditionMetrics {
        payload_mass: p.payload_mass,
        posture: p.posture,
        max_tension_before: max_before,
        max_tension_after: max_after,
        reduction_percent: 100.0 * (1.0 - max_after / max_before),
        tensions_before: before.tensions,
        tensions_after: after.tensions,
        theta_before: before.theta,
        theta_after: after.theta,
        holdout_before: report.holdout.per_mask,
        holdout_after,
        old_channels_bit_equal,
    };
    Ok((metrics, vec![table]))
}
