//! Drive the base to the table, then swing a hanging object as fast as
//! possible: learn the dynamic schema on two objects and compare the best
//! constant stiffness with a time-varying one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tendon_core::base::{
    odometry_step, wheel_speeds, BaseGeometry, BasePose, FollowerConfig, Waypoint, WaypointFollower,
};
use tendon_core::dynamic_schema::{interpolate_knots, swing_dataset, DynamicsNet, SwingConfig, SwingTask, Trajectory};
use tendon_core::plant::{ArmPlant, FlexibleObject};
use tendon_core::Error;

use crate::config::ScenarioConfig;
use crate::error::Result;
use crate::output::Table;

#[derive(Clone, Debug, Serialize)]
pub struct TableSettingMetrics {
    pub base_final_pose: [f64; 3],
    /// Distance from the last waypoint, m.
    pub base_position_error: f64,
    pub base_time: f64,
    pub holdout_one_step_rmse: f64,
    /// Learned bias of every object.
    pub object_pb: Vec<Vec<f64>>,
    pub best_fixed_k: f64,
    pub fixed_peak_tip_speed: f64,
    pub variable_peak_tip_speed: f64,
    pub variable_k: Vec<f64>,
    /// `100 · (variable / fixed − 1)`.
    pub speed_gain_percent: f64,
}

const BASE_DT: f64 = 0.02;
const BASE_TIMEOUT: f64 = 60.0;

fn drive(cfg: &ScenarioConfig, table: &mut Table) -> Result<BasePose<f64>> {
    let p = &cfg.table_setting;
    let geom = BaseGeometry::<f64>::default();
    let waypoints: Vec<Waypoint<f64>> = p.waypoints.iter().map(|&[x, y, psi]| Waypoint { x, y, psi }).collect();
    let mut follower = WaypointFollower::new(waypoints, FollowerConfig::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut pose = BasePose::default();
    table.push([pose.t, pose.x, pose.y, pose.psi, 0.0, 0.0, 0.0]);
    while let Some(twist) = follower.command(&pose) {
        if pose.t >= BASE_TIMEOUT {
            return Err(Error::Navigation { x: pose.x, y: pose.y, psi: pose.psi }.into());
        }
        let mut v = wheel_speeds(&geom, twist);
        for w in v.iter_mut() {
            *w *= 1.0 + p.wheel_noise * rng.gen_range(-1.0..=1.0);
        }
        pose = odometry_step(&geom, &pose, v, BASE_DT)?;
        table.push([pose.t, pose.x, pose.y, pose.psi, twist[0], twist[1], twist[2]]);
    }
    Ok(pose)
}

fn swing_rows(task: &SwingTask<f64>, knots: &[Vec<f64>], horizon: usize, plan: &str, table: &mut Table) -> Result<()> {
    let u = interpolate_knots(knots, task.cfg.knot_every, horizon);
    let r = task.rollout(&u)?;
    for (k, ut) in u.iter().enumerate() {
        let mut row = vec![plan.to_string(), (k + 1).to_string(), ((k + 1) as f64 * task.cfg.control_dt).to_string()];
        row.extend(ut.iter().map(|v| v.to_string()));
        row.push(r.tip_speed[k].to_string());
        row.push(r.tip_rise[k].to_string());
        table.push_cells(row);
    }
    Ok(())
}

pub fn run(cfg: &ScenarioConfig, plant: &ArmPlant<f64>) -> Result<(TableSettingMetrics, Vec<Table>)> {
    let p = &cfg.table_setting;
    let mut base = Table::new("base", &["t", "x", "y", "psi", "vx", "vy", "wz"]);
    let pose = drive(cfg, &mut base)?;
    let goal = p.waypoints.last().expect("validated");

    let tasks: Vec<SwingTask<f64>> = p
        .lengths
        .iter()
        .map(|&l| {
            SwingTask::new(plant, FlexibleObject::pendulum(l, p.object_mass, p.object_damping), SwingConfig::default())
        })
        .collect::<tendon_core::Result<_>>()?;
    let trajs = swing_dataset(&tasks, p.trajectories, p.steps, cfg.seed.wrapping_add(1))?;
    let (net, report) = DynamicsNet::train(&trajs, &cfg.dynamic_schema, cfg.seed)?;
    let holdout: Vec<Trajectory<f64>> = report.holdout_indices.iter().map(|&i| trajs[i].clone()).collect();
    let holdout_one_step_rmse = if holdout.is_empty() { f64::NAN } else { net.one_step_rmse(&holdout)? };
    let object_pb = (0..tasks.len() as u32).map(|id| net.pb_for(id)).collect::<tendon_core::Result<Vec<_>>>()?;

    let task = &tasks[p.target_object];
    let pb = &object_pb[p.target_object];
    let cmp = task.compare_stiffness(&net, pb, &p.compare, cfg.seed.wrapping_add(1))?;
    let mut swing =
        Table::new("swing", &["plan", "step", "t", "theta1_ref", "theta2_ref", "k_ref", "tip_speed", "tip_rise"]);
    swing_rows(task, &cmp.fixed_knots, p.compare.horizon, "fixed", &mut swing)?;
    swing_rows(task, &cmp.variable_knots, p.compare.horizon, "variable", &mut swing)?;

    let metrics = TableSettingMetrics {
        base_final_pose: [pose.x, pose.y, pose.psi],
        base_position_error: (pose.x - goal[0]).hypot(pose.y - goal[1]),
        base_time: pose.t,
        holdout_one_step_rmse,
        object_pb,
        best_fixed_k: cmp.best_fixed_k,
        fixed_peak_tip_speed: cmp.fixed_peak,
        variable_peak_tip_speed: cmp.variable_peak,
        speed_gain_percent: cmp.gain_percent(),
        variable_k: cmp.variable_k,
    };
    Ok((metrics, vec![base, swing]))
}
