#![allow(dead_code)]

use tendon_core::dynamic_schema::*;
use tendon_core::plant::{ArmPlant, FlexibleObject};

pub const HORIZON: usize = 20;
pub const LENGTHS: [f64; 2] = [0.2, 0.4];

pub struct DynFixture {
    pub tasks: Vec<SwingTask<f64>>,
    pub trajs: Vec<Trajectory<f64>>,
    pub net: DynamicsNet<f64>,
    pub report: DynTrainReport,
}

impl DynFixture {
    pub fn holdout(&self) -> Vec<Trajectory<f64>> {
        self.report.holdout_indices.iter().map(|&i| self.trajs[i].clone()).collect()
    }
}

pub fn swing_tasks() -> Vec<SwingTask<f64>> {
    let plant = ArmPlant::default_arm();
    LENGTHS
        .iter()
        .map(|&l| SwingTask::new(&plant, FlexibleObject::pendulum(l, 0.1, 0.02), SwingConfig::default()).unwrap())
        .collect()
}

/// 200 random 50-step swings, alternating between the two pendulums.
pub fn train_dynamic() -> DynFixture {
    let tasks = swing_tasks();
    let trajs = swing_dataset(&tasks, 200, 50, 1).unwrap();
    let t0 = std::time::Instant::now();
    let (net, report) = DynamicsNet::train(&trajs, &DynConfig::default(), 0).unwrap();
    eprintln!("dynamic training took {:?}", t0.elapsed());
    DynFixture { tasks, trajs, net, report }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Mean pairwise bias distance within objects and across objects.
pub fn pb_cluster_distances(report: &DynTrainReport) -> (f64, f64) {
    let pbs = &report.trajectory_pb;
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0, 0.0, 0);
    for i in 0..pbs.len() {
        for j in i + 1..pbs.len() {
            let d = dist(&pbs[i].1, &pbs[j].1);
            if pbs[i].0 == pbs[j].0 {
                intra += d;
                n_intra += 1;
            } else {
                inter += d;
                n_inter += 1;
            }
        }
    }
    (intra / n_intra as f64, inter / n_inter as f64)
}

/// Peak tip speed of the long pendulum: best constant stiffness against a
/// time-varying one.
pub fn compare_stiffness(fx: &DynFixture) -> StiffnessComparison {
    let p = fx.net.pb_for(1).unwrap();
    fx.tasks[1].compare_stiffness(&fx.net, &p, &CompareOptions { horizon: HORIZON, ..Default::default() }, 1).unwrap()
}
