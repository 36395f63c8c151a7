//! A scripted teaching session: the operator drives the base to a table while
//! raising the lift, then wipes back and forth with the hand. The session is
//! recorded, replayed open-loop, and the final posture is handed to the reflex
//! layer (relaxation or a stiffness target, never both).

use std::io::Write;
use std::sync::{Arc, Mutex};

use serde::Serialize;
use tendon_core::plant::{ArmPlant, GeometricCommander};
use tendon_core::reflex::{relax_step, solve_necessary_tension, ReflexMode, RelaxProblem};

use crate::config::ScenarioConfig;
use crate::error::Result;
use crate::output::Table;
use crate::teleop::session::TICK;
use crate::teleop::{replay, Demonstration, Session, SessionConfig, TeleopCommand};

#[derive(Clone, Debug, Serialize)]
pub struct TeachDemoMetrics {
    pub steps: usize,
    pub final_pose: [f64; 3],
    pub final_lift: f64,
    pub final_theta: Vec<f64>,
    pub replay_max_theta_error: f64,
    pub replay_final_pose_error: f64,
    pub reflex_mode: ReflexMode,
    /// Tensions holding the final posture, N.
    pub tensions_held: Vec<f64>,
    /// After relaxation or after applying the stiffness target, N.
    pub tensions_reflex: Vec<f64>,
    pub total_tension_held: f64,
    pub total_tension_reflex: f64,
    /// Largest joint movement caused by the reflex, rad.
    pub reflex_posture_shift: f64,
    /// Mean diagonal joint stiffness after the reflex, N·m/rad.
    pub reflex_stiffness: f64,
}

#[derive(Clone, Default)]
struct SharedBuf(Arc<Mutex<Vec<u8>>>);

impl Write for SharedBuf {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().expect("buffer lock").extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

fn script(cfg: &ScenarioConfig) -> Vec<TeleopCommand> {
    let p = &cfg.teach_demo;
    let ticks = |s: f64| (s / TICK).round() as usize;
    let mut cmds =
        vec![
            TeleopCommand { twist: [p.drive_speed, 0.0, 0.0], ee_delta: [0.0, 0.0], lift: p.lift_speed, grip: 0 };
            ticks(p.drive_time)
        ];
    cmds.extend(std::iter::repeat_n(TeleopCommand { grip: 1, ..Default::default() }, ticks(0.2)));
    for s in 0..p.wipe_strokes {
        let dir = if s % 2 == 0 { 1.0 } else { -1.0 };
        let cmd = TeleopCommand { ee_delta: [dir * p.wipe_speed, 0.0], grip: 1, ..Default::default() };
        cmds.extend(std::iter::repeat_n(cmd, ticks(p.stroke_time)));
    }
    cmds.extend(std::iter::repeat_n(TeleopCommand { grip: 1, ..Default::default() }, ticks(0.5)));
    cmds
}

pub fn run(cfg: &ScenarioConfig, plant: &ArmPlant<f64>) -> Result<(TeachDemoMetrics, Vec<Table>, String)> {
    let p = &cfg.teach_demo;
    let reflex = &cfg.reflex;
    reflex.mode.check_command(reflex.k_ref)?;

    let session_cfg = SessionConfig { plant: plant.clone(), tension_floor: p.cocontraction, ..Default::default() };
    let mut session = Session::new(session_cfg)?;
    let buf = SharedBuf::default();
    session.start_recording(Box::new(buf.clone()))?;
    let mut table = Table::new(
        "teach_demo",
        &["t", "x", "y", "psi", "lift", "grip", "theta1", "theta2", "tip_x", "tip_y", "f1", "f2", "f3", "f4"],
    );
    let cmds = script(cfg);
    for cmd in &cmds {
        session.set_command(*cmd);
        session.tick()?;
        let s = session.state_frame();
        let mut row = vec![s.t, s.pose[0], s.pose[1], s.pose[2], session.lift(), session.grip() as f64];
        row.extend(&s.theta);
        row.extend(s.tip);
        row.extend(&s.f);
        table.push(row);
    }
    session.stop_recording()?;
    let text = String::from_utf8(buf.0.lock().expect("buffer lock").clone()).expect("JSON is UTF-8");
    let demo = Demonstration::parse(text.as_bytes())?;
    let rep = replay(&demo, None)?;

    let frame = session.state_frame();
    let arm = session.arm_state();
    let zero = vec![0.0; plant.n_joints];
    let held = plant.quasi_static_solve_from(&arm.theta, &arm.lengths, &zero, 0.0)?;
    let commander = GeometricCommander::new(plant.clone(), 0.0, p.cocontraction);
    let (reflex_theta, reflex_f) = match reflex.mode {
        ReflexMode::Relaxation => {
            let prob = RelaxProblem::for_posture(plant, &held.theta, 1.0, 1.0, 1e6);
            let f_nec = solve_necessary_tension(&prob)?;
            let off = relax_step(plant, &held.theta, &f_nec, &held.tensions, &arm.lengths, &reflex.relax)?;
            let cmd: Vec<f64> = arm.lengths.iter().zip(&off).map(|(l, o)| l + o).collect();
            let eq = plant.quasi_static_solve_from(&held.theta, &cmd, &zero, 0.0)?;
            (eq.theta, eq.tensions)
        }
        ReflexMode::VariableStiffness => match reflex.k_ref {
            Some(k) => {
                let cmd = commander.command(&held.theta, Some(k))?;
                let eq = plant.quasi_static_solve_from(&held.theta, &cmd.lengths, &zero, 0.0)?;
                (eq.theta, eq.tensions)
            }
            None => (held.theta.clone(), held.tensions.clone()),
        },
    };
    let shift = reflex_theta.iter().zip(&held.theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let metrics = TeachDemoMetrics {
        steps: demo.steps.len(),
        final_pose: frame.pose,
        final_lift: session.lift(),
        final_theta: frame.theta,
        replay_max_theta_error: rep.max_theta_error,
        replay_final_pose_error: rep.final_pose_error,
        reflex_mode: reflex.mode,
        total_tension_held: held.tensions.iter().sum(),
        total_tension_reflex: reflex_f.iter().sum(),
        reflex_stiffness: commander.mean_diag_stiffness(&reflex_theta, &reflex_f),
        tensions_held: held.tensions,
        tensions_reflex: reflex_f,
        reflex_posture_shift: shift,
    };
    Ok((metrics, vec![table], text))
}
