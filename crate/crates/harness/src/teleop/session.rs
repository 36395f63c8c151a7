//! The simulated robot behind a teleoperation session: mecanum base, lift,
//! gripper and the tendon-driven arm holding a hand target.

use std::io::Write;

use serde::{Deserialize, Serialize};
use tendon_core::base::{odometry_step, wheel_speeds, BaseGeometry, BasePose};
use tendon_core::plant::{hand_point, step_dynamics, ArmPlant, FlexibleObject, GeometricCommander, SimState};
use tendon_core::Result;

use super::demo::{DemoHeader, DemoRecord, DemoStep};
use super::{StateFrame, TeleopCommand};

/// Control tick, s (50 Hz).
pub const TICK: f64 = 0.02;
/// Commands older than this are replaced by a halt, s.
pub const COMMAND_TIMEOUT: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub plant: ArmPlant<f64>,
    pub base: BaseGeometry<f64>,
    /// Starting arm posture, rad. The elbow keeps the sign of `start_theta[1]`.
    pub start_theta: [f64; 2],
    /// Lift travel, m.
    pub lift_range: [f64; 2],
    /// Tension floor of the arm commander, N.
    pub tension_floor: f64,
    /// Integration substeps per tick.
    pub substeps: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            plant: ArmPlant::default_arm(),
            base: BaseGeometry::default(),
            start_theta: [0.4, 0.6],
            lift_range: [0.0, 0.5],
            tension_floor: 5.0,
            substeps: 10,
        }
    }
}

/// Everything needed to restart a session exactly where it was.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSnapshot {
    pub ticks: u64,
    pub pose: BasePose<f64>,
    pub arm: SimState<f64>,
    pub target: [f64; 2],
    pub lift: f64,
    pub grip: u8,
}

pub struct Session {
    cfg: SessionConfig,
    commander: GeometricCommander<f64>,
    object: FlexibleObject<f64>,
    ticks: u64,
    pose: BasePose<f64>,
    arm: SimState<f64>,
    target: [f64; 2],
    lift: f64,
    grip: u8,
    command: TeleopCommand,
    /// Simulated time of the last operator command.
    last_command: Option<f64>,
    recorder: Option<Box<dyn Write + Send>>,
}

impl Session {
    /// Starts at rest in `start_theta`.
    pub fn new(cfg: SessionConfig) -> Result<Self> {
        cfg.plant.validate()?;
        cfg.base.validate()?;
        let commander = GeometricCommander::new(cfg.plant.clone(), 0.0, cfg.tension_floor);
        let l = commander.command(&cfg.start_theta, None)?.lengths;
        let object = FlexibleObject::none();
        let arm = SimState::at_rest(&cfg.plant, &object, &cfg.start_theta, &l);
        let target = forward(&cfg.plant, &cfg.start_theta);
        let snap =
            SessionSnapshot { ticks: 0, pose: BasePose::default(), arm, target, lift: cfg.lift_range[0], grip: 0 };
        Self::from_snapshot(cfg, snap)
    }

    pub fn from_snapshot(cfg: SessionConfig, snap: SessionSnapshot) -> Result<Self> {
        cfg.plant.validate()?;
        cfg.base.validate()?;
        let commander = GeometricCommander::new(cfg.plant.clone(), 0.0, cfg.tension_floor);
        Ok(Self {
            cfg,
            commander,
            object: FlexibleObject::none(),
            ticks: snap.ticks,
            pose: snap.pose,
            arm: snap.arm,
            target: snap.target,
            lift: snap.lift,
            grip: snap.grip,
            command: TeleopCommand::default(),
            last_command: None,
            recorder: None,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            ticks: self.ticks,
            pose: self.pose,
            arm: self.arm.clone(),
            target: self.target,
            lift: self.lift,
            grip: self.grip,
        }
    }

    pub fn time(&self) -> f64 {
        self.ticks as f64 * TICK
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn pose(&self) -> BasePose<f64> {
        self.pose
    }

    pub fn lift(&self) -> f64 {
        self.lift
    }

    pub fn grip(&self) -> u8 {
        self.grip
    }

    pub fn arm_state(&self) -> &SimState<f64> {
        &self.arm
    }

    /// The operator's latest command; it replaces any earlier one.
    pub fn set_command(&mut self, cmd: TeleopCommand) {
        self.command = cmd;
        self.last_command = Some(self.time());
    }

    /// The client went away: halt now.
    pub fn disconnect(&mut self) {
        self.command = self.command.halted();
        self.last_command = None;
    }

    /// The command the next tick will apply.
    pub fn effective_command(&self) -> TeleopCommand {
        match self.last_command {
            Some(t0) if self.time() - t0 <= COMMAND_TIMEOUT + 1e-9 => self.command,
            _ => self.command.halted(),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recorder.is_some()
    }

    /// Starts writing a demonstration: header now, one step per tick.
    pub fn start_recording(&mut self, mut out: Box<dyn Write + Send>) -> std::io::Result<()> {
        let header = DemoHeader::new(self.cfg.clone(), self.snapshot());
        serde_json::to_writer(&mut out, &DemoRecord::Header(Box::new(header)))?;
        out.write_all(b"\n")?;
        self.recorder = Some(out);
        Ok(())
    }

    pub fn stop_recording(&mut self) -> std::io::Result<()> {
        if let Some(mut out) = self.recorder.take() {
            out.flush()?;
        }
        Ok(())
    }

    /// One control tick with the effective command.
    pub fn tick(&mut self) -> Result<()> {
        let cmd = self.effective_command();
        self.advance(cmd)
    }

    /// One control tick with `cmd`, bypassing the command timeout.
    pub fn advance(&mut self, cmd: TeleopCommand) -> Result<()> {
        self.pose = odometry_step(&self.cfg.base, &self.pose, wheel_speeds(&self.cfg.base, cmd.twist), TICK)?;
        let [lo, hi] = self.cfg.lift_range;
        self.lift = (self.lift + cmd.lift * TICK).clamp(lo, hi);
        self.grip = cmd.grip;
        let wanted = [self.target[0] + cmd.ee_delta[0] * TICK, self.target[1] + cmd.ee_delta[1] * TICK];
        let theta_ref = self.reachable(wanted);
        self.target = forward(&self.cfg.plant, &theta_ref);
        let l = self.commander.command(&theta_ref, None)?.lengths;
        let dt = TICK / self.cfg.substeps as f64;
        for _ in 0..self.cfg.substeps {
            self.arm = step_dynamics(&self.cfg.plant, &self.object, &self.arm, &l, dt)?;
        }
        self.ticks += 1;
        if let Some(out) = self.recorder.as_mut() {
            let state = state_frame_of(&self.cfg, &self.object, self.ticks, &self.pose, &self.arm);
            let step = DemoRecord::Step(DemoStep { t: self.ticks as f64 * TICK, cmd, state });
            let ok = serde_json::to_writer(&mut *out, &step).is_ok() && out.write_all(b"\n").is_ok();
            if !ok {
                self.recorder = None;
            }
        }
        Ok(())
    }

    /// Joint angles for `target` on the elbow branch of the start posture,
    /// pulled inside the workspace and the joint limits.
    fn reachable(&self, target: [f64; 2]) -> [f64; 2] {
        let p = &self.cfg.plant;
        let (l1, l2) = (p.link_lengths[0], p.link_lengths[1]);
        let r_min = (l1 - l2).abs() + 1e-3;
        let r_max = l1 + l2 - 1e-3;
        let r = target[0].hypot(target[1]);
        let scale = if r < 1e-12 { 0.0 } else { r.clamp(r_min, r_max) / r };
        let (x, y) = if scale == 0.0 { (0.0, -r_min) } else { (target[0] * scale, target[1] * scale) };
        let r2 = x * x + y * y;
        let cos2 = ((r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
        let sign = if self.cfg.start_theta[1] < 0.0 { -1.0 } else { 1.0 };
        let t2 = sign * cos2.acos();
        // hand direction (x, y) = (sin φ, -cos φ), φ measured from straight down
        let phi = x.atan2(-y);
        let t1 = phi - (l2 * t2.sin()).atan2(l1 + l2 * t2.cos());
        let mut theta = [t1, t2];
        for (j, th) in theta.iter_mut().enumerate() {
            let [lo, hi] = p.joint_limits[j];
            *th = th.clamp(lo + 1e-3, hi - 1e-3);
        }
        theta
    }

    pub fn state_frame(&self) -> StateFrame {
        state_frame_of(&self.cfg, &self.object, self.ticks, &self.pose, &self.arm)
    }

    /// True when this tick ends a 20 Hz state period.
    pub fn state_due(&self) -> bool {
        self.ticks > 0 && (self.ticks * 2) / 5 != ((self.ticks - 1) * 2) / 5
    }
}

fn state_frame_of(
    cfg: &SessionConfig,
    object: &FlexibleObject<f64>,
    ticks: u64,
    pose: &BasePose<f64>,
    arm: &SimState<f64>,
) -> StateFrame {
    let (tip, _) = hand_point(&cfg.plant, object, arm);
    StateFrame {
        pose: [pose.x, pose.y, pose.psi],
        theta: arm.theta.clone(),
        f: cfg.plant.tensions(&arm.theta, &arm.lengths),
        tip,
        t: ticks as f64 * TICK,
    }
}

/// Hand position for joint angles `theta`.
pub fn forward(plant: &ArmPlant<f64>, theta: &[f64]) -> [f64; 2] {
    let mut phi = 0.0;
    let mut p = [0.0, 0.0];
    for (&t, &l) in theta.iter().zip(&plant.link_lengths) {
        phi += t;
        p[0] += l * phi.sin();
        p[1] -= l * phi.cos();
    }
    p
}
