//! Demonstration files: JSON lines, a header record first, then one step
//! record per control tick with the applied command and the resulting state.

use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tendon_core::Error as CoreError;

use super::session::{Session, SessionConfig, SessionSnapshot, TICK};
use super::{StateFrame, TeleopCommand, PROTOCOL_VERSION};
use crate::error::Result;

/// One line of a demonstration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DemoRecord {
    Header(Box<DemoHeader>),
    Step(DemoStep),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoHeader {
    pub ver: u32,
    /// Control tick, s.
    pub dt: f64,
    pub session: SessionConfig,
    pub start: SessionSnapshot,
}

impl DemoHeader {
    pub fn new(session: SessionConfig, start: SessionSnapshot) -> Self {
        Self { ver: PROTOCOL_VERSION, dt: TICK, session, start }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoStep {
    /// Simulated time at the end of the tick, s.
    pub t: f64,
    pub cmd: TeleopCommand,
    pub state: StateFrame,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Demonstration {
    pub header: DemoHeader,
    pub steps: Vec<DemoStep>,
}

fn format_err(offset: usize, msg: impl Into<String>) -> CoreError {
    CoreError::Format { offset: offset as u64, msg: msg.into() }
}

impl Demonstration {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut header: Option<DemoHeader> = None;
        let mut steps: Vec<DemoStep> = Vec::new();
        let mut offset = 0;
        while offset < bytes.len() {
            let rest = &bytes[offset..];
            let (line, next) = match rest.iter().position(|&b| b == b'\n') {
                Some(i) => (&rest[..i], offset + i + 1),
                None => (rest, bytes.len()),
            };
            if line.iter().all(u8::is_ascii_whitespace) {
                offset = next;
                continue;
            }
            let at_error = |e: serde_json::Error| {
                let col = if e.line() == 1 { e.column().saturating_sub(1) } else { line.len() };
                format_err(offset + col.min(line.len()), e.to_string())
            };
            let value: serde_json::Value = serde_json::from_slice(line).map_err(at_error)?;
            if header.is_none() {
                if let Some(ver) = value.get("ver").and_then(|v| v.as_u64()) {
                    if ver != PROTOCOL_VERSION as u64 {
                        return Err(format_err(offset, format!("unsupported demonstration version {ver}")).into());
                    }
                }
            }
            let record: DemoRecord = serde_json::from_value(value).map_err(|e| format_err(offset, e.to_string()))?;
            match (record, &header) {
                (DemoRecord::Header(h), None) => {
                    let h = *h;
                    if h.dt != TICK {
                        return Err(format_err(offset, format!("tick {} s differs from {TICK} s", h.dt)).into());
                    }
                    header = Some(h);
                }
                (DemoRecord::Step(step), Some(_)) => {
                    if steps.last().is_some_and(|p| step.t <= p.t) {
                        return Err(format_err(offset, "timestamps must increase strictly").into());
                    }
                    step.cmd.check().map_err(|m| format_err(offset, m))?;
                    steps.push(step);
                }
                (DemoRecord::Header(_), Some(_)) => return Err(format_err(offset, "second header record").into()),
                (DemoRecord::Step(_), None) => {
                    return Err(format_err(offset, "the first record must be the header").into())
                }
            }
            offset = next;
        }
        let header = header.ok_or_else(|| format_err(0, "missing header record"))?;
        Ok(Self { header, steps })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read(path)?)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out =
            serde_json::to_string(&DemoRecord::Header(Box::new(self.header.clone()))).expect("header serializes");
        out.push('\n');
        for s in &self.steps {
            out.push_str(&serde_json::to_string(&DemoRecord::Step(s.clone())).expect("step serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub steps: usize,
    pub sim_time: f64,
    pub final_theta: Vec<f64>,
    pub recorded_final_theta: Vec<f64>,
    /// Largest joint-angle difference to the recording over all steps, rad.
    pub max_theta_error: f64,
    /// Final base position difference to the recording, m.
    pub final_pose_error: f64,
    pub final_pose: [f64; 3],
}

/// Re-executes the recorded commands open-loop on a fresh session started
/// from the recorded snapshot. Ticks are paced at `speed` times real time;
/// `None` runs as fast as possible.
pub fn replay(demo: &Demonstration, speed: Option<f64>) -> Result<ReplayReport> {
    if let Some(s) = speed {
        if !(s > 0.0 && s.is_finite()) {
            return Err(crate::Error::Config("replay speed must be positive".into()));
        }
    }
    let mut session = Session::from_snapshot(demo.header.session.clone(), demo.header.start.clone())?;
    let start = Instant::now();
    let mut max_err: f64 = 0.0;
    for (k, step) in demo.steps.iter().enumerate() {
        session.advance(step.cmd)?;
        let frame = session.state_frame();
        for (a, b) in frame.theta.iter().zip(&step.state.theta) {
            max_err = max_err.max((a - b).abs());
        }
        if let Some(s) = speed {
            let due = Duration::from_secs_f64((k + 1) as f64 * TICK / s);
            if let Some(wait) = due.checked_sub(start.elapsed()) {
                std::thread::sleep(wait);
            }
        }
    }
    let frame = session.state_frame();
    let (recorded_theta, recorded_pose) = match demo.steps.last() {
        Some(s) => (s.state.theta.clone(), s.state.pose),
        None => (frame.theta.clone(), frame.pose),
    };
    Ok(ReplayReport {
        steps: demo.steps.len(),
        sim_time: demo.steps.len() as f64 * TICK,
        final_pose_error: (frame.pose[0] - recorded_pose[0]).hypot(frame.pose[1] - recorded_pose[1]),
        final_theta: frame.theta,
        recorded_final_theta: recorded_theta,
        max_theta_error: max_err,
        final_pose: frame.pose,
    })
}

pub fn replay_file(path: &Path, speed: Option<f64>) -> Result<ReplayReport> {
    replay(&Demonstration::load(path)?, speed)
}
