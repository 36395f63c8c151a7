//! Teleoperation: wire protocol, the simulated robot session, the WebSocket
//! server and demonstration files.
//!
//! Frames are single-line JSON text. Client to server:
//!
//! ```text
//! {"type":"hello","ver":1}
//! {"type":"cmd","twist":[vx,vy,wz],"ee_delta":[dx,dy],"lift":dz,"grip":0|1,"seq":n}
//! {"type":"record","on":true|false}
//! ```
//!
//! Server to client:
//!
//! ```text
//! {"type":"hello","ver":1}
//! {"type":"state","pose":[x,y,psi],"theta":[..],"f":[..],"tip":[x,y],"t":sim_time}
//! {"type":"err","msg":"..."}
//! ```
//!
//! `twist` is the base body twist (m/s, m/s, rad/s); `ee_delta` and `lift`
//! are hand and lift velocities (m/s), held until the next command.

pub mod demo;
pub mod server;
pub mod session;

use serde::{Deserialize, Serialize};

pub use demo::{replay, replay_file, DemoHeader, DemoRecord, DemoStep, Demonstration, ReplayReport};
pub use server::{serve_teleop, ServeConfig, ServerHandle, Status};
pub use session::{Session, SessionConfig, SessionSnapshot};

pub const PROTOCOL_VERSION: u32 = 1;

/// One operator command, applied every tick until replaced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeleopCommand {
    pub twist: [f64; 3],
    pub ee_delta: [f64; 2],
    pub lift: f64,
    pub grip: u8,
}

impl TeleopCommand {
    /// Motion stopped, gripper unchanged.
    pub fn halted(&self) -> Self {
        Self { grip: self.grip, ..Self::default() }
    }

    pub fn check(&self) -> Result<(), String> {
        if self.grip > 1 {
            return Err(format!("grip must be 0 or 1, got {}", self.grip));
        }
        if self.twist.iter().chain(&self.ee_delta).chain([&self.lift]).any(|v| !v.is_finite()) {
            return Err("command values must be finite".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClientMsg {
    Hello { ver: u32 },
    Cmd { twist: [f64; 3], ee_delta: [f64; 2], lift: f64, grip: u8, seq: u64 },
    Record { on: bool },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFrame {
    pub pose: [f64; 3],
    pub theta: Vec<f64>,
    pub f: Vec<f64>,
    pub tip: [f64; 2],
    pub t: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ServerMsg {
    Hello { ver: u32 },
    State(StateFrame),
    Err { msg: String },
}

impl ServerMsg {
    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("server frames always serialize")
    }
}
