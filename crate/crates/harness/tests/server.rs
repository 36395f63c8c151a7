use std::net::TcpStream;
use std::time::{Duration, Instant};

use tendon_harness::teleop::*;
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

type Client = WebSocket<MaybeTlsStream<TcpStream>>;

fn start(dir: &std::path::Path) -> ServerHandle {
    serve_teleop(ServeConfig { session: SessionConfig::default(), record_dir: dir.to_path_buf() }, 0).unwrap()
}

fn connect(h: &ServerHandle) -> Client {
    let (ws, _) = tungstenite::connect(format!("ws://{}", h.local_addr())).unwrap();
    if let MaybeTlsStream::Plain(s) = ws.get_ref() {
        s.set_read_timeout(Some(Duration::from_millis(20))).unwrap();
    }
    ws
}

fn send(ws: &mut Client, text: &str) {
    ws.send(Message::text(text)).unwrap();
}

fn cmd(vx: f64) -> String {
    format!(r#"{{"type":"cmd","twist":[{vx},0,0],"ee_delta":[0,0],"lift":0,"grip":0,"seq":0}}"#)
}

/// Reads frames until one satisfies `pred` or the deadline passes.
fn wait_for(ws: &mut Client, secs: f64, mut pred: impl FnMut(&ServerMsg) -> bool) -> Option<ServerMsg> {
    let end = Instant::now() + Duration::from_secs_f64(secs);
    while Instant::now() < end {
        match ws.read() {
            Ok(Message::Text(t)) => {
                let msg: ServerMsg = serde_json::from_str(t.as_str()).unwrap();
                if pred(&msg) {
                    return Some(msg);
                }
            }
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(_) => return None,
        }
    }
    None
}

fn wait_ticks(h: &ServerHandle, n: u64) {
    let t0 = h.status().ticks;
    while h.status().ticks < t0 + n {
        std::thread::sleep(Duration::from_millis(2));
    }
}

#[test]
fn hello_and_malformed_frames() {
    let dir = tempfile::tempdir().unwrap();
    let h = start(dir.path());
    let mut ws = connect(&h);
    send(&mut ws, r#"{"type":"hello","ver":1}"#);
    assert_eq!(wait_for(&mut ws, 2.0, |m| !matches!(m, ServerMsg::State(_))), Some(ServerMsg::Hello { ver: 1 }));

    send(&mut ws, "{not json");
    assert!(matches!(wait_for(&mut ws, 2.0, |m| !matches!(m, ServerMsg::State(_))), Some(ServerMsg::Err { .. })));
    send(&mut ws, r#"{"type":"hello","ver":9}"#);
    assert!(matches!(wait_for(&mut ws, 2.0, |m| !matches!(m, ServerMsg::State(_))), Some(ServerMsg::Err { .. })));
    ws.send(Message::binary(vec![1u8, 2, 3])).unwrap();
    assert!(matches!(wait_for(&mut ws, 2.0, |m| !matches!(m, ServerMsg::State(_))), Some(ServerMsg::Err { .. })));

    let first = wait_for(&mut ws, 2.0, |m| matches!(m, ServerMsg::State(_)));
    let Some(ServerMsg::State(a)) = first else { panic!("no state frame") };
    let Some(ServerMsg::State(b)) = wait_for(&mut ws, 2.0, |m| matches!(m, ServerMsg::State(_))) else {
        panic!("session stopped after malformed input")
    };
    assert!(b.t > a.t);
    assert!(h.status().last_error.is_none());
    h.shutdown();
}

#[test]
fn forward_twist_drives_half_a_meter_and_disconnect_halts() {
    let dir = tempfile::tempdir().unwrap();
    let h = start(dir.path());
    let mut ws = connect(&h);
    send(&mut ws, r#"{"type":"hello","ver":1}"#);
    wait_for(&mut ws, 2.0, |m| matches!(m, ServerMsg::Hello { .. })).unwrap();
    let t0 = Instant::now();
    while t0.elapsed() < Duration::from_secs(1) {
        send(&mut ws, &cmd(0.5));
        std::thread::sleep(Duration::from_millis(100));
    }
    send(&mut ws, &cmd(0.0));
    wait_ticks(&h, 5);
    let x = h.status().pose[0];
    assert!((x - 0.5).abs() <= 0.05, "drove {x} m");

    send(&mut ws, &cmd(0.5));
    wait_ticks(&h, 5);
    drop(ws);
    let end = Instant::now() + Duration::from_secs(2);
    while h.status().client_connected && Instant::now() < end {
        std::thread::sleep(Duration::from_millis(5));
    }
    assert!(!h.status().client_connected);
    wait_ticks(&h, 2);
    let st = h.status();
    assert_eq!(st.applied, TeleopCommand::default());
    wait_ticks(&h, 10);
    assert_eq!(h.status().pose, st.pose);
    h.shutdown();
}

#[test]
fn missing_commands_trigger_the_safety_stop() {
    let dir = tempfile::tempdir().unwrap();
    let h = start(dir.path());
    let mut ws = connect(&h);
    send(&mut ws, &cmd(0.4));
    wait_ticks(&h, 5);
    assert_eq!(h.status().applied.twist[0], 0.4);
    wait_ticks(&h, 30);
    let st = h.status();
    assert_eq!(st.applied, TeleopCommand::default());
    assert!(st.client_connected);
    wait_ticks(&h, 5);
    assert_eq!(h.status().pose, st.pose);
    h.shutdown();
}

#[test]
fn second_client_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let h = start(dir.path());
    let mut first = connect(&h);
    wait_for(&mut first, 2.0, |m| matches!(m, ServerMsg::State(_))).unwrap();
    let mut second = connect(&h);
    let refusal = wait_for(&mut second, 2.0, |_| true);
    assert!(matches!(refusal, Some(ServerMsg::Err { msg }) if msg.contains("another client")));
    assert!(wait_for(&mut first, 2.0, |m| matches!(m, ServerMsg::State(_))).is_some());
    h.shutdown();
}

#[test]
fn recorded_session_replays() {
    let dir = tempfile::tempdir().unwrap();
    let h = start(dir.path());
    let mut ws = connect(&h);
    send(&mut ws, r#"{"type":"record","on":true}"#);
    for k in 0..10 {
        let c = format!(
            r#"{{"type":"cmd","twist":[0.2,0,0.3],"ee_delta":[{},0.02],"lift":0.05,"grip":{},"seq":{k}}}"#,
            if k % 2 == 0 { 0.05 } else { -0.05 },
            k % 2
        );
        send(&mut ws, &c);
        wait_ticks(&h, 4);
    }
    send(&mut ws, r#"{"type":"record","on":false}"#);
    let end = Instant::now() + Duration::from_secs(2);
    while h.status().recordings.is_empty() && Instant::now() < end {
        std::thread::sleep(Duration::from_millis(5));
    }
    let recordings = h.status().recordings;
    assert_eq!(recordings.len(), 1);
    h.shutdown();
    let demo = Demonstration::load(&recordings[0]).unwrap();
    assert!(demo.steps.len() >= 35, "{}", demo.steps.len());
    let rep = replay(&demo, None).unwrap();
    assert!(rep.max_theta_error < 1e-6, "{}", rep.max_theta_error);
    assert!(rep.final_pose_error < 1e-6);
}
