//! WebSocket teleoperation server. One simulation thread owns the session and
//! ticks at 50 Hz; the accept loop and the client connection run on their
//! own threads and talk to it through channels. One client at a time.

use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use tungstenite::{Message, WebSocket};

use super::session::{Session, SessionConfig, TICK};
use super::{ClientMsg, ServerMsg, TeleopCommand, PROTOCOL_VERSION};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct ServeConfig {
    pub session: SessionConfig,
    /// Where demonstrations are written.
    pub record_dir: PathBuf,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self { session: SessionConfig::default(), record_dir: PathBuf::from(".") }
    }
}

/// What the simulation thread last did.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Status {
    pub ticks: u64,
    pub pose: [f64; 3],
    pub theta: Vec<f64>,
    pub applied: TeleopCommand,
    pub client_connected: bool,
    pub recording: bool,
    pub recordings: Vec<PathBuf>,
    pub last_error: Option<String>,
}

enum Inbound {
    Connected(Sender<ServerMsg>),
    Command(TeleopCommand),
    Record(bool),
    Disconnected,
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    status: Arc<Mutex<Status>>,
    threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn status(&self) -> Status {
        self.status.lock().expect("status lock").clone()
    }

    /// Blocks until the server stops.
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
    }
}

/// Binds `127.0.0.1:port` (0 picks a free port) and starts serving.
pub fn serve_teleop(cfg: ServeConfig, port: u16) -> Result<ServerHandle> {
    let listener = TcpListener::bind(("127.0.0.1", port))?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    std::fs::create_dir_all(&cfg.record_dir)?;
    let session = Session::new(cfg.session.clone())?;
    let stop = Arc::new(AtomicBool::new(false));
    let status = Arc::new(Mutex::new(Status::default()));
    let busy = Arc::new(AtomicBool::new(false));
    let (tx, rx) = mpsc::channel();

    let sim = {
        let (stop, status, dir) = (stop.clone(), status.clone(), cfg.record_dir.clone());
        std::thread::spawn(move || sim_loop(session, rx, stop, status, dir))
    };
    let accept = {
        let stop = stop.clone();
        std::thread::spawn(move || accept_loop(listener, tx, stop, busy))
    };
    Ok(ServerHandle { addr, stop, status, threads: vec![sim, accept] })
}

fn sim_loop(
    mut session: Session,
    rx: Receiver<Inbound>,
    stop: Arc<AtomicBool>,
    status: Arc<Mutex<Status>>,
    dir: PathBuf,
) {
    let mut client: Option<Sender<ServerMsg>> = None;
    let mut n_recordings = 0;
    let mut current_recording: Option<PathBuf> = None;
    let period = Duration::from_secs_f64(TICK);
    let mut next = Instant::now() + period;
    while !stop.load(Ordering::SeqCst) {
        for msg in rx.try_iter() {
            match msg {
                Inbound::Connected(tx) => client = Some(tx),
                Inbound::Command(cmd) => session.set_command(cmd),
                Inbound::Record(true) if !session.is_recording() => {
                    n_recordings += 1;
                    let path = dir.join(format!("demo-{n_recordings:03}.jsonl"));
                    let opened = std::fs::File::create(&path)
                        .and_then(|f| session.start_recording(Box::new(std::io::BufWriter::new(f))));
                    match opened {
                        Ok(()) => current_recording = Some(path),
                        Err(e) => send(&client, ServerMsg::Err { msg: format!("cannot record: {e}") }),
                    }
                }
                Inbound::Record(false) if session.is_recording() => {
                    if let Err(e) = session.stop_recording() {
                        send(&client, ServerMsg::Err { msg: format!("recording failed: {e}") });
                    }
                    if let Some(p) = current_recording.take() {
                        status.lock().expect("status lock").recordings.push(p);
                    }
                }
                Inbound::Record(_) => {}
                Inbound::Disconnected => {
                    session.disconnect();
                    client = None;
                }
            }
        }
        let applied = session.effective_command();
        let tick = session.tick();
        {
            let mut st = status.lock().expect("status lock");
            st.ticks = session.ticks();
            let pose = session.pose();
            st.pose = [pose.x, pose.y, pose.psi];
            st.theta = session.arm_state().theta.clone();
            st.applied = applied;
            st.client_connected = client.is_some();
            st.recording = session.is_recording();
            if let Err(e) = &tick {
                st.last_error = Some(e.to_string());
            }
        }
        if let Err(e) = tick {
            send(&client, ServerMsg::Err { msg: format!("simulation stopped: {e}") });
            break;
        }
        if session.state_due() {
            send(&client, ServerMsg::State(session.state_frame()));
        }
        let now = Instant::now();
        if next > now {
            std::thread::sleep(next - now);
            next += period;
        } else {
            next = now + period;
        }
    }
    let _ = session.stop_recording();
    if let Some(p) = current_recording.take() {
        status.lock().expect("status lock").recordings.push(p);
    }
}

fn send(client: &Option<Sender<ServerMsg>>, msg: ServerMsg) {
    if let Some(tx) = client {
        let _ = tx.send(msg);
    }
}

fn accept_loop(listener: TcpListener, tx: Sender<Inbound>, stop: Arc<AtomicBool>, busy: Arc<AtomicBool>) {
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                if busy.swap(true, Ordering::SeqCst) {
                    std::thread::spawn(move || refuse(stream));
                    continue;
                }
                let (tx, stop, busy) = (tx.clone(), stop.clone(), busy.clone());
                std::thread::spawn(move || {
                    let _ = client_loop(stream, &tx, &stop);
                    let _ = tx.send(Inbound::Disconnected);
                    busy.store(false, Ordering::SeqCst);
                });
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(5)),
            Err(_) => std::thread::sleep(Duration::from_millis(5)),
        }
    }
}

fn refuse(stream: TcpStream) {
    let _ = stream.set_nonblocking(false);
    if let Ok(mut ws) = tungstenite::accept(stream) {
        let _ = ws.send(Message::text(ServerMsg::Err { msg: "another client is connected".into() }.to_text()));
        let _ = ws.close(None);
        let _ = ws.flush();
    }
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut))
}

fn client_loop(stream: TcpStream, tx: &Sender<Inbound>, stop: &AtomicBool) -> Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut ws: WebSocket<TcpStream> = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => crate::Error::from(e),
        tungstenite::HandshakeError::Interrupted(_) => crate::Error::Config("websocket handshake interrupted".into()),
    })?;
    ws.get_ref().set_read_timeout(Some(Duration::from_millis(5)))?;
    let (out_tx, out_rx) = mpsc::channel();
    let _ = tx.send(Inbound::Connected(out_tx.clone()));
    while !stop.load(Ordering::SeqCst) {
        match ws.read() {
            Ok(Message::Text(text)) => match handle_text(text.as_str()) {
                Ok(Some(inbound)) => {
                    let _ = tx.send(inbound);
                }
                Ok(None) => {
                    let _ = out_tx.send(ServerMsg::Hello { ver: PROTOCOL_VERSION });
                }
                Err(msg) => {
                    let _ = out_tx.send(ServerMsg::Err { msg });
                }
            },
            Ok(Message::Binary(_)) => {
                let _ = out_tx.send(ServerMsg::Err { msg: "binary frames are not supported".into() });
            }
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(e) if is_timeout(&e) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => break,
            Err(e) => return Err(e.into()),
        }
        for msg in out_rx.try_iter() {
            match ws.write(Message::text(msg.to_text())) {
                Ok(()) => {}
                Err(e) if is_timeout(&e) => {}
                Err(e) => return Err(e.into()),
            }
        }
        match ws.flush() {
            Ok(()) => {}
            Err(e) if is_timeout(&e) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => break,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

/// Decodes one client frame. `Ok(None)` is an accepted hello.
fn handle_text(text: &str) -> std::result::Result<Option<Inbound>, String> {
    let msg: ClientMsg = serde_json::from_str(text).map_err(|e| format!("malformed message: {e}"))?;
    match msg {
        ClientMsg::Hello { ver } if ver == PROTOCOL_VERSION => Ok(None),
        ClientMsg::Hello { ver } => {
            Err(format!("unsupported protocol version {ver}, server speaks {PROTOCOL_VERSION}"))
        }
        ClientMsg::Cmd { twist, ee_delta, lift, grip, .. } => {
            let cmd = TeleopCommand { twist, ee_delta, lift, grip };
            cmd.check()?;
            Ok(Some(Inbound::Command(cmd)))
        }
        ClientMsg::Record { on } => Ok(Some(Inbound::Record(on))),
    }
}
