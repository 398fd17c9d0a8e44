//! TCP listener and per-connection reader/writer threads.

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::{bounded, Receiver, RecvTimeoutError};
use upsim::controller::ControllerMode;
use upsim::controller::Thresholds;
use upsim::plant::{Battery, InverterSpec};

use crate::protocol::{ClientMessage, Command, ErrorCode, ServerMessage, SessionInfo, Speed};
use crate::session::{GatewayConfig, LoopLink, Outbox, SimLoop, SUBSCRIBER_BUFFER};
use crate::GatewayError;

const POLL: Duration = Duration::from_millis(20);

/// Static session description handed to every client.
#[derive(Debug, Clone)]
struct SessionTemplate {
    mode: ControllerMode,
    thresholds: Thresholds,
    battery: Battery,
    inverter: InverterSpec,
    interval_ms: u64,
    speed: Speed,
}

impl SessionTemplate {
    fn info(&self, writer: bool) -> SessionInfo {
        SessionInfo::new(
            self.mode,
            &self.thresholds,
            &self.battery,
            &self.inverter,
            self.interval_ms,
            self.speed,
            writer,
        )
    }
}

/// Connection id of the current writer, if any.
type WriterSlot = Arc<Mutex<Option<u64>>>;

/// A running gateway. Dropping it without [`ServerHandle::shutdown`] leaves
/// the threads running.
#[derive(Debug)]
pub struct ServerHandle {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Stops the listener and the loop and waits for both.
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    /// Blocks until the server stops (it only stops on [`Self::shutdown`] or a
    /// loop failure).
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

/// Binds `addr` and starts serving. Port 0 picks a free port; see
/// [`ServerHandle::local_addr`].
pub fn serve(addr: impl ToSocketAddrs, cfg: GatewayConfig) -> Result<ServerHandle, GatewayError> {
    let stop = Arc::new(AtomicBool::new(false));
    let (sim_loop, link) = SimLoop::new(&cfg, stop.clone())?;
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let local_addr = listener.local_addr()?;

    let template = SessionTemplate {
        mode: cfg.sim.mode,
        thresholds: cfg.sim.thresholds,
        battery: cfg.sim.battery,
        inverter: cfg.sim.inverter,
        interval_ms: cfg.interval_ms,
        speed: cfg.speed,
    };

    let loop_stop = stop.clone();
    let loop_thread = std::thread::Builder::new().name("upsim-loop".into()).spawn(move || {
        if let Err(e) = sim_loop.run() {
            eprintln!("simulation loop stopped: {e}");
        }
        loop_stop.store(true, Ordering::Relaxed);
    })?;

    let accept_stop = stop.clone();
    let accept_thread = std::thread::Builder::new()
        .name("upsim-accept".into())
        .spawn(move || accept_loop(listener, link, template, accept_stop))?;

    Ok(ServerHandle { local_addr, stop, threads: vec![loop_thread, accept_thread] })
}

fn accept_loop(listener: TcpListener, link: LoopLink, template: SessionTemplate, stop: Arc<AtomicBool>) {
    let writer: WriterSlot = Arc::new(Mutex::new(None));
    let next_id = AtomicU64::new(1);
    let mut conns = Vec::new();
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                let id = next_id.fetch_add(1, Ordering::Relaxed);
                {
                    let mut w = writer.lock().unwrap();
                    if w.is_none() {
                        *w = Some(id);
                    }
                }
                match spawn_connection(id, stream, link.clone(), template.clone(), writer.clone(), stop.clone()) {
                    Ok(handles) => conns.extend(handles),
                    Err(_) => release_writer(&writer, id),
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(POLL),
            Err(_) => std::thread::sleep(POLL),
        }
        conns.retain(|h: &JoinHandle<()>| !h.is_finished());
    }
    for h in conns {
        let _ = h.join();
    }
}

fn release_writer(slot: &WriterSlot, id: u64) {
    let mut w = slot.lock().unwrap();
    if *w == Some(id) {
        *w = None;
    }
}

fn spawn_connection(
    id: u64,
    stream: TcpStream,
    link: LoopLink,
    template: SessionTemplate,
    writer: WriterSlot,
    stop: Arc<AtomicBool>,
) -> std::io::Result<[JoinHandle<()>; 2]> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(POLL))?;
    stream.set_nodelay(true)?;
    let out_stream = stream.try_clone()?;
    let (out_tx, out_rx) = bounded::<String>(SUBSCRIBER_BUFFER);
    let alive = Arc::new(AtomicBool::new(true));

    let w_alive = alive.clone();
    let w_stop = stop.clone();
    let writer_thread = std::thread::Builder::new()
        .name(format!("upsim-conn{id}-tx"))
        .spawn(move || write_loop(out_stream, out_rx, w_alive, w_stop))?;

    let reader_thread = std::thread::Builder::new().name(format!("upsim-conn{id}-rx")).spawn(move || {
        let conn = Connection { id, link, template, writer: writer.clone(), out: out_tx, greeted: false };
        conn.read_loop(&stream, &stop);
        alive.store(false, Ordering::Relaxed);
        release_writer(&writer, id);
        let _ = stream.shutdown(Shutdown::Both);
    })?;
    Ok([reader_thread, writer_thread])
}

fn write_loop(mut stream: TcpStream, out: Receiver<String>, alive: Arc<AtomicBool>, stop: Arc<AtomicBool>) {
    while alive.load(Ordering::Relaxed) && !stop.load(Ordering::Relaxed) {
        match out.recv_timeout(POLL) {
            Ok(mut line) => {
                line.push('\n');
                if stream.write_all(line.as_bytes()).is_err() {
                    break;
                }
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break,
        }
    }
    let _ = stream.shutdown(Shutdown::Both);
}

struct Connection {
    id: u64,
    link: LoopLink,
    template: SessionTemplate,
    writer: WriterSlot,
    out: Outbox,
    greeted: bool,
}

impl Connection {
    fn read_loop(mut self, stream: &TcpStream, stop: &AtomicBool) {
        let mut reader = BufReader::new(stream);
        let mut buf = Vec::new();
        while !stop.load(Ordering::Relaxed) {
            match reader.read_until(b'\n', &mut buf) {
                Ok(0) => return,
                Ok(_) if buf.ends_with(b"\n") => {
                    let line = String::from_utf8_lossy(&buf).trim().to_string();
                    buf.clear();
                    if !line.is_empty() && !self.handle_line(&line) {
                        return;
                    }
                }
                // EOF mid-line.
                Ok(_) => return,
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {}
                Err(_) => return,
            }
        }
    }

    /// Returns false once the connection should close.
    fn handle_line(&mut self, line: &str) -> bool {
        let msg = match serde_json::from_str::<ClientMessage>(line) {
            Ok(m) => m,
            Err(e) => return self.reply(ServerMessage::err(ErrorCode::BadRequest, e.to_string())),
        };
        match msg {
            ClientMessage::Hello => {
                let is_writer = *self.writer.lock().unwrap() == Some(self.id);
                if !self.reply(ServerMessage::Session(self.template.info(is_writer))) {
                    return false;
                }
                if !self.greeted {
                    self.greeted = true;
                    return self.link.subscribe.send(self.out.clone()).is_ok();
                }
                true
            }
            ClientMessage::Cmd(_) if !self.greeted => {
                self.reply(ServerMessage::err(ErrorCode::HelloRequired, "send hello first"))
            }
            ClientMessage::Cmd(cmd) => self.command(cmd),
        }
    }

    fn command(&mut self, cmd: Command) -> bool {
        if *self.writer.lock().unwrap() != Some(self.id) {
            return self.reply(ServerMessage::err(ErrorCode::ReadOnly, "another connection holds the writer role"));
        }
        if let Err(code) = cmd.validate() {
            return self.reply(ServerMessage::err(code, format!("{cmd:?} outside accepted range")));
        }
        match self.link.commands.submit(cmd, self.out.clone()) {
            Ok(()) => true,
            Err(code) => self.reply(ServerMessage::err(code, "command queue is full")),
        }
    }

    fn reply(&self, msg: ServerMessage) -> bool {
        self.out.send_timeout(msg.to_line(), crate::session::SUBSCRIBER_TIMEOUT).is_ok()
    }
}
