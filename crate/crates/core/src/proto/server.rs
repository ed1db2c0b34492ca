use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::thread::{self, JoinHandle};

use serde_json::{json, Value as Json};

use super::{
    dispatch, hello, is_exec, load_trace, notification, parse_request, pause_json, response_err, response_ok,
    timeline_json, ProtoError, Request, MAX_LINE, PROTOCOL_VERSION, SESSION_METHODS,
};
use crate::ttd::DebugSession;

struct Peer {
    id: u64,
    out: Mutex<TcpStream>,
}

impl Peer {
    fn send(&self, v: &Json) {
        let mut line = serde_json::to_vec(v).expect("json values serialize");
        line.push(b'\n');
        let mut out = self.out.lock().unwrap_or_else(|e| e.into_inner());
        // A vanished client is noticed by its reader thread.
        let _ = out.write_all(&line).and_then(|_| out.flush());
    }
}

type Observers = Arc<Mutex<Vec<Arc<Peer>>>>;

fn broadcast(observers: &Observers, v: &Json) {
    let peers = observers.lock().unwrap_or_else(|e| e.into_inner()).clone();
    for p in peers {
        p.send(v);
    }
}

struct Job {
    req: Request,
    peer: Arc<Peer>,
    exec: bool,
}

struct SessionEntry {
    tx: mpsc::Sender<Job>,
    /// Set while an exec.* command is queued or running.
    stepping: Arc<AtomicBool>,
    owner: u64,
    observers: Observers,
}

#[derive(Default)]
struct Registry {
    sessions: HashMap<String, SessionEntry>,
    peers: HashMap<u64, Arc<Peer>>,
    next_session: u64,
    next_peer: u64,
}

type Shared = Arc<Mutex<Registry>>;

fn lock(r: &Shared) -> std::sync::MutexGuard<'_, Registry> {
    r.lock().unwrap_or_else(|e| e.into_inner())
}

/// A running server. Dropping the handle leaves the server running.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    registry: Shared,
    accept: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the server stops.
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        for p in lock(&self.registry).peers.values() {
            let _ = p.out.lock().unwrap_or_else(|e| e.into_inner()).shutdown(Shutdown::Both);
        }
    }
}

/// Binds `addr` (e.g. `127.0.0.1:9229`, port 0 for any) and serves in
/// background threads.
pub fn serve(addr: &str) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let registry: Shared = Arc::default();
    let accept = {
        let stop = stop.clone();
        let registry = registry.clone();
        thread::spawn(move || {
            for conn in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let registry = registry.clone();
                thread::spawn(move || {
                    let _ = connection(stream, registry);
                });
            }
        })
    };
    Ok(ServerHandle { addr, stop, registry, accept: Some(accept) })
}

fn connection(stream: TcpStream, registry: Shared) -> io::Result<()> {
    let _ = stream.set_nodelay(true);
    let reader = stream.try_clone()?;
    let peer = {
        let mut reg = lock(&registry);
        reg.next_peer += 1;
        let peer = Arc::new(Peer { id: reg.next_peer, out: Mutex::new(stream) });
        reg.peers.insert(peer.id, peer.clone());
        peer
    };
    peer.send(&hello());
    let res = read_loop(reader, &peer, &registry);
    disconnect(&peer, &registry);
    res
}

fn read_loop(reader: TcpStream, peer: &Arc<Peer>, registry: &Shared) -> io::Result<()> {
    let mut reader = BufReader::new(reader);
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = reader.by_ref().take(MAX_LINE as u64 + 1).read_until(b'\n', &mut buf)?;
        if n == 0 {
            return Ok(());
        }
        if buf.last() != Some(&b'\n') && buf.len() > MAX_LINE {
            peer.send(&response_err(&Json::Null, &ProtoError::new("invalid-request", "request line too long")));
            return Ok(());
        }
        if buf.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        match parse_request(&buf) {
            Ok(req) => handle(req, peer, registry),
            Err((id, e)) => peer.send(&response_err(&id, &e)),
        }
    }
}

fn disconnect(peer: &Arc<Peer>, registry: &Shared) {
    let mut reg = lock(registry);
    reg.peers.remove(&peer.id);
    let owned: Vec<String> = reg.sessions.iter().filter(|(_, s)| s.owner == peer.id).map(|(k, _)| k.clone()).collect();
    for sid in owned {
        if let Some(s) = reg.sessions.remove(&sid) {
            s.observers.lock().unwrap_or_else(|e| e.into_inner()).retain(|p| p.id != peer.id);
            broadcast(&s.observers, &notification("sessionEnded", json!({ "session": sid, "reason": "closed" })));
        }
    }
    for s in reg.sessions.values() {
        s.observers.lock().unwrap_or_else(|e| e.into_inner()).retain(|p| p.id != peer.id);
    }
}

fn session_param(req: &Request) -> Result<String, ProtoError> {
    match req.params.get("session") {
        Some(Json::String(s)) => Ok(s.clone()),
        _ => Err(ProtoError::new("invalid-params", "missing session")),
    }
}

fn handle(req: Request, peer: &Arc<Peer>, registry: &Shared) {
    let reply = |r: Result<Json, ProtoError>| match r {
        Ok(v) => peer.send(&response_ok(&req.id, v)),
        Err(e) => peer.send(&response_err(&req.id, &e)),
    };
    match req.method.as_str() {
        "session.open" => reply(open(&req, peer, registry)),
        "session.attach" => reply(session_param(&req).and_then(|sid| {
            let reg = lock(registry);
            let s = reg.sessions.get(&sid).ok_or_else(|| unknown_session(&sid))?;
            let mut obs = s.observers.lock().unwrap_or_else(|e| e.into_inner());
            if !obs.iter().any(|p| p.id == peer.id) {
                obs.push(peer.clone());
            }
            Ok(json!({ "session": sid }))
        })),
        "session.close" => reply(session_param(&req).and_then(|sid| {
            let s = lock(registry).sessions.remove(&sid).ok_or_else(|| unknown_session(&sid))?;
            // Queued commands still complete; the worker exits once the queue drains.
            broadcast(&s.observers, &notification("sessionEnded", json!({ "session": sid, "reason": "closed" })));
            Ok(json!({ "closed": sid }))
        })),
        "session.list" => {
            let reg = lock(registry);
            let mut ids: Vec<&String> = reg.sessions.keys().collect();
            ids.sort();
            reply(Ok(json!(ids)))
        }
        m if SESSION_METHODS.contains(&m) => {
            let sid = match session_param(&req) {
                Ok(s) => s,
                Err(e) => return reply(Err(e)),
            };
            let exec = is_exec(m);
            let reg = lock(registry);
            let Some(s) = reg.sessions.get(&sid) else { return reply(Err(unknown_session(&sid))) };
            if exec && s.stepping.swap(true, Ordering::SeqCst) {
                return reply(Err(ProtoError::new("busy", format!("session {sid} is already executing a command"))));
            }
            let job = Job { req: req.clone(), peer: peer.clone(), exec };
            if s.tx.send(job).is_err() {
                s.stepping.store(false, Ordering::SeqCst);
                reply(Err(ProtoError::new("engine-fault", format!("session {sid} is no longer running"))));
            }
        }
        m => reply(Err(ProtoError::new("unknown-method", format!("unknown method {m}")))),
    }
}

fn unknown_session(sid: &str) -> ProtoError {
    ProtoError::new("unknown-session", format!("no session {sid}"))
}

fn open(req: &Request, peer: &Arc<Peer>, registry: &Shared) -> Result<Json, ProtoError> {
    let trace = load_trace(&req.params)?;
    let session = DebugSession::open(trace).map_err(ProtoError::from)?;
    let events = session.trace().end.events;
    let pause = session.pause().map(|p| pause_json(&session, &p));
    let timeline = timeline_json(&session);
    let (tx, rx) = mpsc::channel();
    let stepping = Arc::new(AtomicBool::new(false));
    let observers: Observers = Arc::new(Mutex::new(vec![peer.clone()]));
    let sid = {
        let mut reg = lock(registry);
        reg.next_session += 1;
        let sid = format!("s{}", reg.next_session);
        reg.sessions.insert(
            sid.clone(),
            SessionEntry { tx, stepping: stepping.clone(), owner: peer.id, observers: observers.clone() },
        );
        sid
    };
    let worker_sid = sid.clone();
    thread::spawn(move || worker(session, worker_sid, rx, stepping, observers));
    Ok(json!({
        "session": sid,
        "events": events,
        "protocol": PROTOCOL_VERSION,
        "checkpoints": timeline["checkpoints"],
        "pause": pause,
    }))
}

/// Owns one session and runs its commands in arrival order.
fn worker(
    mut session: DebugSession,
    sid: String,
    rx: mpsc::Receiver<Job>,
    stepping: Arc<AtomicBool>,
    observers: Observers,
) {
    let mut faulted = false;
    for job in rx {
        let response = if faulted {
            response_err(&job.req.id, &ProtoError::new("engine-fault", "session faulted earlier"))
        } else {
            match catch_unwind(AssertUnwindSafe(|| dispatch(&mut session, &sid, &job.req.method, &job.req.params))) {
                Ok(out) => {
                    for n in &out.notifications {
                        broadcast(&observers, n);
                    }
                    match out.result {
                        Ok(v) => response_ok(&job.req.id, v),
                        Err(e) => response_err(&job.req.id, &e),
                    }
                }
                Err(_) => {
                    faulted = true;
                    response_err(
                        &job.req.id,
                        &ProtoError::new("engine-fault", "internal error while executing command"),
                    )
                }
            }
        };
        if job.exec {
            stepping.store(false, Ordering::SeqCst);
        }
        job.peer.send(&response);
    }
}
