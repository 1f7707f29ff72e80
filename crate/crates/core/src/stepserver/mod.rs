//! Reference HTTP server exposing one in-process backend over the wire
//! protocol, so members of an ensemble can live in separate processes or
//! on separate machines.

pub mod wire;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use log::{debug, warn};
use serde::de::DeserializeOwned;
use serde::Serialize;
use tiny_http::{Header, Method, Request, Response, Server};

use crate::backends::{Backend, Session};
use crate::error::{Error, Result};
use crate::vocab::write_vocab_file;
use wire::*;

#[derive(Clone, Debug)]
pub struct ServeOptions {
    /// Request-handling threads.
    pub workers: usize,
    /// Send only the top `k` entries plus `rest_mass` for vocabularies
    /// larger than `sparse_above`.
    pub sparse_top_k: Option<usize>,
    pub sparse_above: usize,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            workers: 4,
            sparse_top_k: None,
            sparse_above: 50_000,
        }
    }
}

type SharedSession = Arc<Mutex<Box<dyn Session>>>;

struct State {
    backend: Arc<dyn Backend>,
    vocab_body: String,
    sessions: Mutex<HashMap<String, SharedSession>>,
    next_id: AtomicU64,
    options: ServeOptions,
}

/// A running server. Dropping it stops the workers.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the workers exit (they only exit on shutdown).
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(self) {
        drop(self)
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

/// Serves `backend` on `addr` (use port 0 for an ephemeral port).
pub fn serve(backend: Arc<dyn Backend>, addr: &str, options: ServeOptions) -> Result<ServerHandle> {
    let server = Server::http(addr).map_err(|e| Error::Config(format!("cannot bind {addr}: {e}")))?;
    let bound = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| Error::Config(format!("{addr} is not an IP address")))?;
    let server = Arc::new(server);
    let state = Arc::new(State {
        vocab_body: write_vocab_file(backend.vocabulary()),
        backend,
        sessions: Mutex::new(HashMap::new()),
        next_id: AtomicU64::new(1),
        options: options.clone(),
    });
    let stop = Arc::new(AtomicBool::new(false));
    let workers = (0..options.workers.max(1))
        .map(|_| {
            let (server, state, stop) = (server.clone(), state.clone(), stop.clone());
            std::thread::spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    match server.recv_timeout(Duration::from_millis(50)) {
                        Ok(Some(req)) => handle(&state, req),
                        Ok(None) => {}
                        Err(e) => {
                            warn!("stepserver: accept failed: {e}");
                            break;
                        }
                    }
                }
            })
        })
        .collect();
    debug!("stepserver listening on {bound}");
    Ok(ServerHandle {
        addr: bound,
        stop,
        workers,
    })
}

struct Reply {
    status: u16,
    body: String,
    content_type: &'static str,
}

impl Reply {
    fn json<T: Serialize>(value: &T) -> Self {
        Reply {
            status: 200,
            body: serde_json::to_string(value).expect("wire types serialize"),
            content_type: "application/json",
        }
    }

    fn error(status: u16, code: &str, message: impl Into<String>) -> Self {
        Reply {
            status,
            ..Reply::json(&ErrorBody::new(code, message))
        }
    }
}

fn handle(state: &State, mut req: Request) {
    let reply = route(state, &mut req);
    let header = Header::from_bytes(&b"Content-Type"[..], reply.content_type.as_bytes()).expect("static header");
    let response = Response::from_string(reply.body)
        .with_status_code(reply.status)
        .with_header(header);
    if let Err(e) = req.respond(response) {
        debug!("stepserver: client went away: {e}");
    }
}

fn read_body<T: DeserializeOwned>(req: &mut Request) -> std::result::Result<T, Reply> {
    let mut body = String::new();
    req.as_reader()
        .read_to_string(&mut body)
        .map_err(|e| Reply::error(400, codes::BAD_REQUEST, format!("unreadable body: {e}")))?;
    serde_json::from_str(&body).map_err(|e| Reply::error(400, codes::BAD_REQUEST, format!("malformed request: {e}")))
}

fn backend_error(e: Error) -> Reply {
    match e {
        Error::Contract(msg) => Reply::error(400, codes::BAD_IDS, msg),
        other => Reply::error(500, codes::INTERNAL, other.to_string()),
    }
}

fn route(state: &State, req: &mut Request) -> Reply {
    let path = req.url().split('?').next().unwrap_or("").to_string();
    let method = req.method().clone();
    let outcome = match (method, path.as_str()) {
        (Method::Get | Method::Post, ROUTE_VOCAB) => Ok(Reply {
            status: 200,
            body: state.vocab_body.clone(),
            content_type: "text/plain; charset=utf-8",
        }),
        (Method::Post, ROUTE_CREATE_SESSION) => create_session(state, req),
        (Method::Post, ROUTE_STEP) => step(state, req),
        (Method::Post, ROUTE_APPEND) => append(state, req),
        (m, p) => Err(Reply::error(404, codes::BAD_REQUEST, format!("no route {m} {p}"))),
    };
    outcome.unwrap_or_else(|r| r)
}

fn lookup(state: &State, id: &str) -> std::result::Result<SharedSession, Reply> {
    state
        .sessions
        .lock()
        .expect("session table poisoned")
        .get(id)
        .cloned()
        .ok_or_else(|| Reply::error(404, codes::SESSION_NOT_FOUND, format!("unknown session `{id}`")))
}

fn create_session(state: &State, req: &mut Request) -> std::result::Result<Reply, Reply> {
    let body: CreateSessionRequest = read_body(req)?;
    let session = state
        .backend
        .clone()
        .start_session(&body.prompt_ids)
        .map_err(backend_error)?;
    let id = format!("s{}", state.next_id.fetch_add(1, Ordering::SeqCst));
    state
        .sessions
        .lock()
        .expect("session table poisoned")
        .insert(id.clone(), Arc::new(Mutex::new(session)));
    Ok(Reply::json(&CreateSessionResponse { session_id: id }))
}

fn step(state: &State, req: &mut Request) -> std::result::Result<Reply, Reply> {
    let body: StepRequest = read_body(req)?;
    let session = lookup(state, &body.session_id)?;
    let p = session
        .lock()
        .expect("session poisoned")
        .step()
        .map_err(backend_error)?;
    let response = match state.options.sparse_top_k {
        Some(k) if p.len() > state.options.sparse_above => StepResponse::sparse(&p, k),
        _ => StepResponse::dense(&p),
    };
    Ok(Reply::json(&response))
}

fn append(state: &State, req: &mut Request) -> std::result::Result<Reply, Reply> {
    let body: AppendRequest = read_body(req)?;
    let session = lookup(state, &body.session_id)?;
    let mut session = session.lock().expect("session poisoned");
    session.append(&body.ids).map_err(backend_error)?;
    Ok(Reply::json(&AppendResponse {
        prefix_len: session.prefix().len(),
    }))
}
