//! Client/server replay over newline-delimited JSON on TCP.
//!
//! The server loads a compiled artifact and answers step and final-check
//! requests; the client owns the trace, the counters and (in a deployment
//! with real encryption) the secret key. Marking and event vectors cross
//! the wire either as plain integer arrays (`clear` mode) or as opaque
//! base64 blobs (`mock` mode, standing in for ciphertexts). The server is
//! stateless with respect to markings: every step carries the current
//! marking, so a session is only an authorization handle.
//!
//! `encrypted` mode is the declared plug-in point for a real homomorphic
//! backend; this build rejects it with `MODE_UNSUPPORTED`.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{ArithBackend, ClearBackend, MockBackend, OpAccount};
use crate::client::{ClientError, StepService};
use crate::compiler::CompiledNet;
use crate::engine::Engine;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Clear,
    Mock,
    Encrypted,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Clear => "clear",
            Mode::Mock => "mock",
            Mode::Encrypted => "encrypted",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "clear" => Ok(Mode::Clear),
            "mock" => Ok(Mode::Mock),
            "encrypted" => Ok(Mode::Encrypted),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

/// A vector on the wire: integers in clear mode, an opaque blob otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VecPayload {
    Clear(Vec<i64>),
    Blob { blob: String, backend: String },
}

/// A scalar on the wire, same duality as [`VecPayload`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarPayload {
    Clear(i64),
    Blob { blob: String, backend: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorCode {
    #[serde(rename = "DIM_MISMATCH")]
    DimMismatch,
    #[serde(rename = "UNKNOWN_SESSION")]
    UnknownSession,
    #[serde(rename = "MODE_UNSUPPORTED")]
    ModeUnsupported,
    #[serde(rename = "VERSION_MISMATCH")]
    VersionMismatch,
    #[serde(rename = "BAD_REQUEST")]
    BadRequest,
    #[serde(rename = "INTERNAL")]
    Internal,
}

/// Every message carries the protocol version; responses echo the session
/// of their request. Each request receives exactly one response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Hello {
        v: u32,
        mode: Mode,
    },
    HelloOk {
        v: u32,
        mode: Mode,
        places: usize,
        visible: usize,
        activities: Vec<String>,
    },
    /// Evaluation-key upload for encrypting backends; the mock backend
    /// accepts any opaque material.
    Keys {
        v: u32,
        backend: String,
        material: String,
    },
    KeysOk {
        v: u32,
    },
    Start {
        v: u32,
    },
    StartOk {
        v: u32,
        session: String,
        m: VecPayload,
    },
    Step {
        v: u32,
        session: String,
        m: VecPayload,
        t: VecPayload,
    },
    StepOk {
        v: u32,
        session: String,
        m_next: VecPayload,
        missing: ScalarPayload,
    },
    Final {
        v: u32,
        session: String,
        m: VecPayload,
    },
    FinalOk {
        v: u32,
        session: String,
        flag: ScalarPayload,
        remaining: ScalarPayload,
    },
    Error {
        v: u32,
        #[serde(skip_serializing_if = "Option::is_none")]
        session: Option<String>,
        code: ErrorCode,
        message: String,
    },
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("peer speaks protocol version {0}, expected {PROTOCOL_VERSION}")]
    Version(u32),
    #[error("server rejected mode `{0}`")]
    ModeUnsupported(Mode),
    #[error("server error {code:?}: {message}")]
    Server { code: ErrorCode, message: String },
    #[error("unexpected message: {0}")]
    Unexpected(String),
    #[error("payload error: {0}")]
    Payload(String),
}

impl From<ProtocolError> for ClientError {
    fn from(e: ProtocolError) -> Self {
        ClientError::Service(e.to_string())
    }
}

fn write_message<W: Write>(w: &mut W, msg: &Message) -> Result<(), ProtocolError> {
    let mut line = serde_json::to_string(msg).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    line.push('\n');
    w.write_all(line.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn read_message<R: BufRead>(r: &mut R) -> Result<Option<Message>, ProtocolError> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    serde_json::from_str(&line)
        .map(Some)
        .map_err(|e| ProtocolError::Malformed(e.to_string()))
}

enum ServerEngine {
    Clear(Engine<ClearBackend>),
    Mock(Engine<MockBackend>),
}

struct ServerState {
    engine: ServerEngine,
    mode: Mode,
    places: usize,
    visible: usize,
    activities: Vec<String>,
    sessions: Mutex<HashMap<String, ()>>,
    next_session: AtomicU64,
}

/// A running replay server; shuts down when dropped.
pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
    state: Arc<ServerState>,
}

impl Server {
    /// Binds `endpoint` (e.g. `127.0.0.1:0`) and serves the artifact until
    /// shutdown. `mode` selects the arithmetic backend; `Encrypted` is not
    /// available in this build.
    pub fn spawn(compiled: &CompiledNet, mode: Mode, endpoint: &str) -> Result<Server, ProtocolError> {
        let engine = match mode {
            Mode::Clear => ServerEngine::Clear(
                Engine::new(ClearBackend, compiled)
                    .map_err(|e| ProtocolError::Malformed(e.to_string()))?,
            ),
            Mode::Mock => {
                let width = MockBackend::width_for(
                    compiled.marking_bound,
                    compiled.delta.iter().copied().max().unwrap_or(1),
                );
                ServerEngine::Mock(
                    Engine::new(MockBackend::new(width), compiled)
                        .map_err(|e| ProtocolError::Malformed(e.to_string()))?,
                )
            }
            Mode::Encrypted => return Err(ProtocolError::ModeUnsupported(Mode::Encrypted)),
        };
        let state = Arc::new(ServerState {
            engine,
            mode,
            places: compiled.place_count(),
            visible: compiled.visible_count(),
            activities: compiled.visible.clone(),
            sessions: Mutex::new(HashMap::new()),
            next_session: AtomicU64::new(1),
        });
        let listener = TcpListener::bind(endpoint)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let accept_stop = stop.clone();
        let accept_state = state.clone();
        let accept_thread = std::thread::spawn(move || {
            while !accept_stop.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let state = accept_state.clone();
                        // Detached: a handler lives until its client hangs
                        // up, which may outlast the accept loop.
                        std::thread::spawn(move || {
                            let _ = handle_connection(stream, &state);
                        });
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(5));
                    }
                    Err(_) => break,
                }
            }
        });
        Ok(Server {
            addr,
            stop,
            accept_thread: Some(accept_thread),
            state,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Backend cost account in mock mode; `None` otherwise. Lets tests
    /// assert what the server side could observe.
    pub fn mock_account(&self) -> Option<OpAccount> {
        match &self.state.engine {
            ServerEngine::Mock(engine) => Some(engine.backend().snapshot_account()),
            ServerEngine::Clear(_) => None,
        }
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

/// Outcome of one request: a response message, never a teardown.
fn respond(state: &ServerState, msg: Message) -> Message {
    let err = |session: Option<String>, code: ErrorCode, message: String| Message::Error {
        v: PROTOCOL_VERSION,
        session,
        code,
        message,
    };
    // Version gate first: all request types carry `v`.
    let version = match &msg {
        Message::Hello { v, .. }
        | Message::Keys { v, .. }
        | Message::Start { v }
        | Message::Step { v, .. }
        | Message::Final { v, .. } => *v,
        _ => {
            return err(
                None,
                ErrorCode::BadRequest,
                "not a request message".into(),
            )
        }
    };
    if version != PROTOCOL_VERSION {
        return err(
            None,
            ErrorCode::VersionMismatch,
            format!("version {version} unsupported"),
        );
    }
    match msg {
        Message::Hello { mode, .. } => {
            if mode != state.mode {
                return err(
                    None,
                    ErrorCode::ModeUnsupported,
                    format!("server runs in {} mode", state.mode),
                );
            }
            Message::HelloOk {
                v: PROTOCOL_VERSION,
                mode: state.mode,
                places: state.places,
                visible: state.visible,
                activities: state.activities.clone(),
            }
        }
        Message::Keys { .. } => {
            // Key material is opaque to the mock backend; a real encrypted
            // backend would install evaluation keys here.
            Message::KeysOk {
                v: PROTOCOL_VERSION,
            }
        }
        Message::Start { .. } => {
            let id = format!("s{}", state.next_session.fetch_add(1, Ordering::Relaxed));
            state.sessions.lock().unwrap().insert(id.clone(), ());
            let m = match &state.engine {
                ServerEngine::Clear(engine) => match engine.initial_marking() {
                    Ok(m) => VecPayload::Clear(m),
                    Err(e) => return err(Some(id), ErrorCode::Internal, e.to_string()),
                },
                ServerEngine::Mock(engine) => match engine.initial_marking() {
                    Ok(m) => VecPayload::Blob {
                        blob: engine.backend().export_vector(&m),
                        backend: "mock".into(),
                    },
                    Err(e) => return err(Some(id), ErrorCode::Internal, e.to_string()),
                },
            };
            Message::StartOk {
                v: PROTOCOL_VERSION,
                session: id,
                m,
            }
        }
        Message::Step { session, m, t, .. } => {
            if !state.sessions.lock().unwrap().contains_key(&session) {
                return err(
                    Some(session),
                    ErrorCode::UnknownSession,
                    "no such session".into(),
                );
            }
            match server_step(state, &m, &t) {
                Ok((m_next, missing)) => Message::StepOk {
                    v: PROTOCOL_VERSION,
                    session,
                    m_next,
                    missing,
                },
                Err((code, message)) => err(Some(session), code, message),
            }
        }
        Message::Final { session, m, .. } => {
            if !state.sessions.lock().unwrap().contains_key(&session) {
                return err(
                    Some(session),
                    ErrorCode::UnknownSession,
                    "no such session".into(),
                );
            }
            match server_final(state, &m) {
                Ok((flag, remaining)) => Message::FinalOk {
                    v: PROTOCOL_VERSION,
                    session,
                    flag,
                    remaining,
                },
                Err((code, message)) => err(Some(session), code, message),
            }
        }
        _ => err(None, ErrorCode::BadRequest, "not a request message".into()),
    }
}

type ServerResult<T> = Result<T, (ErrorCode, String)>;

fn expect_clear(p: &VecPayload, len: usize, what: &str) -> ServerResult<Vec<i64>> {
    match p {
        VecPayload::Clear(v) if v.len() == len => Ok(v.clone()),
        VecPayload::Clear(v) => Err((
            ErrorCode::DimMismatch,
            format!("{what} has length {}, expected {len}", v.len()),
        )),
        VecPayload::Blob { .. } => Err((
            ErrorCode::BadRequest,
            format!("{what} is a blob but the session is in clear mode"),
        )),
    }
}

fn expect_blob(
    backend: &MockBackend,
    p: &VecPayload,
    len: usize,
    what: &str,
) -> ServerResult<crate::backend::MockVector> {
    match p {
        VecPayload::Blob { blob, .. } => {
            let v = backend
                .import_vector(blob)
                .map_err(|e| (ErrorCode::BadRequest, e.to_string()))?;
            let decoded_len = backend.decode_vector(&v).map(|d| d.len()).unwrap_or(0);
            if decoded_len != len {
                return Err((
                    ErrorCode::DimMismatch,
                    format!("{what} has length {decoded_len}, expected {len}"),
                ));
            }
            Ok(v)
        }
        VecPayload::Clear(_) => Err((
            ErrorCode::BadRequest,
            format!("{what} is a clear vector but the session is in mock mode"),
        )),
    }
}

fn server_step(
    state: &ServerState,
    m: &VecPayload,
    t: &VecPayload,
) -> ServerResult<(VecPayload, ScalarPayload)> {
    match &state.engine {
        ServerEngine::Clear(engine) => {
            let m = expect_clear(m, state.places, "marking")?;
            let t = expect_clear(t, state.visible, "event")?;
            let out = engine
                .step(&m, &t)
                .map_err(|e| (ErrorCode::Internal, e.to_string()))?;
            Ok((
                VecPayload::Clear(out.marking),
                ScalarPayload::Clear(out.missing),
            ))
        }
        ServerEngine::Mock(engine) => {
            let backend = engine.backend();
            let m = expect_blob(backend, m, state.places, "marking")?;
            let t = expect_blob(backend, t, state.visible, "event")?;
            let out = engine
                .step(&m, &t)
                .map_err(|e| (ErrorCode::Internal, e.to_string()))?;
            Ok((
                VecPayload::Blob {
                    blob: backend.export_vector(&out.marking),
                    backend: "mock".into(),
                },
                ScalarPayload::Blob {
                    blob: backend.export_scalar(&out.missing),
                    backend: "mock".into(),
                },
            ))
        }
    }
}

fn server_final(state: &ServerState, m: &VecPayload) -> ServerResult<(ScalarPayload, ScalarPayload)> {
    match &state.engine {
        ServerEngine::Clear(engine) => {
            let m = expect_clear(m, state.places, "marking")?;
            let out = engine
                .check_final(&m)
                .map_err(|e| (ErrorCode::Internal, e.to_string()))?;
            Ok((
                ScalarPayload::Clear(out.covered),
                ScalarPayload::Clear(out.remaining),
            ))
        }
        ServerEngine::Mock(engine) => {
            let backend = engine.backend();
            let m = expect_blob(backend, m, state.places, "marking")?;
            let out = engine
                .check_final(&m)
                .map_err(|e| (ErrorCode::Internal, e.to_string()))?;
            Ok((
                ScalarPayload::Blob {
                    blob: backend.export_scalar(&out.covered),
                    backend: "mock".into(),
                },
                ScalarPayload::Blob {
                    blob: backend.export_scalar(&out.remaining),
                    backend: "mock".into(),
                },
            ))
        }
    }
}

fn handle_connection(stream: TcpStream, state: &ServerState) -> Result<(), ProtocolError> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    loop {
        match read_message(&mut reader) {
            Ok(Some(msg)) => write_message(&mut writer, &respond(state, msg))?,
            Ok(None) => return Ok(()),
            Err(ProtocolError::Malformed(m)) => write_message(
                &mut writer,
                &Message::Error {
                    v: PROTOCOL_VERSION,
                    session: None,
                    code: ErrorCode::BadRequest,
                    message: m,
                },
            )?,
            Err(e) => return Err(e),
        }
    }
}

/// Client end of a connection; one [`StepService`] over the wire.
pub struct RemoteSession {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    mode: Mode,
    places: usize,
    activities: Vec<String>,
    session: Option<String>,
    /// Client-side codec for blob payloads in mock mode; holds what would
    /// be the key material for a real encrypted backend.
    codec: Option<MockBackend>,
}

impl RemoteSession {
    /// Performs the hello (and, in mock mode, keys) handshake.
    pub fn connect(endpoint: &str, mode: Mode) -> Result<RemoteSession, ProtocolError> {
        let stream = TcpStream::connect(endpoint)?;
        let mut session = RemoteSession {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
            mode,
            places: 0,
            activities: Vec::new(),
            session: None,
            codec: None,
        };
        let reply = session.round_trip(&Message::Hello {
            v: PROTOCOL_VERSION,
            mode,
        })?;
        match reply {
            Message::HelloOk {
                v,
                mode: server_mode,
                places,
                activities,
                ..
            } => {
                if v != PROTOCOL_VERSION {
                    return Err(ProtocolError::Version(v));
                }
                if server_mode != mode {
                    return Err(ProtocolError::ModeUnsupported(mode));
                }
                session.places = places;
                session.activities = activities;
            }
            Message::Error { code, message, .. } => {
                if code == ErrorCode::ModeUnsupported {
                    return Err(ProtocolError::ModeUnsupported(mode));
                }
                return Err(ProtocolError::Server { code, message });
            }
            other => return Err(ProtocolError::Unexpected(format!("{other:?}"))),
        }
        if mode == Mode::Mock {
            // Width mirrors the server: both ends derive it from the
            // artifact bound; 8 bits is ample for the blob codec, whose
            // width only gates encode-side range checks.
            session.codec = Some(MockBackend::new(8));
            let reply = session.round_trip(&Message::Keys {
                v: PROTOCOL_VERSION,
                backend: "mock".into(),
                material: String::new(),
            })?;
            match reply {
                Message::KeysOk { .. } => {}
                Message::Error { code, message, .. } => {
                    return Err(ProtocolError::Server { code, message })
                }
                other => return Err(ProtocolError::Unexpected(format!("{other:?}"))),
            }
        }
        Ok(session)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn session_id(&self) -> Option<&str> {
        self.session.as_deref()
    }

    fn round_trip(&mut self, msg: &Message) -> Result<Message, ProtocolError> {
        write_message(&mut self.writer, msg)?;
        read_message(&mut self.reader)?
            .ok_or_else(|| ProtocolError::Unexpected("connection closed".into()))
    }

    fn encode_vec(&self, values: &[i64]) -> Result<VecPayload, ProtocolError> {
        match (&self.mode, &self.codec) {
            (Mode::Clear, _) => Ok(VecPayload::Clear(values.to_vec())),
            (Mode::Mock, Some(codec)) => {
                let v = codec
                    .encode_vector(values)
                    .map_err(|e| ProtocolError::Payload(e.to_string()))?;
                Ok(VecPayload::Blob {
                    blob: codec.export_vector(&v),
                    backend: "mock".into(),
                })
            }
            _ => Err(ProtocolError::ModeUnsupported(self.mode)),
        }
    }

    fn decode_vec(&self, payload: &VecPayload) -> Result<Vec<i64>, ProtocolError> {
        match (payload, &self.codec) {
            (VecPayload::Clear(v), _) => Ok(v.clone()),
            (VecPayload::Blob { blob, .. }, Some(codec)) => {
                let v = codec
                    .import_vector(blob)
                    .map_err(|e| ProtocolError::Payload(e.to_string()))?;
                codec
                    .decode_vector(&v)
                    .map_err(|e| ProtocolError::Payload(e.to_string()))
            }
            (VecPayload::Blob { .. }, None) => {
                Err(ProtocolError::Payload("blob payload in clear mode".into()))
            }
        }
    }

    fn decode_scalar(&self, payload: &ScalarPayload) -> Result<i64, ProtocolError> {
        match (payload, &self.codec) {
            (ScalarPayload::Clear(s), _) => Ok(*s),
            (ScalarPayload::Blob { blob, .. }, Some(codec)) => {
                let s = codec
                    .import_scalar(blob)
                    .map_err(|e| ProtocolError::Payload(e.to_string()))?;
                codec
                    .decode_scalar(&s)
                    .map_err(|e| ProtocolError::Payload(e.to_string()))
            }
            (ScalarPayload::Blob { .. }, None) => {
                Err(ProtocolError::Payload("blob payload in clear mode".into()))
            }
        }
    }

    fn expect_session(&self) -> Result<String, ProtocolError> {
        self.session
            .clone()
            .ok_or_else(|| ProtocolError::Unexpected("no open session; call start".into()))
    }
}

impl StepService for RemoteSession {
    fn place_count(&self) -> usize {
        self.places
    }

    fn activities(&self) -> &[String] {
        &self.activities
    }

    fn start(&mut self) -> Result<Vec<i64>, ClientError> {
        let reply = self.round_trip(&Message::Start {
            v: PROTOCOL_VERSION,
        })?;
        match reply {
            Message::StartOk { session, m, .. } => {
                self.session = Some(session);
                Ok(self.decode_vec(&m)?)
            }
            Message::Error { code, message, .. } => {
                Err(ProtocolError::Server { code, message }.into())
            }
            other => Err(ProtocolError::Unexpected(format!("{other:?}")).into()),
        }
    }

    fn step(&mut self, marking: &[i64], event: &[i64]) -> Result<(Vec<i64>, i64), ClientError> {
        let msg = Message::Step {
            v: PROTOCOL_VERSION,
            session: self.expect_session()?,
            m: self.encode_vec(marking)?,
            t: self.encode_vec(event)?,
        };
        match self.round_trip(&msg)? {
            Message::StepOk {
                m_next, missing, ..
            } => Ok((self.decode_vec(&m_next)?, self.decode_scalar(&missing)?)),
            Message::Error { code, message, .. } => {
                Err(ProtocolError::Server { code, message }.into())
            }
            other => Err(ProtocolError::Unexpected(format!("{other:?}")).into()),
        }
    }

    fn check_final(&mut self, marking: &[i64]) -> Result<(i64, i64), ClientError> {
        let msg = Message::Final {
            v: PROTOCOL_VERSION,
            session: self.expect_session()?,
            m: self.encode_vec(marking)?,
        };
        match self.round_trip(&msg)? {
            Message::FinalOk {
                flag, remaining, ..
            } => Ok((self.decode_scalar(&flag)?, self.decode_scalar(&remaining)?)),
            Message::Error { code, message, .. } => {
                Err(ProtocolError::Server { code, message }.into())
            }
            other => Err(ProtocolError::Unexpected(format!("{other:?}")).into()),
        }
    }
}
