//! Client side of the `FDP1` protocol: persistent child processes speaking
//! framed messages over stdin/stdout.

use std::io::{Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use crate::denoise::protocol::{self, Frame, MessageType};
use crate::denoise::{Denoiser, DenoiserRequest, DenoiserResponse, PredictionKind};
use crate::error::{DenoiseError, Error, Result};
use crate::flt1;
use crate::tensor::LatentTensor;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);

/// One framed duplex channel. Responses are read on a background thread so a
/// hung peer surfaces as [`DenoiseError::Timeout`].
pub struct Connection {
    writer: Box<dyn Write + Send>,
    frames: Receiver<std::result::Result<Frame, DenoiseError>>,
    timeout: Duration,
    broken: bool,
}

impl Connection {
    pub fn new<R, W>(reader: R, writer: W, timeout: Duration) -> Self
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = reader;
            loop {
                match protocol::read_frame(&mut reader) {
                    Ok(Some(frame)) => {
                        if tx.send(Ok(frame)).is_err() {
                            return;
                        }
                    }
                    Ok(None) => return,
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        return;
                    }
                }
            }
        });
        Self {
            writer: Box::new(writer),
            frames: rx,
            timeout,
            broken: false,
        }
    }

    pub fn handshake(&mut self) -> std::result::Result<(), DenoiseError> {
        let ack = self.call(MessageType::Hello, &protocol::encode_hello(), MessageType::HelloAck)?;
        if ack.len() != 4 {
            return Err(DenoiseError::MalformedFrame("bad hello ack".into()));
        }
        let version = u32::from_le_bytes(ack.try_into().unwrap());
        if version != protocol::PROTOCOL_VERSION {
            return Err(DenoiseError::MalformedFrame(format!("peer speaks protocol version {version}")));
        }
        Ok(())
    }

    /// Sends one request and waits for the matching response payload.
    pub fn call(
        &mut self,
        kind: MessageType,
        payload: &[u8],
        expect: MessageType,
    ) -> std::result::Result<Vec<u8>, DenoiseError> {
        if self.broken {
            return Err(DenoiseError::BrokenPipe);
        }
        let result = self.exchange(kind, payload, expect);
        // After a timeout or framing error the stream position is unknown.
        if matches!(
            result,
            Err(DenoiseError::Timeout(_) | DenoiseError::MalformedFrame(_) | DenoiseError::BrokenPipe)
        ) {
            self.broken = true;
        }
        result
    }

    fn exchange(
        &mut self,
        kind: MessageType,
        payload: &[u8],
        expect: MessageType,
    ) -> std::result::Result<Vec<u8>, DenoiseError> {
        protocol::write_frame(&mut self.writer, kind, payload).map_err(protocol::io_error)?;
        let frame = match self.frames.recv_timeout(self.timeout) {
            Ok(f) => f?,
            Err(RecvTimeoutError::Timeout) => return Err(DenoiseError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => return Err(DenoiseError::BrokenPipe),
        };
        match frame.kind {
            k if k == expect => Ok(frame.payload),
            MessageType::Error => Err(DenoiseError::Remote(String::from_utf8_lossy(&frame.payload).into_owned())),
            other => Err(DenoiseError::MalformedFrame(format!("expected {expect:?}, got {other:?}"))),
        }
    }

    pub fn shutdown(&mut self) {
        if !self.broken {
            let _ = protocol::write_frame(&mut self.writer, MessageType::Shutdown, &[]);
        }
        self.broken = true;
    }
}

/// A set of connections, each serving one in-flight request at a time.
pub struct ConnectionPool {
    conns: Vec<Mutex<Connection>>,
    children: Mutex<Vec<Child>>,
    next: AtomicUsize,
}

impl ConnectionPool {
    pub fn from_connections(conns: Vec<Connection>) -> Result<Self> {
        if conns.is_empty() {
            return Err(Error::Config("connection pool must not be empty".into()));
        }
        Ok(Self {
            conns: conns.into_iter().map(Mutex::new).collect(),
            children: Mutex::new(Vec::new()),
            next: AtomicUsize::new(0),
        })
    }

    /// Spawns `size` copies of `command` and handshakes with each.
    pub fn spawn(command: &[String], size: usize, timeout: Duration) -> Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::Config("external command is empty".into()))?;
        let mut conns = Vec::new();
        let mut children = Vec::new();
        for _ in 0..size.max(1) {
            let mut child = Command::new(program)
                .args(args)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit())
                .spawn()
                .map_err(|e| Error::Config(format!("cannot start {program:?}: {e}")))?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = child.stdout.take().expect("piped stdout");
            let mut conn = Connection::new(stdout, stdin, timeout);
            children.push(child);
            if let Err(e) = conn.handshake() {
                for mut c in children {
                    let _ = c.kill();
                    let _ = c.wait();
                }
                return Err(Error::Denoiser { tile: 0, source: e });
            }
            conns.push(conn);
        }
        let pool = Self::from_connections(conns)?;
        *pool.children.lock().unwrap() = children;
        Ok(pool)
    }

    pub fn size(&self) -> usize {
        self.conns.len()
    }

    /// Runs `f` on an idle connection, waiting for one if all are busy.
    pub fn with_connection<T>(&self, f: impl FnOnce(&mut Connection) -> T) -> T {
        let start = self.next.fetch_add(1, Ordering::Relaxed);
        let n = self.conns.len();
        for k in 0..n {
            if let Ok(mut conn) = self.conns[(start + k) % n].try_lock() {
                return f(&mut conn);
            }
        }
        let mut conn = self.conns[start % n].lock().unwrap_or_else(|p| p.into_inner());
        f(&mut conn)
    }
}

impl Drop for ConnectionPool {
    fn drop(&mut self) {
        for c in &self.conns {
            if let Ok(mut c) = c.lock() {
                c.shutdown();
            }
        }
        if let Ok(mut children) = self.children.lock() {
            for child in children.iter_mut() {
                let exited = (0..50).any(|_| {
                    if matches!(child.try_wait(), Ok(Some(_))) {
                        return true;
                    }
                    thread::sleep(Duration::from_millis(10));
                    false
                });
                if !exited {
                    let _ = child.kill();
                    let _ = child.wait();
                }
            }
        }
    }
}

/// Denoiser backed by external processes.
pub struct ExternalDenoiser {
    pool: ConnectionPool,
    kind: PredictionKind,
}

impl ExternalDenoiser {
    pub fn new(pool: ConnectionPool, kind: PredictionKind) -> Self {
        Self { pool, kind }
    }

    pub fn spawn(command: &[String], pool_size: usize, timeout: Duration, kind: PredictionKind) -> Result<Self> {
        Ok(Self::new(ConnectionPool::spawn(command, pool_size, timeout)?, kind))
    }
}

impl Denoiser for ExternalDenoiser {
    fn kind(&self) -> PredictionKind {
        self.kind
    }

    fn denoise(&self, req: &DenoiserRequest) -> std::result::Result<DenoiserResponse, DenoiseError> {
        let payload = protocol::encode_request(req);
        let bytes = self
            .pool
            .with_connection(|c| c.call(MessageType::Denoise, &payload, MessageType::Prediction))?;
        let resp = protocol::decode_response(&bytes)?;
        if resp.prediction.shape() != req.tile.shape() {
            return Err(DenoiseError::ShapeMismatch {
                expected: req.tile.shape().as_array(),
                got: resp.prediction.shape().as_array(),
            });
        }
        if resp.kind != self.kind {
            return Err(DenoiseError::MalformedFrame(format!(
                "server returned {:?} prediction, {:?} configured",
                resp.kind, self.kind
            )));
        }
        Ok(resp)
    }
}

/// Embedding provider backed by external processes.
pub struct ExternalEmbedder {
    pool: ConnectionPool,
}

impl ExternalEmbedder {
    pub fn new(pool: ConnectionPool) -> Self {
        Self { pool }
    }

    pub fn spawn(command: &[String], timeout: Duration) -> Result<Self> {
        Ok(Self::new(ConnectionPool::spawn(command, 1, timeout)?))
    }

    pub fn embed_tensor(&self, frame: &LatentTensor) -> std::result::Result<Vec<f32>, DenoiseError> {
        let payload = flt1::encode(frame);
        let bytes = self
            .pool
            .with_connection(|c| c.call(MessageType::Embed, &payload, MessageType::Embedding))?;
        protocol::decode_embedding(&bytes)
    }
}

impl crate::metrics::Embedder for ExternalEmbedder {
    fn embed(&self, frame: &crate::metrics::Frame) -> std::result::Result<Vec<f32>, DenoiseError> {
        self.embed_tensor(&frame.to_tensor())
    }
}
