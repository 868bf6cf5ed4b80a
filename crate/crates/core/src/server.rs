//! Client for out-of-process models speaking newline-delimited JSON.
//!
//! The engine sends
//!
//! ```text
//! {"type":"capabilities"}
//! {"type":"batch","requests":[{"id":1,"instanceId":"a","removed":[1,3]}, ...]}
//! ```
//!
//! and the server answers with
//!
//! ```text
//! {"type":"capabilities","protocolVersion":1,"maxInFlight":64,"maxBatch":32}
//! {"type":"batch","responses":[{"id":1,"value":0.25},{"id":2,"error":"..."}]}
//! {"id":3,"value":0.5}
//! ```
//!
//! Responses may arrive in any order and in any framing (batched or one per
//! line); they are matched to requests by id. `removed` holds 1-based
//! feature indices, sorted.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValueError};
use crate::types::{Instance, RemovedSet};
use crate::value::{Concurrency, ValueFunction};

pub const PROTOCOL_VERSION: u32 = 1;

/// Environment variable holding the default server address.
pub const SERVER_ENV: &str = "NAOPC_SERVER";

pub const DEFAULT_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Request {
    pub id: u64,
    pub instance_id: String,
    pub removed: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Response {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    pub fn value(id: u64, value: f64) -> Self {
        Self {
            id,
            value: Some(value),
            error: None,
        }
    }

    pub fn error(id: u64, message: impl Into<String>) -> Self {
        Self {
            id,
            value: None,
            error: Some(message.into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Capabilities {
    pub protocol_version: u32,
    /// Requests the server accepts before answering.
    pub max_in_flight: usize,
    pub max_batch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum ClientFrame {
    Capabilities,
    Batch { requests: Vec<Request> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum TaggedServerFrame {
    Capabilities(Capabilities),
    Batch { responses: Vec<Response> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ServerFrame {
    Tagged(TaggedServerFrame),
    Single(Response),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClientOptions {
    /// Upper bound on requests per frame; the server's `maxBatch` also applies.
    pub batch_size: usize,
    pub record_transcript: bool,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH,
            record_transcript: false,
        }
    }
}

/// Direction of one transcript line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Sent,
    Received,
}

struct Connection {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    next_id: u64,
    broken: Option<String>,
    transcript: Option<Vec<(Direction, String)>>,
}

impl Connection {
    fn send(&mut self, frame: &ClientFrame) -> io::Result<()> {
        let line = serde_json::to_string(frame).map_err(io::Error::other)?;
        writeln!(self.writer, "{line}")?;
        if let Some(t) = &mut self.transcript {
            t.push((Direction::Sent, line));
        }
        Ok(())
    }

    fn receive(&mut self) -> io::Result<ServerFrame> {
        let mut line = String::new();
        loop {
            line.clear();
            if self.reader.read_line(&mut line)? == 0 {
                return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "server closed the connection"));
            }
            if !line.trim().is_empty() {
                break;
            }
        }
        let line = line.trim_end().to_string();
        let frame = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("bad frame `{line}`: {e}")))?;
        if let Some(t) = &mut self.transcript {
            t.push((Direction::Received, line));
        }
        Ok(frame)
    }
}

/// A single connection to a model server, usable as a [`ValueFunction`].
///
/// Calls are serialized; each batch is split into frames and kept within the
/// server's advertised in-flight limit.
pub struct ServerClient {
    conn: Mutex<Connection>,
    child: Mutex<Option<Child>>,
    capabilities: Capabilities,
    options: ClientOptions,
    address: String,
}

impl ServerClient {
    /// Performs the capabilities handshake over an existing byte stream.
    pub fn new<R, W>(reader: R, writer: W, options: ClientOptions) -> Result<Self>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        Self::with_parts(Box::new(BufReader::new(reader)), Box::new(writer), None, options, "stream")
    }

    fn with_parts(
        reader: Box<dyn BufRead + Send>,
        writer: Box<dyn Write + Send>,
        child: Option<Child>,
        options: ClientOptions,
        address: &str,
    ) -> Result<Self> {
        if options.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        let mut conn = Connection {
            reader,
            writer,
            next_id: 1,
            broken: None,
            transcript: options.record_transcript.then(Vec::new),
        };
        let handshake = (|| {
            conn.send(&ClientFrame::Capabilities)?;
            conn.writer.flush()?;
            conn.receive()
        })()
        .map_err(|e| Error::Server(format!("{address}: handshake failed: {e}")))?;
        let capabilities = match handshake {
            ServerFrame::Tagged(TaggedServerFrame::Capabilities(c)) => c,
            other => return Err(Error::Server(format!("{address}: expected capabilities, got {other:?}"))),
        };
        if capabilities.protocol_version != PROTOCOL_VERSION {
            return Err(Error::Server(format!(
                "{address}: unsupported protocol version {}",
                capabilities.protocol_version
            )));
        }
        Ok(Self {
            conn: Mutex::new(conn),
            child: Mutex::new(child),
            capabilities,
            options,
            address: address.to_string(),
        })
    }

    /// Starts `command` through the shell and talks to it over its stdio.
    pub fn spawn(command: &str, options: ClientOptions) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Server(format!("cannot start `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped");
        let stdout = child.stdout.take().expect("piped");
        Self::with_parts(
            Box::new(BufReader::new(stdout)),
            Box::new(stdin),
            Some(child),
            options,
            &format!("cmd:{command}"),
        )
    }

    pub fn connect_tcp(addr: &str, options: ClientOptions) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(|e| Error::Server(format!("tcp:{addr}: {e}")))?;
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        Self::with_parts(
            Box::new(BufReader::new(reader)),
            Box::new(stream),
            None,
            options,
            &format!("tcp:{addr}"),
        )
    }

    #[cfg(unix)]
    pub fn connect_unix(path: &str, options: ClientOptions) -> Result<Self> {
        let stream =
            std::os::unix::net::UnixStream::connect(path).map_err(|e| Error::Server(format!("unix:{path}: {e}")))?;
        let reader = stream.try_clone()?;
        Self::with_parts(
            Box::new(BufReader::new(reader)),
            Box::new(stream),
            None,
            options,
            &format!("unix:{path}"),
        )
    }

    /// Connects to `tcp:HOST:PORT`, `unix:PATH`, or `cmd:SHELL COMMAND`.
    pub fn connect(address: &str, options: ClientOptions) -> Result<Self> {
        match address.split_once(':') {
            Some(("tcp", rest)) => Self::connect_tcp(rest, options),
            #[cfg(unix)]
            Some(("unix", rest)) => Self::connect_unix(rest, options),
            Some(("cmd", rest)) => Self::spawn(rest, options),
            _ => Err(Error::InvalidConfig(format!(
                "server address `{address}` must start with tcp:, unix: or cmd:"
            ))),
        }
    }

    /// Connects to the address in the `NAOPC_SERVER` environment variable.
    pub fn from_env(options: ClientOptions) -> Result<Self> {
        let address = std::env::var(SERVER_ENV)
            .map_err(|_| Error::InvalidConfig(format!("{SERVER_ENV} is not set")))?;
        Self::connect(&address, options)
    }

    pub fn capabilities(&self) -> Capabilities {
        self.capabilities
    }

    /// Lines exchanged so far, when transcript recording is on.
    pub fn transcript(&self) -> Vec<(Direction, String)> {
        self.conn.lock().transcript.clone().unwrap_or_default()
    }

    /// Evaluates `sets` of one instance. Results are index-aligned with `sets`.
    ///
    /// Once the connection fails, every later query fails with the same error.
    pub fn query(&self, instance_id: &str, sets: &[RemovedSet]) -> Vec<Result<f64, ValueError>> {
        let mut conn = self.conn.lock();
        if let Some(msg) = &conn.broken {
            return vec![Err(ValueError::Server(msg.clone())); sets.len()];
        }
        let mut results: Vec<Option<Result<f64, ValueError>>> = vec![None; sets.len()];
        match self.exchange(&mut conn, instance_id, sets, &mut results) {
            Ok(()) => results.into_iter().map(|r| r.expect("every id answered")).collect(),
            Err(e) => {
                let msg = format!("{}: {e}", self.address);
                conn.broken = Some(msg.clone());
                results
                    .into_iter()
                    .map(|r| r.unwrap_or_else(|| Err(ValueError::Server(msg.clone()))))
                    .collect()
            }
        }
    }

    fn exchange(
        &self,
        conn: &mut Connection,
        instance_id: &str,
        sets: &[RemovedSet],
        results: &mut [Option<Result<f64, ValueError>>],
    ) -> io::Result<()> {
        let frame_size = self.options.batch_size.min(self.capabilities.max_batch).max(1);
        let window = self.capabilities.max_in_flight.max(frame_size);
        let first_id = conn.next_id;
        conn.next_id += sets.len() as u64;
        let mut outstanding: HashMap<u64, usize> = HashMap::new();
        let (mut sent, mut answered) = (0, 0);
        while answered < sets.len() {
            let mut wrote = false;
            while sent < sets.len() && outstanding.len() + frame_size.min(sets.len() - sent) <= window {
                let end = (sent + frame_size).min(sets.len());
                let requests = (sent..end)
                    .map(|slot| {
                        let id = first_id + slot as u64;
                        outstanding.insert(id, slot);
                        Request {
                            id,
                            instance_id: instance_id.to_string(),
                            removed: sets[slot].to_one_based(),
                        }
                    })
                    .collect();
                conn.send(&ClientFrame::Batch { requests })?;
                sent = end;
                wrote = true;
            }
            if wrote {
                conn.writer.flush()?;
            }
            let responses = match conn.receive()? {
                ServerFrame::Single(r) => vec![r],
                ServerFrame::Tagged(TaggedServerFrame::Batch { responses }) => responses,
                ServerFrame::Tagged(TaggedServerFrame::Capabilities(_)) => {
                    return Err(io::Error::new(io::ErrorKind::InvalidData, "unexpected capabilities frame"))
                }
            };
            for r in responses {
                let slot = outstanding.remove(&r.id).ok_or_else(|| {
                    io::Error::new(io::ErrorKind::InvalidData, format!("response for unknown id {}", r.id))
                })?;
                results[slot] = Some(match (r.value, r.error) {
                    (Some(v), None) => Ok(v),
                    (None, Some(e)) => Err(ValueError::Server(e)),
                    _ => {
                        return Err(io::Error::new(
                            io::ErrorKind::InvalidData,
                            format!("response {} must carry exactly one of value/error", r.id),
                        ))
                    }
                });
                answered += 1;
            }
        }
        Ok(())
    }
}

impl Drop for ServerClient {
    fn drop(&mut self) {
        // closing stdin lets a well-behaved child exit on its own
        self.conn.lock().writer = Box::new(io::sink());
        if let Some(mut child) = self.child.lock().take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl ValueFunction for ServerClient {
    fn evaluate(&self, x: &Instance, removed: &RemovedSet) -> Result<f64, ValueError> {
        self.query(x.id(), std::slice::from_ref(removed)).remove(0)
    }

    fn evaluate_batch(&self, x: &Instance, removed: &[RemovedSet]) -> Vec<Result<f64, ValueError>> {
        self.query(x.id(), removed)
    }

    fn description(&self) -> String {
        format!("model server {}", self.address)
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::Serial
    }
}

/// A minimal in-process server for tests and demos.
///
/// Each batch frame is answered from its own thread after a seeded random
/// delay, one response per line in shuffled order, so responses interleave
/// across frames.
pub mod stub {
    use std::io::{self, BufRead, Write};
    use std::sync::Arc;
    use std::thread;
    use std::time::Duration;

    use parking_lot::Mutex;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::{Capabilities, ClientFrame, Response, TaggedServerFrame, PROTOCOL_VERSION};

    /// `(instance id, 1-based removed indices) -> value or error message`.
    pub type Handler = dyn Fn(&str, &[usize]) -> Result<f64, String> + Send + Sync;

    #[derive(Debug, Clone, Copy)]
    pub struct StubOptions {
        pub max_in_flight: usize,
        pub max_batch: usize,
        /// Seed for response order and delays; `None` answers in order, at once.
        pub shuffle_seed: Option<u64>,
        pub max_delay: Duration,
    }

    impl Default for StubOptions {
        fn default() -> Self {
            Self {
                max_in_flight: 64,
                max_batch: 16,
                shuffle_seed: None,
                max_delay: Duration::ZERO,
            }
        }
    }

    /// Serves until the client closes its side of the stream.
    pub fn serve<R, W>(reader: R, writer: W, handler: Arc<Handler>, options: StubOptions) -> io::Result<()>
    where
        R: BufRead,
        W: Write + Send + 'static,
    {
        let writer = Arc::new(Mutex::new(writer));
        let mut rng = ChaCha8Rng::seed_from_u64(options.shuffle_seed.unwrap_or(0));
        let mut workers = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let frame: ClientFrame =
                serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            match frame {
                ClientFrame::Capabilities => {
                    let caps = TaggedServerFrame::Capabilities(Capabilities {
                        protocol_version: PROTOCOL_VERSION,
                        max_in_flight: options.max_in_flight,
                        max_batch: options.max_batch,
                    });
                    let mut w = writer.lock();
                    writeln!(w, "{}", serde_json::to_string(&caps)?)?;
                    w.flush()?;
                }
                ClientFrame::Batch { requests } => {
                    let mut responses: Vec<Response> = requests
                        .iter()
                        .map(|r| match handler(&r.instance_id, &r.removed) {
                            Ok(v) => Response::value(r.id, v),
                            Err(e) => Response::error(r.id, e),
                        })
                        .collect();
                    match options.shuffle_seed {
                        None => {
                            let frame = TaggedServerFrame::Batch { responses };
                            let mut w = writer.lock();
                            writeln!(w, "{}", serde_json::to_string(&frame)?)?;
                            w.flush()?;
                        }
                        Some(_) => {
                            responses.shuffle(&mut rng);
                            let delay = if options.max_delay.is_zero() {
                                Duration::ZERO
                            } else {
                                options.max_delay.mul_f64(rng.gen::<f64>())
                            };
                            let writer = Arc::clone(&writer);
                            workers.push(thread::spawn(move || -> io::Result<()> {
                                thread::sleep(delay);
                                for r in responses {
                                    let mut w = writer.lock();
                                    writeln!(w, "{}", serde_json::to_string(&r)?)?;
                                    w.flush()?;
                                }
                                Ok(())
                            }));
                        }
                    }
                }
            }
        }
        for w in workers {
            w.join().map_err(|_| io::Error::other("stub worker panicked"))??;
        }
        Ok(())
    }
}
