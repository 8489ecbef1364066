//! Worker side: fetch a trace, run the informed search, report back.

use std::fs::{File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Write};
use std::net::TcpStream;
use std::path::PathBuf;
use std::thread;
use std::time::Duration;

use log::{debug, info, warn};
use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::iss::{run_iss, IssError, IssOptions, Restriction, RunRecord};
use crate::network::{load_manifest, NetworkError, Product};
use crate::protocol::{read_reply, write_request, ProtocolError, Reply, Request, Termination, PROTOCOL_VERSION};
use crate::trace_count::{load_alphabet, WeightedIoError};

#[derive(Clone, Debug)]
pub struct WorkerConfig {
    pub host: String,
    pub port: u16,
    pub manifest: PathBuf,
    /// Subsystem base path; `<base>.swh` supplies the restricted alphabet.
    pub base: PathBuf,
    pub state_cap: Option<usize>,
    pub reconnect_attempts: u32,
    pub reconnect_backoff: Duration,
    pub worker_id: u64,
    /// JSON-lines log of every run.
    pub log: Option<PathBuf>,
    /// Every explored state, one per line, grouped under `# trace <id>`.
    pub dump: Option<PathBuf>,
    /// Drop the connection without reporting once this many runs finished
    /// and the next trace has arrived.
    pub crash_after: Option<usize>,
    pub detect_deadlock: bool,
}

impl WorkerConfig {
    pub fn new(host: impl Into<String>, port: u16, manifest: impl Into<PathBuf>, base: impl Into<PathBuf>) -> Self {
        WorkerConfig {
            host: host.into(),
            port,
            manifest: manifest.into(),
            base: base.into(),
            state_cap: None,
            reconnect_attempts: 50,
            reconnect_backoff: Duration::from_millis(100),
            worker_id: 0,
            log: None,
            dump: None,
            crash_after: None,
            detect_deadlock: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum WorkerError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Alphabet(#[from] WeightedIoError),
    #[error(transparent)]
    Restriction(#[from] IssError),
    #[error("cannot reach the hive at {addr}: {source}")]
    Connect { addr: String, source: io::Error },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("hive refused: {0}")]
    Refused(String),
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: io::Error },
}

/// One line of the worker log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEntry {
    Run {
        worker: u64,
        #[serde(flatten)]
        record: RunRecord,
    },
    CapExceeded {
        worker: u64,
        trace_id: String,
        cap: usize,
    },
    Exit {
        worker: u64,
        runs: u64,
        states: u64,
        max_states: u64,
        outcome: String,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WorkerOutcome {
    Terminated(Termination),
    /// The injected crash fired.
    Crashed,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WorkerStats {
    pub runs: u64,
    pub states: u64,
    pub max_states: u64,
    pub transitions: u64,
    pub bugs: u64,
    pub cap_exceeded: u64,
    pub reconnects: u64,
}

struct Conn {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

enum ConnLost {
    Lost(String),
    Fatal(WorkerError),
}

impl From<ProtocolError> for ConnLost {
    fn from(e: ProtocolError) -> Self {
        if e.is_malformed() {
            ConnLost::Fatal(WorkerError::Protocol(e.to_string()))
        } else {
            ConnLost::Lost(e.to_string())
        }
    }
}

impl From<io::Error> for ConnLost {
    fn from(e: io::Error) -> Self {
        ConnLost::Lost(e.to_string())
    }
}

impl Conn {
    fn call(&mut self, req: &Request) -> Result<Reply, ConnLost> {
        write_request(&mut self.writer, req)?;
        match read_reply(&mut self.reader)? {
            Some(r) => Ok(r),
            None => Err(ConnLost::Lost("hive closed the connection".into())),
        }
    }
}

pub struct Worker {
    cfg: WorkerConfig,
    product: Product,
    restriction: Restriction,
    log: Option<BufWriter<File>>,
    dump: Option<BufWriter<File>>,
    stats: WorkerStats,
}

fn open_append(path: &PathBuf) -> Result<BufWriter<File>, WorkerError> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map(BufWriter::new)
        .map_err(|source| WorkerError::Output {
            path: path.clone(),
            source,
        })
}

impl Worker {
    /// Loads the network and the subsystem alphabet named in `cfg`.
    pub fn load(cfg: WorkerConfig) -> Result<Self, WorkerError> {
        let product = Product::new(load_manifest(&cfg.manifest)?)?;
        let alphabet = load_alphabet(&cfg.base)?;
        let restriction = Restriction::from_alphabet(&product, &alphabet)?;
        Worker::with_product(cfg, product, restriction)
    }

    pub fn with_product(cfg: WorkerConfig, product: Product, restriction: Restriction) -> Result<Self, WorkerError> {
        let log = cfg.log.as_ref().map(open_append).transpose()?;
        let dump = cfg.dump.as_ref().map(open_append).transpose()?;
        Ok(Worker {
            cfg,
            product,
            restriction,
            log,
            dump,
            stats: WorkerStats::default(),
        })
    }

    pub fn cfg_mut(&mut self) -> &mut WorkerConfig {
        &mut self.cfg
    }

    pub fn stats(&self) -> &WorkerStats {
        &self.stats
    }

    fn connect(&mut self) -> Result<Conn, WorkerError> {
        let addr = format!("{}:{}", self.cfg.host, self.cfg.port);
        let mut attempt = 0;
        let stream = loop {
            match TcpStream::connect(&addr) {
                Ok(s) => break s,
                Err(e) if attempt < self.cfg.reconnect_attempts => {
                    debug!("connect to {addr} failed ({e}), retrying");
                    attempt += 1;
                    thread::sleep(self.cfg.reconnect_backoff);
                }
                Err(source) => return Err(WorkerError::Connect { addr, source }),
            }
        };
        let _ = stream.set_nodelay(true);
        let reader = BufReader::new(stream.try_clone().map_err(|source| WorkerError::Connect {
            addr: addr.clone(),
            source,
        })?);
        let mut conn = Conn {
            reader,
            writer: BufWriter::new(stream),
        };
        match conn.call(&Request::Hello(PROTOCOL_VERSION)) {
            Ok(Reply::Hi(PROTOCOL_VERSION)) => Ok(conn),
            Ok(Reply::Err(e)) => Err(WorkerError::Refused(e)),
            Ok(other) => Err(WorkerError::Protocol(format!("unexpected greeting {other:?}"))),
            Err(ConnLost::Fatal(e)) => Err(e),
            Err(ConnLost::Lost(e)) => Err(WorkerError::Connect {
                addr,
                source: io::Error::new(io::ErrorKind::ConnectionAborted, e),
            }),
        }
    }

    fn write_log(&mut self, entry: &LogEntry) -> Result<(), WorkerError> {
        if let Some(log) = &mut self.log {
            let line = serde_json::to_string(entry).expect("log entries serialise");
            writeln!(log, "{line}")
                .and_then(|_| log.flush())
                .map_err(|source| WorkerError::Output {
                    path: self.cfg.log.clone().unwrap_or_default(),
                    source,
                })?;
        }
        Ok(())
    }

    fn write_dump(&mut self, trace_id: &BigUint, states: &[crate::network::ProductState]) -> Result<(), WorkerError> {
        if let Some(dump) = &mut self.dump {
            let mut go = || -> io::Result<()> {
                writeln!(dump, "# trace {trace_id}")?;
                for s in states {
                    writeln!(dump, "{s}")?;
                }
                dump.flush()
            };
            go().map_err(|source| WorkerError::Output {
                path: self.cfg.dump.clone().unwrap_or_default(),
                source,
            })?;
        }
        Ok(())
    }

    /// Runs one trace and builds the message reporting it, or `None` when
    /// the state cap was hit.
    fn work(&mut self, trace_id: &BigUint, actions: &[crate::lts::Label]) -> Result<Option<Request>, WorkerError> {
        let opts = IssOptions {
            state_cap: self.cfg.state_cap,
            keep_visited: self.dump.is_some(),
            detect_deadlock: self.cfg.detect_deadlock,
        };
        let res = match run_iss(&self.product, &self.restriction, actions, &opts) {
            Ok(r) => r,
            Err(IssError::CapExceeded(cap)) => {
                warn!("trace {trace_id}: state cap {cap} exceeded, dropping it");
                self.stats.cap_exceeded += 1;
                self.write_log(&LogEntry::CapExceeded {
                    worker: self.cfg.worker_id,
                    trace_id: trace_id.to_string(),
                    cap,
                })?;
                return Ok(None);
            }
            Err(e) => return Err(e.into()),
        };
        self.stats.runs += 1;
        self.stats.states += res.states_explored as u64;
        self.stats.max_states = self.stats.max_states.max(res.states_explored as u64);
        self.stats.transitions += res.transitions_fired;
        if let Some(v) = &res.visited {
            self.write_dump(trace_id, v)?;
        }
        self.write_log(&LogEntry::Run {
            worker: self.cfg.worker_id,
            record: RunRecord::new(trace_id, &res),
        })?;
        Ok(Some(match res.bug {
            Some(bug) => {
                self.stats.bugs += 1;
                Request::Bug {
                    trace_id: trace_id.clone(),
                    witness: bug.witness,
                }
            }
            None => Request::Feedback {
                trace_id: trace_id.clone(),
                feedback: res.feedback,
            },
        }))
    }

    fn session(&mut self, conn: &mut Conn) -> Result<WorkerOutcome, ConnLost> {
        loop {
            match conn.call(&Request::Get)? {
                Reply::Trace(t) => {
                    if self.cfg.crash_after.is_some_and(|n| self.stats.runs as usize >= n) {
                        info!(
                            "worker {}: injected crash holding trace {}",
                            self.cfg.worker_id, t.trace_id
                        );
                        return Ok(WorkerOutcome::Crashed);
                    }
                    let Some(msg) = self.work(&t.trace_id, &t.actions).map_err(ConnLost::Fatal)? else {
                        continue;
                    };
                    match conn.call(&msg)? {
                        Reply::Ack => {}
                        Reply::Err(e) => warn!("hive rejected report for {}: {e}", t.trace_id),
                        other => {
                            return Err(ConnLost::Fatal(WorkerError::Protocol(format!(
                                "unexpected reply {other:?} to a report"
                            ))))
                        }
                    }
                }
                Reply::Retry(ms) => thread::sleep(Duration::from_millis(ms)),
                Reply::Terminate(t) => {
                    match conn.call(&Request::Bye) {
                        Ok(Reply::Ack) | Err(ConnLost::Lost(_)) => {}
                        Ok(other) => debug!("reply {other:?} to BYE"),
                        Err(ConnLost::Fatal(e)) => debug!("after BYE: {e}"),
                    }
                    return Ok(WorkerOutcome::Terminated(t));
                }
                Reply::Err(e) => return Err(ConnLost::Fatal(WorkerError::Refused(e))),
                other => {
                    return Err(ConnLost::Fatal(WorkerError::Protocol(format!(
                        "unexpected reply {other:?} to GET"
                    ))))
                }
            }
        }
    }

    /// Works until the hive says terminate, reconnecting on lost connections.
    pub fn run(&mut self) -> Result<WorkerOutcome, WorkerError> {
        let mut losses = 0;
        let outcome = loop {
            let mut conn = self.connect()?;
            match self.session(&mut conn) {
                Ok(o) => break o,
                Err(ConnLost::Fatal(e)) => return Err(e),
                Err(ConnLost::Lost(why)) => {
                    losses += 1;
                    self.stats.reconnects += 1;
                    if losses > self.cfg.reconnect_attempts {
                        return Err(WorkerError::Protocol(format!("connection lost too often: {why}")));
                    }
                    warn!("worker {}: connection lost ({why}), reconnecting", self.cfg.worker_id);
                    thread::sleep(self.cfg.reconnect_backoff);
                }
            }
        };
        let label = match outcome {
            WorkerOutcome::Terminated(t) => t.to_string(),
            WorkerOutcome::Crashed => "crashed".to_string(),
        };
        self.write_log(&LogEntry::Exit {
            worker: self.cfg.worker_id,
            runs: self.stats.runs,
            states: self.stats.states,
            max_states: self.stats.max_states,
            outcome: label,
        })?;
        Ok(outcome)
    }
}

/// Loads everything named in `cfg` and works until termination.
pub fn worker_loop(cfg: WorkerConfig) -> Result<(WorkerOutcome, WorkerStats), WorkerError> {
    let mut w = Worker::load(cfg)?;
    let outcome = w.run()?;
    Ok((outcome, w.stats.clone()))
}
