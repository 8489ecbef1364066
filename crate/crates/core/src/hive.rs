//! The coordinator: hands out trace IDs, folds feedback into the ledger and
//! decides when the search is over.

use std::collections::HashSet;
use std::io::{self, BufReader};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use num_bigint::BigUint;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::iss::FeedbackVector;
use crate::ledger::{pick_unexplored, LeaseTable, TraceRange, TraceRangeList};
use crate::lts::Label;
use crate::network::Network;
use crate::protocol::{read_request, write_reply, Reply, Request, Termination, PROTOCOL_VERSION};
use crate::trace_codec::{child_ranges, decode_steps, to_swarm};
use crate::trace_count::WeightedLts;

#[derive(Clone, Debug)]
pub struct HiveConfig {
    pub seed: u64,
    /// Feedback messages held back before they are folded into the ledger.
    /// 1 processes every message on arrival.
    pub feedback_batch: usize,
    /// Fixed lease timeout. `None` uses ten times the longest run seen so
    /// far, at least a minute.
    pub lease_timeout: Option<Duration>,
    /// Delay suggested to workers when every open ID is leased.
    pub retry_ms: u64,
}

impl Default for HiveConfig {
    fn default() -> Self {
        HiveConfig {
            seed: 0,
            feedback_batch: 1,
            lease_timeout: None,
            retry_ms: 20,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HiveError {
    #[error("trace {0} was never issued")]
    UnknownTrace(BigUint),
    #[error("feedback for trace {trace_id} is inconsistent: {reason}")]
    BadFeedback { trace_id: BigUint, reason: String },
}

/// Ranges marked done by one feedback message: the trace itself first, then
/// the subtrees proven unrealizable.
pub fn feedback_ranges(
    w: &WeightedLts,
    net: &Network,
    trace_id: &BigUint,
    fb: &FeedbackVector,
) -> Result<Vec<TraceRange>, HiveError> {
    let bad = |reason: String| HiveError::BadFeedback {
        trace_id: trace_id.clone(),
        reason,
    };
    let (trace, steps) = decode_steps(w, trace_id).map_err(|_| HiveError::UnknownTrace(trace_id.clone()))?;
    let positions = trace.path.len();
    if fb.sets.len() != fb.reached {
        return Err(bad(format!("{} sets for {} positions", fb.sets.len(), fb.reached)));
    }
    if fb.reached == 0 || fb.reached > positions {
        return Err(bad(format!("reached {} of {positions} positions", fb.reached)));
    }
    if fb.consumed_fully && fb.reached != positions {
        return Err(bad(format!(
            "fully consumed after {} of {positions} positions",
            fb.reached
        )));
    }
    let mut out = vec![TraceRange::single(trace_id)];
    for (i, seen) in fb.sets.iter().enumerate() {
        let state = trace.path[i];
        for (l, _, range) in child_ranges(w, state, &steps[i].range.start) {
            if !seen.contains(&net.relabel(w.lts().label(l))) {
                out.push(range);
            }
        }
    }
    if !fb.consumed_fully && fb.reached < positions {
        let unfired = &steps[fb.reached].range;
        if !out[1..].iter().any(|r| r.contains_range(unfired)) {
            out.push(unfired.clone());
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugRecord {
    pub trace_id: String,
    pub witness: Vec<String>,
    /// Reported after the search had already completed.
    pub late: bool,
}

/// Summary written when the hive shuts down.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HiveReport {
    pub seed: u64,
    /// tc of the subsystem's initial state.
    pub est_runs: String,
    /// Feedback messages folded into the ledger.
    pub runs: u64,
    pub explored_ids: Vec<String>,
    /// Ranges added because of missing feedback, as `[start, end)` pairs.
    pub pruned_ranges: Vec<[String; 2]>,
    pub ledger: Vec<[String; 2]>,
    pub covered: String,
    pub complete: bool,
    pub termination: Option<Termination>,
    pub bugs: Vec<BugRecord>,
    /// Lease-to-feedback time of the slowest run.
    pub max_time_ms: f64,
    pub total_time_ms: f64,
    pub leases_expired: u64,
    pub terminate_sent: u64,
    pub connections: u64,
    pub protocol_errors: u64,
    pub feedback_batch: usize,
}

struct HiveState {
    ledger: TraceRangeList,
    leases: LeaseTable,
    rng: ChaCha8Rng,
    terminated: Option<(Termination, Instant)>,
    issued: HashSet<BigUint>,
    batch: Vec<(BigUint, FeedbackVector)>,
    explored: Vec<BigUint>,
    pruned: Vec<TraceRange>,
    bugs: Vec<BugRecord>,
    runs: u64,
    max_time: Duration,
    total_time: Duration,
    leases_expired: u64,
    terminate_sent: u64,
    connections: u64,
    protocol_errors: u64,
}

pub struct Hive {
    weighted: WeightedLts,
    net: Network,
    config: HiveConfig,
    state: Mutex<HiveState>,
}

impl Hive {
    pub fn new(weighted: WeightedLts, net: Network, config: HiveConfig) -> Self {
        let state = HiveState {
            ledger: TraceRangeList::new(weighted.total().clone()),
            leases: LeaseTable::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            terminated: None,
            issued: HashSet::new(),
            batch: Vec::new(),
            explored: Vec::new(),
            pruned: Vec::new(),
            bugs: Vec::new(),
            runs: 0,
            max_time: Duration::ZERO,
            total_time: Duration::ZERO,
            leases_expired: 0,
            terminate_sent: 0,
            connections: 0,
            protocol_errors: 0,
        };
        Hive {
            weighted,
            net,
            config,
            state: Mutex::new(state),
        }
    }

    pub fn weighted(&self) -> &WeightedLts {
        &self.weighted
    }

    pub fn config(&self) -> &HiveConfig {
        &self.config
    }

    fn lock(&self) -> MutexGuard<'_, HiveState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn terminated(&self) -> Option<Termination> {
        self.lock().terminated.map(|(t, _)| t)
    }

    fn terminated_since(&self) -> Option<Instant> {
        self.lock().terminated.map(|(_, at)| at)
    }

    pub fn ledger(&self) -> TraceRangeList {
        self.lock().ledger.clone()
    }

    pub fn lease_count(&self) -> usize {
        self.lock().leases.len()
    }

    fn lease_timeout(&self, st: &HiveState) -> Duration {
        self.config
            .lease_timeout
            .unwrap_or_else(|| (st.max_time * 10).max(Duration::from_secs(60)))
    }

    /// Answers a `GET` from `worker`: a trace, a retry hint or termination.
    pub fn select_trace(&self, worker: u64) -> Reply {
        let mut st = self.lock();
        if let Some((t, _)) = st.terminated {
            st.terminate_sent += 1;
            return Reply::Terminate(t);
        }
        let now = Instant::now();
        let timeout = self.lease_timeout(&st);
        let expired = st.leases.expire(now, timeout);
        if !expired.is_empty() {
            info!("{} lease(s) expired: {:?}", expired.len(), expired);
            st.leases_expired += expired.len() as u64;
        }
        loop {
            if st.ledger.is_complete() {
                self.finish(&mut st, Termination::Complete);
                st.terminate_sent += 1;
                return Reply::Terminate(Termination::Complete);
            }
            let st = &mut *st;
            match pick_unexplored(&st.ledger, &mut st.leases, &mut st.rng, worker, now) {
                Some(id) => {
                    let (trace, _) = decode_steps(&self.weighted, &id).expect("picked IDs are in range");
                    st.issued.insert(id.clone());
                    debug!("trace {id} leased to {worker}");
                    return Reply::Trace(to_swarm(&self.net, &trace, &id));
                }
                None if !st.batch.is_empty() => self.flush(st),
                None => return Reply::Retry(self.config.retry_ms),
            }
        }
    }

    fn finish(&self, st: &mut HiveState, t: Termination) {
        if st.terminated.is_none() {
            info!("search terminated: {t}");
            st.terminated = Some((t, Instant::now()));
        }
    }

    fn flush(&self, st: &mut HiveState) {
        for (id, fb) in std::mem::take(&mut st.batch) {
            let ranges = feedback_ranges(&self.weighted, &self.net, &id, &fb).expect("validated on arrival");
            self.fold(st, &id, ranges);
        }
    }

    fn fold(&self, st: &mut HiveState, id: &BigUint, ranges: Vec<TraceRange>) -> Vec<TraceRange> {
        if let Some(lease) = st.leases.release(id) {
            let took = lease.issued.elapsed();
            st.max_time = st.max_time.max(took);
            st.total_time += took;
        }
        st.runs += 1;
        st.explored.push(id.clone());
        let mut added = Vec::new();
        for (i, r) in ranges.into_iter().enumerate() {
            let gained = st.ledger.add_range(&r).expect("ranges lie inside the ledger");
            if i > 0 {
                st.leases.release_range(&r);
                st.pruned.push(r.clone());
            }
            if gained > BigUint::ZERO {
                added.push(r);
            }
        }
        if st.ledger.is_complete() {
            self.finish(st, Termination::Complete);
        }
        added
    }

    /// Folds a worker's feedback for `trace_id` into the ledger and returns
    /// the ranges that grew it. With batching, the message may be held back
    /// and the returned list is empty.
    pub fn apply_feedback(&self, trace_id: &BigUint, fb: &FeedbackVector) -> Result<Vec<TraceRange>, HiveError> {
        let mut st = self.lock();
        if !st.issued.contains(trace_id) {
            return Err(HiveError::UnknownTrace(trace_id.clone()));
        }
        let ranges = feedback_ranges(&self.weighted, &self.net, trace_id, fb)?;
        if self.config.feedback_batch > 1 {
            st.leases.mark_pending(trace_id);
            st.batch.push((trace_id.clone(), fb.clone()));
            if st.batch.len() >= self.config.feedback_batch {
                self.flush(&mut st);
            }
            return Ok(Vec::new());
        }
        Ok(self.fold(&mut st, trace_id, ranges))
    }

    /// Records a bug. The first report while the search is running ends it.
    pub fn report_bug(&self, trace_id: &BigUint, witness: &[Label]) {
        let mut st = self.lock();
        let late = matches!(st.terminated, Some((Termination::Complete, _)));
        if late {
            warn!("bug reported for trace {trace_id} after completion");
        }
        st.bugs.push(BugRecord {
            trace_id: trace_id.to_string(),
            witness: witness.iter().map(|l| l.to_string()).collect(),
            late,
        });
        st.leases.release(trace_id);
        self.finish(&mut st, Termination::Bug);
    }

    fn handle(&self, worker: u64, req: Request) -> Reply {
        match req {
            Request::Hello(_) => Reply::Err("already greeted".into()),
            Request::Get => self.select_trace(worker),
            Request::Feedback { trace_id, feedback } => match self.apply_feedback(&trace_id, &feedback) {
                Ok(_) => Reply::Ack,
                Err(e) => {
                    warn!("worker {worker}: {e}");
                    self.lock().protocol_errors += 1;
                    Reply::Err(e.to_string())
                }
            },
            Request::Bug { trace_id, witness } => {
                self.report_bug(&trace_id, &witness);
                Reply::Ack
            }
            Request::Bye => Reply::Ack,
        }
    }

    /// Serves one worker connection until it says `BYE`, closes, or sends
    /// something unparseable.
    pub fn serve_connection(&self, stream: TcpStream, worker: u64) -> io::Result<()> {
        self.lock().connections += 1;
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut writer = stream;
        let mut greeted = false;
        loop {
            let req = match read_request(&mut reader) {
                Ok(Some(r)) => r,
                Ok(None) => return Ok(()),
                Err(e) if e.is_malformed() => {
                    warn!("worker {worker}: {e}");
                    self.lock().protocol_errors += 1;
                    write_reply(&mut writer, &Reply::Err(e.to_string()))?;
                    return Ok(());
                }
                Err(e) => {
                    debug!("worker {worker}: connection lost: {e}");
                    return Ok(());
                }
            };
            if !greeted {
                match req {
                    Request::Hello(PROTOCOL_VERSION) => {
                        greeted = true;
                        write_reply(&mut writer, &Reply::Hi(PROTOCOL_VERSION))?;
                        continue;
                    }
                    Request::Hello(v) => {
                        self.lock().protocol_errors += 1;
                        write_reply(&mut writer, &Reply::Err(format!("unsupported protocol version {v}")))?;
                        return Ok(());
                    }
                    _ => {
                        self.lock().protocol_errors += 1;
                        write_reply(&mut writer, &Reply::Err("HELLO expected".into()))?;
                        return Ok(());
                    }
                }
            }
            let bye = req == Request::Bye;
            let reply = self.handle(worker, req);
            write_reply(&mut writer, &reply)?;
            if bye {
                return Ok(());
            }
        }
    }

    pub fn report(&self) -> HiveReport {
        let st = self.lock();
        let pair = |r: &TraceRange| [r.start.to_string(), r.end.to_string()];
        HiveReport {
            seed: self.config.seed,
            est_runs: self.weighted.total().to_string(),
            runs: st.runs,
            explored_ids: st.explored.iter().map(|k| k.to_string()).collect(),
            pruned_ranges: st.pruned.iter().map(pair).collect(),
            ledger: st.ledger.ranges().map(|r| pair(&r)).collect(),
            covered: st.ledger.covered().to_string(),
            complete: st.ledger.is_complete(),
            termination: st.terminated.map(|(t, _)| t),
            bugs: st.bugs.clone(),
            max_time_ms: st.max_time.as_secs_f64() * 1000.0,
            total_time_ms: st.total_time.as_secs_f64() * 1000.0,
            leases_expired: st.leases_expired,
            terminate_sent: st.terminate_sent,
            connections: st.connections,
            protocol_errors: st.protocol_errors,
            feedback_batch: self.config.feedback_batch,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ServeOptions {
    /// After termination, keep accepting until no connection has been open
    /// for this long.
    pub linger: Duration,
    /// After termination, stop anyway once this much time has passed.
    pub drain_timeout: Duration,
    /// Stops the accept loop when set.
    pub stop: Arc<AtomicBool>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            linger: Duration::from_millis(500),
            drain_timeout: Duration::from_secs(30),
            stop: Arc::new(AtomicBool::new(false)),
        }
    }
}

/// Accepts workers on `listener`, one thread per connection, until the
/// search has terminated and the workers have gone, then returns the report.
pub fn serve(listener: TcpListener, hive: Arc<Hive>, opts: ServeOptions) -> io::Result<HiveReport> {
    listener.set_nonblocking(true)?;
    let active = Arc::new(AtomicUsize::new(0));
    let mut next_worker = 0u64;
    let mut idle_since = Instant::now();
    loop {
        match listener.accept() {
            Ok((stream, peer)) => {
                stream.set_nonblocking(false)?;
                let _ = stream.set_nodelay(true);
                next_worker += 1;
                let worker = next_worker;
                debug!("worker {worker} connected from {peer}");
                active.fetch_add(1, Ordering::SeqCst);
                let hive = Arc::clone(&hive);
                let active = Arc::clone(&active);
                thread::spawn(move || {
                    if let Err(e) = hive.serve_connection(stream, worker) {
                        debug!("worker {worker}: {e}");
                    }
                    active.fetch_sub(1, Ordering::SeqCst);
                });
                continue;
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {}
            Err(e) => warn!("accept failed: {e}"),
        }
        if opts.stop.load(Ordering::SeqCst) {
            break;
        }
        if active.load(Ordering::SeqCst) > 0 {
            idle_since = Instant::now();
        }
        if let Some(at) = hive.terminated_since() {
            if idle_since.elapsed() >= opts.linger || at.elapsed() >= opts.drain_timeout {
                break;
            }
        }
        thread::sleep(Duration::from_millis(2));
    }
    Ok(hive.report())
}
