//! The coordinator's ledger of finished trace IDs.
//!
//! [`TraceRangeList`] keeps explored and pruned IDs as sorted, disjoint,
//! non-adjacent half-open ranges. [`LeaseTable`] tracks IDs handed to workers
//! whose feedback has not arrived yet, so that concurrent requests do not all
//! draw the same ID.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::ops::Bound::{Excluded, Included};
use std::time::{Duration, Instant};

use num_bigint::{BigUint, RandBigInt};
use num_traits::{ToPrimitive, Zero};
use rand::Rng;
use thiserror::Error;

/// Half-open interval `[start, end)` of trace IDs.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TraceRange {
    pub start: BigUint,
    pub end: BigUint,
}

impl TraceRange {
    pub fn new(start: BigUint, end: BigUint) -> Self {
        TraceRange { start, end }
    }

    pub fn from_u64(start: u64, end: u64) -> Self {
        TraceRange::new(start.into(), end.into())
    }

    pub fn single(id: &BigUint) -> Self {
        TraceRange::new(id.clone(), id + 1u32)
    }

    pub fn width(&self) -> BigUint {
        if self.end > self.start {
            &self.end - &self.start
        } else {
            BigUint::zero()
        }
    }

    pub fn contains(&self, id: &BigUint) -> bool {
        self.start <= *id && *id < self.end
    }

    pub fn contains_range(&self, other: &TraceRange) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

impl fmt::Debug for TraceRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.start, self.end)
    }
}

impl fmt::Display for TraceRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("range {range} is empty or exceeds the {total} available trace ids")]
    OutOfBounds { range: TraceRange, total: BigUint },
    #[error("snapshot line {line}: {message}")]
    Snapshot { line: usize, message: String },
}

/// Normalised set of trace-ID ranges over `[0, total)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRangeList {
    ranges: BTreeMap<BigUint, BigUint>,
    total: BigUint,
    covered: BigUint,
}

impl TraceRangeList {
    pub fn new(total: BigUint) -> Self {
        TraceRangeList {
            ranges: BTreeMap::new(),
            total,
            covered: BigUint::zero(),
        }
    }

    pub fn total(&self) -> &BigUint {
        &self.total
    }

    /// Number of IDs inside the ledger.
    pub fn covered(&self) -> &BigUint {
        &self.covered
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn ranges(&self) -> impl Iterator<Item = TraceRange> + '_ {
        self.ranges.iter().map(|(s, e)| TraceRange::new(s.clone(), e.clone()))
    }

    /// Adds `r`, merging with overlapping and adjacent ranges. Returns how
    /// many IDs were newly covered.
    pub fn add_range(&mut self, r: &TraceRange) -> Result<BigUint, LedgerError> {
        if r.start > r.end || r.end > self.total {
            return Err(LedgerError::OutOfBounds {
                range: r.clone(),
                total: self.total.clone(),
            });
        }
        if r.start == r.end {
            return Ok(BigUint::zero());
        }
        let mut start = r.start.clone();
        let mut end = r.end.clone();
        let mut removed = BigUint::zero();
        if let Some((s, e)) = self.ranges.range(..=&r.start).next_back() {
            if *e >= r.start {
                start = s.clone();
                if *e > end {
                    end = e.clone();
                }
            }
        }
        let absorbed: Vec<BigUint> = self
            .ranges
            .range((Included(&start), Included(&end)))
            .map(|(s, _)| s.clone())
            .collect();
        for s in absorbed {
            let e = self.ranges.remove(&s).expect("present");
            removed += &e - &s;
            if e > end {
                end = e;
            }
        }
        let width = &end - &start;
        let gained = &width - &removed;
        self.covered += &gained;
        self.ranges.insert(start, end);
        Ok(gained)
    }

    pub fn contains(&self, id: &BigUint) -> bool {
        self.ranges.range(..=id).next_back().is_some_and(|(_, e)| id < e)
    }

    pub fn contains_range(&self, r: &TraceRange) -> bool {
        self.ranges
            .range(..=&r.start)
            .next_back()
            .is_some_and(|(_, e)| r.end <= *e)
    }

    /// True iff the ledger is exactly `[0, total)`.
    pub fn is_complete(&self) -> bool {
        self.ranges.len() == 1
            && self
                .ranges
                .iter()
                .next()
                .is_some_and(|(s, e)| s.is_zero() && *e == self.total)
    }

    /// The maximal ranges of `[0, total)` not in the ledger, in order.
    pub fn gaps(&self) -> Vec<TraceRange> {
        let mut out = Vec::new();
        let mut at = BigUint::zero();
        for (s, e) in &self.ranges {
            if *s > at {
                out.push(TraceRange::new(at.clone(), s.clone()));
            }
            at = e.clone();
        }
        if at < self.total {
            out.push(TraceRange::new(at, self.total.clone()));
        }
        out
    }

    /// One `i j` pair per line.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for (s, e) in &self.ranges {
            writeln!(out, "{s} {e}").unwrap();
        }
        out
    }

    pub fn from_snapshot(text: &str, total: BigUint) -> Result<Self, LedgerError> {
        let mut list = TraceRangeList::new(total);
        for (i, line) in text.lines().enumerate() {
            let err = |message: String| LedgerError::Snapshot { line: i + 1, message };
            if line.trim().is_empty() {
                continue;
            }
            let nums: Vec<BigUint> = line
                .split_whitespace()
                .map(|w| w.parse::<BigUint>().map_err(|e| err(e.to_string())))
                .collect::<Result<_, _>>()?;
            let [s, e] = &nums[..] else {
                return Err(err("expected `start end`".into()));
            };
            list.add_range(&TraceRange::new(s.clone(), e.clone()))
                .map_err(|e| err(e.to_string()))?;
        }
        Ok(list)
    }

    /// Recomputes the normal-form invariants from scratch. Used by tests.
    pub fn audit(&self) -> Result<(), String> {
        let mut sum = BigUint::zero();
        let mut prev_end: Option<&BigUint> = None;
        for (s, e) in &self.ranges {
            if s >= e {
                return Err(format!("empty range [{s},{e})"));
            }
            if *e > self.total {
                return Err(format!("range [{s},{e}) exceeds total {}", self.total));
            }
            if let Some(p) = prev_end {
                if s <= p {
                    return Err(format!("range [{s},{e}) overlaps or touches previous end {p}"));
                }
            }
            sum += e - s;
            prev_end = Some(e);
        }
        if sum != self.covered {
            return Err(format!("covered {} but ranges sum to {sum}", self.covered));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lease {
    pub worker: u64,
    pub issued: Instant,
    /// Feedback arrived but is held back for batched processing; pending
    /// leases never expire.
    pub pending: bool,
}

/// IDs handed out and awaiting feedback.
#[derive(Clone, Debug, Default)]
pub struct LeaseTable {
    leases: BTreeMap<BigUint, Lease>,
}

impl LeaseTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.leases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leases.is_empty()
    }

    pub fn get(&self, id: &BigUint) -> Option<&Lease> {
        self.leases.get(id)
    }

    pub fn contains(&self, id: &BigUint) -> bool {
        self.leases.contains_key(id)
    }

    pub fn insert(&mut self, id: BigUint, worker: u64, now: Instant) {
        self.leases.insert(
            id,
            Lease {
                worker,
                issued: now,
                pending: false,
            },
        );
    }

    pub fn mark_pending(&mut self, id: &BigUint) {
        if let Some(l) = self.leases.get_mut(id) {
            l.pending = true;
        }
    }

    pub fn release(&mut self, id: &BigUint) -> Option<Lease> {
        self.leases.remove(id)
    }

    /// Drops leases inside `r`.
    pub fn release_range(&mut self, r: &TraceRange) -> usize {
        let inside: Vec<BigUint> = self
            .leases
            .range((Included(&r.start), Excluded(&r.end)))
            .map(|(id, _)| id.clone())
            .collect();
        for id in &inside {
            self.leases.remove(id);
        }
        inside.len()
    }

    /// Drops non-pending leases issued more than `timeout` before `now`.
    pub fn expire(&mut self, now: Instant, timeout: Duration) -> Vec<BigUint> {
        let stale: Vec<BigUint> = self
            .leases
            .iter()
            .filter(|(_, l)| !l.pending && now.saturating_duration_since(l.issued) > timeout)
            .map(|(id, _)| id.clone())
            .collect();
        for id in &stale {
            self.leases.remove(id);
        }
        stale
    }

    pub fn ids(&self) -> impl Iterator<Item = &BigUint> {
        self.leases.keys()
    }

    fn in_range(&self, r: &TraceRange) -> impl Iterator<Item = &BigUint> {
        self.leases
            .range((Included(&r.start), Excluded(&r.end)))
            .map(|(id, _)| id)
    }
}

/// Draws an ID uniformly from `[0, total)` minus the ledger and the leases,
/// and leases it to `worker`. `None` when no such ID exists.
pub fn pick_unexplored<R: Rng + ?Sized>(
    ledger: &TraceRangeList,
    leases: &mut LeaseTable,
    rng: &mut R,
    worker: u64,
    now: Instant,
) -> Option<BigUint> {
    let gaps = ledger.gaps();
    let mut free_per_gap = Vec::with_capacity(gaps.len());
    let mut remaining = BigUint::zero();
    for g in &gaps {
        let leased = leases.in_range(g).count();
        let free = g.width() - BigUint::from(leased);
        remaining += &free;
        free_per_gap.push(free);
    }
    if remaining.is_zero() {
        return None;
    }
    let mut r = rng.gen_biguint_below(&remaining);
    for (g, free) in gaps.iter().zip(free_per_gap) {
        if r >= free {
            r -= free;
            continue;
        }
        let mut candidate = &g.start + &r;
        for id in leases.in_range(g) {
            if *id <= candidate {
                candidate += 1u32;
            } else {
                break;
            }
        }
        leases.insert(candidate.clone(), worker, now);
        return Some(candidate);
    }
    unreachable!("rank {r} below the free count")
}

/// Lossy conversion used for reporting.
pub fn approx_f64(n: &BigUint) -> f64 {
    n.to_f64().unwrap_or(f64::INFINITY)
}
