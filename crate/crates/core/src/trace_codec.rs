//! Numbering of maximal subsystem traces.
//!
//! Trace IDs `0..tc(init)` are assigned in lexicographic order of child
//! indices, children being scanned by ascending state number. Every trace
//! prefix therefore covers a contiguous ID range whose width is the weight of
//! the state it reaches.

use num_bigint::BigUint;
use num_traits::Zero;
use thiserror::Error;

use crate::ledger::TraceRange;
use crate::lts::{Label, LabelIdx, StateId};
use crate::network::Network;
use crate::trace_count::WeightedLts;

/// A maximal path through the weighted subsystem.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SubTrace {
    /// States visited, starting at the initial state.
    pub path: Vec<StateId>,
    /// Labels taken; one shorter than `path`.
    pub labels: Vec<Label>,
    /// Index of the child taken at each step, in sorted child order.
    pub choices: Vec<usize>,
}

/// A trace handed to one worker: the subsystem labels, relabelled to their
/// product-level names.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SwarmTrace {
    pub trace_id: BigUint,
    pub actions: Vec<Label>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("trace id {id} out of range (only {total} traces)")]
    OutOfRange { id: BigUint, total: BigUint },
    #[error("prefix is not executable at position {position} (label {label})")]
    NotExecutable { position: usize, label: Label },
    #[error("label sequence does not end in a deadlock")]
    NotMaximal,
}

/// One step of a decoded trace: the state and the ID range of the traces
/// through it that share the prefix so far.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodedStep {
    pub state: StateId,
    pub range: TraceRange,
}

/// Decodes trace `k`, also returning the range of every visited state.
pub fn decode_steps(w: &WeightedLts, k: &BigUint) -> Result<(SubTrace, Vec<DecodedStep>), CodecError> {
    if k >= w.total() {
        return Err(CodecError::OutOfRange {
            id: k.clone(),
            total: w.total().clone(),
        });
    }
    let mut state = w.lts().initial();
    let mut start = BigUint::zero();
    let mut offset = k.clone();
    let mut trace = SubTrace {
        path: vec![state],
        labels: Vec::new(),
        choices: Vec::new(),
    };
    let mut steps = vec![DecodedStep {
        state,
        range: TraceRange::new(start.clone(), &start + w.tc(state)),
    }];
    loop {
        let children = w.children(state);
        if children.is_empty() {
            break;
        }
        let mut chosen = None;
        for (i, &(l, c)) in children.iter().enumerate() {
            let weight = w.tc(c);
            if offset < *weight {
                chosen = Some((i, l, c));
                break;
            }
            offset -= weight;
            start += weight;
        }
        let (i, l, c) = chosen.expect("offset below the state's weight");
        state = c;
        trace.path.push(c);
        trace.labels.push(w.lts().label(l).clone());
        trace.choices.push(i);
        steps.push(DecodedStep {
            state,
            range: TraceRange::new(start.clone(), &start + w.tc(state)),
        });
    }
    Ok((trace, steps))
}

/// Maps a trace ID to its maximal subsystem trace.
pub fn decode(w: &WeightedLts, k: &BigUint) -> Result<SubTrace, CodecError> {
    decode_steps(w, k).map(|(t, _)| t)
}

/// The children of `state` with the ID range each one covers, given that
/// the traces through `state` start at `start`.
pub fn child_ranges(w: &WeightedLts, state: StateId, start: &BigUint) -> Vec<(LabelIdx, StateId, TraceRange)> {
    let mut at = start.clone();
    w.children(state)
        .iter()
        .map(|&(l, c)| {
            let end = &at + w.tc(c);
            let r = TraceRange::new(std::mem::replace(&mut at, end.clone()), end);
            (l, c, r)
        })
        .collect()
}

fn walk_prefix(w: &WeightedLts, prefix: &[Label]) -> Result<(StateId, BigUint), CodecError> {
    let mut state = w.lts().initial();
    let mut start = BigUint::zero();
    for (position, label) in prefix.iter().enumerate() {
        let not_exec = || CodecError::NotExecutable {
            position,
            label: label.clone(),
        };
        let idx = w.lts().label_index(label.as_str()).ok_or_else(not_exec)?;
        let mut found = None;
        for &(l, c) in w.children(state) {
            if l == idx {
                found = Some(c);
                break;
            }
            start += w.tc(c);
        }
        state = found.ok_or_else(not_exec)?;
    }
    Ok((state, start))
}

/// The IDs of all maximal traces that extend `prefix`.
pub fn prefix_range(w: &WeightedLts, prefix: &[Label]) -> Result<TraceRange, CodecError> {
    let (state, start) = walk_prefix(w, prefix)?;
    let end = &start + w.tc(state);
    Ok(TraceRange::new(start, end))
}

/// Inverse of [`decode`]: the ID of a maximal label sequence.
pub fn encode(w: &WeightedLts, labels: &[Label]) -> Result<BigUint, CodecError> {
    let (state, start) = walk_prefix(w, labels)?;
    if !w.children(state).is_empty() {
        return Err(CodecError::NotMaximal);
    }
    Ok(start)
}

/// Relabels a decoded subsystem trace into the swarm trace for worker jobs.
pub fn to_swarm(net: &Network, t: &SubTrace, k: &BigUint) -> SwarmTrace {
    SwarmTrace {
        trace_id: k.clone(),
        actions: t.labels.iter().map(|l| net.relabel(l)).collect(),
    }
}
