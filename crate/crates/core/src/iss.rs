//! Informed swarm search (ISS): a layered BFS of the product in which the
//! subsystem's actions may only fire in the order given by a swarm trace,
//! while all other behaviour is explored freely.
//!
//! Also holds the exhaustive BFS used as the reachability oracle and the
//! seeded randomised DFS used as the plain swarm baseline.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lts::{Label, StateId};
use crate::network::{LabelId, LabelSet, Product, ProductState};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IssError {
    #[error("label {0} is unknown to the network")]
    UnknownLabel(String),
    #[error("swarm trace label {0} is not a subsystem action")]
    NotRestricted(String),
    #[error("state cap of {0} exceeded")]
    CapExceeded(usize),
}

/// The product labels attributable to the subsystem: the relabelled
/// subsystem alphabet.
#[derive(Clone, Debug)]
pub struct Restriction {
    set: LabelSet,
    labels: BTreeSet<Label>,
}

impl Restriction {
    /// Builds the restriction from the subsystem alphabet (as read from
    /// `<base>.swh`).
    pub fn from_alphabet(product: &Product, alphabet: &[Label]) -> Result<Self, IssError> {
        let mut set = LabelSet::empty(product);
        let mut labels = BTreeSet::new();
        for l in alphabet {
            let id = product
                .label_id(l.as_str())
                .ok_or_else(|| IssError::UnknownLabel(l.to_string()))?;
            let r = product.relabel_id(id);
            set.insert(r);
            labels.insert(product.label(r).clone());
        }
        Ok(Restriction { set, labels })
    }

    /// The restriction for a subsystem formed by the given components.
    pub fn from_components(product: &Product, components: &[usize]) -> Self {
        let alphabet: Vec<Label> = components
            .iter()
            .flat_map(|&c| product.network().components[c].labels().iter().cloned())
            .collect();
        Restriction::from_alphabet(product, &alphabet).expect("component labels are known")
    }

    pub fn contains(&self, l: LabelId) -> bool {
        self.set.contains(l)
    }

    pub fn labels(&self) -> &BTreeSet<Label> {
        &self.labels
    }

    pub fn label_set(&self) -> &LabelSet {
        &self.set
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IssOptions {
    /// Abort once this many states have been expanded.
    pub state_cap: Option<usize>,
    /// Keep the explored states in the result.
    pub keep_visited: bool,
    /// Report product states without any successor as bugs.
    pub detect_deadlock: bool,
}

/// Per-position sets of subsystem actions observed enabled.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FeedbackVector {
    /// `sets[i]` holds the restricted labels enabled at some state explored
    /// while at position `i`.
    pub sets: Vec<BTreeSet<Label>>,
    /// Number of positions the search went through, `sets.len()`.
    pub reached: usize,
    /// Every action of the swarm trace fired.
    pub consumed_fully: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BugKind {
    ErrorLabel(String),
    Deadlock,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bug {
    pub kind: BugKind,
    /// Product actions from the initial state; for an error label the last
    /// action is the error label itself.
    pub witness: Vec<Label>,
}

#[derive(Clone, Debug)]
pub struct IssResult {
    pub feedback: FeedbackVector,
    pub states_explored: usize,
    pub transitions_fired: u64,
    pub bug: Option<Bug>,
    pub visited: Option<Vec<ProductState>>,
    pub duration: Duration,
}

/// One JSON-lines record per ISS run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub trace_id: String,
    pub states: usize,
    pub transitions: u64,
    pub duration_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bug: Option<Vec<String>>,
    pub reached: usize,
    pub consumed_fully: bool,
}

impl RunRecord {
    pub fn new(trace_id: &BigUint, result: &IssResult) -> Self {
        RunRecord {
            trace_id: trace_id.to_string(),
            states: result.states_explored,
            transitions: result.transitions_fired,
            duration_ms: result.duration.as_secs_f64() * 1000.0,
            bug: result
                .bug
                .as_ref()
                .map(|b| b.witness.iter().map(|l| l.to_string()).collect()),
            reached: result.feedback.reached,
            consumed_fully: result.feedback.consumed_fully,
        }
    }
}

#[derive(Default)]
struct Slot {
    closed: bool,
    in_next: bool,
    in_step: bool,
}

/// Interned product states with parent pointers for witness reconstruction.
#[derive(Default)]
struct StateStore {
    index: HashMap<ProductState, u32>,
    states: Vec<ProductState>,
    parent: Vec<Option<(u32, LabelId)>>,
    slots: Vec<Slot>,
}

impl StateStore {
    fn intern(&mut self, locals: &[StateId], parent: Option<(u32, LabelId)>) -> u32 {
        if let Some(&id) = self.index.get(locals) {
            return id;
        }
        let state = ProductState::new(locals.to_vec());
        let id = self.states.len() as u32;
        self.index.insert(state.clone(), id);
        self.states.push(state);
        self.parent.push(parent);
        self.slots.push(Slot::default());
        id
    }

    fn witness(&self, product: &Product, mut id: u32) -> Vec<Label> {
        let mut labels = Vec::new();
        while let Some((p, l)) = self.parent[id as usize] {
            labels.push(product.label(l).clone());
            id = p;
        }
        labels.reverse();
        labels
    }
}

/// Runs the informed swarm search for `sigma` (product-level actions).
pub fn run_iss(
    product: &Product,
    restriction: &Restriction,
    sigma: &[Label],
    opts: &IssOptions,
) -> Result<IssResult, IssError> {
    let started = Instant::now();
    let sigma: Vec<LabelId> = sigma
        .iter()
        .map(|l| {
            let id = product
                .label_id(l.as_str())
                .ok_or_else(|| IssError::UnknownLabel(l.to_string()))?;
            if restriction.contains(id) {
                Ok(id)
            } else {
                Err(IssError::NotRestricted(l.to_string()))
            }
        })
        .collect::<Result<_, _>>()?;

    let mut store = StateStore::default();
    let root = store.intern(product.initial().locals(), None);
    let mut position = 0usize;
    let mut open: Vec<u32> = vec![root];
    let mut next: Vec<u32> = Vec::new();
    let mut step: Vec<u32> = Vec::new();
    let mut observed: Vec<BTreeSet<LabelId>> = vec![BTreeSet::new()];
    let mut explored = 0usize;
    let mut fired = 0u64;
    let mut bug = None;
    let mut moves: Vec<(LabelId, Vec<StateId>)> = Vec::new();
    let mut expanded_in_layer = 0usize;

    'search: loop {
        if open.is_empty() {
            if step.is_empty() {
                break;
            }
            position += 1;
            for &s in &step {
                store.slots[s as usize].in_step = false;
            }
            open = step.drain(..).filter(|&s| !store.slots[s as usize].closed).collect();
            observed.push(BTreeSet::new());
        }
        for (idx, &s) in open.iter().enumerate() {
            expanded_in_layer = idx + 1;
            explored += 1;
            if let Some(cap) = opts.state_cap {
                if explored > cap {
                    return Err(IssError::CapExceeded(cap));
                }
            }
            moves.clear();
            product.for_each_move(store.states[s as usize].locals(), |l, succ| {
                moves.push((l, succ.to_vec()));
            });
            if opts.detect_deadlock && moves.is_empty() {
                bug = Some(Bug {
                    kind: BugKind::Deadlock,
                    witness: store.witness(product, s),
                });
                break 'search;
            }
            for (l, succ) in &moves {
                let restricted = restriction.contains(*l);
                if restricted {
                    observed[position].insert(*l);
                    if sigma.get(position) != Some(l) {
                        continue;
                    }
                }
                fired += 1;
                if product.is_error(*l) {
                    let mut witness = store.witness(product, s);
                    witness.push(product.label(*l).clone());
                    bug = Some(Bug {
                        kind: BugKind::ErrorLabel(product.label(*l).to_string()),
                        witness,
                    });
                    break 'search;
                }
                let t = store.intern(succ, Some((s, *l)));
                let slot = &mut store.slots[t as usize];
                if restricted {
                    if !slot.in_step {
                        slot.in_step = true;
                        step.push(t);
                    }
                } else if !slot.in_next && !slot.closed {
                    slot.in_next = true;
                    next.push(t);
                }
            }
        }
        for &s in &open {
            store.slots[s as usize].closed = true;
        }
        for &s in &next {
            store.slots[s as usize].in_next = false;
        }
        open = next.drain(..).filter(|&s| !store.slots[s as usize].closed).collect();
    }

    if bug.is_some() {
        // the interrupted layer was expanded up to the buggy state
        for &s in &open[..expanded_in_layer] {
            store.slots[s as usize].closed = true;
        }
    }
    let reached = observed.len();
    let feedback = FeedbackVector {
        sets: observed
            .into_iter()
            .map(|set| set.into_iter().map(|l| product.label(l).clone()).collect())
            .collect(),
        reached,
        consumed_fully: bug.is_none() && reached == sigma.len() + 1,
    };
    let visited = opts.keep_visited.then(|| {
        store
            .states
            .iter()
            .zip(&store.slots)
            .filter(|(_, slot)| slot.closed)
            .map(|(s, _)| s.clone())
            .collect()
    });
    let states_explored = store.slots.iter().filter(|s| s.closed).count();
    debug_assert_eq!(states_explored, explored);
    Ok(IssResult {
        feedback,
        states_explored,
        transitions_fired: fired,
        bug,
        visited,
        duration: started.elapsed(),
    })
}

/// Result of the exhaustive breadth-first reachability analysis.
#[derive(Clone, Debug)]
pub struct Exploration {
    /// Reachable states in discovery order.
    pub states: Vec<ProductState>,
    pub transitions: u64,
    /// A shortest action sequence ending in an error label, if one is
    /// reachable.
    pub error_witness: Option<Vec<Label>>,
    pub deadlocks: usize,
    pub duration: Duration,
}

impl Exploration {
    pub fn state_set(&self) -> HashSet<ProductState> {
        self.states.iter().cloned().collect()
    }
}

/// Exhaustive BFS of the product, failing once more than `cap` states are
/// discovered.
pub fn run_full_bfs(product: &Product, cap: Option<usize>) -> Result<Exploration, IssError> {
    let started = Instant::now();
    let mut store = StateStore::default();
    store.intern(product.initial().locals(), None);
    let mut head = 0usize;
    let mut transitions = 0u64;
    let mut error_witness = None;
    let mut deadlocks = 0usize;
    while head < store.states.len() {
        let s = head as u32;
        head += 1;
        let mut targets: Vec<(LabelId, Vec<StateId>)> = Vec::new();
        product.for_each_move(store.states[s as usize].locals(), |l, succ| {
            targets.push((l, succ.to_vec()));
        });
        if targets.is_empty() {
            deadlocks += 1;
        }
        for (l, succ) in targets {
            transitions += 1;
            if error_witness.is_none() && product.is_error(l) {
                let mut w = store.witness(product, s);
                w.push(product.label(l).clone());
                error_witness = Some(w);
            }
            store.intern(&succ, Some((s, l)));
            if let Some(cap) = cap {
                if store.states.len() > cap {
                    return Err(IssError::CapExceeded(cap));
                }
            }
        }
    }
    Ok(Exploration {
        states: store.states,
        transitions,
        error_witness,
        deadlocks,
        duration: started.elapsed(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DfsStats {
    pub states: usize,
    pub transitions_fired: u64,
    pub bug: Option<Vec<Label>>,
    pub duration: Duration,
}

/// Depth-first search with successor order shuffled by `seed`. Stops at the
/// first error-labelled transition.
pub fn run_swarm_dfs(product: &Product, seed: u64, cap: Option<usize>) -> Result<DfsStats, IssError> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<ProductState> = HashSet::new();
    let shuffled = |s: &ProductState, rng: &mut ChaCha8Rng| {
        let mut moves: Vec<(LabelId, ProductState)> = Vec::new();
        product.for_each_move(s.locals(), |l, succ| moves.push((l, ProductState::new(succ.to_vec()))));
        moves.shuffle(rng);
        moves
    };
    let init = product.initial();
    let first = shuffled(&init, &mut rng);
    seen.insert(init);
    let mut stack: Vec<(Vec<(LabelId, ProductState)>, usize)> = vec![(first, 0)];
    let mut path: Vec<LabelId> = Vec::new();
    let mut fired = 0u64;
    let mut bug = None;
    while let Some((moves, at)) = stack.last_mut() {
        if *at == moves.len() {
            stack.pop();
            path.pop();
            continue;
        }
        let (l, t) = moves[*at].clone();
        *at += 1;
        fired += 1;
        if product.is_error(l) {
            let mut w: Vec<Label> = path.iter().map(|&p| product.label(p).clone()).collect();
            w.push(product.label(l).clone());
            bug = Some(w);
            break;
        }
        if seen.insert(t.clone()) {
            if let Some(cap) = cap {
                if seen.len() > cap {
                    return Err(IssError::CapExceeded(cap));
                }
            }
            let moves = shuffled(&t, &mut rng);
            path.push(l);
            stack.push((moves, 0));
        }
    }
    Ok(DfsStats {
        states: seen.len(),
        transitions_fired: fired,
        bug,
        duration: started.elapsed(),
    })
}
