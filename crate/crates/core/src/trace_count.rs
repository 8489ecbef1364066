//! Trace-counting preprocessing of the subsystem LTS.
//!
//! States are renumbered in depth-first discovery order: expanding a state
//! numbers its unseen successors in adjacency order and pushes them on a
//! stack, so the most recently discovered successor is expanded next. Each
//! state then gets a weight `tc(s)`: 1 for deadlocks, otherwise the sum of
//! the weights over its outgoing transitions. `tc(init)` is the number of
//! maximal traces.
//!
//! A weighted LTS is stored as three files next to each other:
//! `<base>.swh` (alphabet, one label per line), `<base>.swc` (`src label dst`
//! triples) and `<base>.sww` (the weight of state `k` on line `k`).

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use num_bigint::BigUint;
use num_traits::One;
use thiserror::Error;

use crate::lts::{Label, LabelIdx, Lts, LtsError, StateId};

/// The subsystem LTS, renumbered, together with its trace counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightedLts {
    lts: Lts,
    tc: Vec<BigUint>,
    depth_bound: Option<u32>,
}

#[derive(Debug, Error)]
pub enum CountError {
    #[error("subsystem has a cycle through states {0:?}; pass a depth bound to unroll it")]
    Cycle(Vec<StateId>),
    #[error("depth bound must be positive")]
    ZeroBound,
}

#[derive(Debug, Error)]
pub enum WeightedIoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Format { path: String, line: usize, message: String },
    #[error("stored weight of state {state} is {stored}, recomputed {computed}")]
    WeightMismatch {
        state: StateId,
        stored: BigUint,
        computed: BigUint,
    },
    #[error("stored transitions are not a valid subsystem: {0}")]
    Structure(String),
}

impl WeightedLts {
    /// The renumbered LTS; the initial state is 0 and each state's
    /// successors are sorted by state number.
    pub fn lts(&self) -> &Lts {
        &self.lts
    }

    pub fn tc(&self, state: StateId) -> &BigUint {
        &self.tc[state as usize]
    }

    pub fn weights(&self) -> &[BigUint] {
        &self.tc
    }

    /// Number of maximal traces, the size of the swarm set.
    pub fn total(&self) -> &BigUint {
        &self.tc[self.lts.initial() as usize]
    }

    pub fn depth_bound(&self) -> Option<u32> {
        self.depth_bound
    }

    pub fn children(&self, state: StateId) -> &[(LabelIdx, StateId)] {
        self.lts.successors(state)
    }

    pub fn alphabet(&self) -> &[Label] {
        self.lts.labels()
    }
}

/// Counts the maximal traces of `sub`. With `depth_bound = Some(n)` the LTS is
/// first unrolled into `(state, remaining depth)` pairs; traces are cut after
/// `n` transitions and the cut points count as deadlocks.
pub fn count_traces(sub: &Lts, depth_bound: Option<u32>) -> Result<WeightedLts, CountError> {
    let graph = match depth_bound {
        None => {
            if let Some(cycle) = find_cycle(sub) {
                return Err(CountError::Cycle(cycle));
            }
            sub.clone()
        }
        Some(0) => return Err(CountError::ZeroBound),
        Some(n) => unroll(sub, n),
    };
    let lts = renumber(&graph);
    let tc = weights(&lts).expect("acyclic after the cycle check or unrolling");
    Ok(WeightedLts { lts, tc, depth_bound })
}

fn unroll(sub: &Lts, bound: u32) -> Lts {
    let mut ids: HashMap<(StateId, u32), StateId> = HashMap::new();
    let mut nodes = vec![(sub.initial(), bound)];
    ids.insert((sub.initial(), bound), 0);
    let mut adjacency: Vec<Vec<(LabelIdx, StateId)>> = vec![Vec::new()];
    let mut work = vec![0 as StateId];
    while let Some(n) = work.pop() {
        let (s, remaining) = nodes[n as usize];
        if remaining == 0 {
            continue;
        }
        for &(l, t) in sub.successors(s) {
            let key = (t, remaining - 1);
            let id = *ids.entry(key).or_insert_with(|| {
                nodes.push(key);
                adjacency.push(Vec::new());
                work.push(nodes.len() as StateId - 1);
                nodes.len() as StateId - 1
            });
            adjacency[n as usize].push((l, id));
        }
    }
    Lts::from_parts(0, sub.labels().to_vec(), adjacency).expect("unrolling preserves determinism")
}

fn find_cycle(lts: &Lts) -> Option<Vec<StateId>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        OnStack,
        Done,
    }
    let mut mark = vec![Mark::New; lts.num_states() as usize];
    let mut stack: Vec<(StateId, usize)> = vec![(lts.initial(), 0)];
    mark[lts.initial() as usize] = Mark::OnStack;
    while let Some(&mut (s, ref mut next)) = stack.last_mut() {
        let succ = lts.successors(s);
        if *next == succ.len() {
            mark[s as usize] = Mark::Done;
            stack.pop();
            continue;
        }
        let t = succ[*next].1;
        *next += 1;
        match mark[t as usize] {
            Mark::New => {
                mark[t as usize] = Mark::OnStack;
                stack.push((t, 0));
            }
            Mark::OnStack => {
                let from = stack.iter().position(|&(x, _)| x == t).expect("on stack");
                let mut cycle: Vec<StateId> = stack[from..].iter().map(|&(x, _)| x).collect();
                cycle.push(t);
                return Some(cycle);
            }
            Mark::Done => {}
        }
    }
    None
}

fn renumber(lts: &Lts) -> Lts {
    let n = lts.num_states() as usize;
    let mut number: Vec<Option<StateId>> = vec![None; n];
    let mut order = Vec::new();
    number[lts.initial() as usize] = Some(0);
    order.push(lts.initial());
    let mut stack = vec![lts.initial()];
    while let Some(s) = stack.pop() {
        for &(_, t) in lts.successors(s) {
            if number[t as usize].is_none() {
                number[t as usize] = Some(order.len() as StateId);
                order.push(t);
                stack.push(t);
            }
        }
    }
    let adjacency = order
        .iter()
        .map(|&old| {
            let mut edges: Vec<(LabelIdx, StateId)> = lts
                .successors(old)
                .iter()
                .map(|&(l, t)| (l, number[t as usize].expect("reachable")))
                .collect();
            edges.sort_by_key(|&(l, t)| (t, l));
            edges
        })
        .collect();
    Lts::from_parts(0, lts.labels().to_vec(), adjacency).expect("renumbering preserves determinism")
}

/// Trace counts of an acyclic LTS, or `None` if it has a reachable cycle.
/// Unreachable states get weights too.
fn weights(lts: &Lts) -> Option<Vec<BigUint>> {
    let n = lts.num_states() as usize;
    let mut tc: Vec<Option<BigUint>> = vec![None; n];
    let mut on_stack = vec![false; n];
    for root in 0..n as StateId {
        if tc[root as usize].is_some() {
            continue;
        }
        let mut stack: Vec<(StateId, usize)> = vec![(root, 0)];
        on_stack[root as usize] = true;
        while let Some(&mut (s, ref mut next)) = stack.last_mut() {
            let succ = lts.successors(s);
            if *next == succ.len() {
                let w = if succ.is_empty() {
                    BigUint::one()
                } else {
                    succ.iter()
                        .map(|&(_, t)| tc[t as usize].as_ref().expect("child finished"))
                        .sum()
                };
                tc[s as usize] = Some(w);
                on_stack[s as usize] = false;
                stack.pop();
                continue;
            }
            let t = succ[*next].1;
            *next += 1;
            if on_stack[t as usize] {
                return None;
            }
            if tc[t as usize].is_none() {
                on_stack[t as usize] = true;
                stack.push((t, 0));
            }
        }
    }
    tc.into_iter().collect()
}

fn with_ext(base: &Path, ext: &str) -> PathBuf {
    let mut s: OsString = base.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn alphabet_path(base: impl AsRef<Path>) -> PathBuf {
    with_ext(base.as_ref(), "swh")
}

fn write_file(path: &Path, contents: &str) -> Result<(), WeightedIoError> {
    fs::write(path, contents).map_err(|source| WeightedIoError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_file(path: &Path) -> Result<String, WeightedIoError> {
    fs::read_to_string(path).map_err(|source| WeightedIoError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes `<base>.swh`, `<base>.swc` and `<base>.sww`.
pub fn save_weighted(w: &WeightedLts, base: impl AsRef<Path>) -> Result<(), WeightedIoError> {
    let base = base.as_ref();
    let mut swh = String::new();
    for l in w.alphabet() {
        writeln!(swh, "{l}").unwrap();
    }
    let mut swc = String::new();
    for (s, l, t) in w.lts.transitions() {
        writeln!(swc, "{s} {l} {t}").unwrap();
    }
    let mut sww = String::new();
    for tc in &w.tc {
        writeln!(sww, "{tc}").unwrap();
    }
    write_file(&with_ext(base, "swh"), &swh)?;
    write_file(&with_ext(base, "swc"), &swc)?;
    write_file(&with_ext(base, "sww"), &sww)
}

/// Reads the subsystem alphabet from `<base>.swh`.
pub fn load_alphabet(base: impl AsRef<Path>) -> Result<Vec<Label>, WeightedIoError> {
    let path = with_ext(base.as_ref(), "swh");
    let text = read_file(&path)?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            Label::new(line).map_err(|e| WeightedIoError::Format {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Reads a weighted LTS and checks the stored weights against a recount.
/// The depth bound is not stored; the result has `depth_bound() == None`.
pub fn load_weighted(base: impl AsRef<Path>) -> Result<WeightedLts, WeightedIoError> {
    let base = base.as_ref();
    let labels = load_alphabet(base)?;

    let sww_path = with_ext(base, "sww");
    let sww = read_file(&sww_path)?;
    let stored: Vec<BigUint> = sww
        .lines()
        .enumerate()
        .map(|(i, line)| {
            line.trim().parse::<BigUint>().map_err(|e| WeightedIoError::Format {
                path: sww_path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect::<Result<_, _>>()?;
    if stored.is_empty() {
        return Err(WeightedIoError::Format {
            path: sww_path.display().to_string(),
            line: 1,
            message: "no states".into(),
        });
    }

    let swc_path = with_ext(base, "swc");
    let swc = read_file(&swc_path)?;
    let mut adjacency: Vec<Vec<(LabelIdx, StateId)>> = vec![Vec::new(); stored.len()];
    for (i, line) in swc.lines().enumerate() {
        let fmt_err = |message: String| WeightedIoError::Format {
            path: swc_path.display().to_string(),
            line: i + 1,
            message,
        };
        let nums: Vec<u32> = line
            .split_whitespace()
            .map(|w| w.parse::<u32>())
            .collect::<Result<_, _>>()
            .map_err(|e| fmt_err(e.to_string()))?;
        let [s, l, t] = nums[..] else {
            return Err(fmt_err("expected `src label dst`".into()));
        };
        if s as usize >= stored.len() || t as usize >= stored.len() || l as usize >= labels.len() {
            return Err(fmt_err(format!("triple {s} {l} {t} out of range")));
        }
        adjacency[s as usize].push((l, t));
    }
    for edges in &mut adjacency {
        edges.sort_by_key(|&(l, t)| (t, l));
    }
    let lts = Lts::from_parts(0, labels, adjacency).map_err(|e: LtsError| WeightedIoError::Structure(e.to_string()))?;
    let computed = weights(&lts).ok_or_else(|| WeightedIoError::Structure("cycle in stored transitions".into()))?;
    for (state, (stored, computed)) in stored.iter().zip(&computed).enumerate() {
        if stored != computed {
            return Err(WeightedIoError::WeightMismatch {
                state: state as StateId,
                stored: stored.clone(),
                computed: computed.clone(),
            });
        }
    }
    Ok(WeightedLts {
        lts,
        tc: computed,
        depth_bound: None,
    })
}
