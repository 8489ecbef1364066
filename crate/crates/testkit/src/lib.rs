//! Shared test support: brute-force oracles and fixture networks.
//!
//! The oracles here deliberately avoid the library's own algorithms. Paths
//! are enumerated by plain recursion and the product is explored from the
//! raw network description, so they can be used to check the library.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};

use isv_core::lts::{Label, Lts, StateId};
use isv_core::network::{Network, SyncRule};
use num_bigint::BigUint;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn l(s: &str) -> Label {
    Label::new(s).unwrap()
}

pub fn labels(names: &[&str]) -> Vec<Label> {
    names.iter().map(|s| l(s)).collect()
}

pub mod oracle {
    use super::*;

    /// Every maximal label sequence from `s`, cut after `bound` steps.
    pub fn maximal_paths(lts: &Lts, s: StateId, bound: Option<u32>) -> Vec<Vec<Label>> {
        let succ = lts.successors(s);
        if succ.is_empty() || bound == Some(0) {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for &(lab, t) in succ {
            for mut rest in maximal_paths(lts, t, bound.map(|b| b - 1)) {
                rest.insert(0, lts.label(lab).clone());
                out.push(rest);
            }
        }
        out
    }

    pub fn path_count(lts: &Lts, s: StateId, bound: Option<u32>) -> BigUint {
        BigUint::from(maximal_paths(lts, s, bound).len())
    }

    /// States reachable in `lts`, each with one label path leading to it.
    pub fn access_paths(lts: &Lts) -> Vec<(StateId, Vec<Label>)> {
        let mut seen = HashSet::from([lts.initial()]);
        let mut queue = VecDeque::from([(lts.initial(), Vec::new())]);
        let mut out = Vec::new();
        while let Some((s, path)) = queue.pop_front() {
            for &(lab, t) in lts.successors(s) {
                if seen.insert(t) {
                    let mut p: Vec<Label> = path.clone();
                    p.push(lts.label(lab).clone());
                    queue.push_back((t, p));
                }
            }
            out.push((s, path));
        }
        out
    }

    /// Follows `path` from the initial state of a label-deterministic LTS.
    pub fn follow(lts: &Lts, path: &[Label]) -> Option<StateId> {
        let mut s = lts.initial();
        for lab in path {
            s = lts
                .successors(s)
                .iter()
                .find(|&&(x, _)| lts.label(x) == lab)
                .map(|&(_, t)| t)?;
        }
        Some(s)
    }

    fn rule_of<'a>(net: &'a Network, lab: &Label) -> Option<&'a SyncRule> {
        net.rules.iter().find(|r| {
            let (a, b) = r.inputs();
            a == lab || b == lab
        })
    }

    /// Product successors computed straight from the component LTSs and the
    /// rules.
    pub fn successors(net: &Network, s: &[StateId]) -> Vec<(Label, Vec<StateId>)> {
        let mut out = Vec::new();
        for (i, c) in net.components.iter().enumerate() {
            for &(li, t) in c.successors(s[i]) {
                let lab = c.label(li);
                match rule_of(net, lab) {
                    None => {
                        let mut next = s.to_vec();
                        next[i] = t;
                        out.push((lab.clone(), next));
                    }
                    Some(rule) => {
                        if rule.inputs().0 != lab {
                            continue;
                        }
                        let other = rule.inputs().1;
                        for (j, d) in net.components.iter().enumerate() {
                            if j == i {
                                continue;
                            }
                            for &(lj, u) in d.successors(s[j]) {
                                if d.label(lj) == other {
                                    let mut next = s.to_vec();
                                    next[i] = t;
                                    next[j] = u;
                                    out.push((rule.result().clone(), next));
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn initial(net: &Network) -> Vec<StateId> {
        net.components.iter().map(|c| c.initial()).collect()
    }

    /// Reachable product states, or `None` once more than `cap` are found.
    pub fn reachable(net: &Network, cap: usize) -> Option<HashSet<Vec<StateId>>> {
        let init = initial(net);
        let mut seen = HashSet::from([init.clone()]);
        let mut queue = VecDeque::from([init]);
        while let Some(s) = queue.pop_front() {
            for (_, t) in successors(net, &s) {
                if seen.insert(t.clone()) {
                    if seen.len() > cap {
                        return None;
                    }
                    queue.push_back(t);
                }
            }
        }
        Some(seen)
    }

    /// BFS depth at which each label first fires.
    pub fn first_fired(net: &Network) -> HashMap<Label, usize> {
        let init = initial(net);
        let mut depth = HashMap::from([(init.clone(), 0usize)]);
        let mut queue = VecDeque::from([init]);
        let mut first = HashMap::new();
        while let Some(s) = queue.pop_front() {
            let d = depth[&s];
            for (lab, t) in successors(net, &s) {
                first.entry(lab).or_insert(d + 1);
                if !depth.contains_key(&t) {
                    depth.insert(t.clone(), d + 1);
                    queue.push_back(t);
                }
            }
        }
        first
    }

    /// Whether `actions` can be executed from the initial product state.
    pub fn executable(net: &Network, actions: &[Label]) -> bool {
        let mut current: HashSet<Vec<StateId>> = HashSet::from([initial(net)]);
        for a in actions {
            current = current
                .iter()
                .flat_map(|s| successors(net, s))
                .filter(|(lab, _)| lab == a)
                .map(|(_, t)| t)
                .collect();
            if current.is_empty() {
                return false;
            }
        }
        true
    }
}

/// Parses the state lines of a dump file, skipping `#` headers.
pub fn read_state_dump(text: &str) -> HashSet<Vec<StateId>> {
    text.lines()
        .filter(|line| !line.starts_with('#') && !line.trim().is_empty())
        .map(|line| {
            line.split_whitespace()
                .map(|x| x.parse().expect("state number"))
                .collect()
        })
        .collect()
}

/// States of a dump file grouped under their `# trace <id>` headers.
pub fn read_state_dump_by_trace(text: &str) -> Vec<(String, HashSet<Vec<StateId>>)> {
    let mut out: Vec<(String, HashSet<Vec<StateId>>)> = Vec::new();
    for line in text.lines() {
        if let Some(id) = line.strip_prefix("# trace ") {
            out.push((id.to_string(), HashSet::new()));
        } else if !line.starts_with('#') && !line.trim().is_empty() {
            let s = line
                .split_whitespace()
                .map(|x| x.parse().expect("state number"))
                .collect();
            out.last_mut().expect("states follow a header").1.insert(s);
        }
    }
    out
}

/// Random acyclic, label-deterministic LTS with at most `max_states` states
/// and at most `max_out` transitions per state.
pub fn random_acyclic_lts<R: Rng>(rng: &mut R, max_states: u32, max_out: usize) -> Lts {
    let n = rng.gen_range(1..=max_states);
    let pool = ["a", "b", "c", "d", "e"];
    let mut edges = Vec::new();
    for s in 0..n {
        if s + 1 == n || rng.gen_bool(0.15) {
            continue;
        }
        let k = rng.gen_range(1..=max_out);
        let mut names = pool.to_vec();
        names.shuffle(rng);
        for name in names.into_iter().take(k) {
            let t = rng.gen_range(s + 1..n);
            edges.push((s, name, t));
        }
    }
    let mut perm: Vec<StateId> = (0..n).collect();
    perm.shuffle(rng);
    let edges: Vec<(StateId, &str, StateId)> = edges
        .into_iter()
        .map(|(s, name, t)| (perm[s as usize], name, perm[t as usize]))
        .collect();
    Lts::from_transitions(perm[0], n, edges).unwrap()
}

/// Subsystem LTS whose root has children of weights 3, 3, 7 and 1; its
/// depth-first numbering is the identity and its trace count is 14.
pub fn player_lts() -> Lts {
    let edges: &[(StateId, &str, StateId)] = &[
        (0, "recv_C1_3", 1),
        (0, "recv_C1_1", 2),
        (0, "recv_C1_2", 3),
        (0, "off", 4),
        (3, "send_C1", 5),
        (5, "off", 4),
        (5, "play", 6),
        (6, "seek", 7),
        (7, "next", 8),
        (7, "stop", 9),
        (8, "stop", 9),
        (8, "halt", 10),
        (8, "next", 11),
        (11, "play", 12),
        (12, "off", 4),
        (12, "next", 13),
        (13, "seek", 14),
        (14, "play", 15),
        (15, "off", 4),
        (15, "halt", 10),
        (2, "send_C1", 16),
        (16, "play", 17),
        (17, "stop", 18),
        (17, "next", 19),
        (19, "off", 4),
        (19, "halt", 10),
        (18, "stop", 9),
        (1, "send_C1", 20),
        (20, "play", 21),
        (21, "halt", 22),
        (21, "next", 23),
        (23, "seek", 24),
        (24, "off", 4),
        (24, "stop", 9),
        (22, "halt", 10),
    ];
    Lts::from_transitions(0, 25, edges.iter().copied()).unwrap()
}

struct Builder {
    states: u32,
    edges: Vec<(StateId, String, StateId)>,
}

impl Builder {
    fn new(states: u32) -> Self {
        Builder {
            states,
            edges: Vec::new(),
        }
    }

    fn has(&self, s: StateId, name: &str) -> bool {
        self.edges.iter().any(|(x, n, _)| *x == s && n == name)
    }

    fn add(&mut self, s: StateId, name: impl Into<String>, t: StateId) -> bool {
        let name = name.into();
        if self.has(s, &name) {
            return false;
        }
        self.edges.push((s, name, t));
        true
    }

    fn build(&self) -> Lts {
        Lts::from_transitions(0, self.states, self.edges.iter().map(|(s, n, t)| (*s, n.as_str(), *t))).unwrap()
    }
}

/// Random network of 3 or 4 components. Component 0 is acyclic and is the
/// intended subsystem; it synchronises with the environment components,
/// which may also synchronise among themselves. The environment components
/// are cycles, except possibly the last, which can be a chain whose
/// handshakes each fire at most once.
pub fn random_network<R: Rng>(rng: &mut R) -> Network {
    let token = rng.gen_bool(0.5);
    let rings = if token { 2 } else { rng.gen_range(2..=3) };
    let env = rings + usize::from(token);
    let n0 = rng.gen_range(8..=14);
    let mut sub = Builder::new(n0);
    let local: Vec<String> = (0..4).map(|i| format!("c0_p{i}")).collect();
    let sync: Vec<String> = (0..4).map(|i| format!("c0_q{i}")).collect();
    for s in 0..n0 - 1 {
        if s > 0 && rng.gen_bool(0.1) {
            continue;
        }
        let k = rng.gen_range(2..=3);
        let mut names: Vec<&String> = local.iter().chain(sync.iter()).collect();
        names.shuffle(rng);
        for name in names.into_iter().take(k) {
            let t = rng.gen_range(s + 1..n0.min(s + 4));
            sub.add(s, name.clone(), t);
        }
    }
    let mut envs: Vec<Builder> = Vec::new();
    for j in 1..=env {
        if token && j == env {
            envs.push(Builder::new(rng.gen_range(3..=6)));
            continue;
        }
        let n = if rings == 2 {
            rng.gen_range(6..=14)
        } else {
            rng.gen_range(4..=9)
        };
        let mut b = Builder::new(n);
        for s in 0..n {
            b.add(s, format!("c{j}_t{}", rng.gen_range(0..3)), (s + 1) % n);
        }
        for _ in 0..rng.gen_range(0..=2) {
            let s = rng.gen_range(0..n);
            let t = rng.gen_range(0..n);
            b.add(s, format!("c{j}_u{}", rng.gen_range(0..2)), t);
        }
        envs.push(b);
    }
    let mut rules = BTreeSet::new();
    for (m, q) in sync.iter().enumerate() {
        if !sub.edges.iter().any(|(_, n, _)| n == q) {
            continue;
        }
        let j = rng.gen_range(0..env);
        let partner = format!("c{}_r{m}", j + 1);
        let b = &mut envs[j];
        for _ in 0..rng.gen_range(1..=2) {
            let s = rng.gen_range(0..b.states);
            let t = if token && j + 1 == env {
                (s + 1).min(b.states - 1)
            } else if rng.gen_bool(0.5) {
                s
            } else {
                rng.gen_range(0..b.states)
            };
            b.add(s, partner.clone(), t);
        }
        rules.insert(SyncRule::new(l(q), l(&partner), l(&format!("sync_q{m}"))));
    }
    if rng.gen_bool(0.5) {
        let (x, y) = ("c1_x".to_string(), "c2_y".to_string());
        for (b, name) in [(0usize, &x), (1usize, &y)] {
            let s = rng.gen_range(0..envs[b].states);
            let t = rng.gen_range(0..envs[b].states);
            envs[b].add(s, name.clone(), t);
        }
        rules.insert(SyncRule::new(l(&x), l(&y), l("sync_xy")));
    }
    let mut components = vec![sub.build()];
    components.extend(envs.iter().map(|b| b.build()));
    Network {
        components,
        rules,
        error_labels: BTreeSet::new(),
    }
}

/// Bounds for rejection-sampled fixtures.
#[derive(Clone, Copy, Debug)]
pub struct FixtureBounds {
    pub min_states: usize,
    pub max_states: usize,
    pub min_traces: u64,
    pub max_traces: u64,
}

/// Deterministic corpus of random networks within `bounds`, measured with
/// the brute-force oracles.
pub fn network_corpus<R: Rng>(rng: &mut R, count: usize, bounds: FixtureBounds) -> Vec<Network> {
    let mut out = Vec::new();
    while out.len() < count {
        let net = random_network(rng);
        let tc = oracle::maximal_paths(&net.components[0], net.components[0].initial(), None).len() as u64;
        if tc < bounds.min_traces || tc > bounds.max_traces {
            continue;
        }
        let Some(reach) = oracle::reachable(&net, bounds.max_states) else {
            continue;
        };
        if reach.len() < bounds.min_states {
            continue;
        }
        out.push(net);
    }
    out
}

/// Marks as an error the eligible label that fires deepest in breadth-first
/// order. Returns the label and its depth.
pub fn plant_bug(net: &mut Network) -> Option<(Label, usize)> {
    let inputs: HashSet<Label> = net
        .rules
        .iter()
        .flat_map(|r| [r.inputs().0.clone(), r.inputs().1.clone()])
        .collect();
    let (lab, depth) = oracle::first_fired(net)
        .into_iter()
        .filter(|(lab, _)| !inputs.contains(lab))
        .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))?;
    net.error_labels.insert(lab.clone());
    Some((lab, depth))
}

/// A subsystem tree with `branches` branches of `depth` steps, each branch
/// starting with a handshake with a two-state server, next to an
/// independent cycle of `ring` states.
pub fn branching_network(branches: u32, depth: u32, ring: u32) -> Network {
    let mut sub = Builder::new(1 + branches * depth);
    let mut server = Builder::new(2);
    let mut rules = BTreeSet::new();
    for b in 0..branches {
        let mut at = 0;
        for k in 0..depth {
            let next = 1 + b * depth + k;
            sub.add(at, format!("c0_b{b}_{k}"), next);
            at = next;
        }
        server.add(0, format!("c2_acc{b}"), 1);
        rules.insert(SyncRule::new(
            l(&format!("c0_b{b}_0")),
            l(&format!("c2_acc{b}")),
            l(&format!("go{b}")),
        ));
    }
    server.add(1, "c2_reset", 0);
    let mut cycle = Builder::new(ring);
    for s in 0..ring {
        cycle.add(s, format!("c1_t{}", s % 2), (s + 1) % ring);
    }
    Network {
        components: vec![sub.build(), cycle.build(), server.build()],
        rules,
        error_labels: BTreeSet::new(),
    }
}

/// Files making up a fixture on disk.
#[derive(Clone, Debug)]
pub struct FixtureFiles {
    pub dir: PathBuf,
    pub manifest: PathBuf,
    /// Component 0 in AUT format.
    pub sub: PathBuf,
}

/// Writes every component as `comp<i>.aut` plus a `net.isn` manifest.
pub fn write_network(net: &Network, dir: &Path) -> FixtureFiles {
    fs::create_dir_all(dir).unwrap();
    let mut manifest = String::new();
    for (i, c) in net.components.iter().enumerate() {
        let name = format!("comp{i}.aut");
        fs::write(dir.join(&name), c.to_aut()).unwrap();
        manifest.push_str(&format!("component {name}\n"));
    }
    for r in &net.rules {
        let (a, b) = r.inputs();
        manifest.push_str(&format!("sync {a} {b} -> {}\n", r.result()));
    }
    for e in &net.error_labels {
        manifest.push_str(&format!("error {e}\n"));
    }
    let path = dir.join("net.isn");
    fs::write(&path, manifest).unwrap();
    FixtureFiles {
        dir: dir.to_path_buf(),
        manifest: path,
        sub: dir.join("comp0.aut"),
    }
}
