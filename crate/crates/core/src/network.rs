//! Networks of LTSs composed by synchronisation rules.
//!
//! A [`Network`] is the raw description (components, rules, error labels) and
//! may be inconsistent; [`check_network`] lists what is wrong with it. A
//! [`Product`] is a validated network with the indices needed to enumerate
//! product moves on the fly.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::lts::{load_lts, Label, Lts, LtsError, StateId};

/// A synchronisation rule `a | b -> result`. Stored with the
/// lexicographically smaller input first, so `(a,b)` and `(b,a)` coincide.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SyncRule {
    a: Label,
    b: Label,
    result: Label,
}

impl SyncRule {
    pub fn new(a: Label, b: Label, result: Label) -> Self {
        if b < a {
            SyncRule { a: b, b: a, result }
        } else {
            SyncRule { a, b, result }
        }
    }

    pub fn inputs(&self) -> (&Label, &Label) {
        (&self.a, &self.b)
    }

    pub fn result(&self) -> &Label {
        &self.result
    }

    /// The other input when `l` is one of this rule's inputs.
    pub fn partner(&self, l: &Label) -> Option<&Label> {
        if *l == self.a {
            Some(&self.b)
        } else if *l == self.b {
            Some(&self.a)
        } else {
            None
        }
    }
}

impl fmt::Display for SyncRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} -> {}", self.a, self.b, self.result)
    }
}

/// Components `P_0..P_n`, synchronisation rules and the product labels that
/// count as bugs.
#[derive(Clone, Debug, Default)]
pub struct Network {
    pub components: Vec<Lts>,
    pub rules: BTreeSet<SyncRule>,
    pub error_labels: BTreeSet<Label>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    NoComponents,
    SharedLabel { label: Label, components: Vec<usize> },
    RuleMultiplicity { label: Label, rules: usize },
    ResultInAlphabet { label: Label, component: usize },
    SelfSync { label: Label },
    UnknownRuleInput { label: Label },
    SameComponentSync { a: Label, b: Label, component: usize },
    UnknownErrorLabel { label: Label },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoComponents => write!(f, "network has no components"),
            Violation::SharedLabel { label, components } => {
                write!(
                    f,
                    "label {label} occurs in components {components:?}; alphabets must be disjoint"
                )
            }
            Violation::RuleMultiplicity { label, rules } => {
                write!(f, "label {label} is involved in {rules} synchronisation rules")
            }
            Violation::ResultInAlphabet { label, component } => {
                write!(f, "rule result {label} is also a label of component {component}")
            }
            Violation::SelfSync { label } => write!(f, "rule synchronises {label} with itself"),
            Violation::UnknownRuleInput { label } => {
                write!(f, "rule input {label} belongs to no component")
            }
            Violation::SameComponentSync { a, b, component } => {
                write!(f, "rule inputs {a} and {b} both belong to component {component}")
            }
            Violation::UnknownErrorLabel { label } => {
                write!(f, "error label {label} is not a product label")
            }
        }
    }
}

/// Lists every violated network invariant. Empty means valid.
pub fn check_network(net: &Network) -> Vec<Violation> {
    let mut out = Vec::new();
    if net.components.is_empty() {
        out.push(Violation::NoComponents);
    }
    let mut owners: BTreeMap<&Label, Vec<usize>> = BTreeMap::new();
    for (i, c) in net.components.iter().enumerate() {
        for l in c.labels() {
            owners.entry(l).or_default().push(i);
        }
    }
    for (label, comps) in &owners {
        if comps.len() > 1 {
            out.push(Violation::SharedLabel {
                label: (*label).clone(),
                components: comps.clone(),
            });
        }
    }
    let mut uses: BTreeMap<&Label, usize> = BTreeMap::new();
    for r in &net.rules {
        for l in [&r.a, &r.b, &r.result] {
            *uses.entry(l).or_default() += 1;
        }
    }
    for (label, n) in uses {
        if n > 1 {
            out.push(Violation::RuleMultiplicity {
                label: label.clone(),
                rules: n,
            });
        }
    }
    for r in &net.rules {
        if r.a == r.b {
            out.push(Violation::SelfSync { label: r.a.clone() });
            continue;
        }
        if let Some(comps) = owners.get(&r.result) {
            for &component in comps {
                out.push(Violation::ResultInAlphabet {
                    label: r.result.clone(),
                    component,
                });
            }
        }
        let ca = owners.get(&r.a).map(|v| v[0]);
        let cb = owners.get(&r.b).map(|v| v[0]);
        for (l, c) in [(&r.a, ca), (&r.b, cb)] {
            if c.is_none() {
                out.push(Violation::UnknownRuleInput { label: l.clone() });
            }
        }
        if let (Some(x), Some(y)) = (ca, cb) {
            if x == y {
                out.push(Violation::SameComponentSync {
                    a: r.a.clone(),
                    b: r.b.clone(),
                    component: x,
                });
            }
        }
    }
    for l in &net.error_labels {
        let is_result = net.rules.iter().any(|r| r.result == *l);
        let is_free = owners.contains_key(l) && net.rule_for(l).is_none();
        if !is_result && !is_free {
            out.push(Violation::UnknownErrorLabel { label: l.clone() });
        }
    }
    out
}

impl Network {
    /// The rule in which `l` is an input, if any.
    pub fn rule_for(&self, l: &Label) -> Option<&SyncRule> {
        self.rules.iter().find(|r| r.a == *l || r.b == *l)
    }

    /// Maps a component label to its product-level name: the rule result if
    /// the label must synchronise, the label itself otherwise.
    pub fn relabel(&self, l: &Label) -> Label {
        match self.rule_for(l) {
            Some(r) => r.result.clone(),
            None => l.clone(),
        }
    }

    /// Results of the rules that have exactly one input in `set`.
    pub fn sync_result_set(&self, set: &BTreeSet<Label>) -> BTreeSet<Label> {
        self.rules
            .iter()
            .filter(|r| set.contains(&r.a) != set.contains(&r.b))
            .map(|r| r.result.clone())
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("component {path}: {source}")]
    Component {
        path: String,
        #[source]
        source: LtsError,
    },
    #[error("invalid network: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

/// Parses a network manifest. Component paths are resolved relative to
/// `base_dir`.
pub fn parse_manifest(text: &str, base_dir: &Path, path_for_errors: &str) -> Result<Network, NetworkError> {
    let mut net = Network::default();
    let err = |line: usize, message: String| NetworkError::Parse {
        path: path_for_errors.to_string(),
        line,
        message,
    };
    let label = |line: usize, s: &str| Label::new(s).map_err(|e| err(line, e.to_string()));
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let words: Vec<&str> = content.split_whitespace().collect();
        match words.as_slice() {
            ["component", rel] => {
                let p: PathBuf = base_dir.join(rel);
                let lts = load_lts(&p).map_err(|source| NetworkError::Component {
                    path: p.display().to_string(),
                    source,
                })?;
                net.components.push(lts);
            }
            ["sync", a, b, "->", c] => {
                net.rules
                    .insert(SyncRule::new(label(line, a)?, label(line, b)?, label(line, c)?));
            }
            ["error", l] => {
                net.error_labels.insert(label(line, l)?);
            }
            _ => {
                return Err(err(
                    line,
                    format!("expected `component <path>`, `sync <a> <b> -> <c>` or `error <label>`, found {content:?}"),
                ))
            }
        }
    }
    Ok(net)
}

/// Reads a manifest from disk. The result is not validated.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Network, NetworkError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| NetworkError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let dir = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, dir, &path.display().to_string())
}

/// Index of a label in a [`Product`]'s label table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelId(pub u32);

/// A set of product label ids, as a dense bit vector over the label table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSet {
    bits: Vec<bool>,
}

impl LabelSet {
    pub fn empty(product: &Product) -> Self {
        LabelSet {
            bits: vec![false; product.labels.len()],
        }
    }

    pub fn all(product: &Product) -> Self {
        let mut set = LabelSet::empty(product);
        for &l in &product.product_labels {
            set.insert(l);
        }
        set
    }

    pub fn insert(&mut self, l: LabelId) {
        self.bits[l.0 as usize] = true;
    }

    pub fn contains(&self, l: LabelId) -> bool {
        self.bits.get(l.0 as usize).copied().unwrap_or(false)
    }

    pub fn complement_in(&self, product: &Product) -> Self {
        let mut set = LabelSet::empty(product);
        for &l in &product.product_labels {
            if !self.contains(l) {
                set.insert(l);
            }
        }
        set
    }

    pub fn iter(&self) -> impl Iterator<Item = LabelId> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| LabelId(i as u32))
    }
}

/// A product state: one local state per component.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProductState(Box<[StateId]>);

impl ProductState {
    pub fn new(locals: Vec<StateId>) -> Self {
        ProductState(locals.into_boxed_slice())
    }

    pub fn locals(&self) -> &[StateId] {
        &self.0
    }
}

impl fmt::Debug for ProductState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// Space-separated local state ids, the canonical dump form.
impl fmt::Display for ProductState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

impl std::borrow::Borrow<[StateId]> for ProductState {
    fn borrow(&self) -> &[StateId] {
        &self.0
    }
}

impl std::str::FromStr for ProductState {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split_whitespace()
            .map(str::parse)
            .collect::<Result<Vec<_>, _>>()
            .map(ProductState::new)
    }
}

#[derive(Clone, Copy, Debug)]
struct SyncInfo {
    partner: LabelId,
    partner_component: usize,
    result: LabelId,
    leader: bool,
}

/// A validated network with the lookups needed for on-the-fly exploration.
/// Immutable once built.
#[derive(Debug)]
pub struct Product {
    net: Network,
    labels: Vec<Label>,
    ids: HashMap<Label, LabelId>,
    edges: Vec<Vec<Vec<(LabelId, StateId)>>>,
    sync: Vec<Option<SyncInfo>>,
    owner: Vec<Option<usize>>,
    error: Vec<bool>,
    product_labels: Vec<LabelId>,
}

impl Product {
    pub fn new(net: Network) -> Result<Self, NetworkError> {
        let violations = check_network(&net);
        if !violations.is_empty() {
            return Err(NetworkError::Invalid(violations));
        }
        let mut labels = Vec::new();
        let mut ids = HashMap::new();
        let mut owner = Vec::new();
        let mut intern = |l: &Label, comp: Option<usize>, labels: &mut Vec<Label>, owner: &mut Vec<Option<usize>>| {
            *ids.entry(l.clone()).or_insert_with(|| {
                labels.push(l.clone());
                owner.push(comp);
                LabelId(labels.len() as u32 - 1)
            })
        };
        let mut edges = Vec::with_capacity(net.components.len());
        for (ci, c) in net.components.iter().enumerate() {
            let local: Vec<LabelId> = c
                .labels()
                .iter()
                .map(|l| intern(l, Some(ci), &mut labels, &mut owner))
                .collect();
            edges.push(
                (0..c.num_states())
                    .map(|s| c.successors(s).iter().map(|&(l, t)| (local[l as usize], t)).collect())
                    .collect(),
            );
        }
        for r in &net.rules {
            intern(&r.result, None, &mut labels, &mut owner);
        }
        let ids_snapshot = ids;
        let id = |l: &Label| ids_snapshot[l];
        let mut sync = vec![None; labels.len()];
        for r in &net.rules {
            let (a, b, c) = (id(&r.a), id(&r.b), id(&r.result));
            sync[a.0 as usize] = Some(SyncInfo {
                partner: b,
                partner_component: owner[b.0 as usize].expect("validated"),
                result: c,
                leader: true,
            });
            sync[b.0 as usize] = Some(SyncInfo {
                partner: a,
                partner_component: owner[a.0 as usize].expect("validated"),
                result: c,
                leader: false,
            });
        }
        let product_labels = (0..labels.len() as u32)
            .map(LabelId)
            .filter(|l| sync[l.0 as usize].is_none())
            .collect();
        let error = labels.iter().map(|l| net.error_labels.contains(l)).collect();
        Ok(Product {
            net,
            labels,
            ids: ids_snapshot,
            edges,
            sync,
            owner,
            error,
            product_labels,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn num_components(&self) -> usize {
        self.edges.len()
    }

    pub fn initial(&self) -> ProductState {
        ProductState::new(self.net.components.iter().map(Lts::initial).collect())
    }

    pub fn label(&self, id: LabelId) -> &Label {
        &self.labels[id.0 as usize]
    }

    pub fn label_id(&self, name: &str) -> Option<LabelId> {
        Label::new(name).ok().and_then(|l| self.ids.get(&l).copied())
    }

    /// Labels that can appear on product transitions: non-synchronising
    /// component labels and rule results.
    pub fn product_labels(&self) -> &[LabelId] {
        &self.product_labels
    }

    /// The component owning `l`, or `None` for rule results.
    pub fn owner(&self, l: LabelId) -> Option<usize> {
        self.owner[l.0 as usize]
    }

    pub fn is_error(&self, l: LabelId) -> bool {
        self.error[l.0 as usize]
    }

    /// Product-level id of a component label (see [`Network::relabel`]).
    pub fn relabel_id(&self, l: LabelId) -> LabelId {
        match self.sync[l.0 as usize] {
            Some(info) => info.result,
            None => l,
        }
    }

    /// Calls `f(label, successor)` for every product move from `state`.
    /// The successor slice is only valid during the call.
    pub fn for_each_move(&self, state: &[StateId], mut f: impl FnMut(LabelId, &[StateId])) {
        let mut scratch: Vec<StateId> = state.to_vec();
        for (ci, comp) in self.edges.iter().enumerate() {
            let here = state[ci] as usize;
            for &(l, t) in &comp[here] {
                match self.sync[l.0 as usize] {
                    None => {
                        scratch[ci] = t;
                        f(l, &scratch);
                        scratch[ci] = state[ci];
                    }
                    Some(info) if info.leader => {
                        let pc = info.partner_component;
                        let partner_here = state[pc] as usize;
                        if let Some(&(_, pt)) = self.edges[pc][partner_here].iter().find(|&&(pl, _)| pl == info.partner)
                        {
                            scratch[ci] = t;
                            scratch[pc] = pt;
                            f(info.result, &scratch);
                            scratch[ci] = state[ci];
                            scratch[pc] = state[pc];
                        }
                    }
                    Some(_) => {}
                }
            }
        }
    }

    /// All moves from `state` whose label is in `allowed`.
    pub fn next(&self, state: &ProductState, allowed: &LabelSet) -> Vec<(Label, ProductState)> {
        let mut out = Vec::new();
        self.for_each_move(state.locals(), |l, succ| {
            if allowed.contains(l) {
                out.push((self.label(l).clone(), ProductState::new(succ.to_vec())));
            }
        });
        out
    }

    /// Follows `actions` from the initial state. Returns the reached state,
    /// or `None` if some action is not enabled along the way.
    pub fn replay(&self, actions: &[Label]) -> Option<ProductState> {
        let mut state = self.initial();
        for a in actions {
            let id = self.ids.get(a).copied()?;
            let mut found = None;
            self.for_each_move(state.locals(), |l, succ| {
                if l == id && found.is_none() {
                    found = Some(ProductState::new(succ.to_vec()));
                }
            });
            state = found?;
        }
        Some(state)
    }

    /// Composes the chosen components into one LTS (for use as a subsystem).
    /// Rules between chosen components become their result label; inputs of
    /// rules with a partner outside the selection fire freely under their
    /// own name. States are numbered in breadth-first discovery order.
    pub fn subsystem_lts(&self, components: &[usize]) -> Lts {
        let chosen: BTreeSet<usize> = components.iter().copied().collect();
        let order: Vec<usize> = chosen.iter().copied().collect();
        let init: Vec<StateId> = order.iter().map(|&c| self.net.components[c].initial()).collect();
        let mut index: HashMap<Vec<StateId>, StateId> = HashMap::new();
        let mut states = vec![init.clone()];
        index.insert(init, 0);
        let mut labels: Vec<Label> = Vec::new();
        let mut label_ix: HashMap<LabelId, u32> = HashMap::new();
        let mut adjacency: Vec<Vec<(u32, StateId)>> = vec![Vec::new()];
        let mut queue = VecDeque::from([0u32]);
        let pos = |c: usize| order.iter().position(|&x| x == c);
        while let Some(s) = queue.pop_front() {
            let here = states[s as usize].clone();
            let mut moves: Vec<(LabelId, Vec<StateId>)> = Vec::new();
            for (k, &ci) in order.iter().enumerate() {
                for &(l, t) in &self.edges[ci][here[k] as usize] {
                    match self.sync[l.0 as usize] {
                        Some(info) if chosen.contains(&info.partner_component) => {
                            if !info.leader {
                                continue;
                            }
                            let pk = pos(info.partner_component).expect("chosen");
                            if let Some(&(_, pt)) = self.edges[info.partner_component][here[pk] as usize]
                                .iter()
                                .find(|&&(pl, _)| pl == info.partner)
                            {
                                let mut next = here.clone();
                                next[k] = t;
                                next[pk] = pt;
                                moves.push((info.result, next));
                            }
                        }
                        _ => {
                            let mut next = here.clone();
                            next[k] = t;
                            moves.push((l, next));
                        }
                    }
                }
            }
            for (l, next) in moves {
                let li = *label_ix.entry(l).or_insert_with(|| {
                    labels.push(self.label(l).clone());
                    labels.len() as u32 - 1
                });
                let id = match index.get(&next) {
                    Some(&id) => id,
                    None => {
                        let id = states.len() as StateId;
                        index.insert(next.clone(), id);
                        states.push(next);
                        adjacency.push(Vec::new());
                        queue.push_back(id);
                        id
                    }
                };
                adjacency[s as usize].push((li, id));
            }
        }
        Lts::from_parts(0, labels, adjacency).expect("composition of label-deterministic components")
    }
}
