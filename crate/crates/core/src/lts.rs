//! Explicit labelled transition systems and the AUT-style text format.
//!
//! ```text
//! des (0,2,3)
//! (0,"a",1)
//! (1,"b",2)
//! ```

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

/// Dense state identifier within one [`Lts`].
pub type StateId = u32;

/// Index of a label inside an [`Lts`] alphabet.
pub type LabelIdx = u32;

/// An action name. Non-empty, without whitespace or double quotes, so it can
/// travel unescaped in the space-delimited wire protocol.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label(Arc<str>);

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid label {0:?}: labels must be non-empty and contain no whitespace or '\"'")]
pub struct InvalidLabel(pub String);

impl Label {
    pub fn new(name: &str) -> Result<Self, InvalidLabel> {
        if name.is_empty() || name.chars().any(|c| c.is_whitespace() || c == '"') {
            return Err(InvalidLabel(name.to_string()));
        }
        Ok(Label(Arc::from(name)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for Label {
    type Err = InvalidLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Label::new(s)
    }
}

#[derive(Debug, Error)]
pub enum LtsError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: state {state} out of range (the header declares {states} states)")]
    DanglingState { line: usize, state: u64, states: u32 },
    #[error("state {state} is not label-deterministic: label {label:?} leads to both {first} and {second}")]
    Nondeterministic {
        state: StateId,
        label: String,
        first: StateId,
        second: StateId,
    },
    #[error("initial state {initial} out of range ({states} states)")]
    BadInitial { initial: u64, states: u32 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A label-deterministic LTS with states `0..n`.
///
/// Outgoing transitions of a state are kept in insertion order;
/// [`crate::trace_count`] depends on that order when it numbers states.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lts {
    initial: StateId,
    labels: Vec<Label>,
    adjacency: Vec<Vec<(LabelIdx, StateId)>>,
}

impl Lts {
    /// Builds an LTS from `(src, label, dst)` triples. Duplicate triples are
    /// collapsed; the alphabet is ordered by first appearance.
    pub fn from_transitions<'a, I>(initial: StateId, states: u32, transitions: I) -> Result<Self, LtsError>
    where
        I: IntoIterator<Item = (StateId, &'a str, StateId)>,
    {
        let mut builder = LtsBuilder::new(initial, states)?;
        for (src, label, dst) in transitions {
            let label = Label::new(label).map_err(|e| LtsError::Parse {
                line: 0,
                message: e.to_string(),
            })?;
            builder.add(src, label, dst, 0)?;
        }
        Ok(builder.finish())
    }

    /// Builds an LTS with an explicit alphabet (which may contain labels no
    /// transition uses) and transitions given by alphabet index.
    pub fn from_parts(
        initial: StateId,
        labels: Vec<Label>,
        adjacency: Vec<Vec<(LabelIdx, StateId)>>,
    ) -> Result<Self, LtsError> {
        let states = adjacency.len() as u32;
        if initial >= states {
            return Err(LtsError::BadInitial {
                initial: initial as u64,
                states,
            });
        }
        for (src, edges) in adjacency.iter().enumerate() {
            for (i, &(l, dst)) in edges.iter().enumerate() {
                if dst >= states || l as usize >= labels.len() {
                    return Err(LtsError::DanglingState {
                        line: 0,
                        state: dst as u64,
                        states,
                    });
                }
                if let Some(&(_, other)) = edges[..i].iter().find(|&&(l2, _)| l2 == l) {
                    if other != dst {
                        return Err(LtsError::Nondeterministic {
                            state: src as StateId,
                            label: labels[l as usize].to_string(),
                            first: other,
                            second: dst,
                        });
                    }
                }
            }
        }
        Ok(Lts {
            initial,
            labels,
            adjacency,
        })
    }

    pub fn initial(&self) -> StateId {
        self.initial
    }

    pub fn num_states(&self) -> u32 {
        self.adjacency.len() as u32
    }

    pub fn num_transitions(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label(&self, idx: LabelIdx) -> &Label {
        &self.labels[idx as usize]
    }

    pub fn label_index(&self, label: &str) -> Option<LabelIdx> {
        self.labels
            .iter()
            .position(|l| l.as_str() == label)
            .map(|i| i as LabelIdx)
    }

    /// Outgoing `(label, target)` pairs of `state`, in insertion order.
    pub fn successors(&self, state: StateId) -> &[(LabelIdx, StateId)] {
        &self.adjacency[state as usize]
    }

    pub fn transitions(&self) -> impl Iterator<Item = (StateId, LabelIdx, StateId)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(s, edges)| edges.iter().map(move |&(l, t)| (s as StateId, l, t)))
    }

    /// Renders the LTS in the AUT-style format accepted by [`parse_lts`].
    pub fn to_aut(&self) -> String {
        let mut out = format!(
            "des ({},{},{})\n",
            self.initial,
            self.num_transitions(),
            self.num_states()
        );
        for (s, l, t) in self.transitions() {
            out.push_str(&format!("({},\"{}\",{})\n", s, self.label(l), t));
        }
        out
    }
}

struct LtsBuilder {
    initial: StateId,
    labels: Vec<Label>,
    label_ids: HashMap<Label, LabelIdx>,
    adjacency: Vec<Vec<(LabelIdx, StateId)>>,
}

impl LtsBuilder {
    fn new(initial: StateId, states: u32) -> Result<Self, LtsError> {
        if initial >= states {
            return Err(LtsError::BadInitial {
                initial: initial as u64,
                states,
            });
        }
        Ok(LtsBuilder {
            initial,
            labels: Vec::new(),
            label_ids: HashMap::new(),
            adjacency: vec![Vec::new(); states as usize],
        })
    }

    fn add(&mut self, src: StateId, label: Label, dst: StateId, line: usize) -> Result<(), LtsError> {
        let states = self.adjacency.len() as u32;
        for s in [src, dst] {
            if s >= states {
                return Err(LtsError::DanglingState {
                    line,
                    state: s as u64,
                    states,
                });
            }
        }
        let next_id = self.labels.len() as LabelIdx;
        let idx = *self.label_ids.entry(label.clone()).or_insert_with(|| {
            self.labels.push(label.clone());
            next_id
        });
        let edges = &mut self.adjacency[src as usize];
        match edges.iter().find(|&&(l, _)| l == idx) {
            Some(&(_, t)) if t == dst => Ok(()),
            Some(&(_, t)) => Err(LtsError::Nondeterministic {
                state: src,
                label: label.to_string(),
                first: t,
                second: dst,
            }),
            None => {
                edges.push((idx, dst));
                Ok(())
            }
        }
    }

    fn finish(self) -> Lts {
        Lts {
            initial: self.initial,
            labels: self.labels,
            adjacency: self.adjacency,
        }
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> LtsError {
    LtsError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_u64(text: &str, line: usize, what: &str) -> Result<u64, LtsError> {
    text.trim()
        .parse::<u64>()
        .map_err(|_| parse_err(line, format!("expected {what}, found {:?}", text.trim())))
}

fn parse_header(text: &str) -> Result<(u64, u64, u64), LtsError> {
    let rest = text
        .trim()
        .strip_prefix("des")
        .ok_or_else(|| parse_err(1, "expected header `des (<init>,<#transitions>,<#states>)`"))?;
    let inner = rest
        .trim()
        .strip_prefix('(')
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| parse_err(1, "malformed header parentheses"))?;
    let fields: Vec<&str> = inner.split(',').collect();
    if fields.len() != 3 {
        return Err(parse_err(1, "header needs exactly three fields"));
    }
    Ok((
        parse_u64(fields[0], 1, "initial state")?,
        parse_u64(fields[1], 1, "transition count")?,
        parse_u64(fields[2], 1, "state count")?,
    ))
}

fn parse_transition(text: &str, line: usize) -> Result<(u64, Label, u64), LtsError> {
    let inner = text
        .strip_prefix('(')
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| parse_err(line, "transition must be `(<src>,\"<label>\",<dst>)`"))?;
    let (src, rest) = inner
        .split_once(',')
        .ok_or_else(|| parse_err(line, "missing ',' after source state"))?;
    let (label_part, dst) = rest
        .rsplit_once(',')
        .ok_or_else(|| parse_err(line, "missing ',' before target state"))?;
    let label_part = label_part.trim();
    let name = label_part
        .strip_prefix('"')
        .and_then(|r| r.strip_suffix('"'))
        .ok_or_else(|| parse_err(line, "label must be double-quoted"))?;
    let label = Label::new(name).map_err(|e| parse_err(line, e.to_string()))?;
    Ok((
        parse_u64(src, line, "source state")?,
        label,
        parse_u64(dst, line, "target state")?,
    ))
}

/// Parses AUT-style text.
pub fn parse_lts(text: &str) -> Result<Lts, LtsError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let header = loop {
        match lines.next() {
            Some((_, "")) => continue,
            Some((_, l)) => break l,
            None => return Err(parse_err(1, "empty file")),
        }
    };
    let (initial, declared_transitions, states) = parse_header(header)?;
    let states = u32::try_from(states).map_err(|_| parse_err(1, "state count too large"))?;
    if initial >= states as u64 {
        return Err(LtsError::BadInitial { initial, states });
    }
    let mut builder = LtsBuilder::new(initial as StateId, states)?;
    let mut count = 0u64;
    for (line, l) in lines {
        if l.is_empty() {
            continue;
        }
        let (src, label, dst) = parse_transition(l, line)?;
        for s in [src, dst] {
            if s >= states as u64 {
                return Err(LtsError::DanglingState { line, state: s, states });
            }
        }
        builder.add(src as StateId, label, dst as StateId, line)?;
        count += 1;
    }
    if count != declared_transitions {
        return Err(parse_err(
            1,
            format!("header declares {declared_transitions} transitions but {count} were listed"),
        ));
    }
    Ok(builder.finish())
}

/// Reads and parses an LTS file.
pub fn load_lts(path: impl AsRef<Path>) -> Result<Lts, LtsError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| LtsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_lts(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file() {
        let lts = parse_lts("des (0,1,2)\n(0,\"a\",1)").unwrap();
        assert_eq!(lts.num_states(), 2);
        assert_eq!(lts.num_transitions(), 1);
        assert_eq!(lts.successors(0), &[(0, 1)]);
        assert_eq!(lts.label(0).as_str(), "a");
    }

    #[test]
    fn nondeterminism_names_state_and_label() {
        let err = parse_lts("des (0,2,3)\n(0,\"a\",1)\n(0,\"a\",2)\n").unwrap_err();
        match err {
            LtsError::Nondeterministic { state, label, .. } => {
                assert_eq!(state, 0);
                assert_eq!(label, "a");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn dangling_state_reports_line() {
        let err = parse_lts("des (0,1,2)\n(0,\"a\",5)\n").unwrap_err();
        assert!(matches!(err, LtsError::DanglingState { line: 2, state: 5, .. }));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_lts("des (0,2,2)\n(0,\"a\",1)\n(1,b,0)\n").unwrap_err();
        assert!(matches!(err, LtsError::Parse { line: 3, .. }), "{err}");
        assert!(matches!(parse_lts("dse (0,0,1)"), Err(LtsError::Parse { line: 1, .. })));
        assert!(matches!(
            parse_lts("des (0,3,2)\n(0,\"a\",1)"),
            Err(LtsError::Parse { .. })
        ));
        assert!(matches!(parse_lts("des (4,0,2)"), Err(LtsError::BadInitial { .. })));
    }

    #[test]
    fn labels_reject_spaces_and_quotes() {
        assert!(Label::new("send").is_ok());
        assert!(Label::new("off(C1)").is_ok());
        assert!(Label::new("").is_err());
        assert!(Label::new("a b").is_err());
        assert!(Label::new("a\"b").is_err());
        assert!(parse_lts("des (0,1,2)\n(0,\"a b\",1)").is_err());
    }

    #[test]
    fn aut_round_trip() {
        let lts = parse_lts("des (1,3,3)\n(1,\"x\",0)\n(1,\"y\",2)\n(2,\"x\",0)\n").unwrap();
        assert_eq!(parse_lts(&lts.to_aut()).unwrap(), lts);
    }

    #[test]
    fn duplicate_transition_is_collapsed() {
        let lts = parse_lts("des (0,2,2)\n(0,\"a\",1)\n(0,\"a\",1)\n").unwrap();
        assert_eq!(lts.num_transitions(), 1);
    }
}
