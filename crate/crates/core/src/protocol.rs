//! Line protocol between workers and the hive.
//!
//! Every message is one LF-terminated line of space-separated tokens, except
//! `FEEDBACK`, whose header line is followed by one `FB` line per observed
//! position and a closing `END`.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{self, BufRead, Write};

use num_bigint::BigUint;
use thiserror::Error;

use crate::iss::FeedbackVector;
use crate::lts::Label;
use crate::trace_codec::SwarmTrace;

pub const PROTOCOL_VERSION: u32 = 1;

/// Longest accepted line, terminator excluded.
pub const MAX_LINE: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Termination {
    Complete,
    Bug,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::Complete => "complete",
            Termination::Bug => "bug",
        })
    }
}

/// Worker to hive.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Request {
    Hello(u32),
    Get,
    Feedback {
        trace_id: BigUint,
        feedback: FeedbackVector,
    },
    Bug {
        trace_id: BigUint,
        witness: Vec<Label>,
    },
    Bye,
}

/// Hive to worker.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Reply {
    Hi(u32),
    Trace(SwarmTrace),
    Retry(u64),
    Terminate(Termination),
    Ack,
    Err(String),
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("line exceeds {MAX_LINE} bytes")]
    TooLong,
    #[error("connection closed in the middle of a message")]
    UnexpectedEof,
}

impl ProtocolError {
    /// Whether the peer sent something unparseable, as opposed to the
    /// connection itself failing.
    pub fn is_malformed(&self) -> bool {
        matches!(self, ProtocolError::Malformed(_) | ProtocolError::TooLong)
    }
}

fn malformed(msg: impl Into<String>) -> ProtocolError {
    ProtocolError::Malformed(msg.into())
}

/// Reads one line without its terminator. `None` on a clean end of stream.
pub fn read_line(r: &mut impl BufRead) -> Result<Option<String>, ProtocolError> {
    let mut buf = Vec::new();
    let n = io::Read::take(&mut *r, MAX_LINE as u64 + 1).read_until(b'\n', &mut buf)?;
    if n == 0 {
        return Ok(None);
    }
    if buf.last() == Some(&b'\n') {
        buf.pop();
    } else if buf.len() > MAX_LINE {
        return Err(ProtocolError::TooLong);
    } else {
        return Err(ProtocolError::UnexpectedEof);
    }
    String::from_utf8(buf)
        .map(Some)
        .map_err(|_| malformed("line is not valid UTF-8"))
}

fn tokens(line: &str) -> Result<Vec<&str>, ProtocolError> {
    let toks: Vec<&str> = line.split(' ').collect();
    if toks.iter().any(|t| t.is_empty()) {
        return Err(malformed(format!("stray whitespace in {line:?}")));
    }
    Ok(toks)
}

fn parse_id(tok: &str) -> Result<BigUint, ProtocolError> {
    if tok.is_empty() || !tok.bytes().all(|b| b.is_ascii_digit()) {
        return Err(malformed(format!("bad trace id {tok:?}")));
    }
    tok.parse().map_err(|_| malformed(format!("bad trace id {tok:?}")))
}

fn parse_num<T: std::str::FromStr>(tok: &str, what: &str) -> Result<T, ProtocolError> {
    if tok.is_empty() || !tok.bytes().all(|b| b.is_ascii_digit()) {
        return Err(malformed(format!("bad {what} {tok:?}")));
    }
    tok.parse().map_err(|_| malformed(format!("bad {what} {tok:?}")))
}

fn parse_labels(toks: &[&str]) -> Result<Vec<Label>, ProtocolError> {
    toks.iter()
        .map(|t| Label::new(t).map_err(|e| malformed(e.to_string())))
        .collect()
}

fn arity(verb: &str, toks: &[&str], n: usize) -> Result<(), ProtocolError> {
    if toks.len() != n {
        return Err(malformed(format!("{verb} takes {} argument(s)", n - 1)));
    }
    Ok(())
}

/// Reads one request. `None` when the worker closed the stream between
/// messages.
pub fn read_request(r: &mut impl BufRead) -> Result<Option<Request>, ProtocolError> {
    let Some(line) = read_line(r)? else {
        return Ok(None);
    };
    let toks = tokens(&line)?;
    let req = match toks[0] {
        "HELLO" => {
            arity("HELLO", &toks, 2)?;
            Request::Hello(parse_num(toks[1], "version")?)
        }
        "GET" => {
            arity("GET", &toks, 1)?;
            Request::Get
        }
        "BYE" => {
            arity("BYE", &toks, 1)?;
            Request::Bye
        }
        "BUG" => {
            if toks.len() < 2 {
                return Err(malformed("BUG needs a trace id"));
            }
            Request::Bug {
                trace_id: parse_id(toks[1])?,
                witness: parse_labels(&toks[2..])?,
            }
        }
        "FEEDBACK" => {
            arity("FEEDBACK", &toks, 4)?;
            let trace_id = parse_id(toks[1])?;
            let reached: usize = parse_num(toks[2], "position count")?;
            let consumed_fully = match toks[3] {
                "0" => false,
                "1" => true,
                t => return Err(malformed(format!("bad consumed flag {t:?}"))),
            };
            let mut sets = Vec::new();
            for i in 0..reached {
                let line = read_line(r)?.ok_or(ProtocolError::UnexpectedEof)?;
                let toks = tokens(&line)?;
                if toks[0] != "FB" || toks.len() < 2 {
                    return Err(malformed(format!("expected FB line {i}, got {line:?}")));
                }
                let at: usize = parse_num(toks[1], "position")?;
                if at != i {
                    return Err(malformed(format!("FB position {at} where {i} was expected")));
                }
                sets.push(parse_labels(&toks[2..])?.into_iter().collect::<BTreeSet<_>>());
            }
            match read_line(r)?.as_deref() {
                Some("END") => {}
                Some(other) => return Err(malformed(format!("expected END, got {other:?}"))),
                None => return Err(ProtocolError::UnexpectedEof),
            }
            Request::Feedback {
                trace_id,
                feedback: FeedbackVector {
                    sets,
                    reached,
                    consumed_fully,
                },
            }
        }
        verb => return Err(malformed(format!("unknown verb {verb:?}"))),
    };
    Ok(Some(req))
}

fn push_labels<'a>(out: &mut String, labels: impl IntoIterator<Item = &'a Label>) {
    for l in labels {
        out.push(' ');
        out.push_str(l.as_str());
    }
}

/// Renders a request in wire form, including every line terminator.
pub fn render_request(req: &Request) -> String {
    let mut out = String::new();
    match req {
        Request::Hello(v) => out.push_str(&format!("HELLO {v}")),
        Request::Get => out.push_str("GET"),
        Request::Bye => out.push_str("BYE"),
        Request::Bug { trace_id, witness } => {
            out.push_str(&format!("BUG {trace_id}"));
            push_labels(&mut out, witness);
        }
        Request::Feedback { trace_id, feedback } => {
            out.push_str(&format!(
                "FEEDBACK {trace_id} {} {}\n",
                feedback.sets.len(),
                u8::from(feedback.consumed_fully)
            ));
            for (i, set) in feedback.sets.iter().enumerate() {
                out.push_str(&format!("FB {i}"));
                push_labels(&mut out, set);
                out.push('\n');
            }
            out.push_str("END");
        }
    }
    out.push('\n');
    out
}

pub fn write_request(w: &mut impl Write, req: &Request) -> io::Result<()> {
    w.write_all(render_request(req).as_bytes())?;
    w.flush()
}

/// Reads one reply. `None` when the hive closed the stream.
pub fn read_reply(r: &mut impl BufRead) -> Result<Option<Reply>, ProtocolError> {
    let Some(line) = read_line(r)? else {
        return Ok(None);
    };
    if let Some(text) = line.strip_prefix("ERR ") {
        return Ok(Some(Reply::Err(text.to_string())));
    }
    let toks = tokens(&line)?;
    let reply = match toks[0] {
        "HI" => {
            arity("HI", &toks, 2)?;
            Reply::Hi(parse_num(toks[1], "version")?)
        }
        "ACK" => {
            arity("ACK", &toks, 1)?;
            Reply::Ack
        }
        "RETRY" => {
            arity("RETRY", &toks, 2)?;
            Reply::Retry(parse_num(toks[1], "delay")?)
        }
        "TERMINATE" => {
            arity("TERMINATE", &toks, 2)?;
            Reply::Terminate(match toks[1] {
                "complete" => Termination::Complete,
                "bug" => Termination::Bug,
                t => return Err(malformed(format!("bad termination reason {t:?}"))),
            })
        }
        "TRACE" => {
            if toks.len() < 3 {
                return Err(malformed("TRACE needs an id and a length"));
            }
            let trace_id = parse_id(toks[1])?;
            let n: usize = parse_num(toks[2], "trace length")?;
            if toks.len() - 3 != n {
                return Err(malformed(format!(
                    "TRACE announces {n} labels, carries {}",
                    toks.len() - 3
                )));
            }
            Reply::Trace(SwarmTrace {
                trace_id,
                actions: parse_labels(&toks[3..])?,
            })
        }
        verb => return Err(malformed(format!("unknown reply {verb:?}"))),
    };
    Ok(Some(reply))
}

pub fn render_reply(reply: &Reply) -> String {
    let mut out = match reply {
        Reply::Hi(v) => format!("HI {v}"),
        Reply::Ack => "ACK".to_string(),
        Reply::Retry(ms) => format!("RETRY {ms}"),
        Reply::Terminate(t) => format!("TERMINATE {t}"),
        Reply::Err(text) => {
            let clean: String = text.chars().map(|c| if c.is_control() { ' ' } else { c }).collect();
            let clean = if clean.trim().is_empty() {
                "error".to_string()
            } else {
                clean
            };
            let mut cut = clean.len().min(MAX_LINE - 4);
            while !clean.is_char_boundary(cut) {
                cut -= 1;
            }
            format!("ERR {}", &clean[..cut])
        }
        Reply::Trace(t) => {
            let mut s = format!("TRACE {} {}", t.trace_id, t.actions.len());
            push_labels(&mut s, &t.actions);
            s
        }
    };
    out.push('\n');
    out
}

pub fn write_reply(w: &mut impl Write, reply: &Reply) -> io::Result<()> {
    w.write_all(render_reply(reply).as_bytes())?;
    w.flush()
}
