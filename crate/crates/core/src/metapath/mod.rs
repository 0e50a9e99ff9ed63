//! Metapath patterns over (edge type, account kind) steps.
//!
//! Patterns are written as `KIND (-etype-> KIND)+`, for example
//! `EOA -call-> CA_t -trans-> EOA -trans-> CA`. A `_t` suffix marks the
//! position of the target contract used by target-anchored augmentation.
//! The two built-in behaviour patterns are available as `P1` and `P2`.

mod matcher;

pub(crate) use matcher::match_anchored_ix;

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::graph::{AccountId, AccountKind, EdgeType};

pub use matcher::{
    match_anchored, match_from, match_many, InstanceRecord, MatchInstance, MatchLimits,
    MatchOutcome,
};

#[derive(Debug, Error, PartialEq)]
pub enum MetapathError {
    #[error("syntax error at byte {position}: {message}")]
    SyntaxError { position: usize, message: String },
    #[error("step {step}: {message}")]
    KindMismatch { step: usize, message: String },
    #[error("account {account} is {found}, pattern expects {expected} at position {position}")]
    KindMismatchAtStart {
        account: AccountId,
        position: usize,
        expected: AccountKind,
        found: AccountKind,
    },
    #[error("unknown account {0}")]
    UnknownAccount(AccountId),
    #[error("anchor position {anchor} out of range for a pattern with {positions} positions")]
    AnchorOutOfRange { anchor: usize, positions: usize },
}

/// Direction in which a step traverses its edge. Only forward steps exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Direction {
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct MetapathStep {
    pub edge_type: EdgeType,
    pub direction: Direction,
    pub dst_kind: AccountKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct MetapathPattern {
    pub name: String,
    pub head_kind: AccountKind,
    pub steps: Vec<MetapathStep>,
    /// Explicit target position (`_t` marker), if any.
    pub target: Option<usize>,
}

fn step(edge_type: EdgeType, dst_kind: AccountKind) -> MetapathStep {
    MetapathStep {
        edge_type,
        direction: Direction::Forward,
        dst_kind,
    }
}

impl MetapathPattern {
    /// `CA_t -call-> CA -trans-> EOA -call-> CA`
    pub fn p1() -> Self {
        use AccountKind::*;
        use EdgeType::*;
        MetapathPattern {
            name: "P1".into(),
            head_kind: Ca,
            steps: vec![step(Call, Ca), step(Trans, Eoa), step(Call, Ca)],
            target: Some(0),
        }
    }

    /// `EOA -call-> CA_t -trans-> EOA -trans-> CA`
    pub fn p2() -> Self {
        use AccountKind::*;
        use EdgeType::*;
        MetapathPattern {
            name: "P2".into(),
            head_kind: Eoa,
            steps: vec![step(Call, Ca), step(Trans, Eoa), step(Trans, Ca)],
            target: Some(1),
        }
    }

    /// Number of node positions, `steps + 1`.
    pub fn positions(&self) -> usize {
        self.steps.len() + 1
    }

    pub fn kind_at(&self, pos: usize) -> AccountKind {
        if pos == 0 {
            self.head_kind
        } else {
            self.steps[pos - 1].dst_kind
        }
    }

    /// Position of the target contract: the `_t` marker, or else the first CA.
    pub fn target_position(&self) -> Option<usize> {
        self.target
            .or_else(|| (0..self.positions()).find(|p| self.kind_at(*p) == AccountKind::Ca))
    }
}

impl fmt::Display for MetapathPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = |pos: usize| if self.target == Some(pos) { "_t" } else { "" };
        write!(f, "{}{}", self.head_kind, mark(0))?;
        for (i, s) in self.steps.iter().enumerate() {
            write!(f, " -{}-> {}{}", s.edge_type, s.dst_kind, mark(i + 1))?;
        }
        Ok(())
    }
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn error(&self, message: impl Into<String>) -> MetapathError {
        MetapathError::SyntaxError {
            position: self.pos,
            message: message.into(),
        }
    }

    fn word(&mut self) -> &'a str {
        let rest = &self.src[self.pos..];
        let len = rest
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(rest.len());
        self.pos += len;
        &rest[..len]
    }

    fn expect(&mut self, lit: &str) -> Result<(), MetapathError> {
        if self.src[self.pos..].starts_with(lit) {
            self.pos += lit.len();
            Ok(())
        } else {
            Err(self.error(format!("expected `{lit}`")))
        }
    }

    /// Parses `CA`, `EOA`, optionally suffixed with `_t`.
    fn kind(&mut self) -> Result<(AccountKind, bool), MetapathError> {
        let start = self.pos;
        let word = self.word();
        let upper = word.to_ascii_uppercase();
        let (base, marked) = match upper.strip_suffix("_T") {
            Some(base) => (base, true),
            None => (upper.as_str(), false),
        };
        AccountKind::parse(base).map(|k| (k, marked)).ok_or_else(|| {
            MetapathError::SyntaxError {
                position: start,
                message: if word.is_empty() {
                    "expected account kind CA or EOA".into()
                } else {
                    format!("unknown account kind `{word}`")
                },
            }
        })
    }

    /// Parses `-call->` or `-trans->`.
    fn arrow(&mut self) -> Result<EdgeType, MetapathError> {
        self.expect("-")?;
        let start = self.pos;
        let word = self.word();
        let etype = EdgeType::parse(word).ok_or_else(|| MetapathError::SyntaxError {
            position: start,
            message: format!("unknown edge type `{word}`"),
        })?;
        self.expect("->")?;
        Ok(etype)
    }
}

/// Parses a pattern expression, or resolves the built-in names `P1` / `P2`.
pub fn compile_pattern(spec: &str) -> Result<MetapathPattern, MetapathError> {
    match spec.trim().to_ascii_uppercase().as_str() {
        "P1" => return Ok(MetapathPattern::p1()),
        "P2" => return Ok(MetapathPattern::p2()),
        _ => {}
    }
    let mut cur = Cursor { src: spec, pos: 0 };
    cur.skip_ws();
    let (head_kind, head_marked) = cur.kind()?;
    let mut target = head_marked.then_some(0);
    let mut steps = Vec::new();
    loop {
        cur.skip_ws();
        if cur.at_end() {
            break;
        }
        let edge_type = cur.arrow()?;
        cur.skip_ws();
        let marker_pos = cur.pos;
        let (dst_kind, marked) = cur.kind()?;
        if marked {
            if target.is_some() {
                return Err(MetapathError::SyntaxError {
                    position: marker_pos,
                    message: "more than one `_t` target marker".into(),
                });
            }
            target = Some(steps.len() + 1);
        }
        if edge_type == EdgeType::Call && dst_kind == AccountKind::Eoa {
            return Err(MetapathError::KindMismatch {
                step: steps.len(),
                message: "call edges can only target contract accounts".into(),
            });
        }
        steps.push(step(edge_type, dst_kind));
    }
    if steps.is_empty() {
        return Err(cur.error("pattern needs at least one step"));
    }
    Ok(MetapathPattern {
        name: spec.trim().to_string(),
        head_kind,
        steps,
        target,
    })
}
