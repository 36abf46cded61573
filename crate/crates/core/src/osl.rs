//! Offset-span labels.
//!
//! A label is a sequence of `[offset, span]` pairs recording a thread's
//! lineage through forks, joins and barriers. Two labels are ordered when one
//! is a prefix of the other, or when at the first pair where they differ the
//! spans agree, the offsets have the same residue modulo the span and one
//! offset is smaller. Otherwise the two execution points are concurrent.
//!
//! Labels are plain values; every operation returns a fresh label.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OslError {
    #[error("rank {rank} is out of range for a team of {team_size}")]
    InvalidRank { rank: u64, team_size: u64 },
    #[error("team size must be at least 1")]
    EmptyTeam,
    #[error("label {0} has no enclosing fork to join")]
    CannotJoin(Label),
    #[error("operation requires a non-empty label")]
    EmptyLabel,
    #[error("labels are equal ({0}); they denote the same execution point")]
    SamePoint(Label),
    #[error("malformed label {text:?}: {reason}")]
    Parse { text: String, reason: &'static str },
}

/// One `[offset, span]` element of a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pair {
    pub offset: u64,
    pub span: u64,
}

impl Pair {
    pub fn new(offset: u64, span: u64) -> Self {
        debug_assert!(span >= 1);
        Pair { offset, span }
    }

    /// The thread slot this pair identifies within its team.
    pub fn residue(&self) -> u64 {
        self.offset % self.span
    }
}

/// Result of comparing two execution points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    Before,
    After,
    Concurrent,
}

impl Relation {
    pub fn flip(self) -> Relation {
        match self {
            Relation::Before => Relation::After,
            Relation::After => Relation::Before,
            Relation::Concurrent => Relation::Concurrent,
        }
    }

    pub fn is_ordered(self) -> bool {
        self != Relation::Concurrent
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Label(Vec<Pair>);

impl Label {
    /// The label of the initial thread: `[0,1]`.
    pub fn root() -> Self {
        Label(vec![Pair::new(0, 1)])
    }

    /// The empty label. Only used as a region key (see [`Label::most`]).
    pub fn empty() -> Self {
        Label(Vec::new())
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (u64, u64)>) -> Result<Self, OslError> {
        let mut out = Vec::new();
        for (offset, span) in pairs {
            if span == 0 {
                return Err(OslError::EmptyTeam);
            }
            out.push(Pair { offset, span });
        }
        Ok(Label(out))
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn last(&self) -> Option<Pair> {
        self.0.last().copied()
    }

    /// Label of the member with `rank` in a team of `team_size` forked here.
    pub fn fork_child(&self, rank: u64, team_size: u64) -> Result<Label, OslError> {
        if team_size == 0 {
            return Err(OslError::EmptyTeam);
        }
        if rank >= team_size {
            return Err(OslError::InvalidRank { rank, team_size });
        }
        let mut pairs = self.0.clone();
        pairs.push(Pair::new(rank, team_size));
        Ok(Label(pairs))
    }

    /// Label of the encountering thread once the team this member belongs to
    /// has joined: drop the member pair, then advance the enclosing pair by
    /// one full span.
    pub fn join(&self) -> Result<Label, OslError> {
        if self.0.len() < 2 {
            return Err(OslError::CannotJoin(self.clone()));
        }
        let mut pairs = self.0[..self.0.len() - 1].to_vec();
        advance(pairs.last_mut().unwrap());
        Ok(Label(pairs))
    }

    /// Label after the team this member belongs to completes a barrier.
    ///
    /// A barrier behaves like a join of the whole team immediately followed by
    /// a fork of an identical team, so the enclosing pair advances by its span
    /// and the member pair is kept. A single-pair label (no enclosing team)
    /// advances its own pair.
    pub fn cross_barrier(&self) -> Result<Label, OslError> {
        let mut pairs = self.0.clone();
        match pairs.len() {
            0 => return Err(OslError::EmptyLabel),
            1 => advance(&mut pairs[0]),
            n => advance(&mut pairs[n - 2]),
        }
        Ok(Label(pairs))
    }

    /// Everything but the last pair. The result identifies the region the
    /// thread is a member of.
    pub fn most(&self) -> Label {
        match self.0.split_last() {
            Some((_, rest)) => Label(rest.to_vec()),
            None => Label::empty(),
        }
    }

    pub fn is_prefix_of(&self, other: &Label) -> bool {
        other.0.len() >= self.0.len() && other.0[..self.0.len()] == self.0[..]
    }

    /// Decide whether `self` is sequentially before, after, or concurrent
    /// with `other`.
    pub fn compare(&self, other: &Label) -> Result<Relation, OslError> {
        if self == other {
            return Err(OslError::SamePoint(self.clone()));
        }
        let common = self
            .0
            .iter()
            .zip(other.0.iter())
            .take_while(|(a, b)| a == b)
            .count();
        if common == self.0.len() {
            return Ok(Relation::Before);
        }
        if common == other.0.len() {
            return Ok(Relation::After);
        }
        let (x, y) = (self.0[common], other.0[common]);
        if x.span != y.span || x.residue() != y.residue() {
            return Ok(Relation::Concurrent);
        }
        Ok(if x.offset < y.offset {
            Relation::Before
        } else {
            Relation::After
        })
    }

    pub fn is_concurrent_with(&self, other: &Label) -> bool {
        matches!(self.compare(other), Ok(Relation::Concurrent))
    }
}

fn advance(pair: &mut Pair) {
    pair.offset += pair.span;
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("[]");
        }
        for p in &self.0 {
            write!(f, "[{},{}]", p.offset, p.span)?;
        }
        Ok(())
    }
}

impl FromStr for Label {
    type Err = OslError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason| OslError::Parse {
            text: s.to_string(),
            reason,
        };
        if s == "[]" {
            return Ok(Label::empty());
        }
        let mut pairs = Vec::new();
        let mut rest = s;
        while !rest.is_empty() {
            let body = rest.strip_prefix('[').ok_or_else(|| err("expected '['"))?;
            let end = body.find(']').ok_or_else(|| err("unterminated pair"))?;
            let (o, sp) = body[..end]
                .split_once(',')
                .ok_or_else(|| err("expected ','"))?;
            let offset = parse_nat(o).ok_or_else(|| err("bad offset"))?;
            let span = parse_nat(sp).ok_or_else(|| err("bad span"))?;
            if span == 0 {
                return Err(err("span must be at least 1"));
            }
            pairs.push(Pair { offset, span });
            rest = &body[end + 1..];
        }
        if pairs.is_empty() {
            return Err(err("empty text"));
        }
        Ok(Label(pairs))
    }
}

// Canonical rendering only: no signs, no whitespace, no leading zeros.
fn parse_nat(s: &str) -> Option<u64> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) || (s.len() > 1 && s.starts_with('0')) {
        return None;
    }
    s.parse().ok()
}

impl From<Label> for String {
    fn from(l: Label) -> String {
        l.to_string()
    }
}

impl TryFrom<String> for Label {
    type Error = OslError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}
