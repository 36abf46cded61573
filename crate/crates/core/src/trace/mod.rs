//! Runtime event vocabulary and the two on-disk trace formats.
//!
//! * `.ostrace`: one interleaved text stream, see [`text`].
//! * `.oslog/`: one compressed, chunked binary log per thread, see [`log`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub mod log;
pub mod text;

pub use log::{merge_logs, read_log_dir, write_log_dir, Codec, LogReader, ThreadLog, TraceChunk};
pub use text::{read_text_trace, write_text_trace};

pub type Tid = u32;
pub type Addr = u64;

/// Kind of memory access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mat {
    R,
    W,
}

impl fmt::Display for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mat::R => "R",
            Mat::W => "W",
        })
    }
}

/// A mutex name. All unnamed critical sections share [`MutexName::Anonymous`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", from = "String")]
pub enum MutexName {
    Anonymous,
    Named(String),
}

impl MutexName {
    pub const ANON: &'static str = "µ";
    pub const ANON_ASCII: &'static str = "@anon";

    pub fn named(name: impl Into<String>) -> Self {
        MutexName::Named(name.into())
    }
}

impl fmt::Display for MutexName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MutexName::Anonymous => f.write_str(Self::ANON),
            MutexName::Named(n) => f.write_str(n),
        }
    }
}

impl From<&str> for MutexName {
    fn from(s: &str) -> Self {
        // U+00B5 MICRO SIGN and U+03BC GREEK SMALL LETTER MU are both accepted.
        match s {
            "µ" | "μ" | Self::ANON_ASCII => MutexName::Anonymous,
            other => MutexName::Named(other.to_string()),
        }
    }
}

impl From<String> for MutexName {
    fn from(s: String) -> Self {
        MutexName::from(s.as_str())
    }
}

impl From<MutexName> for String {
    fn from(m: MutexName) -> String {
        m.to_string()
    }
}

impl FromStr for MutexName {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(MutexName::from(s))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    ParallelBegin { team_size: u32 },
    ParallelEnd { team_size: u32 },
    ImplicitTaskBegin,
    ImplicitTaskEnd,
    LoadStore { addr: Addr, mat: Mat },
    AcquireMutex { name: MutexName },
    ReleaseMutex { name: MutexName },
    Barrier { bid: u64 },
}

impl EventKind {
    /// The keyword used by the text format.
    pub fn keyword(&self) -> &'static str {
        match self {
            EventKind::ParallelBegin { .. } => "par_begin",
            EventKind::ParallelEnd { .. } => "par_end",
            EventKind::ImplicitTaskBegin => "task_begin",
            EventKind::ImplicitTaskEnd => "task_end",
            EventKind::LoadStore { .. } => "loadstore",
            EventKind::AcquireMutex { .. } => "acquire",
            EventKind::ReleaseMutex { .. } => "release",
            EventKind::Barrier { .. } => "barrier",
        }
    }
}

/// Rule-style rendering, e.g. `ParBegin(2)` or `LoadStore(4096, W)`.
impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventKind::ParallelBegin { team_size } => write!(f, "ParBegin({team_size})"),
            EventKind::ParallelEnd { team_size } => write!(f, "ParEnd({team_size})"),
            EventKind::ImplicitTaskBegin => f.write_str("ImplicitTaskBegin()"),
            EventKind::ImplicitTaskEnd => f.write_str("ImplicitTaskEnd()"),
            EventKind::LoadStore { addr, mat } => write!(f, "LoadStore({addr}, {mat})"),
            EventKind::AcquireMutex { name } => write!(f, "AcquireMutex({name})"),
            EventKind::ReleaseMutex { name } => write!(f, "ReleaseMutex({name})"),
            EventKind::Barrier { bid } => write!(f, "Barrier({bid})"),
        }
    }
}

/// One observed runtime event.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub tid: Tid,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl TraceEvent {
    pub fn new(seq: u64, tid: Tid, kind: EventKind) -> Self {
        TraceEvent { seq, tid, kind }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("line {line}: {reason} (token {token:?})")]
    Parse {
        line: usize,
        token: String,
        reason: &'static str,
    },
    #[error("unsupported trace format version {0}")]
    Version(String),
    #[error("sequence numbers must strictly increase: {prev} then {next}")]
    NonMonotone { prev: u64, next: u64 },
    #[error("event for thread {event_tid} appended to the log of thread {log_tid}")]
    WrongLog { log_tid: Tid, event_tid: Tid },
    #[error("corrupt chunk in log of thread {tid} (first_seq {first_seq}): {reason}")]
    CorruptChunk {
        tid: Tid,
        first_seq: u64,
        reason: String,
    },
    #[error("corrupt log: {0}")]
    CorruptLog(String),
    #[error("chunk uses codec {0} which this reader does not support")]
    UnknownCodec(u8),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TraceError {
    /// True for integrity failures in binary logs.
    pub fn is_corruption(&self) -> bool {
        matches!(
            self,
            TraceError::CorruptChunk { .. } | TraceError::CorruptLog(_) | TraceError::UnknownCodec(_)
        )
    }
}

pub(crate) fn check_monotone(events: &[TraceEvent]) -> Result<(), TraceError> {
    for w in events.windows(2) {
        if w[1].seq <= w[0].seq {
            return Err(TraceError::NonMonotone {
                prev: w[0].seq,
                next: w[1].seq,
            });
        }
    }
    Ok(())
}
