//! The `.ostrace` text format.
//!
//! ```text
//! #ostrace 1
//! <seq> <tid> <kind> <args...>
//! ```
//!
//! Kinds: `par_begin N`, `par_end N`, `task_begin`, `task_end`,
//! `loadstore ADDR R|W`, `acquire NAME`, `release NAME`, `barrier BID`.
//! The anonymous mutex is written `µ`; `@anon` is accepted on input.
//! Blank lines and other `#` lines are ignored by the reader.

use std::io::{BufRead, Write};

use super::{check_monotone, EventKind, Mat, MutexName, TraceError, TraceEvent};

pub const HEADER: &str = "#ostrace";
pub const VERSION: &str = "1";

pub fn write_text_trace<W: Write>(events: &[TraceEvent], mut sink: W) -> Result<(), TraceError> {
    check_monotone(events)?;
    if events.is_empty() {
        return Ok(());
    }
    writeln!(sink, "{HEADER} {VERSION}")?;
    for ev in events {
        writeln!(sink, "{}", render_line(ev))?;
    }
    sink.flush()?;
    Ok(())
}

pub fn render_line(ev: &TraceEvent) -> String {
    let head = format!("{} {} {}", ev.seq, ev.tid, ev.kind.keyword());
    match &ev.kind {
        EventKind::ParallelBegin { team_size } | EventKind::ParallelEnd { team_size } => {
            format!("{head} {team_size}")
        }
        EventKind::ImplicitTaskBegin | EventKind::ImplicitTaskEnd => head,
        EventKind::LoadStore { addr, mat } => format!("{head} {addr} {mat}"),
        EventKind::AcquireMutex { name } | EventKind::ReleaseMutex { name } => {
            format!("{head} {name}")
        }
        EventKind::Barrier { bid } => format!("{head} {bid}"),
    }
}

pub fn read_text_trace<R: BufRead>(source: R) -> Result<Vec<TraceEvent>, TraceError> {
    let mut events: Vec<TraceEvent> = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix(HEADER) {
            let version = rest.trim();
            if !version.is_empty() && version != VERSION {
                return Err(TraceError::Version(version.to_string()));
            }
            continue;
        }
        if trimmed.starts_with('#') {
            continue;
        }
        let ev = parse_line(trimmed, lineno)?;
        if let Some(prev) = events.last() {
            if ev.seq <= prev.seq {
                return Err(TraceError::Parse {
                    line: lineno,
                    token: ev.seq.to_string(),
                    reason: "sequence number does not increase",
                });
            }
        }
        events.push(ev);
    }
    Ok(events)
}

fn parse_line(line: &str, lineno: usize) -> Result<TraceEvent, TraceError> {
    let toks: Vec<&str> = line.split_whitespace().collect();
    let err = |token: &str, reason| TraceError::Parse {
        line: lineno,
        token: token.to_string(),
        reason,
    };
    let nat = |i: usize, what| -> Result<u64, TraceError> {
        let t = toks.get(i).ok_or_else(|| err("", what))?;
        t.parse::<u64>().map_err(|_| err(t, what))
    };
    let seq = nat(0, "expected sequence number")?;
    let tid = nat(1, "expected thread id")?;
    let tid = u32::try_from(tid).map_err(|_| err(toks[1], "thread id out of range"))?;
    let kw = *toks.get(2).ok_or_else(|| err("", "expected event kind"))?;
    let team = |i| -> Result<u32, TraceError> {
        let n = nat(i, "expected team size")?;
        u32::try_from(n).map_err(|_| err(toks[i], "team size out of range"))
    };
    let (kind, arity) = match kw {
        "par_begin" => (EventKind::ParallelBegin { team_size: team(3)? }, 4),
        "par_end" => (EventKind::ParallelEnd { team_size: team(3)? }, 4),
        "task_begin" => (EventKind::ImplicitTaskBegin, 3),
        "task_end" => (EventKind::ImplicitTaskEnd, 3),
        "loadstore" => {
            let addr = nat(3, "expected address")?;
            let mat = match toks.get(4).copied() {
                Some("R") => Mat::R,
                Some("W") => Mat::W,
                Some(t) => return Err(err(t, "expected R or W")),
                None => return Err(err("", "expected R or W")),
            };
            (EventKind::LoadStore { addr, mat }, 5)
        }
        "acquire" | "release" => {
            let name = toks
                .get(3)
                .map(|t| MutexName::from(*t))
                .ok_or_else(|| err("", "expected mutex name"))?;
            if kw == "acquire" {
                (EventKind::AcquireMutex { name }, 4)
            } else {
                (EventKind::ReleaseMutex { name }, 4)
            }
        }
        "barrier" => (EventKind::Barrier { bid: nat(3, "expected barrier id")? }, 4),
        other => return Err(err(other, "unknown event kind")),
    };
    if let Some(extra) = toks.get(arity) {
        return Err(err(extra, "unexpected trailing token"));
    }
    Ok(TraceEvent::new(seq, tid, kind))
}
