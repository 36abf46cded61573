//! Transition log rendering.
//!
//! Human form is one row per step with the columns
//! `# | tid - osl | rule | bm | m | rw | tp | next`; multi-valued cells are
//! joined with `; `. The rw column shows the record added by the step.
//! Structured form is one JSON object per line.

use std::fmt::Write as _;

use super::{BmEntry, NextState, ThreadView, TransitionRecord};

const HEADER: &str = "# | tid - osl | rule | bm | m | rw | tp | next";

fn cell<T, F: Fn(&T) -> String>(items: &[T], f: F) -> String {
    if items.is_empty() {
        return "∅".to_string();
    }
    items.iter().map(f).collect::<Vec<_>>().join("; ")
}

fn bm_text(e: &BmEntry) -> String {
    format!("{} = ({}, {})", e.region, e.count, e.target)
}

/// Render the initial row followed by one row per record.
pub fn render_table(initial: &[ThreadView], first_event: Option<String>, records: &[TransitionRecord]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{HEADER}");
    let _ = writeln!(
        out,
        "0 | Init | --- | ∅ | ∅ | ∅ | {} | {}",
        cell(initial, |t| t.to_string()),
        first_event.unwrap_or_default()
    );
    for r in records {
        let rw = r.rw_added.as_ref().map(|a| format!("+{a}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "{} | {} - {} | {} | {} | {} | {} | {} | {}",
            r.step,
            r.tid,
            r.osl,
            r.rule,
            cell(&r.bm, bm_text),
            cell(&r.m, |(n, t)| format!("{n} = {t}")),
            rw,
            cell(&r.tp, |t| t.to_string()),
            r.next.iter().map(NextState::to_string).collect::<Vec<_>>().join("; ")
        );
    }
    out
}

/// One JSON object per record.
pub fn structured_lines(records: &[TransitionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("transition records serialize"));
        out.push('\n');
    }
    out
}
