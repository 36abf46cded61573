//! Replay a recorded trace through the operational semantics and print one
//! row per transition, then the race reports.

use osrace::engine::render_table;
use osrace::trace::read_text_trace;
use osrace::{run, Engine};

const TRACE: &str = include_str!("../corpus/master_critical.ostrace");

fn main() {
    let events = read_text_trace(TRACE.as_bytes()).unwrap();
    let out = run(&events).unwrap();
    let first = events.first().map(|e| e.kind.to_string());
    print!("{}", render_table(&Engine::new().tp_view(), first, &out.transitions));
    println!();
    for r in &out.reports {
        println!("{r}");
    }
}
