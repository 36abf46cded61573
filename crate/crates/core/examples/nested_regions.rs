//! Nested parallel regions: accesses in sibling regions are concurrent,
//! accesses in consecutive regions of the same thread are not.

use osrace::sim::{execute, load, Schedule};
use osrace::run;

const PROGRAM: &str = include_str!("../corpus/nested_regions.ospar");

fn main() {
    let l = load(PROGRAM).unwrap();
    let events = execute(&l.root, &Schedule::Seeded(7)).unwrap();
    let out = run(&events).unwrap();
    println!("{} events, {} accesses", events.len(), out.engine.state().rw.len());
    for r in &out.reports {
        println!(
            "{}: thread {} {} {} vs thread {} {} {} ({} pairs)",
            l.symbols.display(r.addr),
            r.first.tid,
            r.first.osl,
            r.first.mat,
            r.second.tid,
            r.second.osl,
            r.second.mat,
            r.pairs
        );
    }
}
