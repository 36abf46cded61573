//! Dropping the barrier after a worksharing loop lets the next loop read an
//! element another thread is still writing.

use osrace::sim::{execute, load, Schedule};
use osrace::run;

fn report(name: &str, src: &str) {
    let l = load(src).unwrap();
    let events = execute(&l.root, &Schedule::Seeded(1)).unwrap();
    let reports = run(&events).unwrap().reports;
    println!("{name}: {} race(s)", reports.len());
    for r in reports {
        println!(
            "  {}: thread {} {} / thread {} {}",
            l.symbols.display(r.addr),
            r.first.tid,
            r.first.mat,
            r.second.tid,
            r.second.mat
        );
    }
}

fn main() {
    report("nowait", include_str!("../corpus/nowait.ospar"));
    report("with barrier", include_str!("../corpus/nowait_barrier.ospar"));
}
