//! Every interleaving of a small program gives the same race report, while a
//! single-schedule happens-before view would miss it in some of them.

use std::collections::BTreeSet;

use osrace::sim::{enumerate, load};
use osrace::run;

const PROGRAM: &str = include_str!("../corpus/master_critical.ospar");

fn main() {
    let l = load(PROGRAM).unwrap();
    let en = enumerate(&l.root, 10_000).unwrap();
    let mut sets = BTreeSet::new();
    for il in &en.interleavings {
        let reports = run(&il.events).unwrap().reports;
        sets.insert(reports.iter().map(|r| r.signature()).collect::<Vec<_>>());
    }
    println!(
        "{} interleavings{}, {} distinct report set(s)",
        en.interleavings.len(),
        if en.truncated { " (truncated)" } else { "" },
        sets.len()
    );
    let il = &en.interleavings[0];
    for r in run(&il.events).unwrap().reports {
        println!("{}", r.to_string().replace(&format!("address {}", r.addr), &l.symbols.display(r.addr)));
    }
}
