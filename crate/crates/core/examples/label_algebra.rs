//! Offset-span labels: fork, barrier and join, and how `compare` orders them.

use osrace::{Label, Relation};

fn show(a: &Label, b: &Label) {
    let r = a.compare(b).unwrap();
    let word = match r {
        Relation::Before => "before",
        Relation::After => "after",
        Relation::Concurrent => "concurrent with",
    };
    println!("  {a:<22} {word:<16} {b}");
}

fn main() {
    let root = Label::root();
    let t0 = root.fork_child(0, 2).unwrap();
    let t1 = root.fork_child(1, 2).unwrap();
    let t0b = t0.cross_barrier().unwrap();
    let t1b = t1.cross_barrier().unwrap();
    let nested = t1.fork_child(2, 3).unwrap();
    let joined = t0b.join().unwrap();

    println!("team of two:");
    show(&t0, &t1);
    show(&root, &t1);
    println!("across a barrier:");
    show(&t0, &t1b);
    show(&t0b, &t1b);
    println!("nested team inside rank 1:");
    show(&nested, &t0);
    show(&t1, &nested);
    println!("after the join:");
    show(&t1b, &joined);

    println!("region keys: {} and {}", t0.most(), nested.most());
}
