//! Record per-thread binary logs, then analyze them offline with several
//! workers and compare against the online result.

use osrace::sim::{execute, load, Schedule};
use osrace::trace::{write_log_dir, Codec};
use osrace::{check_offline, run};

const PROGRAM: &str = include_str!("../corpus/nested_regions.ospar");

fn main() {
    let l = load(PROGRAM).unwrap();
    let events = execute(&l.root, &Schedule::Seeded(11)).unwrap();
    let dir = std::env::temp_dir().join(format!("osrace-example-{}", std::process::id()));
    let files = write_log_dir(&dir, &events, 8, Codec::Deflate).unwrap();
    for f in &files {
        println!("{} ({} bytes)", f.display(), std::fs::metadata(f).unwrap().len());
    }
    let online = run(&events).unwrap().reports;
    for workers in [1, 2, 4] {
        let offline = check_offline(&dir, workers).unwrap();
        println!("workers={workers}: {} reports, equal to online: {}", offline.len(), offline == online);
    }
    std::fs::remove_dir_all(&dir).unwrap();
}
