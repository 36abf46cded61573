mod common;

use std::collections::BTreeSet;

use common::{GenConfig, ProgramGen};
use osrace::detector::{check, check_parallel};
use osrace::engine::run;
use osrace::osl::{Label, Relation};
use osrace::sim::{self, Schedule};
use osrace::trace::{self, Codec, EventKind, LogReader, Mat, MutexName, ThreadLog, TraceEvent};
use proptest::prelude::*;

/// Labels reached from the root by a random walk of forks, barriers and joins.
fn label_walk() -> impl Strategy<Value = Vec<Label>> {
    prop::collection::vec((0u8..3, 1u64..5, 0u64..5), 0..12).prop_map(|ops| {
        let mut l = Label::root();
        let mut seen = vec![l.clone()];
        for (op, size, rank) in ops {
            let next = match op {
                0 => l.fork_child(rank % size, size).ok(),
                1 if l.len() > 1 => l.cross_barrier().ok(),
                _ if l.len() > 1 => l.join().ok(),
                _ => None,
            };
            if let Some(n) = next {
                l = n;
                seen.push(l.clone());
            }
        }
        seen
    })
}

fn config(mutexes: usize) -> GenConfig {
    GenConfig {
        max_threads: 6,
        mutexes,
        vars: 2,
        arrays: true,
        unique_touches: false,
        max_structural: 6,
        max_depth: 2,
    }
}

fn arb_kind() -> impl Strategy<Value = EventKind> {
    prop_oneof![
        (1u32..9).prop_map(|team_size| EventKind::ParallelBegin { team_size }),
        (1u32..9).prop_map(|team_size| EventKind::ParallelEnd { team_size }),
        Just(EventKind::ImplicitTaskBegin),
        Just(EventKind::ImplicitTaskEnd),
        (any::<u64>(), any::<bool>()).prop_map(|(addr, w)| EventKind::LoadStore {
            addr,
            mat: if w { Mat::W } else { Mat::R }
        }),
        "[a-z][a-z0-9_]{0,6}".prop_map(|n| EventKind::AcquireMutex { name: MutexName::named(n) }),
        Just(EventKind::ReleaseMutex { name: MutexName::Anonymous }),
        any::<u64>().prop_map(|bid| EventKind::Barrier { bid }),
    ]
}

/// Wrap every access of the threads in `tids` in a fresh mutex, renumbering seq.
fn guard_accesses(events: &[TraceEvent], tids: &BTreeSet<u32>) -> Vec<TraceEvent> {
    let guard = MutexName::named("guard");
    let mut out = Vec::new();
    let mut seq = 0;
    let mut push = |tid, kind| {
        seq += 1;
        out.push(TraceEvent::new(seq, tid, kind));
    };
    for ev in events {
        let wrap = matches!(ev.kind, EventKind::LoadStore { .. }) && tids.contains(&ev.tid);
        if wrap {
            push(ev.tid, EventKind::AcquireMutex { name: guard.clone() });
        }
        push(ev.tid, ev.kind.clone());
        if wrap {
            push(ev.tid, EventKind::ReleaseMutex { name: guard.clone() });
        }
    }
    out
}

proptest! {
    #[test]
    fn compare_is_antisymmetric(a in label_walk(), b in label_walk()) {
        for x in &a {
            for y in &b {
                if x != y {
                    prop_assert_eq!(x.compare(y).unwrap(), y.compare(x).unwrap().flip());
                }
            }
        }
    }

    #[test]
    fn one_walk_is_totally_ordered(walk in label_walk()) {
        for (i, x) in walk.iter().enumerate() {
            for y in &walk[i + 1..] {
                prop_assert_eq!(x.compare(y).unwrap(), Relation::Before, "{} vs {}", x, y);
            }
        }
    }

    #[test]
    fn siblings_are_concurrent(walk in label_walk(), size in 2u64..7) {
        let base = walk.last().unwrap();
        let kids: Vec<Label> = (0..size).map(|r| base.fork_child(r, size).unwrap()).collect();
        for (i, a) in kids.iter().enumerate() {
            prop_assert_eq!(base.compare(a).unwrap(), Relation::Before);
            for b in &kids[i + 1..] {
                prop_assert!(a.is_concurrent_with(b));
                // After a barrier every member is ordered after every member's
                // pre-barrier label.
                prop_assert_eq!(a.compare(&b.cross_barrier().unwrap()).unwrap(), Relation::Before);
            }
            prop_assert_eq!(a.compare(&a.join().unwrap()).unwrap(), Relation::Before);
        }
    }

    #[test]
    fn label_text_round_trip(walk in label_walk()) {
        for l in walk {
            let s = l.to_string();
            prop_assert_eq!(s.parse::<Label>().unwrap(), l);
        }
    }

    #[test]
    fn log_round_trip(
        tid in 0u32..100,
        gaps in prop::collection::vec(1u64..1_000_000, 0..60),
        kinds in prop::collection::vec(arb_kind(), 60),
        capacity in 1usize..9,
        deflate in any::<bool>(),
    ) {
        let mut seq = 0;
        let events: Vec<TraceEvent> = gaps.iter().zip(kinds).map(|(g, k)| {
            seq += g;
            TraceEvent::new(seq, tid, k)
        }).collect();
        let codec = if deflate { Codec::Deflate } else { Codec::None };
        let mut log = ThreadLog::new(tid, Vec::new(), capacity, codec).unwrap();
        for e in &events {
            log.append_event(e.clone()).unwrap();
        }
        let bytes = log.close().unwrap();
        let back = LogReader::new(bytes.as_slice()).unwrap().read_events(Some(tid)).unwrap();
        prop_assert_eq!(&back, &events);

        let mut text = Vec::new();
        trace::write_text_trace(&events, &mut text).unwrap();
        prop_assert_eq!(trace::read_text_trace(text.as_slice()).unwrap(), events);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedule_does_not_change_reports(seed in any::<u64>(), s1 in any::<u64>(), s2 in any::<u64>()) {
        let src = ProgramGen::new(seed, config(2)).program();
        let l = sim::load(&src).unwrap();
        let sig = |s| -> BTreeSet<_> {
            let ev = sim::execute(&l.root, &Schedule::Seeded(s)).unwrap();
            run(&ev).unwrap().reports.iter().map(|r| r.signature()).collect()
        };
        prop_assert_eq!(sig(s1), sig(s2), "{}", src);
    }

    #[test]
    fn locks_only_remove_races(seed in any::<u64>(), pick in prop::collection::btree_set(0u32..8, 0..8)) {
        let src = ProgramGen::new(seed, config(2)).program();
        let events = common::simulate(&src, &Schedule::Seeded(seed));
        let keys = |ev: &[TraceEvent]| -> BTreeSet<_> {
            run(ev).unwrap().reports.iter().map(|r| r.key()).collect()
        };
        let before = keys(&events);
        let after = keys(&guard_accesses(&events, &pick));
        prop_assert!(after.is_subset(&before));
        let all: BTreeSet<u32> = events.iter().map(|e| e.tid).collect();
        prop_assert!(keys(&guard_accesses(&events, &all)).is_empty());
    }

    #[test]
    fn parallel_check_matches_serial(seed in any::<u64>(), workers in 1usize..6) {
        let src = ProgramGen::new(seed, config(3)).program();
        let events = common::simulate(&src, &Schedule::Seeded(seed));
        let out = run(&events).unwrap();
        let store = &out.engine.state().rw;
        prop_assert_eq!(check_parallel(store, workers), check(store));
        prop_assert_eq!(check(store), out.reports);
    }
}
