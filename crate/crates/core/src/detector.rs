//! Barrier-time race check over the access history.
//!
//! Two accesses race when they come from different threads, touch the same
//! address, at least one writes, no mutex is held across both, and they are
//! concurrent: either recorded in the same barrier interval of the same
//! region, or their offset-span labels are unordered.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{Engine, EngineOptions, SemanticError};
use crate::osl::{Label, Relation};
use crate::trace::{merge_logs, read_log_dir, Addr, Mat, MutexName, Tid, TraceError};

/// A barrier interval: the region the access was made in and how many
/// barriers that region's team had completed at the time.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IntervalId {
    pub region: Label,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AccessRecord {
    pub tid: Tid,
    /// Position among this thread's accesses.
    pub index: usize,
    pub osl: Label,
    pub interval: IntervalId,
    pub addr: Addr,
    pub mat: Mat,
    pub mutexes: BTreeSet<MutexName>,
}

impl AccessRecord {
    /// Interval rendering used in transition tables: the access label
    /// followed by the interval count, e.g. `[0,1][0,2][0]`.
    pub fn interval_text(&self) -> String {
        format!("{}[{}]", self.osl, self.interval.count)
    }

    pub fn mutex_text(&self) -> String {
        if self.mutexes.is_empty() {
            return "∅".to_string();
        }
        let names: Vec<String> = self.mutexes.iter().map(|m| m.to_string()).collect();
        format!("{{{}}}", names.join(","))
    }

    pub fn access_ref(&self) -> AccessRef {
        AccessRef {
            tid: self.tid,
            index: self.index,
        }
    }

    fn witness_key(&self) -> (&Label, usize) {
        (&self.osl, self.index)
    }
}

impl fmt::Display for AccessRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "⟨{}, {}, {}, {}, {}, {}⟩",
            self.tid,
            self.osl,
            self.interval_text(),
            self.addr,
            self.mat,
            self.mutex_text()
        )
    }
}

/// Identity of one access: thread and per-thread index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AccessRef {
    pub tid: Tid,
    pub index: usize,
}

/// Per-thread, append-only access history.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AccessStore {
    per_tid: BTreeMap<Tid, Vec<AccessRecord>>,
}

impl AccessStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append an access; its `index` is assigned here.
    pub fn push(&mut self, mut record: AccessRecord) -> &AccessRecord {
        let list = self.per_tid.entry(record.tid).or_default();
        record.index = list.len();
        list.push(record);
        list.last().unwrap()
    }

    pub fn thread(&self, tid: Tid) -> &[AccessRecord] {
        self.per_tid.get(&tid).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn get(&self, r: AccessRef) -> Option<&AccessRecord> {
        self.per_tid.get(&r.tid)?.get(r.index)
    }

    pub fn tids(&self) -> impl Iterator<Item = Tid> + '_ {
        self.per_tid.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &AccessRecord> {
        self.per_tid.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.per_tid.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Current length of every thread's history.
    pub fn watermark(&self) -> BTreeMap<Tid, usize> {
        self.per_tid.iter().map(|(t, v)| (*t, v.len())).collect()
    }

    /// The store restricted to the first `mark[tid]` records of each thread.
    pub fn prefix(&self, mark: &BTreeMap<Tid, usize>) -> AccessStore {
        let per_tid = self
            .per_tid
            .iter()
            .filter_map(|(t, v)| {
                let n = mark.get(t).copied().unwrap_or(0).min(v.len());
                (n > 0).then(|| (*t, v[..n].to_vec()))
            })
            .collect();
        AccessStore { per_tid }
    }
}

/// Which concurrency test held for a racing pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Concurrency {
    SameInterval,
    LabelsConcurrent,
    Both,
}

impl fmt::Display for Concurrency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Concurrency::SameInterval => "same barrier interval",
            Concurrency::LabelsConcurrent => "concurrent labels",
            Concurrency::Both => "same barrier interval, concurrent labels",
        })
    }
}

/// Concurrency of two accesses by different threads, if any.
pub fn concurrency(a: &AccessRecord, b: &AccessRecord) -> Option<Concurrency> {
    let same = a.interval == b.interval;
    // Equal labels never occur for distinct threads; treat them as ordered.
    let unordered = matches!(a.osl.compare(&b.osl), Ok(Relation::Concurrent));
    match (same, unordered) {
        (true, true) => Some(Concurrency::Both),
        (true, false) => Some(Concurrency::SameInterval),
        (false, true) => Some(Concurrency::LabelsConcurrent),
        (false, false) => None,
    }
}

fn conflicting_access(a: &AccessRecord, b: &AccessRecord) -> bool {
    a.tid != b.tid
        && a.addr == b.addr
        && (a.mat == Mat::W || b.mat == Mat::W)
        && a.mutexes.is_disjoint(&b.mutexes)
}

pub fn conflicting(a: &AccessRecord, b: &AccessRecord) -> bool {
    conflicting_access(a, b) && concurrency(a, b).is_some()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub concurrency: Concurrency,
    /// Both locksets, shown to witness their empty intersection.
    pub first_locks: BTreeSet<MutexName>,
    pub second_locks: BTreeSet<MutexName>,
}

/// A race on `addr` between two threads.
///
/// One report is produced per address and thread pair; `first`/`second`
/// is a canonical witness pair and `pairs` counts every conflicting access
/// pair between the two threads on this address.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaceReport {
    pub addr: Addr,
    pub first: AccessRecord,
    pub second: AccessRecord,
    pub evidence: Evidence,
    pub pairs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RaceKey {
    pub addr: Addr,
    pub tids: (Tid, Tid),
}

/// Report identity that does not depend on how thread ids were assigned.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ReportSignature {
    pub addr: Addr,
    pub accesses: [(Label, usize, Mat); 2],
    pub pairs: usize,
}

impl RaceReport {
    pub fn key(&self) -> RaceKey {
        RaceKey {
            addr: self.addr,
            tids: (self.first.tid, self.second.tid),
        }
    }

    pub fn signature(&self) -> ReportSignature {
        let mut acc = [
            (self.first.osl.clone(), self.first.index, self.first.mat),
            (self.second.osl.clone(), self.second.index, self.second.mat),
        ];
        acc.sort();
        ReportSignature {
            addr: self.addr,
            accesses: acc,
            pairs: self.pairs,
        }
    }

    fn sort_key(&self) -> (Addr, Tid, Tid, usize, usize) {
        (
            self.addr,
            self.first.tid,
            self.second.tid,
            self.first.index,
            self.second.index,
        )
    }
}

impl fmt::Display for RaceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "race on address {} between threads {} and {} ({} conflicting access pair{})",
            self.addr,
            self.first.tid,
            self.second.tid,
            self.pairs,
            if self.pairs == 1 { "" } else { "s" }
        )?;
        for rec in [&self.first, &self.second] {
            writeln!(
                f,
                "  tid {} osl {} interval {} {} mutexes {}",
                rec.tid,
                rec.osl,
                rec.interval_text(),
                rec.mat,
                rec.mutex_text()
            )?;
        }
        write!(f, "  evidence: {}, disjoint locksets", self.evidence.concurrency)
    }
}

/// Accumulates conflicting pairs into one report per address and thread pair.
#[derive(Debug, Clone, Default)]
pub struct ReportSet {
    reports: BTreeMap<RaceKey, RaceReport>,
}

impl ReportSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record a conflicting pair. Returns the key if it is a new report.
    pub fn add(&mut self, a: &AccessRecord, b: &AccessRecord) -> Option<RaceKey> {
        let (first, second) = if a.tid < b.tid { (a, b) } else { (b, a) };
        let key = RaceKey {
            addr: first.addr,
            tids: (first.tid, second.tid),
        };
        let witness = ordered_keys(first, second);
        match self.reports.get_mut(&key) {
            Some(rep) => {
                rep.pairs += 1;
                if witness < ordered_keys(&rep.first, &rep.second) {
                    rep.first = first.clone();
                    rep.second = second.clone();
                    rep.evidence = evidence(first, second);
                }
                None
            }
            None => {
                self.reports.insert(
                    key,
                    RaceReport {
                        addr: first.addr,
                        first: first.clone(),
                        second: second.clone(),
                        evidence: evidence(first, second),
                        pairs: 1,
                    },
                );
                Some(key)
            }
        }
    }

    pub fn get(&self, key: &RaceKey) -> Option<&RaceReport> {
        self.reports.get(key)
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    /// Reports in canonical order.
    pub fn into_reports(self) -> Vec<RaceReport> {
        let mut v: Vec<RaceReport> = self.reports.into_values().collect();
        v.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        v
    }

    pub fn reports(&self) -> Vec<RaceReport> {
        self.clone().into_reports()
    }
}

fn ordered_keys<'a>(a: &'a AccessRecord, b: &'a AccessRecord) -> ((&'a Label, usize), (&'a Label, usize)) {
    let (ka, kb) = (a.witness_key(), b.witness_key());
    if ka <= kb {
        (ka, kb)
    } else {
        (kb, ka)
    }
}

fn evidence(a: &AccessRecord, b: &AccessRecord) -> Evidence {
    Evidence {
        concurrency: concurrency(a, b).expect("witness pair is concurrent"),
        first_locks: a.mutexes.clone(),
        second_locks: b.mutexes.clone(),
    }
}

/// Runs of consecutive accesses sharing label and interval.
fn segments(records: &[AccessRecord]) -> Vec<&[AccessRecord]> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=records.len() {
        if i == records.len()
            || records[i].osl != records[start].osl
            || records[i].interval != records[start].interval
        {
            if i > start {
                out.push(&records[start..i]);
            }
            start = i;
        }
    }
    out
}

fn pairs_between(
    xs: &[AccessRecord],
    ys: &[AccessRecord],
    old: (usize, usize),
    out: &mut Vec<(AccessRef, AccessRef)>,
) {
    let (sx, sy) = (segments(xs), segments(ys));
    for a_seg in &sx {
        let a0 = &a_seg[0];
        let a_new = a_seg.last().unwrap().index >= old.0;
        for b_seg in &sy {
            let b_new = b_seg.last().unwrap().index >= old.1;
            if !a_new && !b_new {
                continue;
            }
            // Thread-level filter: ordered segments in different intervals
            // cannot race.
            if concurrency(a0, &b_seg[0]).is_none() {
                continue;
            }
            for a in a_seg.iter() {
                for b in b_seg.iter() {
                    if a.index < old.0 && b.index < old.1 {
                        continue;
                    }
                    if conflicting_access(a, b) {
                        out.push((a.access_ref(), b.access_ref()));
                    }
                }
            }
        }
    }
}

fn thread_pairs(store: &AccessStore) -> Vec<(Tid, Tid)> {
    let tids: Vec<Tid> = store.tids().collect();
    let mut out = Vec::new();
    for (i, &a) in tids.iter().enumerate() {
        for &b in &tids[i + 1..] {
            out.push((a, b));
        }
    }
    out
}

/// Every conflicting access pair `(lower tid, higher tid)` in the store.
pub fn conflicting_pairs(store: &AccessStore) -> Vec<(AccessRef, AccessRef)> {
    conflicting_pairs_since(store, &BTreeMap::new())
}

/// Conflicting pairs with at least one access at or past `old[tid]`.
pub fn conflicting_pairs_since(
    store: &AccessStore,
    old: &BTreeMap<Tid, usize>,
) -> Vec<(AccessRef, AccessRef)> {
    let mut out = Vec::new();
    for (a, b) in thread_pairs(store) {
        let marks = (
            old.get(&a).copied().unwrap_or(0),
            old.get(&b).copied().unwrap_or(0),
        );
        pairs_between(store.thread(a), store.thread(b), marks, &mut out);
    }
    out
}

fn collect(store: &AccessStore, pairs: &[(AccessRef, AccessRef)]) -> Vec<RaceReport> {
    let mut set = ReportSet::new();
    for (a, b) in pairs {
        set.add(store.get(*a).unwrap(), store.get(*b).unwrap());
    }
    set.into_reports()
}

/// All races in the store, one report per address and thread pair.
pub fn check(store: &AccessStore) -> Vec<RaceReport> {
    collect(store, &conflicting_pairs(store))
}

/// [`check`] with thread pairs spread over `workers` threads. The result
/// does not depend on `workers`.
pub fn check_parallel(store: &AccessStore, workers: usize) -> Vec<RaceReport> {
    let workers = workers.max(1);
    let tpairs = thread_pairs(store);
    if workers == 1 || tpairs.len() < 2 {
        return check(store);
    }
    let mut buckets: Vec<Vec<(Tid, Tid)>> = vec![Vec::new(); workers];
    for (i, p) in tpairs.into_iter().enumerate() {
        buckets[i % workers].push(p);
    }
    let mut all: Vec<(AccessRef, AccessRef)> = std::thread::scope(|s| {
        let handles: Vec<_> = buckets
            .iter()
            .map(|bucket| {
                s.spawn(move || {
                    let mut out = Vec::new();
                    for &(a, b) in bucket {
                        pairs_between(store.thread(a), store.thread(b), (0, 0), &mut out);
                    }
                    out
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("race check worker panicked"))
            .collect()
    });
    all.sort();
    collect(store, &all)
}

#[derive(Debug, thiserror::Error)]
pub enum OfflineError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Semantic(#[from] SemanticError),
}

/// Offline analysis of a per-thread log directory.
///
/// The merged events are replayed through an engine with race checking
/// disabled to rebuild labels, intervals and locksets; the history visible
/// at the last barrier completion is then checked with `workers` threads.
pub fn check_offline(log_dir: &Path, workers: usize) -> Result<Vec<RaceReport>, OfflineError> {
    let logs = read_log_dir(log_dir)?;
    let events = merge_logs(logs.into_values())?;
    let mut engine = Engine::with_options(EngineOptions {
        race_check: false,
        record_transitions: false,
    });
    for ev in &events {
        engine.step(ev)?;
    }
    let store = engine.state().rw.prefix(engine.checked_watermark());
    Ok(check_parallel(&store, workers))
}
