//! Test oracles and generators shared by the integration tests.
//!
//! Nothing here uses offset-span labels: concurrency comes from an explicit
//! fork/join/barrier graph built from the trace.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use osrace::sim::{self, Schedule};
use osrace::trace::{Addr, EventKind, Mat, MutexName, Tid, TraceEvent};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MASTER_CRITICAL: &str = include_str!("../../corpus/master_critical.ospar");
pub const NESTED_REGIONS: &str = include_str!("../../corpus/nested_regions.ospar");
pub const NOWAIT: &str = include_str!("../../corpus/nowait.ospar");
pub const NOWAIT_BARRIER: &str = include_str!("../../corpus/nowait_barrier.ospar");
pub const MASTER_CRITICAL_TRACE: &str = include_str!("../../corpus/master_critical.ostrace");
pub const CLEAN_TRACE: &str = include_str!("../../corpus/clean.ostrace");

pub fn simulate(src: &str, schedule: &Schedule) -> Vec<TraceEvent> {
    let l = sim::load(src).unwrap();
    sim::execute(&l.root, schedule).unwrap()
}

/// Happens-before graph of the fork/join/barrier structure only
/// (mutexes add no edges). Nodes are trace positions.
pub struct Dag {
    succ: Vec<Vec<usize>>,
    reach: Vec<Vec<u64>>,
}

impl Dag {
    pub fn build(events: &[TraceEvent]) -> Dag {
        let n = events.len();
        let mut succ = vec![Vec::new(); n];
        let mut last: BTreeMap<Tid, usize> = BTreeMap::new();
        // Edges into a thread's next event that are not program order.
        let mut pending: BTreeMap<Tid, Vec<usize>> = BTreeMap::new();
        // Open teams: forking thread -> stack of member lists.
        struct Team {
            members: BTreeSet<Tid>,
            arrivals: Vec<(Tid, usize)>,
            ends: Vec<usize>,
        }
        let mut teams: Vec<Team> = Vec::new();
        let mut team_of: BTreeMap<Tid, Vec<usize>> = BTreeMap::new();
        let mut next_tid: Tid = 1;
        for (i, ev) in events.iter().enumerate() {
            let t = ev.tid;
            if let Some(&p) = last.get(&t) {
                succ[p].push(i);
            }
            for p in pending.remove(&t).unwrap_or_default() {
                succ[p].push(i);
            }
            last.insert(t, i);
            match &ev.kind {
                EventKind::ParallelBegin { team_size } => {
                    let mut members = BTreeSet::from([t]);
                    for _ in 1..*team_size {
                        members.insert(next_tid);
                        pending.entry(next_tid).or_default().push(i);
                        next_tid += 1;
                    }
                    let idx = teams.len();
                    for m in &members {
                        team_of.entry(*m).or_default().push(idx);
                    }
                    teams.push(Team {
                        members,
                        arrivals: Vec::new(),
                        ends: Vec::new(),
                    });
                }
                EventKind::Barrier { .. } => {
                    let idx = *team_of[&t].last().unwrap();
                    let team = &mut teams[idx];
                    team.arrivals.push((t, i));
                    if team.arrivals.len() == team.members.len() {
                        let arrivals = std::mem::take(&mut team.arrivals);
                        for &(_, a) in &arrivals {
                            for &(m, _) in &arrivals {
                                pending.entry(m).or_default().push(a);
                            }
                        }
                    }
                }
                EventKind::ImplicitTaskEnd => {
                    let idx = *team_of[&t].last().unwrap();
                    teams[idx].ends.push(i);
                }
                EventKind::ParallelEnd { .. } => {
                    let idx = team_of.get_mut(&t).unwrap().pop().unwrap();
                    for &e in &teams[idx].ends {
                        succ[e].push(i);
                    }
                    for m in teams[idx].members.clone() {
                        if m != t {
                            team_of.get_mut(&m).unwrap().pop();
                        }
                    }
                }
                _ => {}
            }
        }
        // Transitive closure; edges always point forward in the trace.
        let words = n.div_ceil(64);
        let mut reach = vec![vec![0u64; words]; n];
        for i in (0..n).rev() {
            let mut row = vec![0u64; words];
            for &j in &succ[i] {
                row[j / 64] |= 1 << (j % 64);
                for (w, r) in row.iter_mut().zip(&reach[j]) {
                    *w |= r;
                }
            }
            reach[i] = row;
        }
        Dag { succ, reach }
    }

    pub fn reaches(&self, a: usize, b: usize) -> bool {
        self.reach[a][b / 64] >> (b % 64) & 1 == 1
    }

    pub fn concurrent(&self, a: usize, b: usize) -> bool {
        a != b && !self.reaches(a, b) && !self.reaches(b, a)
    }
}

/// A memory access located in the trace.
#[derive(Debug, Clone)]
pub struct OracleAccess {
    pub pos: usize,
    pub tid: Tid,
    /// Per-thread access index.
    pub index: usize,
    pub addr: Addr,
    pub mat: Mat,
    pub locks: BTreeSet<MutexName>,
}

pub fn accesses(events: &[TraceEvent]) -> Vec<OracleAccess> {
    let mut held: BTreeMap<Tid, BTreeSet<MutexName>> = BTreeMap::new();
    let mut counts: BTreeMap<Tid, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for (pos, ev) in events.iter().enumerate() {
        match &ev.kind {
            EventKind::AcquireMutex { name } => {
                held.entry(ev.tid).or_default().insert(name.clone());
            }
            EventKind::ReleaseMutex { name } => {
                held.entry(ev.tid).or_default().remove(name);
            }
            EventKind::LoadStore { addr, mat } => {
                let c = counts.entry(ev.tid).or_default();
                out.push(OracleAccess {
                    pos,
                    tid: ev.tid,
                    index: *c,
                    addr: *addr,
                    mat: *mat,
                    locks: held.get(&ev.tid).cloned().unwrap_or_default(),
                });
                *c += 1;
            }
            _ => {}
        }
    }
    out
}

/// Race oracle: (addr, lower tid, higher tid) -> number of conflicting pairs.
pub fn oracle_races(events: &[TraceEvent]) -> BTreeMap<(Addr, Tid, Tid), usize> {
    let dag = Dag::build(events);
    let acc = accesses(events);
    let mut out = BTreeMap::new();
    for (i, a) in acc.iter().enumerate() {
        for b in &acc[i + 1..] {
            if a.tid != b.tid
                && a.addr == b.addr
                && (a.mat == Mat::W || b.mat == Mat::W)
                && a.locks.is_disjoint(&b.locks)
                && dag.concurrent(a.pos, b.pos)
            {
                let key = (a.addr, a.tid.min(b.tid), a.tid.max(b.tid));
                *out.entry(key).or_insert(0) += 1;
            }
        }
    }
    out
}

/// Classic vector-clock happens-before detector, with release->acquire edges.
/// Returns racy (addr, lower tid, higher tid) triples for this one schedule.
pub fn hb_races(events: &[TraceEvent]) -> BTreeSet<(Addr, Tid, Tid)> {
    type Vc = BTreeMap<Tid, u64>;
    fn join(a: &mut Vc, b: &Vc) {
        for (t, c) in b {
            let e = a.entry(*t).or_insert(0);
            *e = (*e).max(*c);
        }
    }
    fn leq(a: &Vc, b: &Vc) -> bool {
        a.iter().all(|(t, c)| b.get(t).copied().unwrap_or(0) >= *c)
    }
    let mut clocks: BTreeMap<Tid, Vc> = BTreeMap::new();
    let mut lock_clock: BTreeMap<MutexName, Vc> = BTreeMap::new();
    let mut history: Vec<(Tid, Addr, Mat, Vc)> = Vec::new();
    let mut teams: Vec<(Vec<Tid>, Vec<Vc>)> = Vec::new();
    let mut team_of: BTreeMap<Tid, Vec<usize>> = BTreeMap::new();
    let mut next_tid: Tid = 1;
    let mut out = BTreeSet::new();
    for ev in events {
        let t = ev.tid;
        let vc = clocks.entry(t).or_default();
        *vc.entry(t).or_insert(0) += 1;
        let now = vc.clone();
        match &ev.kind {
            EventKind::ParallelBegin { team_size } => {
                let mut members = vec![t];
                for _ in 1..*team_size {
                    let c = next_tid;
                    next_tid += 1;
                    let mut child = now.clone();
                    child.insert(c, 1);
                    clocks.insert(c, child);
                    members.push(c);
                }
                let idx = teams.len();
                for m in &members {
                    team_of.entry(*m).or_default().push(idx);
                }
                teams.push((members, Vec::new()));
            }
            EventKind::Barrier { .. } => {
                let idx = *team_of[&t].last().unwrap();
                teams[idx].1.push(now);
                if teams[idx].1.len() == teams[idx].0.len() {
                    let mut all = Vc::new();
                    for c in std::mem::take(&mut teams[idx].1) {
                        join(&mut all, &c);
                    }
                    for m in teams[idx].0.clone() {
                        join(clocks.get_mut(&m).unwrap(), &all);
                    }
                }
            }
            EventKind::ParallelEnd { .. } => {
                let idx = team_of.get_mut(&t).unwrap().pop().unwrap();
                let mut all = Vc::new();
                for m in teams[idx].0.clone() {
                    join(&mut all, &clocks[&m]);
                    if m != t {
                        team_of.get_mut(&m).unwrap().pop();
                    }
                }
                join(clocks.get_mut(&t).unwrap(), &all);
            }
            EventKind::AcquireMutex { name } => {
                if let Some(l) = lock_clock.get(name) {
                    let l = l.clone();
                    join(clocks.get_mut(&t).unwrap(), &l);
                }
            }
            EventKind::ReleaseMutex { name } => {
                lock_clock.insert(name.clone(), now);
            }
            EventKind::LoadStore { addr, mat } => {
                for (u, a, m, c) in &history {
                    if *u != t && a == addr && (*m == Mat::W || *mat == Mat::W) && !leq(c, &now) {
                        out.insert((*addr, t.min(*u), t.max(*u)));
                    }
                }
                history.push((t, *addr, *mat, now));
            }
            _ => {}
        }
    }
    out
}

/// Random structured programs in `.ospar` syntax.
pub struct ProgramGen {
    rng: ChaCha8Rng,
    max_threads: usize,
    /// Thread ids handed out so far (the initial thread counts).
    threads: usize,
    mutexes: usize,
    vars: usize,
    arrays: bool,
    touch: usize,
    /// Emit a fresh scalar per access, for label tests.
    unique_touches: bool,
    structural: usize,
    max_structural: usize,
    max_depth: usize,
}

pub struct GenConfig {
    pub max_threads: usize,
    pub mutexes: usize,
    pub vars: usize,
    pub arrays: bool,
    pub unique_touches: bool,
    pub max_structural: usize,
    pub max_depth: usize,
}

impl ProgramGen {
    pub fn new(seed: u64, cfg: GenConfig) -> Self {
        ProgramGen {
            rng: ChaCha8Rng::seed_from_u64(seed),
            max_threads: cfg.max_threads,
            threads: 1,
            mutexes: cfg.mutexes,
            vars: cfg.vars,
            arrays: cfg.arrays,
            touch: 0,
            unique_touches: cfg.unique_touches,
            structural: 0,
            max_structural: cfg.max_structural,
            max_depth: cfg.max_depth,
        }
    }

    pub fn program(&mut self) -> String {
        let mut body = String::new();
        let regions = self.rng.random_range(1..=2);
        for _ in 0..regions {
            if self.rng.random_bool(0.3) {
                body.push_str(&self.access(None));
            }
            body.push_str(&self.parallel(0, 1));
        }
        if self.rng.random_bool(0.3) {
            body.push_str(&self.access(None));
        }
        let mut decl = String::new();
        if self.unique_touches {
            if self.touch > 0 {
                decl.push_str("(vars");
                for i in 0..self.touch {
                    decl.push_str(&format!(" v{i}"));
                }
                decl.push_str(")\n");
            }
        } else {
            decl.push_str("(vars");
            for i in 0..self.vars {
                decl.push_str(&format!(" x{i}"));
            }
            decl.push_str(")\n");
            if self.arrays {
                decl.push_str("(array a 4)\n");
            }
        }
        decl + &body
    }

    fn access(&mut self, loop_var: Option<&str>) -> String {
        let op = if self.rng.random_bool(0.5) { "write" } else { "read" };
        if self.unique_touches {
            let v = self.touch;
            self.touch += 1;
            return format!("({op} v{v})");
        }
        if let (Some(i), true) = (loop_var, self.arrays) {
            if self.rng.random_bool(0.6) {
                let idx = match self.rng.random_range(0..3) {
                    0 => i.to_string(),
                    1 => format!("(- 3 {i})"),
                    _ => format!("{}", self.rng.random_range(0..4)),
                };
                return format!("({op} (a {idx}))");
            }
        }
        format!("({op} x{})", self.rng.random_range(0..self.vars))
    }

    /// A parallel region executed by `mult` threads at once.
    fn parallel(&mut self, depth: usize, mult: usize) -> String {
        let room = (self.max_threads - self.threads) / mult;
        let size = if room == 0 { 1 } else { self.rng.random_range(1..=room.min(3) + 1) };
        self.threads += mult * (size - 1);
        self.structural += 1;
        let mut s = format!("(parallel {size}");
        let n = self.rng.random_range(1..=4);
        for _ in 0..n {
            s.push(' ');
            s.push_str(&self.stmt(depth + 1, mult * size, size, true, None, false));
        }
        s.push(')');
        s
    }

    fn stmt(&mut self, depth: usize, mult: usize, team: usize, whole_team: bool, lv: Option<&str>, in_crit: bool) -> String {
        let structural_ok = self.structural < self.max_structural;
        loop {
            match self.rng.random_range(0..10) {
                0 | 1 | 2 => return self.access(lv),
                3 if whole_team && !in_crit && structural_ok => {
                    self.structural += 1;
                    return "(barrier)".into();
                }
                4 if self.mutexes > 0 && !in_crit => {
                    let k = self.rng.random_range(0..self.mutexes);
                    let name = if k == 0 { String::new() } else { format!(" M{k}") };
                    let mut s = format!("(critical{name}");
                    for _ in 0..self.rng.random_range(1..=2) {
                        s.push(' ');
                        s.push_str(&self.access(lv));
                    }
                    s.push(')');
                    return s;
                }
                5 => {
                    let rank = self.rng.random_range(0..team);
                    let head = if rank == 0 && self.rng.random_bool(0.5) {
                        "(master".to_string()
                    } else {
                        format!("(on-rank {rank}")
                    };
                    let inner = self.stmt(depth, mult.div_ceil(team), team, false, lv, in_crit);
                    return format!("{head} {inner})");
                }
                6 if whole_team && !in_crit && lv.is_none() && structural_ok => {
                    self.structural += 1;
                    let kw = if self.rng.random_bool(0.5) { "for" } else { "for-nowait" };
                    let hi = self.rng.random_range(1..=4);
                    let mut s = format!("({kw} i 0 {hi}");
                    for _ in 0..self.rng.random_range(1..=2) {
                        s.push(' ');
                        s.push_str(&self.stmt(depth, mult, team, false, Some("i"), in_crit));
                    }
                    s.push(')');
                    return s;
                }
                7 if depth < self.max_depth && !in_crit && structural_ok && lv.is_none() => {
                    return self.parallel(depth, mult);
                }
                8 => {
                    let a = self.access(lv);
                    let b = self.access(lv);
                    return format!("(seq {a} {b})");
                }
                _ => continue,
            }
        }
    }
}

pub fn random_schedule(seed: u64) -> Schedule {
    Schedule::Seeded(seed)
}
