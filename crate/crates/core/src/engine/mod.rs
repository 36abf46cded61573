//! The fork-join state machine.
//!
//! The engine holds the global state (barrier counters, mutex owners, access
//! history, per-thread cursors) and the thread pool, and advances them one
//! trace event at a time. Each event fires exactly one rule; a barrier
//! completion also runs the race check over the accumulated history.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::detector::{conflicting_pairs_since, AccessRecord, AccessStore, IntervalId, RaceKey, RaceReport, ReportSet};
use crate::osl::{Label, OslError};
use crate::trace::{Addr, EventKind, Mat, MutexName, Tid, TraceEvent};

pub mod table;

pub use table::{render_table, structured_lines};

/// Barrier counter of one region: arrivals so far and team size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BarrierCount {
    pub count: u64,
    pub target: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    /// Forked, implicit task not yet begun.
    Spawned,
    Running,
    WaitAtBarrier(u64),
    Ended,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Status::Spawned => f.write_str("spawned"),
            Status::Running => f.write_str("running"),
            Status::WaitAtBarrier(b) => write!(f, "WaitAtBarrier({b})"),
            Status::Ended => f.write_str("ended"),
        }
    }
}

type TeamId = u32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThreadEntry {
    pub tid: Tid,
    pub osl: Label,
    /// Id of the last barrier this thread arrived at.
    pub bl: u64,
    /// Mutexes this thread owns.
    pub held: BTreeSet<MutexName>,
    pub status: Status,
    // Barrier completed, label not yet advanced.
    pending_cross: bool,
    team: Option<TeamId>,
}

impl ThreadEntry {
    fn root() -> Self {
        ThreadEntry {
            tid: 0,
            osl: Label::root(),
            bl: 0,
            held: BTreeSet::new(),
            status: Status::Running,
            pending_cross: false,
            team: None,
        }
    }

    pub fn view(&self) -> ThreadView {
        ThreadView {
            tid: self.tid,
            osl: self.osl.clone(),
            bl: self.bl,
            status: self.status,
        }
    }
}

/// The part of a thread entry shown in transition records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreadView {
    pub tid: Tid,
    pub osl: Label,
    pub bl: u64,
    pub status: Status,
}

impl fmt::Display for ThreadView {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "⟨{}, {}, {}⟩", self.tid, self.osl, self.bl)
    }
}

#[derive(Debug, Clone)]
struct Team {
    parent: ThreadEntry,
    members: Vec<Tid>,
    barriers: u64,
}

/// Per-thread program position: how many events each thread has fired.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sigma {
    pub cursors: BTreeMap<Tid, u64>,
    pub last_seq: Option<u64>,
}

#[derive(Debug, Clone, Default)]
pub struct GlobalState {
    pub bm: BTreeMap<Label, BarrierCount>,
    pub m: BTreeMap<MutexName, Tid>,
    pub rw: AccessStore,
    pub sigma: Sigma,
}

/// Which rule fired.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Rule {
    ParallelBegin { team_size: u32 },
    ParallelEnd { team_size: u32 },
    ImplicitTaskBegin,
    ImplicitTaskEnd,
    LoadStore { addr: Addr, mat: Mat },
    AcquireMutex { name: MutexName },
    ReleaseMutex { name: MutexName },
    /// Arrival at a barrier that is not yet full.
    BarrierWait { bid: u64 },
    /// Last arrival: the barrier completes and the race check runs.
    BarrierComplete { bid: u64 },
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::ParallelBegin { team_size } => write!(f, "ParBegin({team_size})"),
            Rule::ParallelEnd { team_size } => write!(f, "ParEnd({team_size})"),
            Rule::ImplicitTaskBegin => f.write_str("ImplicitTaskBegin()"),
            Rule::ImplicitTaskEnd => f.write_str("ImplicitTaskEnd()"),
            Rule::LoadStore { addr, mat } => write!(f, "LoadStore({addr}, {mat})"),
            Rule::AcquireMutex { name } => write!(f, "AcquireMutex({name})"),
            Rule::ReleaseMutex { name } => write!(f, "ReleaseMutex({name})"),
            Rule::BarrierWait { bid } | Rule::BarrierComplete { bid } => write!(f, "Barrier({bid})"),
        }
    }
}

/// Entries of the "next state" column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "next", rename_all = "snake_case")]
pub enum NextState {
    Event { event: String },
    WaitAtBarrier { bid: u64 },
    RaceFail { addr: Addr, t1: Tid, t2: Tid },
}

impl fmt::Display for NextState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NextState::Event { event } => f.write_str(event),
            NextState::WaitAtBarrier { bid } => write!(f, "WaitAtBarrier({bid})"),
            NextState::RaceFail { addr, t1, t2 } => write!(f, "RaceFail(σ, {addr}, {t1}, {t2})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BmEntry {
    pub region: Label,
    pub count: u64,
    pub target: u64,
}

/// One fired rule and the state right after it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub step: usize,
    pub seq: u64,
    pub tid: Tid,
    /// Label of the firing thread before the step.
    pub osl: Label,
    pub rule: Rule,
    pub bm: Vec<BmEntry>,
    pub m: Vec<(MutexName, Tid)>,
    /// Access appended to rw by this step, if any.
    pub rw_added: Option<AccessRecord>,
    pub tp: Vec<ThreadView>,
    pub next: Vec<NextState>,
    /// Reports first raised by this step.
    pub races: Vec<RaceReport>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Violation {
    #[error("thread {0} is not in the thread pool")]
    UnknownThread(Tid),
    #[error("thread {tid} cannot fire this event while {status}")]
    NotEnabled { tid: Tid, status: Status },
    #[error("sequence number {seq} does not follow {prev}")]
    SeqNotIncreasing { prev: u64, seq: u64 },
    #[error("mutex {name} is held by thread {owner} (AcquireMutex requires m[name] = ∅)")]
    MutexHeld { name: MutexName, owner: Tid },
    #[error("mutex {name} is not held by the releasing thread (owner {owner:?})")]
    NotOwner { name: MutexName, owner: Option<Tid> },
    #[error("thread {0} holds mutexes {1:?}")]
    HoldsMutexes(Tid, Vec<MutexName>),
    #[error("team size must be at least 1")]
    EmptyTeam,
    #[error("thread {0} is not inside a parallel region")]
    NotInRegion(Tid),
    #[error("thread {0} is not the master of its team")]
    NotMaster(Tid),
    #[error("ParallelEnd({got}) for a team of {expected}")]
    TeamSize { expected: u32, got: u32 },
    #[error("team members {0:?} have not ended their implicit tasks")]
    TeamNotEnded(Vec<Tid>),
    #[error("barrier {got} completes while thread {tid} waits at barrier {expected}")]
    BarrierMismatch { tid: Tid, expected: u64, got: u64 },
    #[error("label error: {0}")]
    Label(#[from] OslError),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("step {step} (seq {seq}, thread {tid}, {event}): {violation}")]
pub struct SemanticError {
    pub step: usize,
    pub seq: u64,
    pub tid: Tid,
    pub event: EventKind,
    pub violation: Violation,
}

#[derive(Debug, Clone, Copy)]
pub struct EngineOptions {
    pub race_check: bool,
    pub record_transitions: bool,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            race_check: true,
            record_transitions: true,
        }
    }
}

/// What one step did.
#[derive(Debug, Clone)]
pub struct Step {
    pub rule: Rule,
    pub record: Option<TransitionRecord>,
    pub races: Vec<RaceReport>,
}

#[derive(Debug, Clone)]
pub struct Engine {
    state: GlobalState,
    tp: BTreeMap<Tid, ThreadEntry>,
    teams: BTreeMap<TeamId, Team>,
    next_team: TeamId,
    next_tid: Tid,
    steps: usize,
    reports: ReportSet,
    checked: BTreeMap<Tid, usize>,
    options: EngineOptions,
}

impl Default for Engine {
    fn default() -> Self {
        Self::new()
    }
}

impl Engine {
    /// Initial state: thread 0 with label `[0,1]`, everything else empty.
    pub fn new() -> Self {
        Self::with_options(EngineOptions::default())
    }

    pub fn with_options(options: EngineOptions) -> Self {
        let mut tp = BTreeMap::new();
        tp.insert(0, ThreadEntry::root());
        Engine {
            state: GlobalState::default(),
            tp,
            teams: BTreeMap::new(),
            next_team: 0,
            next_tid: 1,
            steps: 0,
            reports: ReportSet::new(),
            checked: BTreeMap::new(),
            options,
        }
    }

    pub fn state(&self) -> &GlobalState {
        &self.state
    }

    pub fn thread(&self, tid: Tid) -> Option<&ThreadEntry> {
        self.tp.get(&tid)
    }

    pub fn thread_pool(&self) -> impl Iterator<Item = &ThreadEntry> {
        self.tp.values()
    }

    pub fn tp_view(&self) -> Vec<ThreadView> {
        self.tp.values().map(ThreadEntry::view).collect()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Per-thread history lengths at the last barrier completion.
    pub fn checked_watermark(&self) -> &BTreeMap<Tid, usize> {
        &self.checked
    }

    /// All reports raised so far, deduplicated and in canonical order.
    pub fn reports(&self) -> Vec<RaceReport> {
        self.reports.reports()
    }

    pub fn bm_view(&self) -> Vec<BmEntry> {
        self.state
            .bm
            .iter()
            .map(|(k, v)| BmEntry {
                region: k.clone(),
                count: v.count,
                target: v.target,
            })
            .collect()
    }

    /// Fire the rule enabled by `event`.
    pub fn step(&mut self, event: &TraceEvent) -> Result<Step, SemanticError> {
        let fail = |steps: usize, violation| SemanticError {
            step: steps + 1,
            seq: event.seq,
            tid: event.tid,
            event: event.kind.clone(),
            violation,
        };
        if let Some(prev) = self.state.sigma.last_seq {
            if event.seq <= prev {
                return Err(fail(
                    self.steps,
                    Violation::SeqNotIncreasing {
                        prev,
                        seq: event.seq,
                    },
                ));
            }
        }
        let osl_before = self
            .tp
            .get(&event.tid)
            .map(|e| e.osl.clone())
            .ok_or_else(|| fail(self.steps, Violation::UnknownThread(event.tid)))?;
        let (rule, added, new_keys) = self
            .dispatch(event)
            .map_err(|v| fail(self.steps, v))?;

        self.steps += 1;
        *self.state.sigma.cursors.entry(event.tid).or_insert(0) += 1;
        self.state.sigma.last_seq = Some(event.seq);

        let races: Vec<RaceReport> = new_keys
            .iter()
            .filter_map(|k| self.reports.get(k).cloned())
            .collect();
        let record = self.options.record_transitions.then(|| {
            let mut next = Vec::new();
            if let Some(Status::WaitAtBarrier(bid)) = self.tp.get(&event.tid).map(|e| e.status) {
                next.push(NextState::WaitAtBarrier { bid });
            }
            for r in &races {
                next.push(NextState::RaceFail {
                    addr: r.addr,
                    t1: r.first.tid,
                    t2: r.second.tid,
                });
            }
            TransitionRecord {
                step: self.steps,
                seq: event.seq,
                tid: event.tid,
                osl: osl_before,
                rule: rule.clone(),
                bm: self.bm_view(),
                m: self.state.m.iter().map(|(k, v)| (k.clone(), *v)).collect(),
                rw_added: added,
                tp: self.tp_view(),
                next,
                races: races.clone(),
            }
        });
        Ok(Step { rule, record, races })
    }

    fn entry_mut(&mut self, tid: Tid) -> Result<&mut ThreadEntry, Violation> {
        self.tp.get_mut(&tid).ok_or(Violation::UnknownThread(tid))
    }

    /// Running thread about to do work: apply any pending barrier crossing.
    fn running(&mut self, tid: Tid) -> Result<&mut ThreadEntry, Violation> {
        let e = self.entry_mut(tid)?;
        if e.status != Status::Running {
            return Err(Violation::NotEnabled { tid, status: e.status });
        }
        if e.pending_cross {
            e.osl = e.osl.cross_barrier()?;
            e.pending_cross = false;
        }
        Ok(e)
    }

    #[allow(clippy::type_complexity)]
    fn dispatch(
        &mut self,
        event: &TraceEvent,
    ) -> Result<(Rule, Option<AccessRecord>, Vec<RaceKey>), Violation> {
        let tid = event.tid;
        let mut added = None;
        let mut new_keys = Vec::new();
        let rule = match &event.kind {
            EventKind::ParallelBegin { team_size } => {
                self.on_parallel_begin(tid, *team_size)?;
                Rule::ParallelBegin { team_size: *team_size }
            }
            EventKind::ParallelEnd { team_size } => {
                self.on_parallel_end(tid, *team_size)?;
                Rule::ParallelEnd { team_size: *team_size }
            }
            EventKind::ImplicitTaskBegin => {
                let e = self.entry_mut(tid)?;
                if e.status != Status::Spawned {
                    return Err(Violation::NotEnabled { tid, status: e.status });
                }
                e.status = Status::Running;
                Rule::ImplicitTaskBegin
            }
            EventKind::ImplicitTaskEnd => {
                let e = self.entry_mut(tid)?;
                if e.status != Status::Running {
                    return Err(Violation::NotEnabled { tid, status: e.status });
                }
                if e.team.is_none() {
                    return Err(Violation::NotInRegion(tid));
                }
                if !e.held.is_empty() {
                    return Err(Violation::HoldsMutexes(tid, e.held.iter().cloned().collect()));
                }
                e.status = Status::Ended;
                e.pending_cross = false;
                Rule::ImplicitTaskEnd
            }
            EventKind::LoadStore { addr, mat } => {
                let rec = self.on_loadstore(tid, *addr, *mat)?;
                added = Some(rec);
                Rule::LoadStore { addr: *addr, mat: *mat }
            }
            EventKind::AcquireMutex { name } => {
                self.running(tid)?;
                if let Some(&owner) = self.state.m.get(name) {
                    return Err(Violation::MutexHeld {
                        name: name.clone(),
                        owner,
                    });
                }
                self.state.m.insert(name.clone(), tid);
                self.entry_mut(tid)?.held.insert(name.clone());
                Rule::AcquireMutex { name: name.clone() }
            }
            EventKind::ReleaseMutex { name } => {
                self.running(tid)?;
                let owner = self.state.m.get(name).copied();
                if owner != Some(tid) {
                    return Err(Violation::NotOwner {
                        name: name.clone(),
                        owner,
                    });
                }
                self.state.m.remove(name);
                self.entry_mut(tid)?.held.remove(name);
                Rule::ReleaseMutex { name: name.clone() }
            }
            EventKind::Barrier { bid } => {
                if self.on_barrier(tid, *bid)? {
                    new_keys = self.barrier_check();
                    Rule::BarrierComplete { bid: *bid }
                } else {
                    Rule::BarrierWait { bid: *bid }
                }
            }
        };
        Ok((rule, added, new_keys))
    }

    fn on_parallel_begin(&mut self, tid: Tid, n: u32) -> Result<(), Violation> {
        if n == 0 {
            return Err(Violation::EmptyTeam);
        }
        let parent = self.running(tid)?.clone();
        if !parent.held.is_empty() {
            return Err(Violation::HoldsMutexes(tid, parent.held.iter().cloned().collect()));
        }
        let team_id = self.next_team;
        self.next_team += 1;
        let mut members = Vec::with_capacity(n as usize);
        for rank in 0..n {
            let child_tid = if rank == 0 {
                tid
            } else {
                let t = self.next_tid;
                self.next_tid += 1;
                t
            };
            members.push(child_tid);
            self.tp.insert(
                child_tid,
                ThreadEntry {
                    tid: child_tid,
                    osl: parent.osl.fork_child(u64::from(rank), u64::from(n))?,
                    bl: parent.bl,
                    held: BTreeSet::new(),
                    status: Status::Spawned,
                    pending_cross: false,
                    team: Some(team_id),
                },
            );
        }
        self.state.bm.insert(
            parent.osl.clone(),
            BarrierCount {
                count: 0,
                target: u64::from(n),
            },
        );
        self.teams.insert(
            team_id,
            Team {
                parent,
                members,
                barriers: 0,
            },
        );
        Ok(())
    }

    fn on_parallel_end(&mut self, tid: Tid, n: u32) -> Result<(), Violation> {
        let e = self.entry_mut(tid)?;
        let team_id = e.team.ok_or(Violation::NotInRegion(tid))?;
        if e.status != Status::Ended {
            return Err(Violation::NotEnabled { tid, status: e.status });
        }
        let team = &self.teams[&team_id];
        if team.members[0] != tid {
            return Err(Violation::NotMaster(tid));
        }
        let expected = team.members.len() as u32;
        if expected != n {
            return Err(Violation::TeamSize { expected, got: n });
        }
        let not_ended: Vec<Tid> = team
            .members
            .iter()
            .copied()
            .filter(|t| self.tp[t].status != Status::Ended)
            .collect();
        if !not_ended.is_empty() {
            return Err(Violation::TeamNotEnded(not_ended));
        }
        let team = self.teams.remove(&team_id).unwrap();
        // Members may disagree on how many barriers they crossed if the region
        // ended without a final barrier; join from the furthest one.
        let mut furthest: Option<Label> = None;
        for t in &team.members {
            let member = self.tp.remove(t).unwrap();
            self.state.bm.remove(&member.osl.most());
            if furthest.as_ref().is_none_or(|f| member.osl > *f) {
                furthest = Some(member.osl);
            }
        }
        self.state.bm.remove(&team.parent.osl);
        let mut parent = team.parent;
        parent.osl = furthest.expect("team has members").join()?;
        parent.status = Status::Running;
        self.tp.insert(parent.tid, parent);
        Ok(())
    }

    fn on_loadstore(&mut self, tid: Tid, addr: Addr, mat: Mat) -> Result<AccessRecord, Violation> {
        let e = self.running(tid)?.clone();
        let count = e.team.map(|t| self.teams[&t].barriers).unwrap_or(0);
        let rec = AccessRecord {
            tid,
            index: 0,
            interval: IntervalId {
                region: e.osl.most(),
                count,
            },
            osl: e.osl,
            addr,
            mat,
            mutexes: e.held,
        };
        Ok(self.state.rw.push(rec).clone())
    }

    /// Returns true when this arrival completes the barrier.
    fn on_barrier(&mut self, tid: Tid, bid: u64) -> Result<bool, Violation> {
        let e = self.running(tid)?;
        let team_id = e.team.ok_or(Violation::NotInRegion(tid))?;
        let key = e.osl.most();
        let span = e.osl.last().map(|p| p.span).unwrap_or(1);
        let counter = self.state.bm.entry(key.clone()).or_insert(BarrierCount {
            count: 0,
            target: span,
        });
        if counter.count + 1 < counter.target {
            counter.count += 1;
            let e = self.entry_mut(tid)?;
            e.bl = bid;
            e.status = Status::WaitAtBarrier(bid);
            return Ok(false);
        }
        let members = self.teams[&team_id].members.clone();
        for t in &members {
            if *t == tid {
                continue;
            }
            match self.tp[t].status {
                Status::WaitAtBarrier(b) if b == bid => {}
                Status::WaitAtBarrier(b) => {
                    return Err(Violation::BarrierMismatch {
                        tid: *t,
                        expected: b,
                        got: bid,
                    })
                }
                status => return Err(Violation::NotEnabled { tid: *t, status }),
            }
        }
        self.state.bm.remove(&key);
        self.teams.get_mut(&team_id).unwrap().barriers += 1;
        for t in &members {
            let m = self.tp.get_mut(t).unwrap();
            m.status = Status::Running;
            m.bl = bid;
            m.pending_cross = true;
        }
        Ok(true)
    }

    fn barrier_check(&mut self) -> Vec<RaceKey> {
        let mut new_keys = Vec::new();
        if self.options.race_check {
            for (a, b) in conflicting_pairs_since(&self.state.rw, &self.checked) {
                let (ra, rb) = (self.state.rw.get(a).unwrap(), self.state.rw.get(b).unwrap());
                if let Some(k) = self.reports.add(ra, rb) {
                    new_keys.push(k);
                }
            }
        }
        self.checked = self.state.rw.watermark();
        new_keys
    }
}

/// Whether `region`'s barrier is full, i.e. the caller is the last arrival.
pub fn full(bm: &BTreeMap<Label, BarrierCount>, region: &Label) -> Result<bool, UnknownRegion> {
    let c = bm.get(region).ok_or_else(|| UnknownRegion(region.clone()))?;
    Ok(c.count + 1 == c.target)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no barrier counter for region {0}")]
pub struct UnknownRegion(pub Label);

/// Result of replaying a whole trace.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub engine: Engine,
    pub transitions: Vec<TransitionRecord>,
    pub reports: Vec<RaceReport>,
}

/// Replay `events` from the initial state.
pub fn run(events: &[TraceEvent]) -> Result<RunOutput, SemanticError> {
    run_with(events, EngineOptions::default())
}

pub fn run_with(events: &[TraceEvent], options: EngineOptions) -> Result<RunOutput, SemanticError> {
    let mut engine = Engine::with_options(options);
    // Index of each event's successor in the same thread, for the next-state column.
    let mut next_of = vec![None; events.len()];
    let mut last: BTreeMap<Tid, usize> = BTreeMap::new();
    for (i, ev) in events.iter().enumerate() {
        if let Some(p) = last.insert(ev.tid, i) {
            next_of[p] = Some(i);
        }
    }
    let mut transitions = Vec::new();
    for (i, ev) in events.iter().enumerate() {
        let step = engine.step(ev)?;
        if let Some(mut rec) = step.record {
            if rec.races.is_empty() {
                if let Some(n) = next_of[i] {
                    rec.next.push(NextState::Event {
                        event: events[n].kind.to_string(),
                    });
                }
            }
            transitions.push(rec);
        }
    }
    let reports = engine.reports();
    Ok(RunOutput {
        engine,
        transitions,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::read_text_trace;

    fn trace(text: &str) -> Vec<TraceEvent> {
        read_text_trace(text.as_bytes()).unwrap()
    }

    fn l(s: &str) -> Label {
        s.parse().unwrap()
    }

    #[test]
    fn parallel_begin_spawns_team() {
        let mut e = Engine::new();
        e.step(&TraceEvent::new(1, 0, EventKind::ParallelBegin { team_size: 2 })).unwrap();
        assert_eq!(
            e.bm_view(),
            vec![BmEntry {
                region: l("[0,1]"),
                count: 0,
                target: 2
            }]
        );
        let tp: Vec<(Tid, String, u64)> = e.thread_pool().map(|t| (t.tid, t.osl.to_string(), t.bl)).collect();
        assert_eq!(tp, vec![(0, "[0,1][0,2]".into(), 0), (1, "[0,1][1,2]".into(), 0)]);
    }

    #[test]
    fn acquire_of_held_mutex_is_a_violation() {
        let evs = trace(
            "1 0 par_begin 2\n2 0 task_begin\n3 1 task_begin\n4 1 acquire L\n5 0 acquire L\n",
        );
        let err = run(&evs).unwrap_err();
        assert_eq!(err.step, 5);
        assert_eq!(
            err.violation,
            Violation::MutexHeld {
                name: MutexName::named("L"),
                owner: 1
            }
        );
    }

    #[test]
    fn release_by_non_owner_is_a_violation() {
        let evs = trace("1 0 par_begin 2\n2 0 task_begin\n3 1 task_begin\n4 1 acquire L\n5 0 release L\n");
        let err = run(&evs).unwrap_err();
        assert!(matches!(err.violation, Violation::NotOwner { owner: Some(1), .. }));
    }

    #[test]
    fn barrier_from_unknown_thread() {
        let err = run(&trace("1 7 barrier 1\n")).unwrap_err();
        assert_eq!(err.violation, Violation::UnknownThread(7));
        let err = run(&trace("1 0 barrier 1\n")).unwrap_err();
        assert_eq!(err.violation, Violation::NotInRegion(0));
    }

    #[test]
    fn early_parallel_end_is_a_violation() {
        let evs = trace(
            "1 0 par_begin 2\n2 0 task_begin\n3 1 task_begin\n4 0 barrier 1\n5 1 barrier 1\n6 0 task_end\n7 0 par_end 2\n",
        );
        let err = run(&evs).unwrap_err();
        assert_eq!(err.violation, Violation::TeamNotEnded(vec![1]));
    }

    #[test]
    fn waiting_thread_cannot_proceed() {
        let evs = trace("1 0 par_begin 2\n2 0 task_begin\n3 0 barrier 1\n4 0 loadstore 8 W\n");
        let err = run(&evs).unwrap_err();
        assert_eq!(
            err.violation,
            Violation::NotEnabled {
                tid: 0,
                status: Status::WaitAtBarrier(1)
            }
        );
    }

    #[test]
    fn full_predicate() {
        let mut bm = BTreeMap::new();
        bm.insert(l("[0,1]"), BarrierCount { count: 1, target: 2 });
        assert_eq!(full(&bm, &l("[0,1]")), Ok(true));
        bm.insert(l("[0,1]"), BarrierCount { count: 0, target: 2 });
        assert_eq!(full(&bm, &l("[0,1]")), Ok(false));
        bm.insert(l("[0,1]"), BarrierCount { count: 3, target: 4 });
        assert_eq!(full(&bm, &l("[0,1]")), Ok(true));
        assert!(full(&bm, &l("[1,1]")).is_err());
    }

    #[test]
    fn readers_only_is_clean() {
        let evs = trace(
            "1 0 par_begin 2\n2 0 task_begin\n3 1 task_begin\n4 0 loadstore 7 R\n5 1 loadstore 7 R\n\
             6 0 barrier 1\n7 1 barrier 1\n8 1 task_end\n9 0 task_end\n10 0 par_end 2\n",
        );
        let out = run(&evs).unwrap();
        assert!(out.reports.is_empty());
        assert_eq!(out.transitions.len(), 10);
        let root = out.engine.thread(0).unwrap();
        assert_eq!(root.osl, l("[1,1]"));
        assert_eq!(out.engine.thread_pool().count(), 1);
        assert!(out.engine.state().bm.is_empty());
    }

    #[test]
    fn accesses_after_a_barrier_use_crossed_labels() {
        let evs = trace(
            "1 0 par_begin 2\n2 0 task_begin\n3 1 task_begin\n4 0 loadstore 7 W\n\
             5 0 barrier 1\n6 1 barrier 1\n7 1 loadstore 7 W\n8 0 barrier 2\n9 1 barrier 2\n\
             10 1 task_end\n11 0 task_end\n12 0 par_end 2\n",
        );
        let out = run(&evs).unwrap();
        assert!(out.reports.is_empty());
        let rw = &out.engine.state().rw;
        assert_eq!(rw.thread(1)[0].osl, l("[1,1][1,2]"));
        assert_eq!(rw.thread(1)[0].interval.count, 1);
        // One barrier materialized before the second; the final one was not.
        assert_eq!(out.engine.thread(0).unwrap().osl, l("[2,1]"));
    }

    #[test]
    fn thread_count_changes_only_at_fork_and_join() {
        let evs = trace(
            "1 0 par_begin 3\n2 0 task_begin\n3 1 task_begin\n4 2 task_begin\n5 2 barrier 1\n6 1 barrier 1\n\
             7 0 barrier 1\n8 0 task_end\n9 2 task_end\n10 1 task_end\n11 0 par_end 3\n",
        );
        let mut e = Engine::new();
        let mut sizes = vec![];
        for ev in &evs {
            let before = e.thread_pool().count();
            let step = e.step(ev).unwrap();
            let after = e.thread_pool().count();
            match step.rule {
                Rule::ParallelBegin { team_size } => assert_eq!(after, before + team_size as usize - 1),
                Rule::ParallelEnd { team_size } => assert_eq!(after + team_size as usize - 1, before),
                _ => assert_eq!(after, before),
            }
            sizes.push(after);
        }
        assert_eq!(sizes.first(), Some(&3));
        assert_eq!(sizes.last(), Some(&1));
    }
}
