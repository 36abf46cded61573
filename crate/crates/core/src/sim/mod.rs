//! Program simulator: parse, lower, and run a program under a schedule.
//!
//! Threads are cursors over lowered templates. At each step the scheduler
//! picks one enabled thread and that thread emits one event. A thread is
//! enabled unless it waits at an unfilled barrier, wants a mutex someone
//! else holds, or is a master whose team has not finished yet. Thread ids are
//! handed out exactly as the engine does: rank 0 keeps the forking thread's
//! id, other ranks take fresh ids in fork order.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod lower;
pub mod program;

pub use lower::{lower, LowerError, Lowered, Op, Symbols};
pub use program::{ParseError, Pos, Program};

use crate::trace::{EventKind, MutexName, Tid, TraceEvent};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Schedule {
    /// Thread picks in order; once they run out the lowest enabled thread runs.
    Explicit(Vec<Tid>),
    /// Uniform random choice among enabled threads.
    Seeded(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScheduleError {
    #[error("step {step}: thread {tid} is not enabled (enabled: {enabled:?})")]
    InvalidPick { step: usize, tid: Tid, enabled: Vec<Tid> },
    #[error("step {step}: no thread can run; blocked threads {blocked:?}")]
    Deadlock { step: usize, blocked: Vec<Tid> },
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("parse error at {0}")]
    Parse(#[from] ParseError),
    #[error("lowering error at {0}")]
    Lower(#[from] LowerError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// Parse and lower program text.
pub fn load(src: &str) -> Result<Lowered, SimError> {
    Ok(lower(&Program::parse(src)?)?)
}

#[derive(Debug, Clone)]
struct Frame {
    ops: Arc<[Op]>,
    pc: usize,
    team: Option<usize>,
}

#[derive(Debug, Clone)]
struct SimThread {
    frames: Vec<Frame>,
    waiting: bool,
}

impl SimThread {
    fn finished(&self) -> bool {
        self.frames.len() == 1 && self.frames[0].pc == self.frames[0].ops.len()
    }
}

#[derive(Debug, Clone)]
struct SimTeam {
    members: Vec<Tid>,
    arrived: usize,
}

/// Scheduler state. Cloning it forks the simulation.
#[derive(Debug, Clone)]
pub struct Machine {
    threads: BTreeMap<Tid, SimThread>,
    teams: Vec<SimTeam>,
    mutexes: BTreeMap<MutexName, Tid>,
    next_tid: Tid,
    events: Vec<TraceEvent>,
}

impl Machine {
    pub fn new(root: Arc<[Op]>) -> Self {
        let mut threads = BTreeMap::new();
        threads.insert(
            0,
            SimThread {
                frames: vec![Frame {
                    ops: root,
                    pc: 0,
                    team: None,
                }],
                waiting: false,
            },
        );
        Machine {
            threads,
            teams: Vec::new(),
            mutexes: BTreeMap::new(),
            next_tid: 1,
            events: Vec::new(),
        }
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<TraceEvent> {
        self.events
    }

    pub fn is_finished(&self) -> bool {
        self.threads.values().all(SimThread::finished)
    }

    fn can_step(&self, t: &SimThread) -> bool {
        if t.waiting {
            return false;
        }
        let top = t.frames.last().unwrap();
        match top.ops.get(top.pc) {
            Some(Op::Acquire(name)) => !self.mutexes.contains_key(name),
            Some(_) => true,
            None if t.frames.len() >= 2 => {
                let team = &self.teams[top.team.expect("inner frames belong to a team")];
                team.members[1..].iter().all(|m| self.threads[m].finished())
            }
            None => false,
        }
    }

    /// Threads that may fire an event now, in ascending id order.
    pub fn enabled(&self) -> Vec<Tid> {
        self.threads
            .iter()
            .filter(|(_, t)| self.can_step(t))
            .map(|(id, _)| *id)
            .collect()
    }

    fn emit(&mut self, tid: Tid, kind: EventKind) {
        let seq = self.events.len() as u64 + 1;
        self.events.push(TraceEvent::new(seq, tid, kind));
    }

    /// Advance `tid` by one event. The caller must pick an enabled thread.
    fn step(&mut self, tid: Tid) {
        let t = self.threads.get_mut(&tid).unwrap();
        let top = t.frames.last_mut().unwrap();
        let Some(op) = top.ops.get(top.pc).cloned() else {
            // Master joining its finished team.
            let frame = t.frames.pop().unwrap();
            let team = &self.teams[frame.team.unwrap()];
            let size = team.members.len() as u32;
            for m in team.members[1..].to_vec() {
                self.threads.remove(&m);
            }
            self.emit(tid, EventKind::ParallelEnd { team_size: size });
            return;
        };
        top.pc += 1;
        let team_idx = top.team;
        match op {
            Op::TaskBegin => self.emit(tid, EventKind::ImplicitTaskBegin),
            Op::TaskEnd => self.emit(tid, EventKind::ImplicitTaskEnd),
            Op::Access { addr, mat } => self.emit(tid, EventKind::LoadStore { addr, mat }),
            Op::Acquire(name) => {
                self.mutexes.insert(name.clone(), tid);
                self.emit(tid, EventKind::AcquireMutex { name });
            }
            Op::Release(name) => {
                self.mutexes.remove(&name);
                self.emit(tid, EventKind::ReleaseMutex { name });
            }
            Op::Barrier(bid) => {
                let team = &mut self.teams[team_idx.expect("barriers only occur in teams")];
                team.arrived += 1;
                if team.arrived == team.members.len() {
                    team.arrived = 0;
                    for m in team.members.clone() {
                        self.threads.get_mut(&m).unwrap().waiting = false;
                    }
                } else {
                    self.threads.get_mut(&tid).unwrap().waiting = true;
                }
                self.emit(tid, EventKind::Barrier { bid });
            }
            Op::Parallel { team_size, members } => {
                let idx = self.teams.len();
                let mut ids = vec![tid];
                for _ in 1..team_size {
                    ids.push(self.next_tid);
                    self.next_tid += 1;
                }
                self.threads.get_mut(&tid).unwrap().frames.push(Frame {
                    ops: members[0].clone(),
                    pc: 0,
                    team: Some(idx),
                });
                for (rank, id) in ids.iter().enumerate().skip(1) {
                    self.threads.insert(
                        *id,
                        SimThread {
                            frames: vec![Frame {
                                ops: members[rank].clone(),
                                pc: 0,
                                team: Some(idx),
                            }],
                            waiting: false,
                        },
                    );
                }
                self.teams.push(SimTeam {
                    members: ids,
                    arrived: 0,
                });
                self.emit(tid, EventKind::ParallelBegin { team_size });
            }
        }
    }

    fn blocked(&self) -> Vec<Tid> {
        self.threads
            .iter()
            .filter(|(_, t)| !t.finished())
            .map(|(id, _)| *id)
            .collect()
    }
}

/// Run the template under `schedule` to completion.
pub fn execute(root: &Arc<[Op]>, schedule: &Schedule) -> Result<Vec<TraceEvent>, ScheduleError> {
    let mut m = Machine::new(root.clone());
    let mut rng = match schedule {
        Schedule::Seeded(seed) => Some(ChaCha8Rng::seed_from_u64(*seed)),
        Schedule::Explicit(_) => None,
    };
    let mut picks = match schedule {
        Schedule::Explicit(p) => p.iter(),
        Schedule::Seeded(_) => [].iter(),
    };
    loop {
        let enabled = m.enabled();
        let step = m.events.len() + 1;
        if enabled.is_empty() {
            if m.is_finished() {
                return Ok(m.events);
            }
            return Err(ScheduleError::Deadlock {
                step,
                blocked: m.blocked(),
            });
        }
        let tid = if let Some(rng) = rng.as_mut() {
            *enabled.choose(rng).unwrap()
        } else if let Some(&p) = picks.next() {
            if !enabled.contains(&p) {
                return Err(ScheduleError::InvalidPick { step, tid: p, enabled });
            }
            p
        } else {
            enabled[0]
        };
        m.step(tid);
    }
}

/// One maximal interleaving: the thread picked at each step and the trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interleaving {
    pub picks: Vec<Tid>,
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Clone)]
pub struct Enumeration {
    pub interleavings: Vec<Interleaving>,
    /// True when the bound stopped the search early.
    pub truncated: bool,
}

/// Depth-first enumeration of distinct maximal interleavings, at most `bound`.
/// Choices are explored in ascending thread id order.
pub fn enumerate(root: &Arc<[Op]>, bound: usize) -> Result<Enumeration, ScheduleError> {
    let mut out = Vec::new();
    let mut stack = vec![(Machine::new(root.clone()), Vec::new())];
    while let Some((m, picks)) = stack.pop() {
        let enabled = m.enabled();
        if enabled.is_empty() {
            if !m.is_finished() {
                return Err(ScheduleError::Deadlock {
                    step: m.events.len() + 1,
                    blocked: m.blocked(),
                });
            }
            if out.len() == bound {
                return Ok(Enumeration {
                    interleavings: out,
                    truncated: true,
                });
            }
            out.push(Interleaving {
                picks,
                events: m.events,
            });
            continue;
        }
        for &tid in enabled.iter().rev() {
            let mut next = m.clone();
            next.step(tid);
            let mut p = picks.clone();
            p.push(tid);
            stack.push((next, p));
        }
    }
    Ok(Enumeration {
        interleavings: out,
        truncated: false,
    })
}
