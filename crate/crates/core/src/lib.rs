//! Schedule-insensitive data race detection for structured fork-join programs.
//!
//! * [`osl`]: offset-span label algebra.
//! * [`trace`]: event vocabulary, text traces and per-thread binary logs.
//! * [`engine`]: the state machine that consumes events.
//! * [`detector`]: the barrier-time race check, online and offline.
//! * [`sim`]: a small parallel-program language, scheduler and enumerator.

pub mod detector;
pub mod engine;
pub mod osl;
pub mod sim;
pub mod trace;

pub use detector::{check, check_offline, check_parallel, AccessRecord, AccessStore, RaceReport};
pub use engine::{run, Engine, EngineOptions, RunOutput, SemanticError, TransitionRecord};
pub use osl::{Label, Relation};
pub use trace::{EventKind, Mat, MutexName, TraceEvent};
