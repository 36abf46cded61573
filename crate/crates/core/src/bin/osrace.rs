//! `osrace`: analyze traces, simulate programs, enumerate schedules, dump logs.
//!
//! Exit status: 0 clean, 1 races found, 2 usage or parse error,
//! 3 semantic violation, 4 corrupt log.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use osrace::detector::{check_offline, OfflineError, RaceReport, ReportSignature};
use osrace::engine::{render_table, run, structured_lines, SemanticError, TransitionRecord};
use osrace::sim::{self, Schedule, SimError, Symbols};
use osrace::trace::{self, log, Codec, LogReader, TraceError, TraceEvent};

const CLEAN: u8 = 0;
const RACES: u8 = 1;
const USAGE: u8 = 2;
const SEMANTIC: u8 = 3;
const CORRUPT: u8 = 4;

#[derive(Parser)]
#[command(name = "osrace", version, about = "Schedule-insensitive race detection for fork-join traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
enum Format {
    #[default]
    Human,
    Structured,
}

#[derive(Args)]
struct Output {
    /// Output format.
    #[arg(long, value_enum, default_value_t)]
    format: Format,
    /// Also print the transition log.
    #[arg(long)]
    transitions: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze a `.ostrace` file or an `.oslog/` directory.
    Analyze {
        path: PathBuf,
        /// Replay per-thread logs headless and check the history afterwards.
        #[arg(long)]
        offline: bool,
        /// Worker threads for the offline check.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
        workers: u32,
        #[command(flatten)]
        output: Output,
    },
    /// Run a `.ospar` program under one schedule, or enumerate schedules.
    Simulate {
        program: PathBuf,
        #[command(flatten)]
        sched: SchedArgs,
        /// Write the trace as text.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the trace as per-thread binary logs into this directory.
        #[arg(long)]
        oslog: Option<PathBuf>,
        /// Events per chunk in binary logs.
        #[arg(long, default_value_t = log::DEFAULT_CAPACITY as u64, value_parser = clap::value_parser!(u64).range(1..))]
        buffer_capacity: u64,
        /// Analyze the generated trace(s).
        #[arg(long)]
        analyze: bool,
        /// Enumerate interleavings instead of running one schedule.
        #[arg(long, conflicts_with_all = ["seed", "schedule", "out", "oslog"])]
        enumerate: bool,
        #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
        bound: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Enumerate interleavings of a program (same as `simulate --enumerate`).
    Enumerate {
        program: PathBuf,
        #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
        bound: u64,
        #[arg(long)]
        analyze: bool,
        #[command(flatten)]
        output: Output,
    },
    /// Print a trace or log directory as text.
    Dump {
        path: PathBuf,
        /// For log directories, list chunk frames instead of events.
        #[arg(long)]
        chunks: bool,
    },
}

#[derive(Args)]
struct SchedArgs {
    /// Random schedule seed.
    #[arg(long, conflicts_with = "schedule")]
    seed: Option<u64>,
    /// Explicit thread picks, comma separated; lowest enabled thread afterwards.
    #[arg(long, value_delimiter = ',')]
    schedule: Option<Vec<u32>>,
}

struct Fail(u8, String);

impl From<TraceError> for Fail {
    fn from(e: TraceError) -> Self {
        let code = if e.is_corruption() { CORRUPT } else { USAGE };
        Fail(code, e.to_string())
    }
}

impl From<SemanticError> for Fail {
    fn from(e: SemanticError) -> Self {
        Fail(SEMANTIC, format!("semantic violation: {e}"))
    }
}

impl From<SimError> for Fail {
    fn from(e: SimError) -> Self {
        Fail(USAGE, e.to_string())
    }
}

impl From<io::Error> for Fail {
    fn from(e: io::Error) -> Self {
        Fail(USAGE, e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = io::stdout().lock();
    match dispatch(cli.command, &mut stdout) {
        Ok(code) => ExitCode::from(code),
        Err(Fail(code, msg)) => {
            let _ = stdout.flush();
            eprintln!("osrace: {msg}");
            ExitCode::from(code)
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<u8, Fail> {
    match cmd {
        Command::Analyze {
            path,
            offline,
            workers,
            output,
        } => {
            if offline {
                if output.transitions {
                    return Err(Fail(USAGE, "--transitions needs an online replay; drop --offline".into()));
                }
                if !path.is_dir() {
                    return Err(Fail(USAGE, format!("{} is not a log directory", path.display())));
                }
                let reports = check_offline(&path, workers as usize).map_err(|e| match e {
                    OfflineError::Trace(t) => Fail::from(t),
                    OfflineError::Semantic(s) => Fail::from(s),
                })?;
                print_reports(out, &reports, output.format, None)?;
                return Ok(exit_for(&reports));
            }
            let events = read_any(&path)?;
            analyze(out, &events, &output, None)
        }
        Command::Simulate {
            program,
            sched,
            out: out_path,
            oslog,
            buffer_capacity,
            analyze: do_analyze,
            enumerate,
            bound,
            output,
        } => {
            let lowered = sim::load(&std::fs::read_to_string(&program)?)?;
            if enumerate {
                return run_enumeration(out, &lowered, bound, do_analyze, &output);
            }
            let schedule = match (sched.seed, sched.schedule) {
                (Some(seed), _) => Schedule::Seeded(seed),
                (None, Some(picks)) => Schedule::Explicit(picks),
                (None, None) => Schedule::Explicit(Vec::new()),
            };
            let events = sim::execute(&lowered.root, &schedule).map_err(SimError::from)?;
            if let Some(p) = &out_path {
                trace::write_text_trace(&events, io::BufWriter::new(File::create(p)?))?;
            }
            if let Some(dir) = &oslog {
                trace::write_log_dir(dir, &events, buffer_capacity as usize, Codec::Deflate)?;
            }
            if do_analyze {
                return analyze(out, &events, &output, Some(&lowered.symbols));
            }
            if out_path.is_none() && oslog.is_none() {
                trace::write_text_trace(&events, &mut *out)?;
            }
            Ok(CLEAN)
        }
        Command::Enumerate {
            program,
            bound,
            analyze,
            output,
        } => {
            let lowered = sim::load(&std::fs::read_to_string(&program)?)?;
            run_enumeration(out, &lowered, bound, analyze, &output)
        }
        Command::Dump { path, chunks } => {
            if chunks {
                dump_chunks(out, &path)?;
            } else {
                let events = read_any(&path)?;
                trace::write_text_trace(&events, &mut *out)?;
            }
            Ok(CLEAN)
        }
    }
}

fn read_any(path: &Path) -> Result<Vec<TraceEvent>, Fail> {
    if path.is_dir() {
        let logs = trace::read_log_dir(path)?;
        Ok(trace::merge_logs(logs.into_values())?)
    } else {
        let f = File::open(path).map_err(|e| Fail(USAGE, format!("{}: {e}", path.display())))?;
        Ok(trace::read_text_trace(BufReader::new(f))?)
    }
}

fn exit_for(reports: &[RaceReport]) -> u8 {
    if reports.is_empty() {
        CLEAN
    } else {
        RACES
    }
}

fn analyze(out: &mut dyn Write, events: &[TraceEvent], output: &Output, symbols: Option<&Symbols>) -> Result<u8, Fail> {
    let result = run(events)?;
    if output.transitions {
        print_transitions(out, events, &result.transitions, output.format)?;
    }
    print_reports(out, &result.reports, output.format, symbols)?;
    Ok(exit_for(&result.reports))
}

fn tagged(kind: &str, v: Value) -> Value {
    let mut obj = serde_json::Map::new();
    obj.insert("record".into(), Value::String(kind.into()));
    if let Value::Object(m) = v {
        obj.extend(m);
    }
    Value::Object(obj)
}

fn print_transitions(out: &mut dyn Write, events: &[TraceEvent], recs: &[TransitionRecord], format: Format) -> Result<(), Fail> {
    match format {
        Format::Human => {
            let init = osrace::Engine::new().tp_view();
            let first = events.first().map(|e| e.kind.to_string());
            write!(out, "{}", render_table(&init, first, recs))?;
            writeln!(out)?;
        }
        Format::Structured => {
            for line in structured_lines(recs).lines() {
                let v: Value = serde_json::from_str(line).expect("valid json");
                writeln!(out, "{}", tagged("transition", v))?;
            }
        }
    }
    Ok(())
}

fn print_reports(out: &mut dyn Write, reports: &[RaceReport], format: Format, symbols: Option<&Symbols>) -> Result<(), Fail> {
    match format {
        Format::Human => {
            for r in reports {
                let text = r.to_string();
                match symbols {
                    Some(s) => {
                        let named = format!("race on {} (address {})", s.display(r.addr), r.addr);
                        writeln!(out, "{}", text.replacen(&format!("race on address {}", r.addr), &named, 1))?;
                    }
                    None => writeln!(out, "{text}")?,
                }
            }
            match reports.len() {
                0 => writeln!(out, "no races")?,
                1 => writeln!(out, "1 race")?,
                n => writeln!(out, "{n} races")?,
            }
        }
        Format::Structured => {
            for r in reports {
                writeln!(out, "{}", tagged("race", serde_json::to_value(r).expect("report serializes")))?;
            }
            writeln!(out, "{}", json!({"record": "summary", "races": reports.len()}))?;
        }
    }
    Ok(())
}

fn run_enumeration(out: &mut dyn Write, lowered: &sim::Lowered, bound: u64, do_analyze: bool, output: &Output) -> Result<u8, Fail> {
    let en = sim::enumerate(&lowered.root, bound as usize).map_err(SimError::from)?;
    let count = en.interleavings.len();
    if !do_analyze {
        match output.format {
            Format::Human => writeln!(
                out,
                "{count} interleaving{}{}",
                if count == 1 { "" } else { "s" },
                if en.truncated { " (bound reached)" } else { "" }
            )?,
            Format::Structured => writeln!(
                out,
                "{}",
                json!({"record": "enumeration", "interleavings": count, "truncated": en.truncated})
            )?,
        }
        return Ok(CLEAN);
    }
    let mut sets: Vec<(BTreeSet<ReportSignature>, Vec<RaceReport>, usize)> = Vec::new();
    for il in &en.interleavings {
        let reports = run(&il.events)?.reports;
        let sig: BTreeSet<ReportSignature> = reports.iter().map(RaceReport::signature).collect();
        match sets.iter_mut().find(|(s, _, _)| *s == sig) {
            Some(entry) => entry.2 += 1,
            None => sets.push((sig, reports, 1)),
        }
    }
    match output.format {
        Format::Human => {
            writeln!(
                out,
                "{count} interleaving{}{}, {} distinct report set{}",
                if count == 1 { "" } else { "s" },
                if en.truncated { " (bound reached)" } else { "" },
                sets.len(),
                if sets.len() == 1 { "" } else { "s" }
            )?;
        }
        Format::Structured => writeln!(
            out,
            "{}",
            json!({"record": "enumeration", "interleavings": count, "truncated": en.truncated, "distinct_report_sets": sets.len()})
        )?,
    }
    let mut any = false;
    for (_, reports, n) in &sets {
        if sets.len() > 1 {
            match output.format {
                Format::Human => writeln!(out, "-- report set seen in {n} interleaving(s)")?,
                Format::Structured => writeln!(out, "{}", json!({"record": "report_set", "interleavings": n}))?,
            }
        }
        print_reports(out, reports, output.format, Some(&lowered.symbols))?;
        any |= !reports.is_empty();
    }
    Ok(if any { RACES } else { CLEAN })
}

fn dump_chunks(out: &mut dyn Write, dir: &Path) -> Result<(), Fail> {
    let logs = trace::read_log_dir(dir)?;
    for tid in logs.keys() {
        let f = File::open(dir.join(log::log_file_name(*tid)))?;
        let mut reader = LogReader::new(BufReader::new(f))?;
        while let Some(chunk) = reader.next_chunk()? {
            writeln!(
                out,
                "tid {} first_seq {} codec {:?} uncompressed {} compressed {} crc32 {:08x}",
                chunk.tid,
                chunk.first_seq,
                chunk.codec,
                chunk.uncompressed_len,
                chunk.payload.len(),
                chunk.checksum
            )?;
        }
    }
    Ok(())
}
