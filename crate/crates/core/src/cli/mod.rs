//! The `ttd` command-line driver. Exit codes: 0 success, 1 verification or
//! divergence failure, 2 usage or input error.

pub mod script;

use std::ffi::OsString;
use std::io::{IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::Deserialize;

use crate::demos;
use crate::guest::{Program, ScriptSource};
use crate::host::Scenario;
use crate::record::{read_trace, record, tracefile, write_trace, LogEntry, RecordOptions, Trace, TraceFileError};
use crate::replay::{canonical_state_at, verify, ReplayError};
use crate::ttd::DebugSession;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "ttd", version, about = "Record, replay and time-travel debug guest scripts")]
pub struct Cli {
    /// Disable ANSI colors (also TTD_NO_COLOR).
    #[arg(long, global = true)]
    pub no_color: bool,
    /// Config file; defaults to ./.ttdrc when present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run a program against a scenario and write a trace.
    Record(RecordArgs),
    /// Replay a trace and check it matches the recording.
    Verify(VerifyArgs),
    /// Run a debug script against a trace, or serve it over the wire protocol.
    Debug(DebugArgs),
    /// Print log entries, checkpoints, events, or the state before an event.
    Dump(DumpArgs),
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("input").required(true).args(["program", "demo"])))]
pub struct RecordArgs {
    /// Guest script.
    pub program: Option<PathBuf>,
    /// Scenario JSON.
    #[arg(requires = "program")]
    pub scenario: Option<PathBuf>,
    /// Record a bundled demo instead (game, feed, todo, gallery, race).
    #[arg(long, conflicts_with_all = ["program", "scenario"])]
    pub demo: Option<String>,
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long)]
    pub checkpoint_interval_ms: Option<u64>,
    /// Record only the initial checkpoint.
    #[arg(long, conflicts_with = "checkpoint_interval_ms")]
    pub no_checkpoints: bool,
    /// Overrides the scenario's scheduler seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub no_compress: bool,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    pub trace: PathBuf,
    /// Replay from every checkpoint, not just the first.
    #[arg(long)]
    pub all_checkpoints: bool,
    /// Print the final canonical state.
    #[arg(long)]
    pub print_final: bool,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("mode").required(true).args(["script", "serve"])))]
pub struct DebugArgs {
    pub trace: PathBuf,
    #[arg(long)]
    pub script: Option<PathBuf>,
    #[arg(long)]
    pub serve: bool,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub host: Option<String>,
}

#[derive(Args, Debug)]
pub struct DumpArgs {
    pub trace: PathBuf,
    /// log, checkpoints, events, dom@K or dom@end.
    #[arg(long, default_value = "log")]
    pub what: String,
}

/// `.ttdrc` contents. Flags win over these.
#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RcConfig {
    pub checkpoint_interval_ms: Option<u64>,
    pub seed: Option<u64>,
    pub port: Option<u16>,
    pub host: Option<String>,
    pub color: Option<bool>,
    pub compress: Option<bool>,
}

impl RcConfig {
    pub fn load(explicit: Option<&Path>) -> Result<RcConfig, String> {
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => {
                let p = PathBuf::from(".ttdrc");
                if !p.exists() {
                    return Ok(RcConfig::default());
                }
                p
            }
        };
        let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

struct Ctx<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
    color: bool,
}

impl Ctx<'_> {
    fn bold(&self, s: &str) -> String {
        if self.color {
            format!("\x1b[1m{s}\x1b[0m")
        } else {
            s.to_string()
        }
    }

    fn fail(&mut self, code: i32, msg: impl std::fmt::Display) -> i32 {
        let label = if self.color { "\x1b[31merror\x1b[0m" } else { "error" };
        let _ = writeln!(self.err, "{label}: {msg}");
        code
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    let rc = match RcConfig::load(cli.config.as_deref()) {
        Ok(rc) => rc,
        Err(e) => {
            let _ = writeln!(err, "error: config {e}");
            return EXIT_USAGE;
        }
    };
    let color = !cli.no_color
        && std::env::var_os("TTD_NO_COLOR").is_none()
        && rc.color.unwrap_or(true)
        && std::io::stdout().is_terminal();
    let mut ctx = Ctx { out, err, color };
    match cli.command {
        Command::Record(a) => cmd_record(&mut ctx, &rc, a),
        Command::Verify(a) => cmd_verify(&mut ctx, a),
        Command::Debug(a) => cmd_debug(&mut ctx, &rc, a),
        Command::Dump(a) => cmd_dump(&mut ctx, a),
    }
}

fn load_inputs(a: &RecordArgs) -> Result<(Program, Scenario), String> {
    if let Some(name) = &a.demo {
        let d = demos::demo(name).ok_or_else(|| format!("no demo named {name}"))?;
        return Ok((d.program().map_err(|e| e.to_string())?, d.scenario().map_err(|e| e.to_string())?));
    }
    let (Some(prog), Some(scen)) = (&a.program, &a.scenario) else {
        return Err("record needs a program and a scenario".into());
    };
    let text = std::fs::read_to_string(prog).map_err(|e| format!("{}: {e}", prog.display()))?;
    let name = prog.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "main.tts".into());
    let program = Program::from_sources(vec![ScriptSource { name, text }]).map_err(|e| e.to_string())?;
    let stext = std::fs::read_to_string(scen).map_err(|e| format!("{}: {e}", scen.display()))?;
    let scenario = Scenario::from_json(&stext).map_err(|e| format!("{}: {e}", scen.display()))?;
    Ok((program, scenario))
}

fn cmd_record(ctx: &mut Ctx, rc: &RcConfig, a: RecordArgs) -> i32 {
    let (program, scenario) = match load_inputs(&a) {
        Ok(x) => x,
        Err(e) => return ctx.fail(EXIT_USAGE, e),
    };
    let interval = if a.no_checkpoints {
        None
    } else {
        Some(
            a.checkpoint_interval_ms
                .or(rc.checkpoint_interval_ms)
                .unwrap_or(crate::record::DEFAULT_CHECKPOINT_INTERVAL_MS),
        )
    };
    if interval == Some(0) {
        return ctx.fail(EXIT_USAGE, "--checkpoint-interval-ms must be positive");
    }
    let opts = RecordOptions { checkpoint_interval: interval, seed: a.seed.or(rc.seed), ..RecordOptions::default() };
    let trace = record(Arc::new(program), &scenario, &opts);
    let compress = !a.no_compress && rc.compress.unwrap_or(true);
    let sizes = match write_trace(&a.out, &trace, compress) {
        Ok(s) => s,
        Err(e) => return ctx.fail(EXIT_USAGE, format!("{}: {e}", a.out.display())),
    };
    let mut kinds = [0usize; 4];
    for e in &trace.log {
        kinds[match e {
            LogEntry::Simple { .. } => 0,
            LogEntry::Event { .. } => 1,
            LogEntry::InterEvent { .. } => 2,
            LogEntry::Concurrent { .. } => 3,
        }] += 1;
    }
    let errors: usize = trace.summaries.iter().map(|s| s.errors.len()).sum();
    let o = &mut *ctx.out;
    let _ = writeln!(o, "{} {}", ctx_bold(ctx.color, "recorded"), a.out.display());
    let _ = writeln!(o, "events       {}", trace.end.events);
    let _ = writeln!(o, "virtual ms   {}", trace.end.clock);
    let _ = writeln!(
        o,
        "checkpoints  {} (interval {})",
        trace.checkpoints.len(),
        interval.map(|i| format!("{i} ms")).unwrap_or_else(|| "off".into())
    );
    let _ = writeln!(
        o,
        "log entries  {} (simple {}, event {}, inter-event {}, concurrent {})",
        trace.log.len(),
        kinds[0],
        kinds[1],
        kinds[2],
        kinds[3]
    );
    let _ = writeln!(o, "guest errors {errors}");
    let _ = writeln!(o, "bytes        {} (log {}, checkpoints {})", sizes.total, sizes.log, sizes.checkpoints);
    EXIT_OK
}

fn ctx_bold(color: bool, s: &str) -> String {
    Ctx { out: &mut std::io::sink(), err: &mut std::io::sink(), color }.bold(s)
}

/// Unreadable files are input errors; damaged ones are verification failures.
fn open_trace(ctx: &mut Ctx, path: &Path) -> Result<Arc<Trace>, i32> {
    match read_trace(path) {
        Ok(t) => Ok(Arc::new(t)),
        Err(TraceFileError::Io(e)) => Err(ctx.fail(EXIT_USAGE, format!("{}: {e}", path.display()))),
        Err(e) => Err(ctx.fail(EXIT_FAILURE, format!("{}: trace integrity failure: {e}", path.display()))),
    }
}

fn cmd_verify(ctx: &mut Ctx, a: VerifyArgs) -> i32 {
    let trace = match open_trace(ctx, &a.trace) {
        Ok(t) => t,
        Err(code) => return code,
    };
    match verify(&trace, a.all_checkpoints) {
        Ok(r) => {
            let _ = writeln!(
                ctx.out,
                "{}: {} events, {} replays from checkpoints, {} events replayed, state digest {:016x}",
                ctx.bold("ok"),
                r.events,
                r.checkpoints_checked,
                r.events_replayed,
                trace.end.state_digest
            );
            if a.print_final {
                let _ = ctx.out.write_all(trace.end.final_state.as_bytes());
            }
            EXIT_OK
        }
        Err(e @ ReplayError::Divergence(_)) => ctx.fail(EXIT_FAILURE, e),
        Err(e) => ctx.fail(EXIT_FAILURE, format!("replay failed: {e}")),
    }
}

fn cmd_debug(ctx: &mut Ctx, rc: &RcConfig, a: DebugArgs) -> i32 {
    if a.serve {
        let host = a.host.clone().or(rc.host.clone()).unwrap_or_else(|| "127.0.0.1".into());
        let port = a.port.or(rc.port).unwrap_or(crate::proto::DEFAULT_PORT);
        if let Err(code) = open_trace(ctx, &a.trace) {
            return code;
        }
        let server = match crate::proto::serve(&format!("{host}:{port}")) {
            Ok(s) => s,
            Err(e) => return ctx.fail(EXIT_USAGE, format!("cannot listen on {host}:{port}: {e}")),
        };
        let _ = writeln!(
            ctx.out,
            "serving protocol {} on {} (open with session.open {{\"trace\": {:?}}})",
            crate::proto::PROTOCOL_VERSION,
            server.local_addr(),
            a.trace.display().to_string()
        );
        let _ = ctx.out.flush();
        server.wait();
        return EXIT_OK;
    }
    let path = a.script.expect("clap requires script or serve");
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) => return ctx.fail(EXIT_USAGE, format!("{}: {e}", path.display())),
    };
    let commands = match script::parse_script(&text) {
        Ok(c) => c,
        Err(e) => return ctx.fail(EXIT_USAGE, format!("{}: {e}", path.display())),
    };
    let trace = match open_trace(ctx, &a.trace) {
        Ok(t) => t,
        Err(code) => return code,
    };
    let mut session = match DebugSession::open(trace) {
        Ok(s) => s,
        Err(e) => return ctx.fail(EXIT_FAILURE, e),
    };
    let mut out = String::new();
    if let Some(p) = session.pause() {
        out.push_str(&format!("{}\n", script::pause_text(&session, &p)));
    }
    let diverged = script::run_script(&mut session, &commands, &mut out);
    let _ = ctx.out.write_all(out.as_bytes());
    if diverged {
        EXIT_FAILURE
    } else {
        EXIT_OK
    }
}

fn cmd_dump(ctx: &mut Ctx, a: DumpArgs) -> i32 {
    let what = a.what.as_str();
    let state_target = match what.strip_prefix("dom@") {
        Some("end") | Some("last") => Some(None),
        Some(k) => match k.parse::<u64>() {
            Ok(k) => Some(Some(k)),
            Err(_) => return ctx.fail(EXIT_USAGE, format!("bad event index in {what}")),
        },
        None => None,
    };
    if state_target.is_none() && !matches!(what, "log" | "checkpoints" | "events") {
        return ctx.fail(EXIT_USAGE, format!("unknown dump {what} (log, checkpoints, events, dom@K, dom@end)"));
    }
    let trace = match open_trace(ctx, &a.trace) {
        Ok(t) => t,
        Err(code) => return code,
    };
    let mut s = String::new();
    match (what, state_target) {
        (_, Some(target)) => {
            if let Some(k) = target {
                if k >= trace.end.events {
                    return ctx
                        .fail(EXIT_USAGE, format!("event {k} out of range (trace has {} events)", trace.end.events));
                }
            }
            match canonical_state_at(&trace, target) {
                Ok(text) => s = text,
                Err(e) => return ctx.fail(EXIT_FAILURE, e),
            }
        }
        ("log", _) => {
            for (i, e) in trace.log.iter().enumerate() {
                s.push_str(&format!("{i:>6} {}\n", entry_text(e)));
            }
        }
        ("checkpoints", _) => {
            for (i, c) in trace.checkpoints.iter().enumerate() {
                s.push_str(&format!(
                    "checkpoint {i}: event {} log-pos {} clock {} interactions {} objects {} bytes {}\n",
                    c.event_index,
                    c.log_pos,
                    c.clock,
                    c.interactions,
                    c.live_objects,
                    c.image.len()
                ));
            }
        }
        _ => {
            for e in &trace.summaries {
                let (_, _, d) = trace.event_entry(e.index).expect("summaries match log events");
                s.push_str(&format!(
                    "event {} seq {} at {} {} statements {} host-calls {} errors {}\n",
                    e.index,
                    e.seq,
                    e.at,
                    d.describe(),
                    e.statements,
                    e.host_calls,
                    e.errors.len()
                ));
            }
        }
    }
    let _ = ctx.out.write_all(s.as_bytes());
    EXIT_OK
}

fn entry_text(e: &LogEntry) -> String {
    match e {
        LogEntry::Simple { interaction, kind, value } => format!("simple #{interaction} {} -> {value}", kind.name()),
        LogEntry::Event { event_index, seq, at, descriptor } => {
            format!("event {event_index} seq {seq} at {at} {}", descriptor.describe())
        }
        LogEntry::InterEvent { before_event, updates } => format!("inter-event before {before_event} {updates:?}"),
        LogEntry::Concurrent { interaction, updates } => format!("concurrent before #{interaction} {updates:?}"),
    }
}

/// Trace file layout constants, for tools that sniff files.
pub use tracefile::{MAGIC, VERSION};
