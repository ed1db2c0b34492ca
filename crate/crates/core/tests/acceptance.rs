//! Acceptance criteria 1-10, one PASS/FAIL line each. Expected values come
//! from oracles in this file (a full statement trace gathered by driving the
//! replayer directly, the event log itself, program text), not from the
//! debugger under test.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use ttd_core::cli;
use ttd_core::corpus::generate;
use ttd_core::demos::DEMOS;
use ttd_core::guest::{InterpConfig, LogicalTime, Object, Program, ScriptSource, StmtId, Value};
use ttd_core::host::{EventDescriptor, HostUpdate, Scenario, Xorshift64Star};
use ttd_core::machine::Step;
use ttd_core::record::tracefile::{decode_trace, encode_trace};
use ttd_core::record::{record, LogEntry, RecordOptions, Trace};
use ttd_core::replay::{verify, Checks, ReplayError, Replayer};
use ttd_core::ttd::{DebugError, DebugSession, Notice, Page, Stop};

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

struct Case {
    name: String,
    trace: Arc<Trace>,
}

const CORPUS_SIZE: u64 = 200;
const CORPUS_INTERVAL_MS: u64 = 250;

fn demo_inputs() -> Vec<(String, Program, Scenario)> {
    DEMOS.iter().map(|d| (d.name.to_string(), d.program().unwrap(), d.scenario().unwrap())).collect()
}

fn generated_inputs() -> Vec<(String, Program, Scenario)> {
    (0..CORPUS_SIZE)
        .map(|seed| {
            let g = generate(seed);
            (g.name, Program::from_sources(g.sources).unwrap(), g.scenario)
        })
        .collect()
}

/// 200 generated cases recorded with a short checkpoint interval, then the
/// five demos with the default one.
fn corpus() -> &'static [Case] {
    static CORPUS: OnceLock<Vec<Case>> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let mut out = Vec::new();
        let gen_opts = RecordOptions { checkpoint_interval: Some(CORPUS_INTERVAL_MS), ..RecordOptions::default() };
        for (name, p, s) in generated_inputs() {
            out.push(Case { name, trace: Arc::new(record(Arc::new(p), &s, &gen_opts)) });
        }
        for (name, p, s) in demo_inputs() {
            out.push(Case { name, trace: Arc::new(record(Arc::new(p), &s, &RecordOptions::default())) });
        }
        out
    })
}

fn run_cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["ttd", "--no-color"];
    argv.extend_from_slice(args);
    let code = cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

// ---------------------------------------------------------------------------
// Oracle: the full dynamic statement trace, gathered by driving a replayer
// from checkpoint 0 with statement yields on.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Exec {
    event: u64,
    stmt: StmtId,
    time: LogicalTime,
    depth: usize,
}

fn statement_trace(trace: &Arc<Trace>) -> Vec<Exec> {
    let program = trace.compile().unwrap();
    let mut r = Replayer::from_checkpoint(trace.clone(), program, 0, InterpConfig::default()).unwrap();
    let mut out = Vec::new();
    loop {
        if !r.machine.interp.monitors_enabled() {
            r.machine.interp.enable_monitors();
        }
        r.machine.interp.set_yield_statements(true);
        if r.begin_event().unwrap().is_none() {
            break;
        }
        let event = r.next_event() - 1;
        while let Step::Statement(_) = r.run().unwrap() {
            let inst = r.machine.interp.current_instance().unwrap();
            out.push(Exec { event, stmt: inst.stmt, time: inst.time, depth: r.machine.interp.depth() });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Shape {
    MidBlock,
    LoopHeader,
    CallerToCallee,
    ReturnFromCallee,
    OtherBlockEntry,
    CrossEvent,
}

fn classify(program: &Program, prev: &Exec, cur: &Exec) -> Shape {
    if prev.event != cur.event {
        Shape::CrossEvent
    } else if !program.stmt(cur.stmt).is_block_entry() {
        Shape::MidBlock
    } else if prev.depth < cur.depth {
        Shape::CallerToCallee
    } else if prev.depth > cur.depth {
        Shape::ReturnFromCallee
    } else if program.stmt(prev.stmt).loop_header && prev.time.back_jumps + 1 == cur.time.back_jumps {
        Shape::LoopHeader
    } else {
        Shape::OtherBlockEntry
    }
}

// ---------------------------------------------------------------------------

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let cases = corpus();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for (i, c) in cases.iter().enumerate() {
        let path = dir.path().join(format!("{}.ttdt", c.name));
        let (bytes, _) = encode_trace(&c.trace, true);
        std::fs::write(&path, &bytes).unwrap();
        ensure!(decode_trace(&bytes).ok().as_ref() == Some(&*c.trace), "{}: trace file does not round-trip", c.name);
        let (code, _, err) = run_cli(&["verify", path.to_str().unwrap()]);
        ensure!(code == 0, "{}: verify exit {code}: {err}", c.name);
        // Recording itself is deterministic: the same inputs give the same bytes.
        if i % 10 == 0 {
            let again = record(c.trace.compile().unwrap(), &rescenario(&c.name), &options_for(&c.name));
            ensure!(encode_trace(&again, true).0 == bytes, "{}: re-recording differs", c.name);
        }
    }
    let game = cases.iter().find(|c| c.name == "game").unwrap();
    let timer_times: Vec<u64> = game
        .trace
        .log
        .iter()
        .filter_map(|e| match e {
            LogEntry::Event { at, descriptor: EventDescriptor::Timer { .. }, .. } => Some(*at),
            _ => None,
        })
        .collect();
    // Timer firings carry scheduling jitter around the nominal 80ms period.
    let nominal = game.trace.program.iter().any(|src| src.text.contains("set_interval(step, 80)"));
    let mean_gap = (timer_times[timer_times.len() - 1] - timer_times[0]) as f64 / (timer_times.len() - 1) as f64;
    ensure!(
        nominal && timer_times.len() > 100 && (78.0..=88.0).contains(&mean_gap),
        "game loop is not an 80ms timer loop ({} firings, mean gap {mean_gap:.1}ms, nominal {nominal})",
        timer_times.len()
    );
    let feed = cases.iter().find(|c| c.name == "feed").unwrap();
    let updates: Vec<&HostUpdate> = feed
        .trace
        .log
        .iter()
        .flat_map(|e| match e {
            LogEntry::InterEvent { updates, .. } | LogEntry::Concurrent { updates, .. } => updates.iter().collect(),
            _ => Vec::new(),
        })
        .collect();
    ensure!(
        updates.iter().any(|u| matches!(u, HostUpdate::AnimationAdvance { .. }))
            && updates.iter().any(|u| matches!(u, HostUpdate::XhrTransition { .. })),
        "feed demo lacks animation or XHR activity"
    );
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 300.0, "took {secs:.1}s");
    let events: u64 = cases.iter().map(|c| c.trace.end.events).sum();
    Ok(format!("{} traces ({events} events) verify with exit 0 in {secs:.1}s", cases.len()))
}

fn rescenario(name: &str) -> Scenario {
    match name.strip_prefix("gen") {
        Some(seed) => generate(seed.parse().unwrap()).scenario,
        None => ttd_core::demos::demo(name).unwrap().scenario().unwrap(),
    }
}

fn options_for(name: &str) -> RecordOptions {
    if name.starts_with("gen") {
        RecordOptions { checkpoint_interval: Some(CORPUS_INTERVAL_MS), ..RecordOptions::default() }
    } else {
        RecordOptions::default()
    }
}

fn criterion_2() -> Outcome {
    let cases = corpus();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut checkpoints = 0;
    for c in cases {
        let path = dir.path().join(format!("{}.ttdt", c.name));
        std::fs::write(&path, encode_trace(&c.trace, true).0).unwrap();
        let (code, _, err) = run_cli(&["verify", "--all-checkpoints", path.to_str().unwrap()]);
        ensure!(code == 0, "{}: verify --all-checkpoints exit {code}: {err}", c.name);

        // Replaying from checkpoint 0 reaches each later checkpoint's exact state.
        let program = c.trace.compile().unwrap();
        let mut r = Replayer::from_checkpoint(c.trace.clone(), program, 0, InterpConfig::default()).unwrap();
        r.machine.interp.set_yield_statements(false);
        for cp in &c.trace.checkpoints {
            while r.next_event() < cp.event_index {
                r.step_event().unwrap();
            }
            r.settle().unwrap();
            ensure!(r.log_pos() as u64 == cp.log_pos, "{}: log position differs at event {}", c.name, cp.event_index);
            let stored = cp.snapshot().unwrap();
            ensure!(
                r.snapshot().state_digest() == stored.state_digest(),
                "{}: replayed state differs from checkpoint at event {}",
                c.name,
                cp.event_index
            );
            checkpoints += 1;
        }
    }
    ensure!(checkpoints > 2 * cases.len(), "corpus has too few checkpoints ({checkpoints})");
    Ok(format!("{} traces, {checkpoints} checkpoints: every suffix replay matches", cases.len()))
}

fn criterion_3() -> Outcome {
    let cases = corpus();
    let mut rng = Xorshift64Star::new(0x5eed);
    let mut checked = 0usize;
    let mut shapes: BTreeMap<Shape, usize> = BTreeMap::new();
    for c in cases {
        let seq = statement_trace(&c.trace);
        if seq.len() < 2 {
            continue;
        }
        let unique: HashSet<(u64, StmtId, LogicalTime)> = seq.iter().map(|e| (e.event, e.stmt, e.time)).collect();
        ensure!(unique.len() == seq.len(), "{}: (event, statement, time) does not identify executions", c.name);
        let program = c.trace.compile().unwrap();
        let mut session = DebugSession::open(c.trace.clone()).map_err(|e| e.to_string())?;

        // Five random points plus the first instance of every shape present.
        let mut picks: Vec<usize> = (0..5).map(|_| rng.range(1, seq.len() as u64 - 1) as usize).collect();
        let mut seen = HashSet::new();
        for i in 1..seq.len() {
            if seen.insert(classify(&program, &seq[i - 1], &seq[i])) {
                picks.push(i);
            }
        }
        for i in picks {
            let (prev, cur) = (seq[i - 1], seq[i]);
            session.travel_to(cur.event, cur.stmt, cur.time).map_err(|e| format!("{}: travel: {e}", c.name))?;
            let got = session.step_back().map_err(|e| format!("{}: step_back from {cur:?}: {e}", c.name))?;
            let got = Exec { event: got.event, stmt: got.stmt, time: got.time, depth: got.depth };
            ensure!(got == prev, "{}: step_back from {cur:?} gave {got:?}, oracle says {prev:?}", c.name);
            *shapes.entry(classify(&program, &prev, &cur)).or_default() += 1;
            checked += 1;
        }
        session.travel_to(seq[0].event, seq[0].stmt, seq[0].time).map_err(|e| e.to_string())?;
        ensure!(session.step_back() == Err(DebugError::NoPredecessor), "{}: first statement has a predecessor", c.name);
    }
    ensure!(checked >= 1000, "only {checked} pause points");
    for s in [Shape::MidBlock, Shape::LoopHeader, Shape::ReturnFromCallee, Shape::CallerToCallee] {
        ensure!(shapes.get(&s).copied().unwrap_or(0) > 0, "no pause point of shape {s:?}");
    }
    Ok(format!("{checked}/{checked} pause points match the statement-trace oracle; by shape {shapes:?}"))
}

fn one_script(name: &str, text: &str, scenario: &str, opts: &RecordOptions) -> Arc<Trace> {
    let program = Program::from_sources(vec![ScriptSource { name: name.into(), text: text.into() }]).unwrap();
    let scenario = Scenario::from_json(scenario).unwrap();
    Arc::new(record(Arc::new(program), &scenario, opts))
}

const PLAIN_SCENARIO: &str =
    r#"{"version":1,"seed":1,"duration_ms":100,"documents":[{"name":"main","markup":"<p id=\"x\">x</p>"}]}"#;

fn criterion_4() -> Outcome {
    let src = "let calls = 0;\nfunction a() {\n  calls = calls + 1;\n  let i = 0;\n  while (true) {\n    i = i + 1;\n    if (i >= 3) {\n      return i;\n    }\n  }\n}\na();\na();\na();\na();\n";
    let trace = one_script("loop.tts", src, PLAIN_SCENARIO, &RecordOptions::default());
    let mut s = DebugSession::open(trace).map_err(|e| e.to_string())?;
    let bp = s.set_breakpoint_at_line("loop.tts", 6, Some(LogicalTime::new(3, 2))).map_err(|e| e.to_string())?;
    let mut hits = Vec::new();
    for _pass in 0..2 {
        let mut n = 0;
        s.travel_to_event(0).map_err(|e| e.to_string())?;
        while let Stop::Paused(p) = s.continue_forward().map_err(|e| e.to_string())? {
            n += 1;
            let calls = s.inspect_heap("calls", Page::default()).map_err(|e| e.to_string())?;
            let i = s.inspect_heap("i", Page::default()).map_err(|e| e.to_string())?;
            hits.push((p.time, calls["value"]["value"].clone(), i["value"]["value"].clone()));
        }
        ensure!(n == 1, "breakpoint {} fired {n} times in one pass", bp.id);
    }
    // Third call, second iteration: `i` has been incremented once.
    for (t, calls, i) in &hits {
        ensure!(*t == LogicalTime::new(3, 2) && calls == 3.0 && i == 1.0, "fired at {t} with calls={calls} i={i}");
    }
    Ok("(3,2) fires once per pass, at call 3 (calls=3) iteration 2 (i=1)".into())
}

fn criterion_5() -> Outcome {
    // Two host calls precede the loop, so loop iteration j makes call j + 3.
    let src = "let req = xhr_open(\"GET\", \"/slow\");\nxhr_send(req);\nlet seen = [];\nlet j = 0;\nwhile (j < 100) {\n  push(seen, xhr_status(req));\n  j = j + 1;\n}\nlet done = 1;\n";
    let scen = r#"{"version":1,"seed":1,"duration_ms":100,"documents":[{"name":"main","markup":"<p>x</p>"}],
        "network":{"/slow":{"body":"abc","headers_ms":5000}}}"#;
    let opts = RecordOptions { in_event_ticks: false, ..RecordOptions::default() };
    let base = one_script("poll.tts", src, scen, &opts);
    ensure!(base.log.iter().all(|e| matches!(e, LogEntry::Event { .. })), "base trace already has non-event entries");

    let mut s = DebugSession::open(base.clone()).map_err(|e| e.to_string())?;
    s.set_breakpoint_at_line("poll.tts", 9, None).map_err(|e| e.to_string())?;
    s.continue_forward().map_err(|e| e.to_string())?;
    let req = s.inspect_heap("req", Page::default()).map_err(|e| e.to_string())?;
    let request = req["value"]["id"].as_u64().ok_or("req is not a request")? as u32;
    let before = statuses(&s)?;
    ensure!(before.len() == 100 && before.iter().all(|v| *v == before[0]), "unexpected baseline {before:?}");

    let mut crafted = (*base).clone();
    let pos = crafted.log.iter().position(|e| matches!(e, LogEntry::Event { event_index: 0, .. })).unwrap() + 1;
    let state = ttd_core::host::ReadyState::HeadersReceived;
    crafted.log.insert(
        pos,
        LogEntry::Concurrent {
            interaction: 60,
            updates: vec![HostUpdate::XhrTransition { request, state, bytes: 0, status: 200 }],
        },
    );
    let mut s = DebugSession::open(Arc::new(crafted)).map_err(|e| e.to_string())?;
    s.set_breakpoint_at_line("poll.tts", 9, None).map_err(|e| e.to_string())?;
    match s.continue_forward().map_err(|e| e.to_string())? {
        Stop::Paused(_) => {}
        Stop::Ended => return Err("crafted run never reached the end of the poll loop".into()),
    }
    let after = statuses(&s)?;
    let first_changed = after.iter().position(|v| *v != before[0]);
    ensure!(first_changed == Some(57), "update first visible at loop index {first_changed:?}, expected 57 (call 60)");
    ensure!(after[57..].iter().all(|v| *v == state as u8 as f64), "update not visible after call 60: {after:?}");
    Ok(format!(
        "Concurrent at counter 60 is visible from the 60th host call on (status {} -> {})",
        before[0], after[57]
    ))
}

fn statuses(s: &DebugSession) -> Result<Vec<f64>, String> {
    let v = s.inspect_heap("seen", Page::default()).map_err(|e| e.to_string())?;
    Ok(v["children"].as_array().unwrap().iter().map(|c| c["value"]["value"].as_f64().unwrap()).collect())
}

/// The order the race demo's guest should observe, derived from the log.
fn logged_order(trace: &Trace) -> Vec<String> {
    trace
        .log
        .iter()
        .filter_map(|e| match e {
            LogEntry::Event { descriptor: EventDescriptor::Timer { .. }, .. } => Some("timer".to_string()),
            LogEntry::Event { descriptor: EventDescriptor::ParseProgress { offset, .. }, .. } => {
                Some(format!("parse@{offset}"))
            }
            _ => None,
        })
        .collect()
}

fn guest_strings(r: &Replayer, global: &str) -> Vec<String> {
    let interp = &r.machine.interp;
    let Some(Value::Obj(o)) = interp.global(global) else { return Vec::new() };
    match interp.heap().get(o) {
        Object::Array(items) => items
            .iter()
            .map(|v| match v {
                Value::Str(s) => s.to_string(),
                other => format!("{other:?}"),
            })
            .collect(),
        _ => Vec::new(),
    }
}

fn criterion_6() -> Outcome {
    let demo = ttd_core::demos::demo("race").unwrap();
    let program = Arc::new(demo.program().unwrap());
    let scenario = demo.scenario().unwrap();
    let mut by_order: BTreeMap<Vec<String>, (u64, Arc<Trace>)> = BTreeMap::new();
    for seed in 1..=16 {
        let opts = RecordOptions { seed: Some(seed), ..RecordOptions::default() };
        let t = Arc::new(record(program.clone(), &scenario, &opts));
        by_order.entry(logged_order(&t)).or_insert((seed, t));
    }
    ensure!(by_order.len() >= 2, "all seeds produced the same order");
    let mut report = Vec::new();
    for (order, (seed, trace)) in &by_order {
        let timer_pos = order.iter().position(|o| o == "timer");
        for _ in 0..100 {
            let mut r = Replayer::from_checkpoint(trace.clone(), program.clone(), 0, InterpConfig::default()).unwrap();
            r.machine.interp.set_yield_statements(false);
            r.set_checks(Checks::Full);
            while r.step_event().map_err(|e| e.to_string())?.is_some() {}
            r.check_end().map_err(|e| e.to_string())?;
            let seen = guest_strings(&r, "order");
            ensure!(&seen == order, "seed {seed}: replay observed {seen:?}, trace has {order:?}");
        }
        report.push(format!("seed {seed}: timer at position {timer_pos:?}"));
    }
    Ok(format!("{} distinct orders, 100/100 replays each reproduce them ({})", by_order.len(), report.join("; ")))
}

fn criterion_7() -> Outcome {
    let case = corpus().iter().find(|c| c.name == "game").unwrap();
    let trace = &case.trace;
    let seq = statement_trace(trace);
    let cp = trace.checkpoints.iter().find(|c| c.event_index > 0).ok_or("game has one checkpoint")?;
    let next_cp = trace.checkpoints.iter().map(|c| c.event_index).find(|&e| e > cp.event_index).unwrap_or(u64::MAX);
    // First event at least 10 past the checkpoint that runs enough statements.
    let k = (cp.event_index + 10..next_cp.min(trace.end.events - 1))
        .find(|&k| seq.iter().filter(|e| e.event == k).count() >= 8 && seq.iter().any(|e| e.event == k + 1))
        .ok_or("no suitable event")?;
    let in_k: Vec<Exec> = seq.iter().copied().filter(|e| e.event == k).collect();

    let mut s = DebugSession::open(trace.clone()).map_err(|e| e.to_string())?;
    s.travel_to_event(k + 1).map_err(|e| e.to_string())?;
    let before = s.stats();
    let first = s.step_back().map_err(|e| e.to_string())?;
    let first_work = s.stats().events_replayed - before.events_replayed;
    ensure!(
        first.event == k && first.stmt == in_k.last().unwrap().stmt,
        "first step_back did not land at the end of event {k}"
    );
    ensure!(first_work >= 10, "first step_back replayed only {first_work} events");
    ensure!(
        s.take_notices().contains(&Notice::CheckpointCreated { event_index: k }),
        "no opportunistic checkpoint at event {k}"
    );
    let mut idx = in_k.len() - 1;
    for _ in 0..6 {
        let before = s.stats();
        let p = s.step_back().map_err(|e| e.to_string())?;
        idx -= 1;
        let after = s.stats();
        ensure!(after.events_replayed == before.events_replayed, "step_back within event {k} replayed prior events");
        ensure!(after.last_restore_event == Some(k), "restored from event {:?}, not {k}", after.last_restore_event);
        ensure!(
            (p.stmt, p.time) == (in_k[idx].stmt, in_k[idx].time),
            "step_back within event {k} left the oracle path"
        );
    }
    Ok(format!(
        "event {k} ({} events after checkpoint at {}): first step_back replayed {first_work} events, next 6 replayed 0",
        k - cp.event_index,
        cp.event_index
    ))
}

fn log_bytes(trace: &Trace) -> u64 {
    encode_trace(trace, false).1.log
}

fn world_effects(trace: &Trace) -> u64 {
    trace
        .log
        .iter()
        .map(|e| match e {
            LogEntry::InterEvent { updates, .. } | LogEntry::Concurrent { updates, .. } => updates.len() as u64,
            _ => 0,
        })
        .sum()
}

/// Least squares for y = X b via normal equations.
fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = rows[0].len();
    let mut a = vec![vec![0.0; k + 1]; k];
    for (r, yv) in rows.iter().zip(y) {
        for i in 0..k {
            for j in 0..k {
                a[i][j] += r[i] * r[j];
            }
            a[i][k] += r[i] * yv;
        }
    }
    for col in 0..k {
        let piv = (col..k).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        for row in 0..k {
            if row != col && a[col][col] != 0.0 {
                let f = a[row][col] / a[col][col];
                let pivot = a[col].clone();
                for (x, p) in a[row].iter_mut().zip(&pivot).skip(col) {
                    *x -= f * p;
                }
            }
        }
    }
    (0..k).map(|i| if a[i][i] == 0.0 { 0.0 } else { a[i][k] / a[i][i] }).collect()
}

fn pure_compute(clicks: usize, iterations: u64) -> Arc<Trace> {
    let src = format!(
        "let total = 0;\nfunction work(ev) {{\n  let i = 0;\n  while (i < {iterations}) {{\n    total = (total + i * 7) % 1000;\n    i = i + 1;\n  }}\n}}\n"
    );
    let inputs: Vec<String> =
        (0..clicks).map(|i| format!(r##"{{"at":{},"kind":"click","target":"#b"}}"##, 10 + 20 * i)).collect();
    let scen = format!(
        r#"{{"version":1,"seed":3,"duration_ms":{},"documents":[{{"name":"main","markup":"<button id=\"b\" onclick=\"work\">go</button>"}}],"inputs":[{}]}}"#,
        20 * clicks + 50,
        inputs.join(",")
    );
    one_script("pure.tts", &src, &scen, &RecordOptions::default())
}

fn criterion_8() -> Outcome {
    let small = pure_compute(20, 10);
    let big = pure_compute(20, 20_000);
    for t in [&small, &big] {
        ensure!(t.log.iter().all(|e| matches!(e, LogEntry::Event { .. })), "pure-compute log has non-event entries");
        ensure!(t.end.interactions == 0, "pure-compute run made host calls");
    }
    let stmts = |t: &Trace| t.summaries.iter().map(|s| s.statements).sum::<u64>();
    ensure!(stmts(&big) > 1000 * stmts(&small) / 2, "statement counts did not scale");
    ensure!(log_bytes(&small) == log_bytes(&big), "log size depends on statements executed");

    let mut traces: Vec<Arc<Trace>> = corpus().iter().map(|c| c.trace.clone()).collect();
    traces.extend([small.clone(), big.clone(), pure_compute(5, 100), pure_compute(60, 1000)]);
    let rows: Vec<Vec<f64>> = traces
        .iter()
        .map(|t| vec![1.0, t.end.events as f64, t.end.interactions as f64, world_effects(t) as f64])
        .collect();
    let y: Vec<f64> = traces.iter().map(|t| log_bytes(t) as f64).collect();
    let b = least_squares(&rows, &y);
    let mut worst: f64 = 1.0;
    for (r, yv) in rows.iter().zip(&y) {
        let pred: f64 = r.iter().zip(&b).map(|(x, c)| x * c).sum();
        ensure!(pred > 0.0, "fit predicts non-positive size for {r:?}");
        let ratio = if *yv > pred { yv / pred } else { pred / yv };
        worst = worst.max(ratio);
    }
    ensure!(worst <= 2.0, "a trace is {worst:.2}x off the linear fit");
    let max_stmts = traces.iter().map(|t| stmts(t)).max().unwrap();
    Ok(format!(
        "pure compute logs only events and is size-invariant over {}x statements; {} traces fit bytes = {:.1} + {:.1}/event + {:.2}/interaction + {:.1}/effect within {worst:.2}x (max statements {max_stmts})",
        stmts(&big) / stmts(&small),
        traces.len(),
        b[0],
        b[1],
        b[2],
        b[3]
    ))
}

fn alloc_trace(n: u64) -> Arc<Trace> {
    let src = format!(
        "let keep = [];\nlet i = 0;\nwhile (i < {n}) {{\n  push(keep, {{ id: i, tag: \"x\" }});\n  i = i + 1;\n}}\nset_timeout(function () {{\n  let z = len(keep);\n}}, 2500);\n"
    );
    let scen = r#"{"version":1,"seed":1,"duration_ms":3000,"documents":[{"name":"main","markup":"<p>x</p>"}]}"#;
    one_script("alloc.tts", &src, scen, &RecordOptions::default())
}

fn criterion_9() -> Outcome {
    let mut compared = 0;
    let inputs: Vec<(String, Program, Scenario)> = generated_inputs().into_iter().chain(demo_inputs()).collect();
    for (name, p, s) in inputs {
        let p = Arc::new(p);
        let none = record(p.clone(), &s, &RecordOptions { checkpoint_interval: None, ..RecordOptions::default() });
        for interval in [100, 2000] {
            let with = record(
                p.clone(),
                &s,
                &RecordOptions { checkpoint_interval: Some(interval), ..RecordOptions::default() },
            );
            ensure!(with.log == none.log, "{name}: log changes with {interval}ms checkpoints");
            ensure!(
                with.summaries == none.summaries && with.end == none.end,
                "{name}: outcome changes with checkpoints"
            );
        }
        compared += 1;
    }

    let mut points = Vec::new();
    for n in [1000u64, 2000, 4000] {
        let t = alloc_trace(n);
        let cp = t.checkpoints.iter().find(|c| c.event_index > 0).ok_or("no checkpoint after allocation")?;
        // n records, the array, and a handful of environments and closures.
        ensure!(cp.live_objects > n && cp.live_objects <= n + 32, "{n}: {} live objects", cp.live_objects);
        points.push((cp.live_objects as f64, cp.image.len() as f64));
    }
    let rows: Vec<Vec<f64>> = points.iter().map(|(x, _)| vec![1.0, *x]).collect();
    let y: Vec<f64> = points.iter().map(|(_, s)| *s).collect();
    let b = least_squares(&rows, &y);
    for (x, s) in &points {
        let pred = b[0] + b[1] * x;
        ensure!(pred > 0.0 && s / pred <= 2.0 && pred / s <= 2.0, "size {s} at {x} objects is off the fit {pred}");
    }
    Ok(format!(
        "{compared} programs log identically with and without checkpoints; checkpoint bytes {:?} for live objects {:?} (fit {:.0} + {:.1}/object)",
        points.iter().map(|p| p.1 as u64).collect::<Vec<_>>(),
        points.iter().map(|p| p.0 as u64).collect::<Vec<_>>(),
        b[0],
        b[1]
    ))
}

type Mutation = (&'static str, &'static str, fn(&mut Vec<LogEntry>) -> bool);

fn nth_pos(log: &[LogEntry], n: usize, pred: impl Fn(&LogEntry) -> bool) -> Option<usize> {
    log.iter().enumerate().filter(|(_, e)| pred(e)).nth(n).map(|(i, _)| i)
}

fn is_simple(e: &LogEntry) -> bool {
    matches!(e, LogEntry::Simple { .. })
}
fn is_event(e: &LogEntry) -> bool {
    matches!(e, LogEntry::Event { .. })
}
fn is_inter(e: &LogEntry) -> bool {
    matches!(e, LogEntry::InterEvent { .. })
}
fn is_concurrent(e: &LogEntry) -> bool {
    matches!(e, LogEntry::Concurrent { .. })
}

fn bump_simple(log: &mut [LogEntry], n: usize) -> bool {
    let Some(i) = nth_pos(log, n, is_simple) else { return false };
    if let LogEntry::Simple { value, .. } = &mut log[i] {
        *value += 1;
    }
    true
}

fn retype_simple(log: &mut [LogEntry], n: usize) -> bool {
    use ttd_core::guest::HostCallKind;
    let Some(i) = nth_pos(log, n, is_simple) else { return false };
    if let LogEntry::Simple { kind, .. } = &mut log[i] {
        *kind = if *kind == HostCallKind::DateNow { HostCallKind::SetTimeout } else { HostCallKind::DateNow };
    }
    true
}

fn delete(log: &mut Vec<LogEntry>, n: usize, pred: fn(&LogEntry) -> bool) -> bool {
    let Some(i) = nth_pos(log, n, pred) else { return false };
    log.remove(i);
    true
}

/// Swaps what happened in events `n` and `n + 1`, keeping their indexes.
fn swap_events(log: &mut [LogEntry], n: usize) -> bool {
    let (Some(a), Some(b)) = (nth_pos(log, n, is_event), nth_pos(log, n + 1, is_event)) else { return false };
    let (LogEntry::Event { descriptor: da, .. }, LogEntry::Event { descriptor: db, .. }) =
        (log[a].clone(), log[b].clone())
    else {
        unreachable!()
    };
    if da == db {
        return false;
    }
    if let LogEntry::Event { descriptor, .. } = &mut log[a] {
        *descriptor = db;
    }
    if let LogEntry::Event { descriptor, .. } = &mut log[b] {
        *descriptor = da;
    }
    true
}

/// Moves whole Event entries: event n+1's entry now comes first.
fn reorder_entries(log: &mut [LogEntry], n: usize) -> bool {
    let (Some(a), Some(b)) = (nth_pos(log, n, is_event), nth_pos(log, n + 1, is_event)) else { return false };
    log.swap(a, b);
    true
}

fn shift_concurrent(log: &mut [LogEntry], n: usize) -> bool {
    let Some(i) = nth_pos(log, n, is_concurrent) else { return false };
    if let LogEntry::Concurrent { interaction, .. } = &mut log[i] {
        *interaction += 1000;
    }
    true
}

fn delay_event(log: &mut [LogEntry], n: usize) -> bool {
    let Some(i) = nth_pos(log, n, is_event) else { return false };
    if let LogEntry::Event { at, .. } = &mut log[i] {
        *at += 1;
    }
    true
}

fn alter_update(log: &mut [LogEntry], n: usize) -> bool {
    let Some(i) = nth_pos(log, n, is_inter) else { return false };
    if let LogEntry::InterEvent { updates, .. } = &mut log[i] {
        if let Some(u) = updates.first_mut() {
            match u {
                HostUpdate::ClockSet { now } => *now += 1,
                HostUpdate::AnimationAdvance { frame_count, .. } => *frame_count += 1,
                HostUpdate::ParseAdvance { offset, .. } => *offset += 1,
                HostUpdate::XhrTransition { bytes, .. } => *bytes += 1,
                HostUpdate::ResourceLoaded { width, .. } => *width += 1,
            }
            return true;
        }
    }
    false
}

fn duplicate_simple(log: &mut Vec<LogEntry>, n: usize) -> bool {
    let Some(i) = nth_pos(log, n, is_simple) else { return false };
    let e = log[i].clone();
    log.insert(i, e);
    true
}

fn criterion_10() -> Outcome {
    let mutations: Vec<Mutation> = vec![
        ("feed", "simple value +1 (first)", |l| bump_simple(l, 0)),
        ("feed", "simple value +1 (third)", |l| bump_simple(l, 2)),
        ("game", "simple value +1 (last)", |l| {
            let n = l.iter().filter(|e| is_simple(e)).count();
            n > 0 && bump_simple(l, n - 1)
        }),
        ("feed", "simple entry retyped", |l| retype_simple(l, 1)),
        ("race", "simple entry retyped", |l| retype_simple(l, 0)),
        ("feed", "simple entry deleted", |l| delete(l, 3, is_simple)),
        ("game", "simple entry deleted", |l| delete(l, 0, is_simple)),
        ("game", "event entry deleted", |l| delete(l, 5, is_event)),
        ("gallery", "event entry deleted", |l| delete(l, 1, is_event)),
        ("game", "events swapped in place", |l| swap_events(l, 11)),
        ("race", "events swapped in place", |l| swap_events(l, 1)),
        ("feed", "event entries reordered", |l| reorder_entries(l, 4)),
        ("feed", "inter-event entry deleted", |l| delete(l, 0, is_inter)),
        ("gallery", "inter-event entry deleted", |l| delete(l, 1, is_inter)),
        ("feed", "concurrent entry deleted", |l| delete(l, 0, is_concurrent)),
        ("game", "concurrent entry deleted", |l| delete(l, 3, is_concurrent)),
        ("todo", "concurrent counter moved past its event", |l| shift_concurrent(l, 0)),
        ("game", "event time shifted", |l| delay_event(l, 10)),
        ("gallery", "inter-event update altered", |l| alter_update(l, 0)),
        ("feed", "simple entry duplicated", |l| duplicate_simple(l, 4)),
    ];
    let traces: HashMap<&str, Arc<Trace>> =
        corpus().iter().filter(|c| !c.name.starts_with("gen")).map(|c| (c.name.as_str(), c.trace.clone())).collect();
    let mut kinds: BTreeMap<&str, usize> = BTreeMap::new();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for (i, (demo, what, f)) in mutations.iter().enumerate() {
        let mut t = (*traces[demo]).clone();
        ensure!(f(&mut t.log), "{demo}: cannot apply `{what}`");
        let t = Arc::new(t);
        let r = catch_unwind(AssertUnwindSafe(|| verify(&t, false)))
            .map_err(|_| format!("{demo} {what}: replay crashed"))?;
        match r {
            Err(ReplayError::Divergence(rep)) => *kinds.entry(rep.kind.name()).or_default() += 1,
            Err(e) => return Err(format!("{demo} {what}: failed without a divergence report: {e}")),
            Ok(_) => return Err(format!("{demo} {what}: replay silently accepted the fault")),
        }
        // The same fault through the CLI and a debug session.
        let path = dir.path().join(format!("fault{i}.ttdt"));
        std::fs::write(&path, encode_trace(&t, true).0).unwrap();
        let (code, _, err) = run_cli(&["verify", path.to_str().unwrap()]);
        ensure!(code == 1 && err.contains("divergence"), "{demo} {what}: cli exit {code}: {err}");
        let mut s = match catch_unwind(AssertUnwindSafe(|| DebugSession::open(t.clone()))) {
            Ok(Ok(s)) => s,
            Ok(Err(_)) => continue,
            Err(_) => return Err(format!("{demo} {what}: session open crashed")),
        };
        let end = catch_unwind(AssertUnwindSafe(|| {
            let r = s.continue_forward();
            (r, s.take_notices())
        }))
        .map_err(|_| format!("{demo} {what}: session crashed"))?;
        let _ = end;
    }
    Ok(format!("{} faults, each reported as a divergence ({kinds:?})", mutations.len()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "replay determinism", criterion_1),
        (2, "checkpoint equivalence", criterion_2),
        (3, "reverse-step oracle", criterion_3),
        (4, "timestamp semantics", criterion_4),
        (5, "interaction-counter semantics", criterion_5),
        (6, "race reproduction", criterion_6),
        (7, "opportunistic-checkpoint amortization", criterion_7),
        (8, "log growth proportionality", criterion_8),
        (9, "checkpoint transparency and size", criterion_9),
        (10, "divergence detection", criterion_10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| x == &n.to_string()) {
            continue;
        }
        let start = Instant::now();
        let r = catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or(p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match r {
            Ok(detail) => println!("criterion {n:>2} PASS {name} [{secs:.1}s]: {detail}"),
            Err(e) => {
                failed += 1;
                println!("criterion {n:>2} FAIL {name} [{secs:.1}s]: {e}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
