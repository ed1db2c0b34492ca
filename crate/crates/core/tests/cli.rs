use std::path::{Path, PathBuf};

use ttd_core::cli::{run, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};

fn ttd(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["ttd", "--no-color"];
    argv.extend_from_slice(args);
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn record_demo(dir: &Path, demo: &str) -> PathBuf {
    let path = dir.join(format!("{demo}.ttdt"));
    let (code, out, err) = ttd(&["record", "--demo", demo, "--out", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{out}{err}");
    path
}

#[test]
fn recording_twice_gives_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for demo in ["feed", "race", "todo"] {
        let x = std::fs::read(record_demo(a.path(), demo)).unwrap();
        let y = std::fs::read(record_demo(b.path(), demo)).unwrap();
        assert_eq!(x, y, "{demo}");
    }
}

#[test]
fn record_summary_and_verify() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("feed.ttdt");
    let (code, out, _) = ttd(&["record", "--demo", "feed", "--out", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("events       42"), "{out}");
    let (code, out, _) = ttd(&["verify", "--all-checkpoints", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    assert!(out.starts_with("ok: 42 events"), "{out}");
}

#[test]
fn record_from_files_with_seed() {
    let dir = tempfile::tempdir().unwrap();
    let prog = dir.path().join("p.tts");
    let scen = dir.path().join("s.json");
    std::fs::write(&prog, "let t = date_now();\nset_timeout(function () { t = date_now(); }, 30);\n").unwrap();
    std::fs::write(
        &scen,
        r#"{"version":1,"seed":1,"duration_ms":100,"documents":[{"name":"main","markup":"<p>x</p>"}]}"#,
    )
    .unwrap();
    let out1 = dir.path().join("1.ttdt");
    let out2 = dir.path().join("2.ttdt");
    for (seed, out) in [("5", &out1), ("6", &out2)] {
        let (code, _, err) = ttd(&[
            "record",
            prog.to_str().unwrap(),
            scen.to_str().unwrap(),
            "--seed",
            seed,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_OK, "{err}");
        assert_eq!(ttd(&["verify", out.to_str().unwrap()]).0, EXIT_OK);
    }
    assert_ne!(std::fs::read(&out1).unwrap(), std::fs::read(&out2).unwrap());
}

#[test]
fn dump_end_state_matches_verify_print_final() {
    let dir = tempfile::tempdir().unwrap();
    for demo in ["feed", "gallery"] {
        let path = record_demo(dir.path(), demo);
        let p = path.to_str().unwrap();
        let (_, verified, _) = ttd(&["verify", "--print-final", p]);
        let (code, dumped, _) = ttd(&["dump", p, "--what", "dom@end"]);
        assert_eq!(code, EXIT_OK);
        let final_state = verified.split_once('\n').unwrap().1;
        assert_eq!(final_state, dumped, "{demo}");
        let (_, at0, _) = ttd(&["dump", p, "--what", "dom@0"]);
        assert!(at0.starts_with("clock 0\ninteractions 0\n"), "{at0}");
    }
}

#[test]
fn dump_views() {
    let dir = tempfile::tempdir().unwrap();
    let path = record_demo(dir.path(), "race");
    let p = path.to_str().unwrap();
    let (_, log, _) = ttd(&["dump", p, "--what", "log"]);
    assert!(log.lines().next().unwrap().contains("event 0"), "{log}");
    let (_, cps, _) = ttd(&["dump", p, "--what", "checkpoints"]);
    assert!(!cps.is_empty());
    let (_, events, _) = ttd(&["dump", p, "--what", "events"]);
    assert_eq!(events.lines().count(), 6, "{events}");
    assert_eq!(ttd(&["dump", p, "--what", "dom@99"]).0, EXIT_USAGE);
    assert_eq!(ttd(&["dump", p, "--what", "bogus"]).0, EXIT_USAGE);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ttd(&["verify", "/nonexistent/t.ttdt"]).0, EXIT_USAGE);
    assert_eq!(ttd(&["frobnicate"]).0, EXIT_USAGE);
    assert_eq!(ttd(&["record", "--demo", "nope", "--out", "/dev/null"]).0, EXIT_USAGE);

    let path = record_demo(dir.path(), "feed");
    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&path, bytes).unwrap();
    let (code, _, err) = ttd(&["verify", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_FAILURE);
    assert!(err.contains("trace integrity failure"), "{err}");
}

#[test]
fn debug_script_runs_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let path = record_demo(dir.path(), "todo");
    let script = dir.path().join("s.ttds");
    std::fs::write(&script, "# start\nwhere\nstep\nstepback\nstepback\ninspect stack\nstats\n").unwrap();
    let (code, out, err) = ttd(&["debug", path.to_str().unwrap(), "--script", script.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.starts_with("event 0 at "), "{out}");
    // Back to the first statement, then nothing before it.
    let blocks: Vec<&str> = out.split("> ").collect();
    let place = |b: &str| b.lines().nth(1).unwrap().split(" [").next().unwrap().to_string();
    assert_eq!(place(blocks[1]), place(blocks[3]));
    assert!(blocks[4].contains("error[no-predecessor]"), "{out}");
    assert!(out.contains("> stats\nrestores"), "{out}");

    std::fs::write(&script, "where\nfly away\n").unwrap();
    let (code, out, err) = ttd(&["debug", path.to_str().unwrap(), "--script", script.to_str().unwrap()]);
    assert_eq!(code, EXIT_USAGE);
    assert!(out.is_empty());
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn config_file_sets_defaults_and_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let rc = dir.path().join("rc.json");
    let out = dir.path().join("t.ttdt");
    std::fs::write(&rc, r#"{"checkpointIntervalMs": 500, "compress": false}"#).unwrap();
    let (code, _, err) =
        ttd(&["--config", rc.to_str().unwrap(), "record", "--demo", "game", "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{err}");
    let (_, cps, _) = ttd(&["dump", out.to_str().unwrap(), "--what", "checkpoints"]);
    let fine = cps.lines().count();
    let (_, _, _) = ttd(&["record", "--demo", "game", "--out", out.to_str().unwrap()]);
    let (_, cps, _) = ttd(&["dump", out.to_str().unwrap(), "--what", "checkpoints"]);
    assert!(fine > cps.lines().count(), "{fine} vs {}", cps.lines().count());

    std::fs::write(&rc, r#"{"checkpointInterval": 500}"#).unwrap();
    let (code, _, err) =
        ttd(&["--config", rc.to_str().unwrap(), "record", "--demo", "game", "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("checkpointInterval"), "{err}");
}

#[test]
fn no_checkpoints_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.ttdt");
    let (code, _, _) = ttd(&["record", "--demo", "game", "--no-checkpoints", "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    let (_, cps, _) = ttd(&["dump", out.to_str().unwrap(), "--what", "checkpoints"]);
    assert_eq!(cps.lines().count(), 1, "{cps}");
}
