//! Compiles a C program against the generated header and links it with the
//! static library.

use std::path::PathBuf;
use std::process::Command;

const CLIENT: &str = r#"
#include <stdio.h>
#include "ttd.h"

int main(void) {
    TtdTrace *t = NULL;
    TtdSession *s = NULL;
    TtdPause p;
    uint64_t n = 0;
    if (ttd_record_demo("race", &t) != TTD_STATUS_OK) return 10;
    if (ttd_trace_event_count(t, &n) != TTD_STATUS_OK || n == 0) return 11;
    if (ttd_session_open(t, &s) != TTD_STATUS_OK) return 12;
    ttd_trace_free(t);
    if (ttd_session_step_back(s, &p) != TTD_STATUS_NO_PREDECESSOR) return 13;
    if (ttd_session_step_forward(s, &p) != TTD_STATUS_OK) return 14;
    char *json = NULL;
    if (ttd_session_inspect(s, "stack", NULL, &json) != TTD_STATUS_OK) return 15;
    printf("events=%llu line=%u %s\n", (unsigned long long)n, p.line, ttd_status_name(TTD_STATUS_END_OF_TRACE));
    ttd_string_free(json);
    ttd_session_free(s);
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // target/<profile>/deps/<test binary>
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let lib = target_dir().join("libttd_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("client.c");
    let exe = dir.path().join("client");
    std::fs::write(&src, CLIENT).unwrap();
    let status = Command::new("cc")
        .arg("-std=c11")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("run cc");
    assert!(status.success(), "C client failed to compile");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "client exit {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("events="), "{text}");
    assert!(text.trim_end().ends_with("end-of-trace"), "{text}");
}
