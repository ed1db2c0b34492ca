use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::time::Duration;

use serde_json::{json, Value as Json};
use ttd_core::proto::{serve, ServerHandle};

struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_id: u64,
}

impl Client {
    fn connect(server: &ServerHandle) -> (Client, Json) {
        let stream = TcpStream::connect(server.local_addr()).unwrap();
        stream.set_read_timeout(Some(Duration::from_secs(60))).unwrap();
        let mut c = Client { reader: BufReader::new(stream.try_clone().unwrap()), writer: stream, next_id: 0 };
        let hello = c.read();
        (c, hello)
    }

    fn read(&mut self) -> Json {
        let mut line = String::new();
        let n = self.reader.read_line(&mut line).unwrap();
        assert!(n > 0, "connection closed");
        serde_json::from_str(&line).unwrap()
    }

    fn send(&mut self, method: &str, params: Json) -> u64 {
        self.next_id += 1;
        let msg = json!({ "id": self.next_id, "method": method, "params": params });
        writeln!(self.writer, "{msg}").unwrap();
        self.next_id
    }

    fn raw(&mut self, bytes: &[u8]) {
        self.writer.write_all(bytes).unwrap();
    }

    /// Reads until the response to `id`; returns it with the notifications
    /// that came first.
    fn wait(&mut self, id: u64) -> (Json, Vec<Json>) {
        let mut notes = Vec::new();
        loop {
            let m = self.read();
            if m.get("id") == Some(&json!(id)) {
                return (m, notes);
            }
            notes.push(m);
        }
    }

    fn call(&mut self, method: &str, params: Json) -> (Json, Vec<Json>) {
        let id = self.send(method, params);
        self.wait(id)
    }

    fn ok(&mut self, method: &str, params: Json) -> Json {
        let (r, _) = self.call(method, params);
        assert_eq!(r["ok"], true, "{method}: {r}");
        r["result"].clone()
    }
}

fn server() -> ServerHandle {
    serve("127.0.0.1:0").unwrap()
}

#[test]
fn hello_open_and_step() {
    let srv = server();
    let (mut c, hello) = Client::connect(&srv);
    assert_eq!(hello["method"], "hello");
    assert_eq!(hello["params"]["protocol"], 1);

    let opened = c.ok("session.open", json!({ "demo": "feed" }));
    assert_eq!(opened["events"], 42);
    let sid = opened["session"].as_str().unwrap().to_string();
    let start = opened["pause"].clone();
    assert_eq!(start["event"], 0);

    let (r, _) = c.call("exec.stepBack", json!({ "session": sid }));
    assert_eq!(r["ok"], false);
    assert_eq!(r["error"]["code"], "no-predecessor");

    let (r, notes) = c.call("exec.stepForward", json!({ "session": sid }));
    assert_eq!(r["ok"], true);
    assert_eq!(notes.len(), 1, "{notes:?}");
    assert_eq!(notes[0]["method"], "stopped");
    assert_eq!(notes[0]["params"]["session"], sid.as_str());
    assert_eq!(notes[0]["params"]["location"], r["result"]["pause"]["location"]);

    let back = c.ok("exec.stepBack", json!({ "session": sid }))["pause"].clone();
    assert_eq!(back["location"], start["location"]);
    assert_eq!(back["logicalTime"], start["logicalTime"]);

    let list = c.ok("session.list", json!({}));
    assert_eq!(list.as_array().unwrap().len(), 1, "{list}");
    c.ok("session.close", json!({ "session": sid }));
    let (r, _) = c.call("inspect.stack", json!({ "session": sid }));
    assert_eq!(r["ok"], false);
    srv.shutdown();
}

#[test]
fn breakpoints_continue_and_inspect() {
    let srv = server();
    let (mut c, _) = Client::connect(&srv);
    let sid = c.ok("session.open", json!({ "demo": "todo" }))["session"].as_str().unwrap().to_string();
    let bp = c.ok("bp.set", json!({ "session": sid, "script": "todo.tts", "line": 3 }));
    assert_eq!(bp["id"], 1);
    assert_eq!(c.ok("bp.list", json!({ "session": sid })).as_array().unwrap().len(), 1);
    let r = c.ok("exec.continue", json!({ "session": sid }));
    assert_eq!(r["ended"], false);
    assert_eq!(r["pause"]["reason"]["kind"], "breakpoint");
    assert_eq!(r["pause"]["location"]["line"], 3);

    let stack = c.ok("inspect.stack", json!({ "session": sid }));
    assert!(stack.is_array() || stack.is_object(), "{stack}");
    c.ok("inspect.dom", json!({ "session": sid }));
    c.ok("timeline.info", json!({ "session": sid }));
    let (r, _) = c.call("inspect.heap", json!({ "session": sid, "path": "no.such.thing" }));
    assert_eq!(r["error"]["code"], "invalid-heap-path");

    c.ok("bp.clear", json!({ "session": sid }));
    let (r, notes) = c.call("exec.continue", json!({ "session": sid }));
    assert_eq!(r["result"]["ended"], true, "{r}");
    assert!(notes.iter().any(|n| n["method"] == "sessionEnded" && n["params"]["reason"] == "end-of-trace"));

    let travelled = c.ok("exec.travelTo", json!({ "session": sid, "event": 2 }));
    assert_eq!(travelled["pause"]["event"], 2);
    srv.shutdown();
}

/// A trace whose first event runs long enough to overlap a second request.
fn slow_trace(dir: &std::path::Path) -> String {
    use std::sync::Arc;
    use ttd_core::guest::{Program, ScriptSource};
    use ttd_core::host::Scenario;
    use ttd_core::record::{record, tracefile::encode_trace, RecordOptions};

    let text = "let n = 0;\nlet i = 0;\nwhile (i < 1500000) {\n  n = (n + i) % 97;\n  i = i + 1;\n}\nset_timeout(function () { n = 0; }, 5);\n";
    let program = Program::from_sources(vec![ScriptSource { name: "slow.tts".into(), text: text.into() }]).unwrap();
    let scenario = Scenario::from_json(
        r#"{"version":1,"seed":1,"duration_ms":50,"documents":[{"name":"main","markup":"<p>x</p>"}]}"#,
    )
    .unwrap();
    let trace = record(Arc::new(program), &scenario, &RecordOptions::default());
    assert!(trace.summaries[0].errors.is_empty());
    let path = dir.join("slow.ttdt");
    std::fs::write(&path, encode_trace(&trace, true).0).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn concurrent_exec_is_rejected_as_busy() {
    let dir = tempfile::tempdir().unwrap();
    let srv = server();
    let (mut c, _) = Client::connect(&srv);
    let sid = c.ok("session.open", json!({ "trace": slow_trace(dir.path()) }))["session"].as_str().unwrap().to_string();
    // Getting to event 1 replays the whole first event; the second travel
    // arrives while that runs.
    let (a, b) = (100, 101);
    let both = format!(
        "{}\n{}\n",
        json!({ "id": a, "method": "exec.travelTo", "params": { "session": sid, "event": 1 } }),
        json!({ "id": b, "method": "exec.travelTo", "params": { "session": sid, "event": 0 } })
    );
    c.raw(both.as_bytes());
    let mut responses: std::collections::HashMap<u64, Json> = std::collections::HashMap::new();
    while responses.len() < 2 {
        let m = c.read();
        if let Some(id) = m.get("id").and_then(Json::as_u64) {
            responses.insert(id, m);
        }
    }
    assert_eq!(responses[&a]["ok"], true, "{:?}", responses[&a]);
    assert_eq!(responses[&b]["ok"], false);
    assert_eq!(responses[&b]["error"]["code"], "busy");
    // The session is usable afterwards.
    let r = c.ok("exec.travelTo", json!({ "session": sid, "event": 0 }));
    assert_eq!(r["pause"]["event"], 0);
    srv.shutdown();
}

#[test]
fn malformed_input_gets_errors_not_disconnects() {
    let srv = server();
    let (mut c, _) = Client::connect(&srv);
    c.raw(b"this is not json\n");
    let r = c.read();
    assert_eq!(r["ok"], false);
    assert_eq!(r["error"]["rpcCode"], -32700);
    c.raw(b"{\"id\":7}\n");
    let r = c.read();
    assert_eq!(r["error"]["rpcCode"], -32600);
    let (r, _) = c.call("no.such.method", json!({}));
    assert_eq!(r["error"]["rpcCode"], -32601);
    let (r, _) = c.call("session.open", json!({ "trace": 5 }));
    assert_eq!(r["ok"], false);

    // Deterministic junk bytes, then a valid request still works.
    let mut x: u64 = 0x9e37_79b9_7f4a_7c15;
    for _ in 0..200 {
        let mut line = Vec::new();
        for _ in 0..(x % 64) {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            let b = (x & 0xff) as u8;
            if b != b'\n' {
                line.push(b);
            }
        }
        line.push(b'\n');
        c.raw(&line);
    }
    let id = c.send("session.list", json!({}));
    let (r, junk) = c.wait(id);
    assert_eq!(r["ok"], true);
    assert!(junk.iter().all(|m| m["ok"] == false), "{junk:?}");
    srv.shutdown();
}

#[test]
fn second_client_can_attach_and_observe() {
    let srv = server();
    let (mut a, _) = Client::connect(&srv);
    let (mut b, _) = Client::connect(&srv);
    let sid = a.ok("session.open", json!({ "demo": "race" }))["session"].as_str().unwrap().to_string();
    b.ok("session.attach", json!({ "session": sid }));
    a.ok("exec.stepForward", json!({ "session": sid }));
    let note = b.read();
    assert_eq!(note["method"], "stopped");
    assert_eq!(note["params"]["session"], sid.as_str());

    // Closing the owner's connection closes its sessions.
    drop(a);
    let ended = b.read();
    assert_eq!(ended["method"], "sessionEnded", "{ended}");
    srv.shutdown();
}
