//! Random (program, scenario) generation for property tests. Programs always
//! terminate: loops are counter-bounded and calls only go to functions with
//! a higher index.

use std::fmt::Write as _;

use indexmap::IndexMap;

use crate::guest::ScriptSource;
use crate::host::scenario::{ChunkSpec, DocumentSpec, InputSpec, ResourceSpec, ResponseSpec, SCENARIO_VERSION};
use crate::host::{Scalar, Scenario, Xorshift64Star};

#[derive(Debug, Clone)]
pub struct Generated {
    pub name: String,
    pub sources: Vec<ScriptSource>,
    pub scenario: Scenario,
}

struct Gen {
    rng: Xorshift64Star,
    out: String,
    next_var: u32,
    functions: usize,
}

impl Gen {
    fn pick<'a>(&mut self, xs: &'a [String]) -> &'a str {
        &xs[self.rng.range(0, xs.len() as u64 - 1) as usize]
    }

    /// Loop counters are readable but never reassigned, so loops stay bounded.
    fn target(&mut self, vars: &[String]) -> String {
        let writable: Vec<String> = vars.iter().filter(|v| !v.starts_with('i')).cloned().collect();
        self.pick(&writable).to_string()
    }

    fn fresh(&mut self, prefix: &str) -> String {
        self.next_var += 1;
        format!("{prefix}{}", self.next_var)
    }

    fn expr(&mut self, vars: &[String], depth: u32) -> String {
        let choice = if depth >= 2 { self.rng.range(0, 1) } else { self.rng.range(0, 5) };
        match choice {
            0 => self.rng.range(0, 20).to_string(),
            1 => self.pick(vars).to_string(),
            2 => {
                let op = ["+", "-", "*"][self.rng.range(0, 2) as usize];
                format!("{} {op} {}", self.expr(vars, depth + 1), self.expr(vars, depth + 1))
            }
            3 => format!("({}) % {}", self.expr(vars, depth + 1), self.rng.range(2, 9)),
            4 => format!("floor({} / 2)", self.expr(vars, depth + 1)),
            _ => format!("len(log) + {}", self.expr(vars, depth + 1)),
        }
    }

    fn cond(&mut self, vars: &[String]) -> String {
        let op = ["<", "<=", ">", ">=", "==", "!="][self.rng.range(0, 5) as usize];
        format!("{} {op} {}", self.expr(vars, 1), self.expr(vars, 1))
    }

    fn line(&mut self, indent: usize, text: &str) {
        let _ = writeln!(self.out, "{}{}", "  ".repeat(indent), text);
    }

    fn block(
        &mut self,
        indent: usize,
        fn_index: usize,
        vars: &mut Vec<String>,
        budget: u32,
        depth: u32,
        in_loop: bool,
    ) {
        let n = self.rng.range(1, budget.max(1) as u64);
        for _ in 0..n {
            let max = if depth >= 2 { 7 } else { 10 };
            match self.rng.range(0, max) {
                0 | 1 => {
                    let v = self.fresh("v");
                    let e = self.expr(vars, 0);
                    self.line(indent, &format!("let {v} = {e};"));
                    vars.push(v);
                }
                2 | 3 => {
                    let target = self.target(vars);
                    let e = self.expr(vars, 0);
                    self.line(indent, &format!("{target} = {e};"));
                }
                4 => {
                    let e = self.expr(vars, 0);
                    self.line(indent, &format!("push(log, {e});"));
                    self.line(indent, "if (len(log) > 12) {");
                    self.line(indent + 1, "pop(log);");
                    self.line(indent, "}");
                }
                5 => {
                    let e = self.expr(vars, 1);
                    match self.rng.range(0, 4) {
                        0 => self.line(indent, &format!("console_log(\"f{fn_index}\", {e});")),
                        1 => {
                            let k = self.rng.range(0, 3);
                            self.line(indent, &format!("storage_set(\"k{k}\", {e});"));
                        }
                        2 => {
                            let t = self.target(vars);
                            self.line(indent, &format!("{t} = floor(random() * 10);"));
                        }
                        3 => {
                            let t = self.target(vars);
                            self.line(indent, &format!("{t} = date_now() % 1000;"));
                        }
                        _ => self
                            .line(indent, &format!("set_attribute(query_node(\"#app\"), \"data-f{fn_index}\", {e});")),
                    }
                }
                6 => {
                    self.line(indent, "bag.hits = bag.hits + 1;");
                    let e = self.expr(vars, 1);
                    self.line(indent, &format!("bag.last = {e};"));
                }
                7 if !in_loop && fn_index + 1 < self.functions => {
                    let j = self.rng.range(fn_index as u64 + 1, self.functions as u64 - 1);
                    let t = self.target(vars);
                    let (a, b) = (self.expr(vars, 1), self.expr(vars, 1));
                    self.line(indent, &format!("{t} = f{j}({a}, {b});"));
                }
                7 => {
                    let c = self.fresh("c");
                    let captured = self.pick(vars).to_string();
                    let t = self.target(vars);
                    self.line(indent, &format!("let {c} = function (y) {{"));
                    self.line(indent + 1, &format!("return y + {captured};"));
                    self.line(indent, "};");
                    let arg = self.rng.range(0, 5);
                    self.line(indent, &format!("{t} = {c}({arg});"));
                }
                8 => {
                    let c = self.cond(vars);
                    self.line(indent, &format!("if ({c}) {{"));
                    let mut inner = vars.clone();
                    self.block(indent + 1, fn_index, &mut inner, budget / 2, depth + 1, in_loop);
                    if self.rng.chance(1, 2) {
                        self.line(indent, "} else {");
                        let mut inner = vars.clone();
                        self.block(indent + 1, fn_index, &mut inner, budget / 2, depth + 1, in_loop);
                    }
                    self.line(indent, "}");
                }
                _ => {
                    let i = self.fresh("i");
                    let bound = self.rng.range(1, 4);
                    self.line(indent, &format!("let {i} = 0;"));
                    vars.push(i.clone());
                    self.line(indent, &format!("while ({i} < {bound}) {{"));
                    let mut inner = vars.clone();
                    self.block(indent + 1, fn_index, &mut inner, budget / 2, depth + 1, true);
                    self.line(indent + 1, &format!("{i} = {i} + 1;"));
                    self.line(indent, "}");
                }
            }
        }
    }

    fn function(&mut self, i: usize) {
        self.line(0, &format!("function f{i}(a, b) {{"));
        let mut vars = vec!["a".to_string(), "b".to_string(), "g0".to_string(), "g1".to_string()];
        self.block(1, i, &mut vars, 6, 0, false);
        let e = self.expr(&vars, 0);
        self.line(1, &format!("return {e};"));
        self.line(0, "}");
        self.line(0, "");
    }
}

/// Deterministic (program, scenario) pair for `seed`.
pub fn generate(seed: u64) -> Generated {
    let mut g = Gen {
        rng: Xorshift64Star::new(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1),
        out: String::new(),
        next_var: 0,
        functions: 0,
    };
    g.functions = g.rng.range(2, 5) as usize;
    let duration = g.rng.range(300, 2500);

    let (g0, g1) = (g.rng.range(0, 9), g.rng.range(0, 9));
    g.line(0, &format!("let g0 = {g0};"));
    g.line(0, &format!("let g1 = {g1};"));
    g.line(0, "let log = [];");
    g.line(0, "let bag = { hits: 0, last: 0 };");
    g.line(0, "let app = query_node(\"#app\");");
    g.line(0, "");
    for i in 0..g.functions {
        g.function(i);
    }
    let f = |g: &mut Gen| g.rng.range(0, g.functions as u64 - 1);

    let mut network = IndexMap::new();
    let mut resources = IndexMap::new();
    let mut documents = vec![DocumentSpec {
        name: "main".into(),
        markup: "<div id=\"app\"><button id=\"btn\">go</button><p id=\"out\">-</p></div>".into(),
        streamed: false,
        chunk: [4, 32],
    }];

    let k = f(&mut g);
    g.line(0, &format!("g0 = f{k}(g0, g1);"));
    let features = g.rng.range(2, 6);
    for n in 0..features {
        match g.rng.range(0, 6) {
            0 => {
                let k = f(&mut g);
                let delay = g.rng.range(0, 200);
                g.line(0, "set_timeout(function () {");
                g.line(1, &format!("g1 = f{k}(g1, {n});"));
                g.line(0, &format!("}}, {delay});"));
            }
            1 => {
                let k = f(&mut g);
                let limit = g.rng.range(2, 8);
                g.line(0, &format!("let ticks{n} = 0;"));
                g.line(0, &format!("let timer{n} = set_interval(function () {{"));
                g.line(1, &format!("ticks{n} = ticks{n} + 1;"));
                g.line(1, &format!("g0 = f{k}(ticks{n}, g0);"));
                g.line(1, &format!("if (ticks{n} >= {limit}) {{"));
                g.line(2, &format!("clear_timer(timer{n});"));
                g.line(1, "}");
                let period = g.rng.range(20, 150);
                g.line(0, &format!("}}, {period});"));
            }
            2 => {
                let k = f(&mut g);
                g.line(0, "add_event_listener(query_node(\"#btn\"), \"click\", function (ev) {");
                g.line(1, &format!("g1 = f{k}(ev.x, g1);"));
                g.line(0, "});");
            }
            3 => {
                let k = f(&mut g);
                let url = format!("/data/{n}");
                g.line(0, &format!("let req{n} = xhr_open(\"GET\", \"{url}\");"));
                g.line(0, &format!("add_event_listener(req{n}, \"readystatechange\", function (ev) {{"));
                g.line(1, "if (ev.state == 4) {");
                g.line(2, &format!("g0 = f{k}(len(xhr_response(req{n})), ev.status);"));
                g.line(1, "}");
                g.line(0, "});");
                g.line(0, &format!("xhr_send(req{n});"));
                let body: String = (0..g.rng.range(0, 60)).map(|i| (b'a' + (i % 26) as u8) as char).collect();
                let chunks = if g.rng.chance(1, 2) {
                    vec![ChunkSpec { after_ms: g.rng.range(20, 200), bytes: body.len() as u64 / 2 }]
                } else {
                    Vec::new()
                };
                network.insert(
                    url,
                    ResponseSpec {
                        status: if g.rng.chance(1, 5) { 500 } else { 200 },
                        body,
                        headers_ms: g.rng.range(5, 120),
                        chunks,
                    },
                );
            }
            4 => {
                let k = f(&mut g);
                let url = format!("/img/{n}.png");
                g.line(0, &format!("let img{n} = create_element(\"img\");"));
                g.line(0, &format!("add_event_listener(img{n}, \"load\", function (ev) {{"));
                g.line(1, &format!("g1 = f{k}(1, g1);"));
                g.line(0, "});");
                g.line(0, &format!("append_child(app, img{n});"));
                g.line(0, &format!("set_attribute(img{n}, \"src\", \"{url}\");"));
                resources.insert(
                    url,
                    ResourceSpec {
                        width: g.rng.range(1, 300) as u32,
                        height: g.rng.range(1, 300) as u32,
                        bytes: g.rng.range(100, 20000),
                        delay_ms: None,
                        fail: g.rng.chance(1, 6),
                    },
                );
            }
            _ => {
                let k = f(&mut g);
                let name = format!("extra{n}");
                let markup: String =
                    (0..g.rng.range(2, 6)).map(|i| format!("<p id=\"p{n}_{i}\">item {i}</p>")).collect();
                documents.push(DocumentSpec { name: name.clone(), markup, streamed: true, chunk: [4, 20] });
                g.line(0, &format!("add_event_listener(query_node(\"document:{name}\"), \"parse\", function (ev) {{"));
                g.line(1, &format!("g0 = f{k}(ev.offset, g0);"));
                g.line(0, "});");
                if g.rng.chance(1, 2) {
                    g.line(0, "set_attribute(app, \"animate\", \"30\");");
                }
            }
        }
    }

    let clicks = g.rng.range(0, 4);
    let inputs = (0..clicks)
        .map(|_| {
            let mut payload = IndexMap::new();
            payload.insert("x".to_string(), Scalar::Num(g.rng.range(0, 100) as f64));
            InputSpec { at: g.rng.range(1, duration), kind: "click".into(), target: "#btn".into(), payload }
        })
        .collect();

    let scenario = Scenario {
        version: SCENARIO_VERSION,
        seed: g.rng.next_u64() % 1000,
        prng_seed: 1 + g.rng.next_u64() % 1000,
        duration_ms: duration,
        documents,
        inputs,
        network,
        resources,
    };
    Generated {
        name: format!("gen{seed}"),
        sources: vec![ScriptSource { name: format!("gen{seed}.tts"), text: g.out }],
        scenario,
    }
}
