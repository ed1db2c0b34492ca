use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use super::ast::*;
use super::cfg::{build_cfg, Target, Terminator};
use super::parser::parse_script;
use super::{
    FunctionDef, FunctionId, Program, ProgramError, ScriptInfo, ScriptSource, SourceLocation, StmtId, StmtMeta,
};

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// Statement boundary; the only place execution pauses.
    Stmt(StmtId),
    Num(f64),
    Str(Arc<str>),
    Bool(bool),
    Null,
    Load(Arc<str>),
    Define(Arc<str>),
    Store(Arc<str>),
    MakeObject(Arc<[Arc<str>]>),
    MakeArray(u32),
    MakeClosure(FunctionId),
    GetMember(Arc<str>),
    SetMember(Arc<str>),
    GetIndex,
    SetIndex,
    Unary(UnOp),
    Binary(BinOp),
    /// Short-circuit within an expression: jump keeping the operand if falsy.
    AndJump(u32),
    /// Short-circuit within an expression: jump keeping the operand if truthy.
    OrJump(u32),
    Pop,
    Call(u32),
    Host(HostCallKind, u32),
    Intrinsic(Intrinsic, u32),
    Goto(u32),
    Branch {
        then: u32,
        otherwise: u32,
        loop_header: bool,
    },
    Return,
    ReturnNull,
}

pub(crate) fn link(sources: Vec<ScriptSource>) -> Result<Program, ProgramError> {
    let mut fn_base = 0u32;
    let mut stmt_base = 0u32;
    let mut scripts = Vec::new();
    let mut functions: Vec<FunctionDef> = Vec::new();
    let mut statements: Vec<Option<StmtMeta>> = Vec::new();
    let mut top_names = HashSet::new();

    for (i, src) in sources.iter().enumerate() {
        let ast = parse_script(&src.text, i as u32, fn_base)
            .map_err(|error| ProgramError::Syntax { script: src.name.clone(), error })?;
        for (name, _) in &ast.body.decls {
            if !top_names.insert(name.clone()) {
                return Err(ProgramError::DuplicateFunction { name: name.to_string() });
            }
        }
        statements.resize(statements.len() + ast.stmt_count as usize, None);
        for f in &ast.functions {
            let def = compile_function(
                f.id,
                f.name.clone(),
                f.params.clone(),
                &f.body,
                None,
                i as u32,
                (f.line, f.col),
                stmt_base,
                &mut statements,
            );
            functions.push(def);
        }
        let body_id = fn_base + ast.functions.len() as u32;
        let body = compile_function(
            body_id,
            format!("<script {}>", src.name).into(),
            Vec::new(),
            &ast.body,
            Some(i as u32),
            i as u32,
            (1, 1),
            stmt_base,
            &mut statements,
        );
        functions.push(body);
        scripts.push(ScriptInfo { name: src.name.clone(), body: body_id, stmt_base, stmt_count: ast.stmt_count });
        fn_base = body_id + 1;
        stmt_base += ast.stmt_count;
    }
    debug_assert!(functions.iter().enumerate().all(|(i, f)| f.id as usize == i));
    let statements = statements.into_iter().map(|m| m.expect("every statement compiled")).collect();
    Ok(Program { sources, scripts, functions, statements })
}

fn collect_stmts<'a>(stmts: &'a [Stmt], out: &mut HashMap<u32, &'a Stmt>) {
    for s in stmts {
        out.insert(s.index, s);
        match &s.kind {
            StmtKind::If(_, a, b) => {
                collect_stmts(&a.stmts, out);
                collect_stmts(&b.stmts, out);
            }
            StmtKind::While(_, b) => collect_stmts(&b.stmts, out),
            _ => {}
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn compile_function(
    id: FunctionId,
    name: Arc<str>,
    params: Vec<Arc<str>>,
    body: &Body,
    script: Option<u32>,
    script_id: u32,
    (line, col): (u32, u32),
    stmt_base: StmtId,
    statements: &mut [Option<StmtMeta>],
) -> FunctionDef {
    let cfg = build_cfg(&body.stmts);
    let mut by_index = HashMap::new();
    collect_stmts(&body.stmts, &mut by_index);

    let mut code: Vec<Op> = Vec::new();
    let mut block_pc = vec![0u32; cfg.blocks.len()];
    // (op index, which operand, target)
    let mut fixups: Vec<(usize, u8, Target)> = Vec::new();
    let mut block_stmts = Vec::with_capacity(cfg.blocks.len());

    for block in &cfg.blocks {
        block_pc[block.id as usize] = code.len() as u32;
        let mut ids = Vec::with_capacity(block.stmts.len());
        for (pos, &local) in block.stmts.iter().enumerate() {
            let s = by_index[&local];
            let gid = stmt_base + local;
            ids.push(gid);
            statements[gid as usize] = Some(StmtMeta {
                loc: SourceLocation { script_id, stmt_index: local, line: s.line, col: s.col },
                func: id,
                block: block.id,
                pos_in_block: pos as u32,
                loop_header: matches!(s.kind, StmtKind::While(..)),
            });
            code.push(Op::Stmt(gid));
            emit_stmt(s, &mut code);
        }
        block_stmts.push(ids);
        match &block.terminator {
            Terminator::Jump(t) | Terminator::CallReturn(t) => {
                fixups.push((code.len(), 0, *t));
                code.push(Op::Goto(0));
            }
            Terminator::Branch { then, otherwise, loop_header } => {
                fixups.push((code.len(), 0, *then));
                fixups.push((code.len(), 1, *otherwise));
                code.push(Op::Branch { then: 0, otherwise: 0, loop_header: *loop_header });
            }
            Terminator::Return => {}
        }
    }
    let exit_pc = code.len() as u32;
    code.push(Op::ReturnNull);
    for (at, which, target) in fixups {
        let pc = match target {
            Target::Block(b) => block_pc[b as usize],
            Target::Exit => exit_pc,
        };
        match (&mut code[at], which) {
            (Op::Goto(t), 0) | (Op::Branch { then: t, .. }, 0) | (Op::Branch { otherwise: t, .. }, 1) => *t = pc,
            _ => unreachable!("bad fixup"),
        }
    }
    // The entry block is always laid out first.
    debug_assert_eq!(block_pc[cfg.entry as usize], 0);

    FunctionDef { id, name, params, cfg, code, decls: body.decls.clone(), script, script_id, line, col, block_stmts }
}

fn emit_stmt(s: &Stmt, code: &mut Vec<Op>) {
    match &s.kind {
        StmtKind::Let(name, e) => {
            emit_expr(e, code);
            code.push(Op::Define(name.clone()));
        }
        StmtKind::Assign(LValue::Var(name), e) => {
            emit_expr(e, code);
            code.push(Op::Store(name.clone()));
        }
        StmtKind::Assign(LValue::Member(obj, key), e) => {
            emit_expr(obj, code);
            emit_expr(e, code);
            code.push(Op::SetMember(key.clone()));
        }
        StmtKind::Assign(LValue::Index(obj, idx), e) => {
            emit_expr(obj, code);
            emit_expr(idx, code);
            emit_expr(e, code);
            code.push(Op::SetIndex);
        }
        StmtKind::Expr(e) => {
            emit_expr(e, code);
            code.push(Op::Pop);
        }
        StmtKind::If(c, ..) | StmtKind::While(c, _) => emit_expr(c, code),
        StmtKind::Return(e) => {
            match e {
                Some(e) => emit_expr(e, code),
                None => code.push(Op::Null),
            }
            code.push(Op::Return);
        }
    }
}

fn emit_expr(e: &Expr, code: &mut Vec<Op>) {
    match e {
        Expr::Num(n) => code.push(Op::Num(*n)),
        Expr::Str(s) => code.push(Op::Str(s.clone())),
        Expr::Bool(b) => code.push(Op::Bool(*b)),
        Expr::Null => code.push(Op::Null),
        Expr::Var(n) => code.push(Op::Load(n.clone())),
        Expr::Object(fields) => {
            for (_, v) in fields {
                emit_expr(v, code);
            }
            let keys: Vec<Arc<str>> = fields.iter().map(|(k, _)| k.clone()).collect();
            code.push(Op::MakeObject(keys.into()));
        }
        Expr::Array(items) => {
            for v in items {
                emit_expr(v, code);
            }
            code.push(Op::MakeArray(items.len() as u32));
        }
        Expr::Function(id) => code.push(Op::MakeClosure(*id)),
        Expr::Unary(op, a) => {
            emit_expr(a, code);
            code.push(Op::Unary(*op));
        }
        Expr::Binary(op, a, b) => {
            emit_expr(a, code);
            emit_expr(b, code);
            code.push(Op::Binary(*op));
        }
        Expr::And(a, b) | Expr::Or(a, b) => {
            emit_expr(a, code);
            let at = code.len();
            code.push(if matches!(e, Expr::And(..)) { Op::AndJump(0) } else { Op::OrJump(0) });
            emit_expr(b, code);
            let end = code.len() as u32;
            match &mut code[at] {
                Op::AndJump(t) | Op::OrJump(t) => *t = end,
                _ => unreachable!(),
            }
        }
        Expr::Member(o, k) => {
            emit_expr(o, code);
            code.push(Op::GetMember(k.clone()));
        }
        Expr::Index(o, i) => {
            emit_expr(o, code);
            emit_expr(i, code);
            code.push(Op::GetIndex);
        }
        Expr::Call(callee, args) => {
            emit_expr(callee, code);
            for a in args {
                emit_expr(a, code);
            }
            code.push(Op::Call(args.len() as u32));
        }
        Expr::Host(kind, args) => {
            for a in args {
                emit_expr(a, code);
            }
            code.push(Op::Host(*kind, args.len() as u32));
        }
        Expr::Intrinsic(op, args) => {
            for a in args {
                emit_expr(a, code);
            }
            code.push(Op::Intrinsic(*op, args.len() as u32));
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::guest::Program;

    #[test]
    fn locations_are_stable_across_parses() {
        let src = "let a = 1;\nfunction f(x) { if (x) { return 1; } return 2; }\nf(a);";
        let p1 = Program::from_source("main", src).unwrap();
        let p2 = Program::from_source("main", src).unwrap();
        let l1: Vec<_> = p1.statements.iter().map(|m| m.loc).collect();
        let l2: Vec<_> = p2.statements.iter().map(|m| m.loc).collect();
        assert_eq!(l1, l2);
        let mut sorted = l1.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), l1.len(), "locations unique");
    }

    #[test]
    fn paper_example_function_has_one_loop_header() {
        let p = Program::from_source("main", "function a(){while(true){}}").unwrap();
        let a = p.function_by_name("a").unwrap();
        assert_eq!(a.cfg.loop_headers.len(), 1);
    }

    #[test]
    fn duplicate_across_scripts() {
        let err = Program::from_sources(vec![
            crate::guest::ScriptSource { name: "a".into(), text: "function f(){}".into() },
            crate::guest::ScriptSource { name: "b".into(), text: "function f(){}".into() },
        ])
        .unwrap_err();
        assert!(matches!(err, crate::guest::ProgramError::DuplicateFunction { .. }));
    }
}
