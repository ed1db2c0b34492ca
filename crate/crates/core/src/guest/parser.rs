use std::collections::HashSet;
use std::sync::Arc;

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::SyntaxError;

/// Parses one script. Function ids are allocated from `fn_base` upwards.
pub fn parse_script(source: &str, script_id: u32, fn_base: u32) -> Result<ScriptAst, SyntaxError> {
    let tokens = tokenize(source)?;
    let mut p = Parser { tokens, pos: 0, next_stmt: 0, fn_base, functions: Vec::new(), scopes: vec![Vec::new()] };
    let stmts = p.stmt_list(true)?;
    let decls = p.scopes.pop().unwrap_or_default();
    let mut functions = p.functions;
    functions.sort_by_key(|f| f.id);
    Ok(ScriptAst { script_id, body: Body { stmts, decls }, functions, stmt_count: p.next_stmt })
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    next_stmt: u32,
    fn_base: u32,
    functions: Vec<FunctionAst>,
    /// Hoisted declarations per enclosing function scope.
    scopes: Vec<Vec<(Arc<str>, u32)>>,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn here(&self) -> (u32, u32) {
        let t = &self.tokens[self.pos];
        (t.line, t.col)
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, SyntaxError> {
        let (l, c) = self.here();
        Err(SyntaxError::new(l, c, msg))
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == t {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, t: Tok, what: &str) -> Result<(), SyntaxError> {
        if self.eat(&t) {
            Ok(())
        } else {
            self.err(format!("expected {what}, found {}", describe(self.peek())))
        }
    }

    fn ident(&mut self) -> Result<Arc<str>, SyntaxError> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                self.advance();
                Ok(name)
            }
            other => self.err(format!("expected identifier, found {}", describe(&other))),
        }
    }

    fn stmt_list(&mut self, top: bool) -> Result<Vec<Stmt>, SyntaxError> {
        let mut out: Vec<Stmt> = Vec::new();
        loop {
            match self.peek() {
                Tok::Eof if top => break,
                Tok::RBrace if !top => break,
                Tok::Eof => return self.err("unexpected end of input, expected `}`"),
                _ => {}
            }
            if matches!(self.peek(), Tok::Function) && matches!(self.tokens[self.pos + 1].tok, Tok::Ident(_)) {
                self.function_decl()?;
                continue;
            }
            if out.last().is_some_and(|s| matches!(s.kind, StmtKind::Return(_))) {
                return self.err("unreachable statement after `return`");
            }
            let s = self.statement()?;
            out.push(s);
        }
        Ok(out)
    }

    fn block(&mut self) -> Result<Body, SyntaxError> {
        self.expect(Tok::LBrace, "`{`")?;
        let stmts = self.stmt_list(false)?;
        self.expect(Tok::RBrace, "`}`")?;
        Ok(Body { stmts, decls: Vec::new() })
    }

    fn function_decl(&mut self) -> Result<(), SyntaxError> {
        let (line, col) = self.here();
        self.advance();
        let name = self.ident()?;
        let scope = self.scopes.last().expect("scope stack never empty");
        if scope.iter().any(|(n, _)| *n == name) {
            return Err(SyntaxError::new(line, col, format!("duplicate function name `{name}`")));
        }
        let id = self.function_rest(name.clone(), line, col)?;
        self.scopes.last_mut().unwrap().push((name, id));
        Ok(())
    }

    /// Parses `(params) { body }` and registers the function.
    fn function_rest(&mut self, name: Arc<str>, line: u32, col: u32) -> Result<u32, SyntaxError> {
        let id = self.fn_base + self.functions.len() as u32;
        // Reserve the slot so nested functions get later ids.
        self.functions.push(FunctionAst {
            id,
            name: name.clone(),
            params: Vec::new(),
            body: Body::default(),
            line,
            col,
        });
        self.expect(Tok::LParen, "`(`")?;
        let mut params = Vec::new();
        let mut seen = HashSet::new();
        if !self.eat(&Tok::RParen) {
            loop {
                let p = self.ident()?;
                if !seen.insert(p.clone()) {
                    return self.err(format!("duplicate parameter `{p}`"));
                }
                params.push(p);
                if self.eat(&Tok::RParen) {
                    break;
                }
                self.expect(Tok::Comma, "`,` or `)`")?;
            }
        }
        self.expect(Tok::LBrace, "`{`")?;
        self.scopes.push(Vec::new());
        let stmts = self.stmt_list(false)?;
        let decls = self.scopes.pop().unwrap();
        self.expect(Tok::RBrace, "`}`")?;
        let slot = (id - self.fn_base) as usize;
        self.functions[slot].params = params;
        self.functions[slot].body = Body { stmts, decls };
        Ok(id)
    }

    fn statement(&mut self) -> Result<Stmt, SyntaxError> {
        let (line, col) = self.here();
        let index = self.next_stmt;
        self.next_stmt += 1;
        let kind = match self.peek() {
            Tok::Let => {
                self.advance();
                let name = self.ident()?;
                self.expect(Tok::Assign, "`=`")?;
                let e = self.expr()?;
                self.expect(Tok::Semi, "`;`")?;
                StmtKind::Let(name, e)
            }
            Tok::If => {
                self.advance();
                self.expect(Tok::LParen, "`(`")?;
                let cond = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                let then = self.block()?;
                let otherwise = if self.eat(&Tok::Else) {
                    if matches!(self.peek(), Tok::If) {
                        let nested = self.statement()?;
                        Body { stmts: vec![nested], decls: Vec::new() }
                    } else {
                        self.block()?
                    }
                } else {
                    Body::default()
                };
                StmtKind::If(cond, then, otherwise)
            }
            Tok::While => {
                self.advance();
                self.expect(Tok::LParen, "`(`")?;
                let cond = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                let body = self.block()?;
                StmtKind::While(cond, body)
            }
            Tok::Return => {
                self.advance();
                let e = if matches!(self.peek(), Tok::Semi) { None } else { Some(self.expr()?) };
                self.expect(Tok::Semi, "`;`")?;
                StmtKind::Return(e)
            }
            _ => {
                let e = self.expr()?;
                if self.eat(&Tok::Assign) {
                    let lv = match e {
                        Expr::Var(n) => LValue::Var(n),
                        Expr::Member(o, k) => LValue::Member(*o, k),
                        Expr::Index(o, i) => LValue::Index(*o, *i),
                        _ => return Err(SyntaxError::new(line, col, "invalid assignment target")),
                    };
                    let rhs = self.expr()?;
                    self.expect(Tok::Semi, "`;`")?;
                    StmtKind::Assign(lv, rhs)
                } else {
                    self.expect(Tok::Semi, "`;`")?;
                    StmtKind::Expr(e)
                }
            }
        };
        Ok(Stmt { index, line, col, kind })
    }

    fn expr(&mut self) -> Result<Expr, SyntaxError> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<Expr, SyntaxError> {
        let mut lhs = self.and_expr()?;
        while self.eat(&Tok::OrOr) {
            let rhs = self.and_expr()?;
            lhs = Expr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, SyntaxError> {
        let mut lhs = self.equality()?;
        while self.eat(&Tok::AndAnd) {
            let rhs = self.equality()?;
            lhs = Expr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn binary_level(
        &mut self,
        ops: &[(Tok, BinOp)],
        next: fn(&mut Self) -> Result<Expr, SyntaxError>,
    ) -> Result<Expr, SyntaxError> {
        let mut lhs = next(self)?;
        'outer: loop {
            for (t, op) in ops {
                if self.eat(t) {
                    let rhs = next(self)?;
                    lhs = Expr::Binary(*op, Box::new(lhs), Box::new(rhs));
                    continue 'outer;
                }
            }
            return Ok(lhs);
        }
    }

    fn equality(&mut self) -> Result<Expr, SyntaxError> {
        self.binary_level(&[(Tok::Eq, BinOp::Eq), (Tok::Ne, BinOp::Ne)], Self::comparison)
    }

    fn comparison(&mut self) -> Result<Expr, SyntaxError> {
        self.binary_level(
            &[(Tok::Lt, BinOp::Lt), (Tok::Le, BinOp::Le), (Tok::Gt, BinOp::Gt), (Tok::Ge, BinOp::Ge)],
            Self::additive,
        )
    }

    fn additive(&mut self) -> Result<Expr, SyntaxError> {
        self.binary_level(&[(Tok::Plus, BinOp::Add), (Tok::Minus, BinOp::Sub)], Self::multiplicative)
    }

    fn multiplicative(&mut self) -> Result<Expr, SyntaxError> {
        self.binary_level(&[(Tok::Star, BinOp::Mul), (Tok::Slash, BinOp::Div), (Tok::Percent, BinOp::Rem)], Self::unary)
    }

    fn unary(&mut self) -> Result<Expr, SyntaxError> {
        if self.eat(&Tok::Minus) {
            return Ok(Expr::Unary(UnOp::Neg, Box::new(self.unary()?)));
        }
        if self.eat(&Tok::Bang) {
            return Ok(Expr::Unary(UnOp::Not, Box::new(self.unary()?)));
        }
        self.postfix()
    }

    fn args(&mut self) -> Result<Vec<Expr>, SyntaxError> {
        let mut args = Vec::new();
        if self.eat(&Tok::RParen) {
            return Ok(args);
        }
        loop {
            args.push(self.expr()?);
            if self.eat(&Tok::RParen) {
                return Ok(args);
            }
            self.expect(Tok::Comma, "`,` or `)`")?;
        }
    }

    fn postfix(&mut self) -> Result<Expr, SyntaxError> {
        // Host calls and intrinsics are reserved names applied directly.
        if let Tok::Ident(name) = self.peek().clone() {
            if matches!(self.tokens[self.pos + 1].tok, Tok::LParen) {
                if let Some(kind) = HostCallKind::from_name(&name) {
                    self.advance();
                    self.advance();
                    let args = self.args()?;
                    return self.postfix_tail(Expr::Host(kind, args));
                }
                if let Some(op) = Intrinsic::from_name(&name) {
                    self.advance();
                    self.advance();
                    let args = self.args()?;
                    return self.postfix_tail(Expr::Intrinsic(op, args));
                }
            }
        }
        let base = self.primary()?;
        self.postfix_tail(base)
    }

    fn postfix_tail(&mut self, mut e: Expr) -> Result<Expr, SyntaxError> {
        loop {
            if self.eat(&Tok::LParen) {
                let args = self.args()?;
                e = Expr::Call(Box::new(e), args);
            } else if self.eat(&Tok::Dot) {
                let name = self.ident()?;
                e = Expr::Member(Box::new(e), name);
            } else if self.eat(&Tok::LBracket) {
                let idx = self.expr()?;
                self.expect(Tok::RBracket, "`]`")?;
                e = Expr::Index(Box::new(e), Box::new(idx));
            } else {
                return Ok(e);
            }
        }
    }

    fn primary(&mut self) -> Result<Expr, SyntaxError> {
        let (line, col) = self.here();
        let t = self.advance();
        Ok(match t.tok {
            Tok::Num(v) => Expr::Num(v),
            Tok::Str(s) => Expr::Str(s),
            Tok::True => Expr::Bool(true),
            Tok::False => Expr::Bool(false),
            Tok::Null => Expr::Null,
            Tok::Ident(name) => {
                if HostCallKind::from_name(&name).is_some() || Intrinsic::from_name(&name).is_some() {
                    return Err(SyntaxError::new(line, col, format!("built-in `{name}` can only be called")));
                }
                Expr::Var(name)
            }
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                e
            }
            Tok::LBracket => {
                let mut items = Vec::new();
                if !self.eat(&Tok::RBracket) {
                    loop {
                        items.push(self.expr()?);
                        if self.eat(&Tok::RBracket) {
                            break;
                        }
                        self.expect(Tok::Comma, "`,` or `]`")?;
                    }
                }
                Expr::Array(items)
            }
            Tok::LBrace => {
                let mut fields: Vec<(Arc<str>, Expr)> = Vec::new();
                if !self.eat(&Tok::RBrace) {
                    loop {
                        let key = match self.advance().tok {
                            Tok::Ident(k) | Tok::Str(k) => k,
                            other => return self.err(format!("expected property name, found {}", describe(&other))),
                        };
                        self.expect(Tok::Colon, "`:`")?;
                        let v = self.expr()?;
                        if let Some(slot) = fields.iter_mut().find(|(k, _)| *k == key) {
                            slot.1 = v;
                        } else {
                            fields.push((key, v));
                        }
                        if self.eat(&Tok::RBrace) {
                            break;
                        }
                        self.expect(Tok::Comma, "`,` or `}`")?;
                    }
                }
                Expr::Object(fields)
            }
            Tok::Function => {
                let name: Arc<str> = format!("<anonymous@{line}:{col}>").into();
                let id = self.function_rest(name, line, col)?;
                Expr::Function(id)
            }
            other => return Err(SyntaxError::new(line, col, format!("unexpected {}", describe(&other)))),
        })
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(v) => format!("number {v}"),
        Tok::Str(_) => "string literal".into(),
        Tok::Ident(n) => format!("identifier `{n}`"),
        Tok::Eof => "end of input".into(),
        other => format!("{other:?}"),
    }
}
