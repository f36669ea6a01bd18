//! Lexer and recursive-descent parser for the kernel IR.
//!
//! The same grammar accepts lowered IR: `@mem(...)` access suffixes are
//! skipped, `transfer` statements become [`Node::Transfer`] markers and
//! `@layout(...)` on a declaration records an already-applied permutation.

use std::collections::{BTreeMap, BTreeSet};

use super::{
    Access, AccessKind, AffineExpr, Annotation, ArrayDecl, Diagnostic, Direction, Index, IrError,
    Kernel, Loop, Node, Statement, TransferNote,
};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Sym(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
    start: usize,
    end: usize,
}

const SYMBOLS: &[&str] = &[
    "..", "{", "}", "[", "]", "(", ")", ":", ";", ",", "=", "+", "-", "*", "@", "%", "/",
];

fn lex(src: &str) -> Result<Vec<Token>, Diagnostic> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let (mut i, mut line, mut line_start) = (0usize, 1usize, 0usize);
    while i < bytes.len() {
        let c = bytes[i];
        let col = i - line_start + 1;
        if c == b'\n' {
            line += 1;
            line_start = i + 1;
            i += 1;
        } else if c.is_ascii_whitespace() {
            i += 1;
        } else if c == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
        } else if c.is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let v: i64 = src[start..i]
                .parse()
                .map_err(|_| Diagnostic::at(line, col, "integer literal out of range"))?;
            out.push(Token { tok: Tok::Int(v), line, col, start, end: i });
        } else if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(src[start..i].to_string()),
                line,
                col,
                start,
                end: i,
            });
        } else if let Some(sym) = SYMBOLS.iter().find(|s| src[i..].starts_with(**s)) {
            out.push(Token { tok: Tok::Sym(sym), line, col, start: i, end: i + sym.len() });
            i += sym.len();
        } else {
            let ch = src[i..].chars().next().unwrap_or('?');
            return Err(Diagnostic::at(line, col, format!("unexpected character `{ch}`")));
        }
    }
    let end = bytes.len();
    out.push(Token { tok: Tok::Eof, line, col: end - line_start + 1, start: end, end });
    Ok(out)
}

/// Parses and validates kernel source.
pub fn parse_kernel(text: &str) -> Result<Kernel, IrError> {
    let tokens = lex(text).map_err(|d| IrError::Diagnostics(vec![d]))?;
    let mut p = Parser {
        tokens,
        pos: 0,
        constants: BTreeMap::new(),
        arrays: Vec::new(),
        statements: Vec::new(),
        scope: Vec::new(),
        diags: Vec::new(),
    };
    match p.kernel() {
        Ok(k) if p.diags.is_empty() => Ok(k),
        Ok(_) => Err(IrError::Diagnostics(p.diags)),
        Err(d) => {
            p.diags.push(d);
            Err(IrError::Diagnostics(p.diags))
        }
    }
}

struct ScopeVar {
    name: String,
    min: i64,
    max: i64,
    step: i64,
    unroll: u64,
}

enum Val {
    Aff(AffineExpr),
    Opaque(String),
}

type PResult<T> = Result<T, Diagnostic>;
/// Per-dimension affine index: coefficient map plus constant.
type AffineIdx = (BTreeMap<String, i64>, i64);

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    constants: BTreeMap<String, i64>,
    arrays: Vec<ArrayDecl>,
    statements: Vec<Statement>,
    scope: Vec<ScopeVar>,
    diags: Vec<Diagnostic>,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn peek_at(&self, k: usize) -> &Token {
        &self.tokens[(self.pos + k).min(self.tokens.len() - 1)]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn err_here(&self, msg: impl Into<String>) -> Diagnostic {
        let t = self.peek();
        Diagnostic::at(t.line, t.col, msg)
    }

    fn describe(t: &Tok) -> String {
        match t {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(v) => format!("`{v}`"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".to_string(),
        }
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(&self.peek().tok, Tok::Sym(x) if *x == s)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(x) if x == kw)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> PResult<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(self.err_here(format!("expected `{s}`, found {}", Self::describe(&self.peek().tok))))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.is_kw(kw) {
            self.bump();
            Ok(())
        } else {
            Err(self.err_here(format!("expected `{kw}`, found {}", Self::describe(&self.peek().tok))))
        }
    }

    fn ident(&mut self) -> PResult<(String, usize, usize)> {
        let t = self.bump();
        match t.tok {
            Tok::Ident(s) => Ok((s, t.line, t.col)),
            other => Err(Diagnostic::at(
                t.line,
                t.col,
                format!("expected identifier, found {}", Self::describe(&other)),
            )),
        }
    }

    fn int(&mut self) -> PResult<i64> {
        let neg = self.eat_sym("-");
        let t = self.bump();
        match t.tok {
            Tok::Int(v) => Ok(if neg { -v } else { v }),
            other => Err(Diagnostic::at(
                t.line,
                t.col,
                format!("expected integer, found {}", Self::describe(&other)),
            )),
        }
    }

    fn diag(&mut self, line: usize, col: usize, msg: impl Into<String>) {
        self.diags.push(Diagnostic::at(line, col, msg));
    }

    fn kernel(&mut self) -> PResult<Kernel> {
        self.expect_kw("kernel")?;
        let (name, _, _) = self.ident()?;
        self.expect_sym("{")?;
        let mut body = Vec::new();
        while !self.is_sym("}") {
            if self.is_kw("const") {
                self.constant()?;
            } else if self.is_kw("array") {
                self.array_decl()?;
            } else {
                body.push(self.node()?);
            }
        }
        self.expect_sym("}")?;
        if !matches!(self.peek().tok, Tok::Eof) {
            return Err(self.err_here("unexpected input after kernel body"));
        }
        if self.statements.is_empty() {
            self.diags.push(Diagnostic::at(1, 1, "kernel has no statements"));
        }
        Ok(Kernel {
            name,
            constants: std::mem::take(&mut self.constants),
            arrays: std::mem::take(&mut self.arrays),
            body,
            statements: std::mem::take(&mut self.statements),
        })
    }

    fn constant(&mut self) -> PResult<()> {
        self.expect_kw("const")?;
        let (name, line, col) = self.ident()?;
        self.expect_sym("=")?;
        let v = self.const_expr("constant")?;
        self.expect_sym(";")?;
        if self.constants.insert(name.clone(), v).is_some() {
            self.diag(line, col, format!("constant `{name}` defined twice"));
        }
        Ok(())
    }

    fn const_expr(&mut self, what: &str) -> PResult<i64> {
        let t = self.peek().clone();
        match self.expr()? {
            Val::Aff(e) if e.is_constant() => Ok(e.constant),
            _ => Err(Diagnostic::at(t.line, t.col, format!("non-constant {what}"))),
        }
    }

    fn array_decl(&mut self) -> PResult<()> {
        self.expect_kw("array")?;
        let (name, line, col) = self.ident()?;
        self.expect_sym(":")?;
        let bits = self.int()?;
        let b = self.bump();
        if b.tok != Tok::Ident("b".into()) {
            return Err(Diagnostic::at(b.line, b.col, "expected element width like `32b`"));
        }
        let mut dims = Vec::new();
        loop {
            self.expect_sym("[")?;
            loop {
                let t = self.peek().clone();
                let d = self.const_expr("array dimension")?;
                if d <= 0 {
                    self.diag(t.line, t.col, format!("dimension of `{name}` must be positive"));
                }
                dims.push(d.max(1) as u64);
                if !self.eat_sym(",") {
                    break;
                }
            }
            self.expect_sym("]")?;
            self.eat_sym(",");
            if !self.is_sym("[") {
                break;
            }
        }
        let (dir, dl, dc) = self.ident()?;
        let direction = match dir.as_str() {
            "input" => Direction::Input,
            "output" => Direction::Output,
            "inout" => Direction::Inout,
            "temp" => Direction::Temp,
            other => {
                return Err(Diagnostic::at(
                    dl,
                    dc,
                    format!("expected input|output|inout|temp, found `{other}`"),
                ))
            }
        };
        let mut annotations = BTreeSet::new();
        let mut layout = None;
        while self.eat_sym("@") {
            let (a, al, ac) = self.ident()?;
            match a.as_str() {
                "locality" => {
                    annotations.insert(Annotation::Locality);
                }
                "irregular" => {
                    annotations.insert(Annotation::Irregular);
                }
                "readonly" => {
                    annotations.insert(Annotation::Readonly);
                }
                "layout" => {
                    self.expect_sym("(")?;
                    let mut perm = Vec::new();
                    loop {
                        perm.push(self.int()?);
                        if !self.eat_sym(",") {
                            break;
                        }
                    }
                    self.expect_sym(")")?;
                    let mut sorted = perm.clone();
                    sorted.sort_unstable();
                    if perm.len() != dims.len() || sorted.iter().enumerate().any(|(i, &p)| p != i as i64) {
                        self.diag(al, ac, format!("@layout of `{name}` is not a permutation of its dimensions"));
                    } else if perm.iter().enumerate().any(|(i, &p)| p != i as i64) {
                        layout = Some(perm.into_iter().map(|p| p as usize).collect());
                    }
                }
                other => self.diag(al, ac, format!("unknown annotation `@{other}`")),
            }
        }
        self.expect_sym(";")?;
        if bits <= 0 || bits > u32::MAX as i64 {
            self.diag(line, col, format!("element width of `{name}` must be positive"));
        }
        if annotations.contains(&Annotation::Locality) && annotations.contains(&Annotation::Irregular) {
            self.diag(line, col, format!("`{name}`: @locality and @irregular are mutually exclusive"));
        }
        if self.arrays.iter().any(|a| a.name == name) {
            self.diag(line, col, format!("array `{name}` declared twice"));
        }
        self.arrays.push(ArrayDecl {
            name,
            element_bits: bits.max(1) as u32,
            dims,
            direction,
            annotations,
            layout,
        });
        Ok(())
    }

    fn node(&mut self) -> PResult<Node> {
        if self.is_kw("loop") {
            return self.loop_nest().map(Node::Loop);
        }
        if self.is_kw("transfer") {
            return self.transfer().map(Node::Transfer);
        }
        if self.is_kw("read") || self.is_kw("write") || self.is_kw("accum") {
            return self.statement().map(Node::Stmt);
        }
        Err(self.err_here(format!(
            "expected `loop`, `read`, `write`, `accum` or `transfer`, found {}",
            Self::describe(&self.peek().tok)
        )))
    }

    fn loop_nest(&mut self) -> PResult<Loop> {
        let head = self.peek().clone();
        self.expect_kw("loop")?;
        let (var, vl, vc) = self.ident()?;
        self.expect_kw("in")?;
        let lower = self.const_expr("loop bound")?;
        self.expect_sym("..")?;
        let upper = self.const_expr("loop bound")?;
        let mut step = 1;
        let mut unroll = 1;
        if self.is_kw("step") {
            self.bump();
            step = self.int()?;
        }
        if self.is_kw("unroll") {
            self.bump();
            unroll = self.int()?;
        }
        if self.scope.iter().any(|s| s.name == var) {
            self.diag(vl, vc, format!("induction variable `{var}` shadows an enclosing loop"));
        }
        if self.constants.contains_key(&var) {
            self.diag(vl, vc, format!("induction variable `{var}` shadows a constant"));
        }
        let mut ok = true;
        if step <= 0 {
            self.diag(head.line, head.col, format!("loop `{var}`: step must be positive"));
            ok = false;
        }
        if upper <= lower {
            self.diag(head.line, head.col, format!("loop `{var}`: empty range {lower}..{upper}"));
            ok = false;
        }
        if unroll <= 0 {
            self.diag(head.line, head.col, format!("loop `{var}`: unroll must be positive"));
            ok = false;
        }
        let (step, unroll) = (step.max(1), unroll.max(1) as u64);
        let trip = if ok { ((upper - lower) as u64).div_ceil(step as u64) } else { 1 };
        if ok && trip % unroll != 0 {
            self.diag(
                head.line,
                head.col,
                format!("unroll {unroll} does not divide trip count {trip} of loop `{var}`"),
            );
        }
        let (lower, upper) = if ok { (lower, upper) } else { (0, 1) };
        self.scope.push(ScopeVar {
            name: var.clone(),
            min: lower,
            max: lower + (trip as i64 - 1) * step,
            step,
            unroll,
        });
        self.expect_sym("{")?;
        let mut body = Vec::new();
        while !self.is_sym("}") {
            if matches!(self.peek().tok, Tok::Eof) {
                return Err(self.err_here("unterminated loop body"));
            }
            body.push(self.node()?);
        }
        self.expect_sym("}")?;
        self.scope.pop();
        Ok(Loop { var, lower, upper, step, unroll, body })
    }

    fn transfer(&mut self) -> PResult<TransferNote> {
        self.expect_kw("transfer")?;
        let (array, _, _) = self.ident()?;
        self.expect_kw("tile")?;
        self.expect_sym("[")?;
        let mut tile = Vec::new();
        loop {
            tile.push(self.int()?.max(0) as u64);
            if !self.eat_sym(",") {
                break;
            }
        }
        self.expect_sym("]")?;
        self.expect_kw("via")?;
        let (via, _, _) = self.ident()?;
        self.expect_sym(";")?;
        Ok(TransferNote { array, tile, via })
    }

    fn statement(&mut self) -> PResult<usize> {
        let head = self.peek().clone();
        let id = self.statements.len();
        let mut accesses = Vec::new();
        let mut kind = "";
        loop {
            for kw in ["read", "write", "accum"] {
                if self.is_kw(kw) {
                    self.bump();
                    kind = kw;
                }
            }
            let mut nested = Vec::new();
            let (array, indices) = self.array_ref(id, &mut nested)?;
            accesses.append(&mut nested);
            if self.is_sym("@") && self.peek_at(1).tok == Tok::Ident("mem".into()) {
                self.skip_mem_suffix()?;
            }
            let kinds: &[AccessKind] = match kind {
                "read" => &[AccessKind::Read],
                "write" => &[AccessKind::Write],
                _ => &[AccessKind::Read, AccessKind::Write],
            };
            for &k in kinds {
                accesses.push(Access { array: array.clone(), kind: k, indices: indices.clone(), statement: id });
            }
            if !self.eat_sym(",") {
                break;
            }
        }
        if !self.eat_sym(";") && !self.is_sym("}") {
            return Err(self.err_here(format!(
                "expected `;` after statement, found {}",
                Self::describe(&self.peek().tok)
            )));
        }
        self.check_statement(&accesses, head.line, head.col);
        self.statements.push(Statement { id, accesses });
        Ok(id)
    }

    fn skip_mem_suffix(&mut self) -> PResult<()> {
        self.expect_sym("@")?;
        self.expect_kw("mem")?;
        self.expect_sym("(")?;
        let mut depth = 1;
        while depth > 0 {
            match self.bump().tok {
                Tok::Sym("(") => depth += 1,
                Tok::Sym(")") => depth -= 1,
                Tok::Eof => return Err(self.err_here("unterminated @mem(...)")),
                _ => {}
            }
        }
        Ok(())
    }

    /// `A[e]...[e]`. Array references nested inside an index are recorded as
    /// reads in `nested` and make the enclosing index opaque.
    fn array_ref(&mut self, stmt: usize, nested: &mut Vec<Access>) -> PResult<(String, Vec<Index>)> {
        let (name, line, col) = self.ident()?;
        let mut indices = Vec::new();
        while self.eat_sym("[") {
            let v = self.expr_in(stmt, nested)?;
            self.expect_sym("]")?;
            indices.push(match v {
                Val::Aff(e) => Index::Affine(e),
                Val::Opaque(s) => Index::Opaque(s),
            });
        }
        match self.arrays.iter().find(|a| a.name == name) {
            None => self.diag(line, col, format!("undeclared array `{name}`")),
            Some(decl) if decl.dims.len() != indices.len() => {
                let msg = format!(
                    "array `{name}` has {} dimensions but is indexed with {}",
                    decl.dims.len(),
                    indices.len()
                );
                self.diag(line, col, msg);
            }
            Some(decl) => {
                let dims = decl.dims.clone();
                for (d, (idx, &size)) in indices.iter().zip(&dims).enumerate() {
                    if let Index::Affine(e) = idx {
                        let (lo, hi) = self.range_of(e);
                        if lo < 0 || hi >= size as i64 {
                            self.diag(
                                line,
                                col,
                                format!("index {d} of `{name}` spans {lo}..={hi}, outside 0..{size}"),
                            );
                        }
                    }
                }
            }
        }
        Ok((name, indices))
    }

    fn range_of(&self, e: &AffineExpr) -> (i64, i64) {
        let (mut lo, mut hi) = (e.constant, e.constant);
        for (v, &c) in &e.terms {
            if let Some(s) = self.scope.iter().rev().find(|s| &s.name == v) {
                let (a, b) = (c * s.min, c * s.max);
                lo += a.min(b);
                hi += a.max(b);
            }
        }
        (lo, hi)
    }

    fn check_statement(&mut self, accesses: &[Access], line: usize, col: usize) {
        if accesses.is_empty() {
            self.diag(line, col, "empty statement");
            return;
        }
        for a in accesses {
            let readonly = self
                .arrays
                .iter()
                .any(|d| d.name == a.array && d.has(Annotation::Readonly));
            if readonly && a.kind == AccessKind::Write {
                self.diag(line, col, format!("write to @readonly array `{}`", a.array));
                return;
            }
        }
        // Two writes that resolve to the same address in every instance.
        let lanes = self.lane_offsets();
        let mut writes: Vec<(&str, Vec<AffineIdx>)> = Vec::new();
        for a in accesses.iter().filter(|a| a.kind == AccessKind::Write && a.is_affine()) {
            for lane in &lanes {
                let key: Vec<(BTreeMap<String, i64>, i64)> = a
                    .indices
                    .iter()
                    .filter_map(|i| i.as_affine())
                    .map(|e| {
                        let shift: i64 = lane.iter().map(|(v, off)| e.coefficient(v) * off).sum();
                        (e.terms.clone(), e.constant + shift)
                    })
                    .collect();
                if writes.iter().any(|(arr, k)| *arr == a.array && *k == key) {
                    self.diag(
                        line,
                        col,
                        format!("write-write conflict on `{}` within one statement instance", a.array),
                    );
                    return;
                }
                writes.push((a.array.as_str(), key));
            }
        }
    }

    fn lane_offsets(&self) -> Vec<Vec<(String, i64)>> {
        let mut lanes = vec![Vec::new()];
        for s in self.scope.iter().filter(|s| s.unroll > 1) {
            let mut next = Vec::new();
            for l in &lanes {
                for k in 0..s.unroll as i64 {
                    let mut l2: Vec<(String, i64)> = l.clone();
                    l2.push((s.name.clone(), k * s.step));
                    next.push(l2);
                }
            }
            lanes = next;
        }
        lanes
    }

    fn expr(&mut self) -> PResult<Val> {
        let mut nested = Vec::new();
        let v = self.expr_in(usize::MAX, &mut nested)?;
        if !nested.is_empty() {
            return Err(self.err_here("array reference is not allowed here"));
        }
        Ok(v)
    }

    fn expr_in(&mut self, stmt: usize, nested: &mut Vec<Access>) -> PResult<Val> {
        let mut neg = false;
        if self.eat_sym("-") {
            neg = true;
        } else {
            self.eat_sym("+");
        }
        let mut acc = self.term(stmt, nested)?;
        if neg {
            acc = negate(acc);
        }
        loop {
            if self.eat_sym("+") {
                let t = self.term(stmt, nested)?;
                acc = combine(acc, t);
            } else if self.eat_sym("-") {
                let t = self.term(stmt, nested)?;
                acc = combine(acc, negate(t));
            } else {
                return Ok(acc);
            }
        }
    }

    fn term(&mut self, stmt: usize, nested: &mut Vec<Access>) -> PResult<Val> {
        let head = self.peek().clone();
        let mut acc = self.factor(stmt, nested)?;
        loop {
            let juxtaposed = matches!(head.tok, Tok::Int(_))
                && self.tokens[self.pos - 1].end == self.peek().start
                && matches!(self.peek().tok, Tok::Ident(_));
            if self.eat_sym("*") || juxtaposed {
                let rhs = self.factor(stmt, nested)?;
                acc = match (acc, rhs) {
                    (Val::Aff(a), Val::Aff(b)) if a.is_constant() => Val::Aff(b.scale(a.constant)),
                    (Val::Aff(a), Val::Aff(b)) if b.is_constant() => Val::Aff(a.scale(b.constant)),
                    (Val::Aff(_), Val::Aff(_)) => {
                        return Err(Diagnostic::at(head.line, head.col, "non-affine product of induction variables"))
                    }
                    (Val::Opaque(s), _) | (_, Val::Opaque(s)) => Val::Opaque(s),
                };
            } else if self.is_sym("/") || self.is_sym("%") {
                return Err(self.err_here("division and modulo are not affine"));
            } else {
                return Ok(acc);
            }
        }
    }

    fn factor(&mut self, stmt: usize, nested: &mut Vec<Access>) -> PResult<Val> {
        let t = self.peek().clone();
        match t.tok {
            Tok::Int(v) => {
                self.bump();
                Ok(Val::Aff(AffineExpr::constant(v)))
            }
            Tok::Sym("(") => {
                self.bump();
                let v = self.expr_in(stmt, nested)?;
                self.expect_sym(")")?;
                Ok(v)
            }
            Tok::Ident(ref name) if name == "opaque" && self.peek_at(1).tok == Tok::Sym("(") => {
                self.bump();
                self.bump();
                let (src, _, _) = self.ident()?;
                self.expect_sym(")")?;
                Ok(Val::Opaque(src))
            }
            Tok::Ident(ref name) if self.peek_at(1).tok == Tok::Sym("[") => {
                if stmt == usize::MAX {
                    return Err(Diagnostic::at(t.line, t.col, "array reference is not allowed here"));
                }
                let name = name.clone();
                let (arr, indices) = self.array_ref(stmt, nested)?;
                nested.push(Access { array: arr, kind: AccessKind::Read, indices, statement: stmt });
                Ok(Val::Opaque(name))
            }
            Tok::Ident(name) => {
                self.bump();
                if self.scope.iter().any(|s| s.name == name) {
                    if stmt == usize::MAX {
                        return Err(Diagnostic::at(t.line, t.col, format!("non-constant bound: `{name}` is an induction variable")));
                    }
                    Ok(Val::Aff(AffineExpr::var(&name)))
                } else if let Some(&c) = self.constants.get(&name) {
                    Ok(Val::Aff(AffineExpr::constant(c)))
                } else {
                    Err(Diagnostic::at(t.line, t.col, format!("unknown identifier `{name}`")))
                }
            }
            other => Err(Diagnostic::at(
                t.line,
                t.col,
                format!("expected expression, found {}", Self::describe(&other)),
            )),
        }
    }
}

fn negate(v: Val) -> Val {
    match v {
        Val::Aff(e) => Val::Aff(e.scale(-1)),
        o => o,
    }
}

fn combine(a: Val, b: Val) -> Val {
    match (a, b) {
        (Val::Aff(x), Val::Aff(y)) => Val::Aff(x.add(&y)),
        (Val::Opaque(s), _) | (_, Val::Opaque(s)) => Val::Opaque(s),
    }
}
