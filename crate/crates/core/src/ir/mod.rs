//! Memory-aware kernel IR.
//!
//! A [`Kernel`] is a tree of rectangular loops over declared arrays. Leaves are
//! statements, each an unordered set of array accesses executed together in
//! one cycle. Index expressions are affine in the enclosing induction
//! variables, or opaque when they depend on data.
//!
//! Unrolled loops fold `unroll` consecutive iterations into one dynamic
//! statement instance: every access of the statement is replicated once per
//! unroll lane and all lanes issue in the same cycle.

mod analysis;
mod parse;
pub mod print;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use analysis::{
    access_counts, array_instance_addresses, classify_accesses, generate_trace, required_ports,
    AccessClass, ClassKind, TraceEntry,
};
pub use parse::parse_kernel;

/// Default limit on the number of dynamic statement instances any analysis
/// will enumerate.
pub const DEFAULT_CAP: u64 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl Diagnostic {
    pub fn at(line: usize, col: usize, message: impl Into<String>) -> Self {
        Diagnostic {
            line,
            col,
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)
    }
}

#[derive(Debug, Error)]
pub enum IrError {
    #[error("{}", render_diagnostics(.0))]
    Diagnostics(Vec<Diagnostic>),
    #[error("iteration space exceeds the cap of {cap} statement instances")]
    CapExceeded { cap: u64 },
    #[error("unknown array `{0}`")]
    UnknownArray(String),
    #[error("array `{0}` has opaque (data-dependent) accesses")]
    OpaqueAccess(String),
    #[error("array `{0}` is irregular; port counts only apply to fixed-latency memories")]
    IrregularArray(String),
}

fn render_diagnostics(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Input,
    Output,
    Inout,
    Temp,
}

impl Direction {
    pub fn keyword(self) -> &'static str {
        match self {
            Direction::Input => "input",
            Direction::Output => "output",
            Direction::Inout => "inout",
            Direction::Temp => "temp",
        }
    }

    /// Contents are observable before the kernel starts.
    pub fn live_in(self) -> bool {
        matches!(self, Direction::Input | Direction::Inout)
    }

    /// Contents are observable after the kernel ends.
    pub fn live_out(self) -> bool {
        matches!(self, Direction::Output | Direction::Inout)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Annotation {
    Locality,
    Irregular,
    Readonly,
}

impl Annotation {
    pub fn keyword(self) -> &'static str {
        match self {
            Annotation::Locality => "locality",
            Annotation::Irregular => "irregular",
            Annotation::Readonly => "readonly",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrayDecl {
    pub name: String,
    pub element_bits: u32,
    /// Storage dimensions, outermost first. Row-major.
    pub dims: Vec<u64>,
    pub direction: Direction,
    pub annotations: BTreeSet<Annotation>,
    /// Storage permutation already applied to `dims` and to every index
    /// list: physical dimension `d` holds source dimension `layout[d]`.
    pub layout: Option<Vec<usize>>,
}

impl ArrayDecl {
    pub fn words(&self) -> u64 {
        self.dims.iter().product()
    }

    pub fn element_bytes(&self) -> u64 {
        u64::from(self.element_bits).div_ceil(8)
    }

    pub fn footprint_bytes(&self) -> u64 {
        self.element_bytes() * self.words()
    }

    pub fn has(&self, a: Annotation) -> bool {
        self.annotations.contains(&a)
    }

    /// Row-major flat address of an in-bounds index vector.
    pub fn flatten(&self, index: &[i64]) -> u64 {
        flatten(&self.dims, index)
    }
}

pub fn flatten(dims: &[u64], index: &[i64]) -> u64 {
    index
        .iter()
        .zip(dims)
        .fold(0u64, |acc, (&i, &d)| acc * d + i as u64)
}

/// `constant + Σ coefficient × var`. Zero coefficients are never stored.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct AffineExpr {
    pub constant: i64,
    pub terms: BTreeMap<String, i64>,
}

impl AffineExpr {
    pub fn constant(c: i64) -> Self {
        AffineExpr {
            constant: c,
            terms: BTreeMap::new(),
        }
    }

    pub fn var(name: &str) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(name.to_string(), 1);
        AffineExpr { constant: 0, terms }
    }

    pub fn coefficient(&self, var: &str) -> i64 {
        self.terms.get(var).copied().unwrap_or(0)
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add(&self, other: &AffineExpr) -> AffineExpr {
        let mut out = self.clone();
        out.constant += other.constant;
        for (v, c) in &other.terms {
            *out.terms.entry(v.clone()).or_insert(0) += c;
        }
        out.terms.retain(|_, c| *c != 0);
        out
    }

    pub fn scale(&self, k: i64) -> AffineExpr {
        if k == 0 {
            return AffineExpr::default();
        }
        AffineExpr {
            constant: self.constant * k,
            terms: self.terms.iter().map(|(v, c)| (v.clone(), c * k)).collect(),
        }
    }

    pub fn eval(&self, env: &Env) -> i64 {
        self.terms
            .iter()
            .fold(self.constant, |acc, (v, c)| acc + c * env.value(v))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Index {
    Affine(AffineExpr),
    /// Data-dependent index; names the array (or symbol) it is loaded from.
    Opaque(String),
}

impl Index {
    pub fn as_affine(&self) -> Option<&AffineExpr> {
        match self {
            Index::Affine(e) => Some(e),
            Index::Opaque(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessKind {
    Read,
    Write,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Access {
    pub array: String,
    pub kind: AccessKind,
    pub indices: Vec<Index>,
    pub statement: usize,
}

impl Access {
    pub fn is_affine(&self) -> bool {
        self.indices.iter().all(|i| matches!(i, Index::Affine(_)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Statement {
    pub id: usize,
    pub accesses: Vec<Access>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Loop {
    pub var: String,
    pub lower: i64,
    /// Exclusive.
    pub upper: i64,
    pub step: i64,
    pub unroll: u64,
    pub body: Vec<Node>,
}

impl Loop {
    pub fn trip_count(&self) -> u64 {
        ((self.upper - self.lower) as u64).div_ceil(self.step as u64)
    }
}

/// Lowered-IR marker recording that a tile of `array` is moved into its
/// reuse buffer at this point. Carries no semantics for analysis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferNote {
    pub array: String,
    pub tile: Vec<u64>,
    pub via: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    Loop(Loop),
    Stmt(usize),
    Transfer(TransferNote),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Kernel {
    pub name: String,
    pub constants: BTreeMap<String, i64>,
    pub arrays: Vec<ArrayDecl>,
    pub body: Vec<Node>,
    pub statements: Vec<Statement>,
}

/// Induction-variable bindings for one unroll lane of a dynamic instance.
#[derive(Debug, Clone, Default)]
pub struct Env {
    vars: Vec<(String, i64)>,
}

impl Env {
    pub fn value(&self, var: &str) -> i64 {
        self.vars
            .iter()
            .rev()
            .find(|(v, _)| v == var)
            .map(|(_, x)| *x)
            .unwrap_or(0)
    }

    pub fn bindings(&self) -> &[(String, i64)] {
        &self.vars
    }
}

/// One access issued by a dynamic statement instance (one unroll lane).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DynAccess {
    pub array: usize,
    pub kind: AccessKind,
    /// Evaluated index vector; empty for opaque accesses.
    pub index: Vec<i64>,
    pub addr: Option<u64>,
}

#[derive(Debug)]
pub struct Instance<'a> {
    pub index: u64,
    pub statement: usize,
    pub accesses: &'a [DynAccess],
}

#[derive(Clone)]
struct Frame<'a> {
    lp: &'a Loop,
    base: i64,
}

impl Kernel {
    pub fn array(&self, name: &str) -> Option<&ArrayDecl> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn array_index(&self, name: &str) -> Option<usize> {
        self.arrays.iter().position(|a| a.name == name)
    }

    pub fn accesses(&self) -> impl Iterator<Item = &Access> {
        self.statements.iter().flat_map(|s| s.accesses.iter())
    }

    pub fn accesses_to<'a>(&'a self, array: &'a str) -> impl Iterator<Item = &'a Access> + 'a {
        self.accesses().filter(move |a| a.array == array)
    }

    pub fn is_written(&self, array: &str) -> bool {
        self.accesses_to(array).any(|a| a.kind == AccessKind::Write)
    }

    pub fn is_read(&self, array: &str) -> bool {
        self.accesses_to(array).any(|a| a.kind == AccessKind::Read)
    }

    /// Enclosing loops of each statement, outermost first.
    pub fn statement_loops(&self) -> BTreeMap<usize, Vec<&Loop>> {
        fn rec<'a>(nodes: &'a [Node], path: &mut Vec<&'a Loop>, out: &mut BTreeMap<usize, Vec<&'a Loop>>) {
            for n in nodes {
                match n {
                    Node::Loop(l) => {
                        path.push(l);
                        rec(&l.body, path, out);
                        path.pop();
                    }
                    Node::Stmt(id) => {
                        out.insert(*id, path.clone());
                    }
                    Node::Transfer(_) => {}
                }
            }
        }
        let mut out = BTreeMap::new();
        rec(&self.body, &mut Vec::new(), &mut out);
        out
    }

    /// Number of dynamic statement instances, without enumerating them.
    pub fn instance_count(&self) -> u64 {
        fn rec(nodes: &[Node]) -> u64 {
            nodes
                .iter()
                .map(|n| match n {
                    Node::Loop(l) => (l.trip_count() / l.unroll) * rec(&l.body),
                    Node::Stmt(_) => 1,
                    Node::Transfer(_) => 0,
                })
                .sum()
        }
        rec(&self.body)
    }

    /// Visits every dynamic statement instance in program order. Returns the
    /// number of instances visited.
    pub fn walk<F>(&self, cap: u64, mut f: F) -> Result<u64, IrError>
    where
        F: FnMut(&Instance<'_>),
    {
        let total = self.instance_count();
        if total > cap {
            return Err(IrError::CapExceeded { cap });
        }
        let index_of: BTreeMap<&str, usize> = self
            .arrays
            .iter()
            .enumerate()
            .map(|(i, a)| (a.name.as_str(), i))
            .collect();
        let mut counter = 0u64;
        let mut scratch = Vec::new();
        let mut frames = Vec::new();
        self.walk_nodes(&self.body, &mut frames, &index_of, &mut counter, &mut scratch, &mut f);
        Ok(counter)
    }

    fn walk_nodes<'a, F>(
        &'a self,
        nodes: &'a [Node],
        frames: &mut Vec<Frame<'a>>,
        index_of: &BTreeMap<&str, usize>,
        counter: &mut u64,
        scratch: &mut Vec<DynAccess>,
        f: &mut F,
    ) where
        F: FnMut(&Instance<'_>),
    {
        for n in nodes {
            match n {
                Node::Loop(l) => {
                    let stride = l.step * l.unroll as i64;
                    let mut base = l.lower;
                    while base < l.upper {
                        frames.push(Frame { lp: l, base });
                        self.walk_nodes(&l.body, frames, index_of, counter, scratch, f);
                        frames.pop();
                        base += stride;
                    }
                }
                Node::Stmt(id) => {
                    scratch.clear();
                    let stmt = &self.statements[*id];
                    for env in lane_envs(frames) {
                        for acc in &stmt.accesses {
                            let array = index_of[acc.array.as_str()];
                            let decl = &self.arrays[array];
                            let (index, addr) = if acc.is_affine() {
                                let idx: Vec<i64> = acc
                                    .indices
                                    .iter()
                                    .map(|i| i.as_affine().map(|e| e.eval(&env)).unwrap_or(0))
                                    .collect();
                                let addr = decl.flatten(&idx);
                                (idx, Some(addr))
                            } else {
                                (Vec::new(), None)
                            };
                            scratch.push(DynAccess {
                                array,
                                kind: acc.kind,
                                index,
                                addr,
                            });
                        }
                    }
                    f(&Instance {
                        index: *counter,
                        statement: *id,
                        accesses: scratch,
                    });
                    *counter += 1;
                }
                Node::Transfer(_) => {}
            }
        }
    }

    /// Permutes the storage dimensions of `array` (physical dim `d` takes
    /// current dim `perm[d]`) and rewrites every access to match.
    pub fn apply_permutation(&mut self, array: &str, perm: &[usize]) {
        let Some(decl) = self.arrays.iter_mut().find(|a| a.name == array) else {
            return;
        };
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return;
        }
        decl.dims = perm.iter().map(|&p| decl.dims[p]).collect();
        let prior: Vec<usize> = decl
            .layout
            .clone()
            .unwrap_or_else(|| (0..perm.len()).collect());
        let total: Vec<usize> = perm.iter().map(|&p| prior[p]).collect();
        decl.layout = if total.iter().enumerate().all(|(i, &p)| i == p) {
            None
        } else {
            Some(total)
        };
        for stmt in &mut self.statements {
            for acc in stmt.accesses.iter_mut().filter(|a| a.array == array) {
                acc.indices = perm.iter().map(|&p| acc.indices[p].clone()).collect();
            }
        }
    }

    /// The kernel as originally written: every applied storage permutation
    /// undone and lowering markers dropped.
    pub fn logical(&self) -> Kernel {
        let mut k = self.clone();
        let undo: Vec<(String, Vec<usize>)> = k
            .arrays
            .iter()
            .filter_map(|a| a.layout.as_ref().map(|l| (a.name.clone(), inverse_permutation(l))))
            .collect();
        for (name, inv) in undo {
            k.apply_permutation(&name, &inv);
        }
        fn strip(nodes: &mut Vec<Node>) {
            nodes.retain(|n| !matches!(n, Node::Transfer(_)));
            for n in nodes {
                if let Node::Loop(l) = n {
                    strip(&mut l.body);
                }
            }
        }
        strip(&mut k.body);
        k
    }
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (d, &p) in perm.iter().enumerate() {
        inv[p] = d;
    }
    inv
}

fn lane_envs(frames: &[Frame<'_>]) -> Vec<Env> {
    let mut envs = vec![Env::default()];
    for fr in frames {
        let lanes = fr.lp.unroll as i64;
        let mut next = Vec::with_capacity(envs.len() * lanes as usize);
        for env in &envs {
            for k in 0..lanes {
                let mut e = env.clone();
                e.vars.push((fr.lp.var.clone(), fr.base + k * fr.lp.step));
                next.push(e);
            }
        }
        envs = next;
    }
    envs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_roundtrip_restores_logical_form() {
        let src = "kernel t { array B: 32b[4][8] input; loop k in 0..4 { loop j in 0..8 { read B[k][j]; } } }";
        let k = parse_kernel(src).unwrap();
        let mut p = k.clone();
        p.apply_permutation("B", &[1, 0]);
        assert_eq!(p.array("B").unwrap().dims, vec![8, 4]);
        assert_eq!(p.array("B").unwrap().layout, Some(vec![1, 0]));
        assert_eq!(p.logical(), k);
    }

    #[test]
    fn unrolled_lanes_share_one_instance() {
        let src = "kernel t { array A: 32b[8] input; loop i in 0..8 unroll 2 { read A[i]; } }";
        let k = parse_kernel(src).unwrap();
        let mut seen = Vec::new();
        let n = k
            .walk(DEFAULT_CAP, |inst| {
                seen.push(inst.accesses.iter().map(|a| a.addr.unwrap()).collect::<Vec<_>>())
            })
            .unwrap();
        assert_eq!(n, 4);
        assert_eq!(seen, vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7]]);
    }

    #[test]
    fn walk_respects_cap() {
        let src = "kernel t { array A: 32b[8] input; loop i in 0..8 { read A[i]; } }";
        let k = parse_kernel(src).unwrap();
        assert!(matches!(k.walk(7, |_| {}), Err(IrError::CapExceeded { cap: 7 })));
    }
}
