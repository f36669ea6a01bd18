//! Canonical textual form of a kernel. `parse_kernel(k.to_source()) == k`.

use std::fmt::Write;

use super::{Access, AccessKind, AffineExpr, ArrayDecl, Index, Kernel, Loop, Node};

impl std::fmt::Display for AffineExpr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut first = true;
        for (v, &c) in &self.terms {
            let (sign, mag) = if c < 0 { ("-", -c) } else { ("+", c) };
            if first {
                if c < 0 {
                    f.write_str("-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            if mag == 1 {
                f.write_str(v)?;
            } else {
                write!(f, "{mag}*{v}")?;
            }
            first = false;
        }
        if first {
            write!(f, "{}", self.constant)
        } else if self.constant > 0 {
            write!(f, " + {}", self.constant)
        } else if self.constant < 0 {
            write!(f, " - {}", -self.constant)
        } else {
            Ok(())
        }
    }
}

impl std::fmt::Display for Index {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Index::Affine(e) => write!(f, "{e}"),
            Index::Opaque(s) => write!(f, "opaque({s})"),
        }
    }
}

pub(crate) fn format_decl(a: &ArrayDecl) -> String {
    let mut s = format!("array {}: {}b", a.name, a.element_bits);
    for d in &a.dims {
        let _ = write!(s, "[{d}]");
    }
    let _ = write!(s, " {}", a.direction.keyword());
    for ann in &a.annotations {
        let _ = write!(s, " @{}", ann.keyword());
    }
    if let Some(l) = &a.layout {
        let perm: Vec<String> = l.iter().map(|p| p.to_string()).collect();
        let _ = write!(s, " @layout({})", perm.join(","));
    }
    s.push(';');
    s
}

pub(crate) fn format_access_ref(a: &Access) -> String {
    let mut s = a.array.clone();
    for i in &a.indices {
        let _ = write!(s, "[{i}]");
    }
    s
}

/// Hooks used when rendering lowered IR.
pub trait RenderHooks {
    /// Suffix appended after an access, e.g. `@mem(...)`.
    fn access_suffix(&self, _access: &Access, _loops: &[&Loop]) -> Option<String> {
        None
    }
    /// Extra lines emitted at the start of a loop body.
    fn loop_prologue(&self, _lp: &Loop) -> Vec<String> {
        Vec::new()
    }
    /// Lines emitted before the kernel body (after declarations).
    fn preamble(&self) -> Vec<String> {
        Vec::new()
    }
    fn keep_transfers(&self) -> bool {
        true
    }
}

struct Plain;
impl RenderHooks for Plain {}

impl Kernel {
    /// Canonical source text.
    pub fn to_source(&self) -> String {
        self.render(&Plain)
    }

    pub fn render(&self, hooks: &dyn RenderHooks) -> String {
        let mut out = format!("kernel {} {{\n", self.name);
        for (c, v) in &self.constants {
            let _ = writeln!(out, "  const {c} = {v};");
        }
        for a in &self.arrays {
            let _ = writeln!(out, "  {}", format_decl(a));
        }
        for line in hooks.preamble() {
            let _ = writeln!(out, "  {line}");
        }
        let mut loops = Vec::new();
        self.render_nodes(&self.body, 1, &mut loops, hooks, &mut out);
        out.push_str("}\n");
        out
    }

    fn render_nodes<'a>(
        &'a self,
        nodes: &'a [Node],
        depth: usize,
        loops: &mut Vec<&'a Loop>,
        hooks: &dyn RenderHooks,
        out: &mut String,
    ) {
        let pad = "  ".repeat(depth);
        for n in nodes {
            match n {
                Node::Loop(l) => {
                    let _ = write!(out, "{pad}loop {} in {}..{}", l.var, l.lower, l.upper);
                    if l.step != 1 {
                        let _ = write!(out, " step {}", l.step);
                    }
                    if l.unroll != 1 {
                        let _ = write!(out, " unroll {}", l.unroll);
                    }
                    out.push_str(" {\n");
                    for line in hooks.loop_prologue(l) {
                        let _ = writeln!(out, "{pad}  {line}");
                    }
                    loops.push(l);
                    self.render_nodes(&l.body, depth + 1, loops, hooks, out);
                    loops.pop();
                    let _ = writeln!(out, "{pad}}}");
                }
                Node::Stmt(id) => {
                    let mut line = pad.clone();
                    let mut last: Option<AccessKind> = None;
                    for (i, a) in self.statements[*id].accesses.iter().enumerate() {
                        if i > 0 {
                            line.push_str(", ");
                        }
                        if last != Some(a.kind) {
                            line.push_str(match a.kind {
                                AccessKind::Read => "read ",
                                AccessKind::Write => "write ",
                            });
                            last = Some(a.kind);
                        }
                        line.push_str(&format_access_ref(a));
                        if let Some(sfx) = hooks.access_suffix(a, loops) {
                            line.push(' ');
                            line.push_str(&sfx);
                        }
                    }
                    line.push(';');
                    out.push_str(&line);
                    out.push('\n');
                }
                Node::Transfer(t) if hooks.keep_transfers() => {
                    let tile: Vec<String> = t.tile.iter().map(|d| d.to_string()).collect();
                    let _ = writeln!(out, "{pad}transfer {} tile [{}] via {};", t.array, tile.join(","), t.via);
                }
                Node::Transfer(_) => {}
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use crate::ir::parse_kernel;

    #[test]
    fn canonical_text_reparses_identically() {
        let src = "kernel k { const N = 4; array A: 32b[8] inout @locality; array B: 16b[4][4] input;\n\
                   loop i in 0..N { loop j in 0..4 step 2 unroll 2 { read A[2i - 1 + 1], B[i][j]; accum A[B[i][j]]; } } }";
        let k = parse_kernel(src).unwrap();
        let text = k.to_source();
        let again = parse_kernel(&text).unwrap();
        assert_eq!(k, again);
        assert_eq!(text, again.to_source());
    }
}
