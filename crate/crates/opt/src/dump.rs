//! Plain-text sparse program format.
//!
//! ```text
//! conic-program 1
//! vars <n>
//! v <c|b|i> <lower> <upper> <name>          (n lines)
//! blocks <k>
//! b <name>                                  (k lines)
//! objective <expr>
//! rows <r>
//! le <block> <expr>                         expr <= 0
//! eq <block> <expr>                         expr == 0
//! quad <block> <nq> (<i> <j> <coef>)* <expr>   sum(coef x_i x_j) + expr <= 0
//! soc <block> <ne> <bound-expr> <elem-expr>*   ||elems|| <= bound
//! ```
//!
//! An `<expr>` is `<constant> <nterms> (<var> <coef>)*`. Numbers are written in
//! shortest round-trip form (`inf`/`-inf` for infinite bounds), so writing and
//! re-reading a program reproduces it exactly. Names run to the end of the line.

use std::fmt::Write as _;
use std::str::SplitWhitespace;

use crate::error::OptError;
use crate::program::{BlockId, ConicProgram, ConvexConstraint, LinExpr, VarId, VarKind};

fn write_expr(out: &mut String, e: &LinExpr) {
    let _ = write!(out, " {:?} {}", e.constant, e.terms.len());
    for &(v, c) in &e.terms {
        let _ = write!(out, " {} {:?}", v.0, c);
    }
}

pub fn write_program(prog: &ConicProgram) -> String {
    let mut out = String::new();
    out.push_str("conic-program 1\n");
    let _ = writeln!(out, "vars {}", prog.vars.len());
    for v in &prog.vars {
        let k = match v.kind {
            VarKind::Continuous => 'c',
            VarKind::Binary => 'b',
            VarKind::Integer => 'i',
        };
        let _ = writeln!(out, "v {k} {:?} {:?} {}", v.lower, v.upper, v.name);
    }
    let _ = writeln!(out, "blocks {}", prog.blocks.len());
    for b in &prog.blocks {
        let _ = writeln!(out, "b {b}");
    }
    out.push_str("objective");
    write_expr(&mut out, &prog.objective);
    out.push('\n');
    let _ = writeln!(out, "rows {}", prog.rows.len());
    for r in &prog.rows {
        match &r.constraint {
            ConvexConstraint::LinearLe(e) => {
                let _ = write!(out, "le {}", r.block.0);
                write_expr(&mut out, e);
            }
            ConvexConstraint::LinearEq(e) => {
                let _ = write!(out, "eq {}", r.block.0);
                write_expr(&mut out, e);
            }
            ConvexConstraint::Quadratic { quad, linear } => {
                let _ = write!(out, "quad {} {}", r.block.0, quad.len());
                for &(i, j, c) in quad {
                    let _ = write!(out, " {} {} {:?}", i.0, j.0, c);
                }
                write_expr(&mut out, linear);
            }
            ConvexConstraint::Soc { bound, elems } => {
                let _ = write!(out, "soc {} {}", r.block.0, elems.len());
                write_expr(&mut out, bound);
                for e in elems {
                    write_expr(&mut out, e);
                }
            }
        }
        out.push('\n');
    }
    out
}

struct Lines<'a> {
    it: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str, OptError> {
        for (i, l) in self.it.by_ref() {
            self.line = i + 1;
            let t = l.trim_end();
            if !t.is_empty() && !t.starts_with('#') {
                return Ok(t);
            }
        }
        Err(OptError::Parse { line: self.line + 1, msg: "unexpected end of input".into() })
    }

    fn err(&self, msg: impl Into<String>) -> OptError {
        OptError::Parse { line: self.line, msg: msg.into() }
    }
}

fn tok<'a>(lines: &Lines, t: &mut SplitWhitespace<'a>) -> Result<&'a str, OptError> {
    t.next().ok_or_else(|| lines.err("truncated line"))
}

fn num<T: std::str::FromStr>(lines: &Lines, t: &mut SplitWhitespace) -> Result<T, OptError> {
    let s = tok(lines, t)?;
    s.parse().map_err(|_| lines.err(format!("bad number '{s}'")))
}

fn read_expr(lines: &Lines, t: &mut SplitWhitespace, n_vars: usize) -> Result<LinExpr, OptError> {
    let constant: f64 = num(lines, t)?;
    let n: usize = num(lines, t)?;
    let mut e = LinExpr { terms: Vec::with_capacity(n), constant };
    for _ in 0..n {
        let v: usize = num(lines, t)?;
        if v >= n_vars {
            return Err(lines.err(format!("variable index {v} out of range")));
        }
        let c: f64 = num(lines, t)?;
        e.terms.push((VarId(v), c));
    }
    Ok(e)
}

/// Split `<keyword> <rest>` and check the keyword.
fn header<'a>(lines: &Lines, line: &'a str, word: &str) -> Result<&'a str, OptError> {
    match line.split_once(' ') {
        Some((w, rest)) if w == word => Ok(rest),
        _ if line == word => Ok(""),
        _ => Err(lines.err(format!("expected '{word}'"))),
    }
}

pub fn read_program(text: &str) -> Result<ConicProgram, OptError> {
    let mut lines = Lines { it: text.lines().enumerate(), line: 0 };
    let l = lines.next()?;
    if l != "conic-program 1" {
        return Err(lines.err("missing 'conic-program 1' header"));
    }
    let mut prog = ConicProgram::new();
    let l = lines.next()?;
    let n: usize = header(&lines, l, "vars")?.trim().parse().map_err(|_| lines.err("bad count"))?;
    for _ in 0..n {
        let l = lines.next()?;
        let rest = header(&lines, l, "v")?;
        let mut parts = rest.splitn(4, ' ');
        let kind = match parts.next() {
            Some("c") => VarKind::Continuous,
            Some("b") => VarKind::Binary,
            Some("i") => VarKind::Integer,
            _ => return Err(lines.err("bad variable kind")),
        };
        let mut bound = |what: &str| -> Result<f64, OptError> {
            parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| lines.err(format!("bad {what} bound")))
        };
        let (lo, hi) = (bound("lower")?, bound("upper")?);
        let name = parts.next().unwrap_or("").to_string();
        prog.vars.push(crate::program::Variable { name, lower: lo, upper: hi, kind });
    }
    let l = lines.next()?;
    let k: usize = header(&lines, l, "blocks")?.trim().parse().map_err(|_| lines.err("bad count"))?;
    for _ in 0..k {
        let l = lines.next()?;
        let name = header(&lines, l, "b")?;
        let before = prog.blocks.len();
        prog.block(name);
        if prog.blocks.len() == before {
            return Err(lines.err(format!("duplicate block '{name}'")));
        }
    }
    let l = lines.next()?;
    let mut t = header(&lines, l, "objective")?.split_whitespace();
    prog.objective = read_expr(&lines, &mut t, n)?;
    let l = lines.next()?;
    let r: usize = header(&lines, l, "rows")?.trim().parse().map_err(|_| lines.err("bad count"))?;
    for _ in 0..r {
        let l = lines.next()?;
        let mut t = l.split_whitespace();
        let kw = tok(&lines, &mut t)?;
        let b: usize = num(&lines, &mut t)?;
        if b >= k {
            return Err(lines.err(format!("block index {b} out of range")));
        }
        let c = match kw {
            "le" => ConvexConstraint::LinearLe(read_expr(&lines, &mut t, n)?),
            "eq" => ConvexConstraint::LinearEq(read_expr(&lines, &mut t, n)?),
            "quad" => {
                let nq: usize = num(&lines, &mut t)?;
                let mut quad = Vec::with_capacity(nq);
                for _ in 0..nq {
                    let i: usize = num(&lines, &mut t)?;
                    let j: usize = num(&lines, &mut t)?;
                    if i >= n || j >= n {
                        return Err(lines.err("variable index out of range"));
                    }
                    quad.push((VarId(i), VarId(j), num(&lines, &mut t)?));
                }
                ConvexConstraint::Quadratic { quad, linear: read_expr(&lines, &mut t, n)? }
            }
            "soc" => {
                let ne: usize = num(&lines, &mut t)?;
                let bound = read_expr(&lines, &mut t, n)?;
                let elems = (0..ne).map(|_| read_expr(&lines, &mut t, n)).collect::<Result<_, _>>()?;
                ConvexConstraint::Soc { bound, elems }
            }
            other => return Err(lines.err(format!("unknown row kind '{other}'"))),
        };
        if t.next().is_some() {
            return Err(lines.err("trailing tokens"));
        }
        prog.add_row(BlockId(b), c);
    }
    Ok(prog)
}
