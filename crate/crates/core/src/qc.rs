//! QC relaxation of the AC power-flow equations.
//!
//! # Lift layout
//!
//! Per bus `l`: the algebraic state `v, theta, p, q` plus the lifted square `vsq`.
//! Per line `i < j` (sorted by `(i, j)`), fifteen lift variables:
//!
//! | forward      | reverse          | flows                     | current |
//! |--------------|------------------|---------------------------|---------|
//! | `vv, s, c, wc, ws` | `vv, s, c, wc, ws` (ji) | `p_ij, q_ij, p_ji, q_ji` | `l`     |
//!
//! Here `vv ~ v_i v_j`, `s ~ sin(theta_i - theta_j)`, `c ~ cos(...)`,
//! `wc ~ vv c` and `ws ~ vv s`. So `n_QC = N + 15 L`.
//!
//! Rows per bus: square envelope (1 quadratic, 1 linear) and 2 nodal balances.
//! Rows per line: 16 envelope rows per direction (4 McCormick for `vv`, 2 sine,
//! 2 cosine, 4 McCormick each for `wc` and `ws`), 4 flow definitions, one
//! current definition and 2 SOC rows. With symmetry reduction the reverse
//! envelopes are replaced by 5 tie equalities, giving `4N + 28L` rows; without
//! it the count is `4N + 39L`.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use microgrid_opt::{ConicProgram, ConvexConstraint, LinExpr, VarId};

use crate::error::QcError;
use crate::grid::{GridAlgebraicState, Line, MicrogridSpec};

fn check_box(lo: f64, hi: f64) -> Result<(), QcError> {
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(QcError::InvertedBounds { lo, hi });
    }
    Ok(())
}

/// Envelope of `w = x y` over `[xl, xu] x [yl, yu]`.
pub fn mccormick(
    x: VarId,
    y: VarId,
    w: VarId,
    (xl, xu): (f64, f64),
    (yl, yu): (f64, f64),
) -> Result<[ConvexConstraint; 4], QcError> {
    check_box(xl, xu)?;
    check_box(yl, yu)?;
    let xy = |a: f64, b: f64| x * b + y * a;
    Ok([
        ConvexConstraint::ge(w, xy(xl, yl) - xl * yl),
        ConvexConstraint::ge(w, xy(xu, yu) - xu * yu),
        ConvexConstraint::le(w, xy(xu, yl) - xu * yl),
        ConvexConstraint::le(w, xy(xl, yu) - xl * yu),
    ])
}

/// `w >= x^2` (quadratic) and `w <= (xl + xu) x - xl xu` (linear).
pub fn square_envelope(x: VarId, w: VarId, xl: f64, xu: f64) -> Result<[ConvexConstraint; 2], QcError> {
    check_box(xl, xu)?;
    Ok([
        ConvexConstraint::Quadratic { quad: vec![(x, x, 1.0)], linear: LinExpr::term(w, -1.0) },
        ConvexConstraint::le(w, x * (xl + xu) - xl * xu),
    ])
}

/// Half-width used by the trigonometric envelopes for an angle-difference box.
pub fn angle_half_width(lo: f64, hi: f64) -> Result<f64, QcError> {
    check_box(lo, hi)?;
    let h = lo.abs().max(hi.abs());
    if lo > 0.0 || hi < 0.0 || h >= FRAC_PI_2 {
        return Err(QcError::AngleBox { lo, hi });
    }
    Ok(h)
}

/// Envelopes for `s ~ sin(t)` and `c ~ cos(t)` where `t = theta_i - theta_j`
/// lies in `[lo, hi]`. Returns two sine rows, the quadratic cosine upper bound
/// and the constant cosine lower bound, in that order.
pub fn trig_envelopes(
    theta_i: VarId,
    theta_j: VarId,
    s: VarId,
    c: VarId,
    lo: f64,
    hi: f64,
) -> Result<[ConvexConstraint; 4], QcError> {
    let h = angle_half_width(lo, hi)?;
    let t = theta_i - theta_j;
    let (sh, ch) = (h / 2.0).sin_cos();
    let k = if h == 0.0 { 0.5 } else { (1.0 - h.cos()) / (h * h) };
    let quad = vec![(theta_i, theta_i, k), (theta_j, theta_j, k), (theta_i, theta_j, -2.0 * k)];
    Ok([
        ConvexConstraint::le(s, (t.clone() - h / 2.0) * ch + sh),
        ConvexConstraint::ge(s, (t + h / 2.0) * ch - sh),
        ConvexConstraint::Quadratic { quad, linear: LinExpr::from(c) - 1.0 },
        ConvexConstraint::ge(c, LinExpr::constant(h.cos())),
    ])
}

/// `l = g (p_ij + p_ji) - b (q_ij + q_ji)` for a line with series admittance `g + j b`.
pub fn current_definition(l: VarId, flows: [VarId; 4], g: f64, b: f64) -> ConvexConstraint {
    let [p_ij, q_ij, p_ji, q_ji] = flows;
    ConvexConstraint::eq(l, (p_ij + p_ji) * g - (q_ij + q_ji) * b)
}

/// `p^2 + q^2 <= vsq l` as the rotated cone `||(2p, 2q, vsq - l)|| <= vsq + l`.
pub fn current_soc_constraint(p: VarId, q: VarId, vsq: VarId, l: VarId) -> ConvexConstraint {
    ConvexConstraint::Soc { bound: vsq + l, elems: vec![p * 2.0, q * 2.0, vsq - l] }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QcOptions {
    /// Instantiate envelopes once per unordered pair and tie the reverse direction.
    pub symmetry_reduction: bool,
}

impl Default for QcOptions {
    fn default() -> Self {
        Self { symmetry_reduction: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BusVars {
    pub v: VarId,
    pub theta: VarId,
    pub p: VarId,
    pub q: VarId,
    pub vsq: VarId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DirVars {
    pub vv: VarId,
    pub s: VarId,
    pub c: VarId,
    pub wc: VarId,
    pub ws: VarId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineVars {
    pub line: Line,
    pub fwd: DirVars,
    pub rev: DirVars,
    pub p_ij: VarId,
    pub q_ij: VarId,
    pub p_ji: VarId,
    pub q_ji: VarId,
    pub current: VarId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcLayout {
    pub buses: Vec<BusVars>,
    pub lines: Vec<LineVars>,
    pub options: QcOptions,
}

impl QcLayout {
    /// Number of lift variables beyond the `4N` algebraic state.
    pub fn n_qc(n_buses: usize, n_lines: usize) -> usize {
        n_buses + 15 * n_lines
    }

    /// Rows emitted by [`add_qc`].
    pub fn n_rows(n_buses: usize, n_lines: usize, opts: QcOptions) -> usize {
        4 * n_buses + if opts.symmetry_reduction { 28 } else { 39 } * n_lines
    }

    /// Write `z` and its exact lift into `x`.
    pub fn write(&self, z: &GridAlgebraicState, lift: &QcLift, x: &mut [f64]) {
        for (k, b) in self.buses.iter().enumerate() {
            x[b.v.0] = z.v[k];
            x[b.theta.0] = z.theta[k];
            x[b.p.0] = z.p[k];
            x[b.q.0] = z.q[k];
            x[b.vsq.0] = lift.vsq[k];
        }
        for (lv, ll) in self.lines.iter().zip(&lift.lines) {
            for (d, e) in [(&lv.fwd, &ll.fwd), (&lv.rev, &ll.rev)] {
                x[d.vv.0] = e[0];
                x[d.s.0] = e[1];
                x[d.c.0] = e[2];
                x[d.wc.0] = e[3];
                x[d.ws.0] = e[4];
            }
            x[lv.p_ij.0] = ll.p_ij;
            x[lv.q_ij.0] = ll.q_ij;
            x[lv.p_ji.0] = ll.p_ji;
            x[lv.q_ji.0] = ll.q_ji;
            x[lv.current.0] = ll.current;
        }
    }

    /// Read the algebraic state back out of a solution vector.
    pub fn state(&self, x: &[f64]) -> GridAlgebraicState {
        GridAlgebraicState {
            p: self.buses.iter().map(|b| x[b.p.0]).collect(),
            q: self.buses.iter().map(|b| x[b.q.0]).collect(),
            v: self.buses.iter().map(|b| x[b.v.0]).collect(),
            theta: self.buses.iter().map(|b| x[b.theta.0]).collect(),
        }
    }
}

/// Exact values of the lift variables at an AC state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcLift {
    pub vsq: Vec<f64>,
    pub lines: Vec<LineLift>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineLift {
    /// `[vv, s, c, wc, ws]` for `i -> j`.
    pub fwd: [f64; 5],
    /// Same for `j -> i`.
    pub rev: [f64; 5],
    pub p_ij: f64,
    pub q_ij: f64,
    pub p_ji: f64,
    pub q_ji: f64,
    pub current: f64,
}

fn check_finite_boxes(spec: &MicrogridSpec) -> Result<(), QcError> {
    for bus in 0..spec.n_buses {
        let (vl, vh) = spec.v_bounds[bus];
        let (tl, th) = spec.theta_bounds[bus];
        if ![vl, vh, tl, th].iter().all(|x| x.is_finite()) {
            return Err(QcError::MissingBounds { bus });
        }
    }
    Ok(())
}

fn corners(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let c = [a.0 * b.0, a.0 * b.1, a.1 * b.0, a.1 * b.1];
    (c.iter().copied().fold(f64::INFINITY, f64::min), c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Angle-difference box of `theta_i - theta_j`.
pub fn angle_box(spec: &MicrogridSpec, i: usize, j: usize) -> (f64, f64) {
    let (ti, tj) = (spec.theta_bounds[i], spec.theta_bounds[j]);
    (ti.0 - tj.1, ti.1 - tj.0)
}

struct DirBoxes {
    vv: (f64, f64),
    s: (f64, f64),
    c: (f64, f64),
    wc: (f64, f64),
    ws: (f64, f64),
}

fn dir_boxes(spec: &MicrogridSpec, i: usize, j: usize) -> Result<DirBoxes, QcError> {
    let (lo, hi) = angle_box(spec, i, j);
    let h = angle_half_width(lo, hi)?;
    let vv = corners(spec.v_bounds[i], spec.v_bounds[j]);
    let s = (lo.sin(), hi.sin());
    let c = (h.cos(), 1.0);
    Ok(DirBoxes { vv, s, c, wc: corners(vv, c), ws: corners(vv, s) })
}

/// Add the algebraic state of every bus and the QC relaxation to `prog`.
/// Blocks are named `{prefix}qc-envelopes`, `{prefix}qc-flows`,
/// `{prefix}qc-current` and `{prefix}qc-balance`.
pub fn add_qc(
    prog: &mut ConicProgram,
    spec: &MicrogridSpec,
    prefix: &str,
    opts: QcOptions,
) -> Result<QcLayout, QcError> {
    spec.validate()?;
    check_finite_boxes(spec)?;
    let lines = spec.ordered_lines();
    let mut sorted = lines.clone();
    sorted.sort_by_key(|l| (l.from, l.to));
    let boxes: Vec<(DirBoxes, DirBoxes)> = sorted
        .iter()
        .map(|l| Ok((dir_boxes(spec, l.from, l.to)?, dir_boxes(spec, l.to, l.from)?)))
        .collect::<Result<_, QcError>>()?;

    let env = prog.block(&format!("{prefix}qc-envelopes"));
    let flows = prog.block(&format!("{prefix}qc-flows"));
    let cur = prog.block(&format!("{prefix}qc-current"));
    let bal = prog.block(&format!("{prefix}qc-balance"));
    let inf = f64::INFINITY;

    let mut buses = Vec::with_capacity(spec.n_buses);
    for k in 0..spec.n_buses {
        let (vl, vh) = spec.v_bounds[k];
        let (tl, th) = spec.theta_bounds[k];
        let v = prog.continuous(format!("{prefix}v[{k}]"), vl, vh);
        let theta = prog.continuous(format!("{prefix}theta[{k}]"), tl, th);
        let p = prog.continuous(format!("{prefix}p[{k}]"), -inf, inf);
        let q = prog.continuous(format!("{prefix}q[{k}]"), -inf, inf);
        let vsq = prog.continuous(format!("{prefix}vsq[{k}]"), vl * vl, vh * vh);
        buses.push(BusVars { v, theta, p, q, vsq });
    }
    let mut out_lines = Vec::with_capacity(sorted.len());
    for (line, (bf, br)) in sorted.iter().zip(&boxes) {
        let (i, j) = (line.from, line.to);
        let tag = format!("{prefix}{i}-{j}");
        let mut dir = |name: &str, b: &DirBoxes| DirVars {
            vv: prog.continuous(format!("vv{name}[{tag}]"), b.vv.0, b.vv.1),
            s: prog.continuous(format!("s{name}[{tag}]"), b.s.0, b.s.1),
            c: prog.continuous(format!("c{name}[{tag}]"), b.c.0, b.c.1),
            wc: prog.continuous(format!("wc{name}[{tag}]"), b.wc.0, b.wc.1),
            ws: prog.continuous(format!("ws{name}[{tag}]"), b.ws.0, b.ws.1),
        };
        let fwd = dir("", bf);
        let rev = dir("_r", br);
        let lv = LineVars {
            line: *line,
            fwd,
            rev,
            p_ij: prog.continuous(format!("p_ij[{tag}]"), -inf, inf),
            q_ij: prog.continuous(format!("q_ij[{tag}]"), -inf, inf),
            p_ji: prog.continuous(format!("p_ji[{tag}]"), -inf, inf),
            q_ji: prog.continuous(format!("q_ji[{tag}]"), -inf, inf),
            current: prog.continuous(format!("l[{tag}]"), 0.0, inf),
        };
        out_lines.push(lv);
    }

    for (k, b) in buses.iter().enumerate() {
        let (vl, vh) = spec.v_bounds[k];
        prog.add_rows(env, square_envelope(b.v, b.vsq, vl, vh)?);
    }
    for (lv, (bf, br)) in out_lines.iter().zip(&boxes) {
        let (i, j) = (lv.line.from, lv.line.to);
        let (bi, bj) = (buses[i], buses[j]);
        let envelopes = |prog: &mut ConicProgram, d: &DirVars, b: &DirBoxes, a: usize, c: usize| {
            let (lo, hi) = angle_box(spec, a, c);
            prog.add_rows(env, mccormick(buses[a].v, buses[c].v, d.vv, spec.v_bounds[a], spec.v_bounds[c])?);
            prog.add_rows(env, trig_envelopes(buses[a].theta, buses[c].theta, d.s, d.c, lo, hi)?);
            prog.add_rows(env, mccormick(d.vv, d.c, d.wc, b.vv, b.c)?);
            prog.add_rows(env, mccormick(d.vv, d.s, d.ws, b.vv, b.s)?);
            Ok::<(), QcError>(())
        };
        envelopes(prog, &lv.fwd, bf, i, j)?;
        if opts.symmetry_reduction {
            let (f, r) = (lv.fwd, lv.rev);
            prog.add_row(env, ConvexConstraint::eq(r.vv, f.vv));
            prog.add_row(env, ConvexConstraint::eq(r.c, f.c));
            prog.add_row(env, ConvexConstraint::eq(LinExpr::from(r.s), -LinExpr::from(f.s)));
            prog.add_row(env, ConvexConstraint::eq(r.wc, f.wc));
            prog.add_row(env, ConvexConstraint::eq(LinExpr::from(r.ws), -LinExpr::from(f.ws)));
        } else {
            envelopes(prog, &lv.rev, br, j, i)?;
        }
        let (g, b) = (lv.line.g, lv.line.b);
        let flow = |vsq: VarId, d: &DirVars| {
            let p = vsq * g - d.wc * g - d.ws * b;
            let q = vsq * (-b) + d.wc * b - d.ws * g;
            (p, q)
        };
        let (p_ij, q_ij) = flow(bi.vsq, &lv.fwd);
        let (p_ji, q_ji) = flow(bj.vsq, &lv.rev);
        prog.add_row(flows, ConvexConstraint::eq(lv.p_ij, p_ij));
        prog.add_row(flows, ConvexConstraint::eq(lv.q_ij, q_ij));
        prog.add_row(flows, ConvexConstraint::eq(lv.p_ji, p_ji));
        prog.add_row(flows, ConvexConstraint::eq(lv.q_ji, q_ji));
        prog.add_row(cur, current_definition(lv.current, [lv.p_ij, lv.q_ij, lv.p_ji, lv.q_ji], g, b));
        prog.add_row(cur, current_soc_constraint(lv.p_ij, lv.q_ij, bi.vsq, lv.current));
        prog.add_row(cur, current_soc_constraint(lv.p_ji, lv.q_ji, bj.vsq, lv.current));
    }
    for (k, b) in buses.iter().enumerate() {
        let (gs, bs) = spec.ground[k];
        let mut p = LinExpr::term(b.vsq, gs);
        let mut q = LinExpr::term(b.vsq, -bs);
        for lv in &out_lines {
            if lv.line.from == k {
                p.add_term(lv.p_ij, 1.0);
                q.add_term(lv.q_ij, 1.0);
            } else if lv.line.to == k {
                p.add_term(lv.p_ji, 1.0);
                q.add_term(lv.q_ji, 1.0);
            }
        }
        prog.add_row(bal, ConvexConstraint::eq(b.p, p));
        prog.add_row(bal, ConvexConstraint::eq(b.q, q));
    }
    Ok(QcLayout { buses, lines: out_lines, options: opts })
}

/// The QC relaxation as a standalone feasibility program (zero objective).
pub fn assemble_qc(spec: &MicrogridSpec, opts: QcOptions) -> Result<(ConicProgram, QcLayout), QcError> {
    let mut prog = ConicProgram::new();
    let layout = add_qc(&mut prog, spec, "", opts)?;
    Ok((prog, layout))
}

/// Exact lift of an AC state. `z.p`, `z.q` are not used; flows are computed from `v`, `theta`.
pub fn lift_ac_point(spec: &MicrogridSpec, z: &GridAlgebraicState) -> Result<QcLift, QcError> {
    let tol = 1e-12;
    for bus in 0..spec.n_buses {
        let (vl, vh) = spec.v_bounds[bus];
        let (tl, th) = spec.theta_bounds[bus];
        if z.v[bus] < vl - tol || z.v[bus] > vh + tol {
            return Err(QcError::OutOfBox { bus, what: format!("v = {}", z.v[bus]) });
        }
        if z.theta[bus] < tl - tol || z.theta[bus] > th + tol {
            return Err(QcError::OutOfBox { bus, what: format!("theta = {}", z.theta[bus]) });
        }
    }
    let mut lines = spec.ordered_lines();
    lines.sort_by_key(|l| (l.from, l.to));
    let vsq: Vec<f64> = z.v.iter().map(|v| v * v).collect();
    let dir = |a: usize, b: usize| {
        let vv = z.v[a] * z.v[b];
        let (s, c) = (z.theta[a] - z.theta[b]).sin_cos();
        [vv, s, c, vv * c, vv * s]
    };
    let lines = lines
        .iter()
        .map(|l| {
            let (fwd, rev) = (dir(l.from, l.to), dir(l.to, l.from));
            let (g, b) = (l.g, l.b);
            let p_ij = g * vsq[l.from] - g * fwd[3] - b * fwd[4];
            let q_ij = -b * vsq[l.from] + b * fwd[3] - g * fwd[4];
            let p_ji = g * vsq[l.to] - g * rev[3] - b * rev[4];
            let q_ji = -b * vsq[l.to] + b * rev[3] - g * rev[4];
            let current = g * (p_ij + p_ji) - b * (q_ij + q_ji);
            LineLift { fwd, rev, p_ij, q_ij, p_ji, q_ji, current }
        })
        .collect();
    Ok(QcLift { vsq, lines })
}
