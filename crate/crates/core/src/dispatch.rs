//! Generator and battery dynamics, stage costs, and the multistage encoding.
//!
//! # Horizon layout
//!
//! For steps `i = 0..=M` the encoding holds, per generator, `p, q, on, counter`;
//! per battery `p, q, soc, t` (with `t >= |p|`, plus a charge/discharge binary when
//! the strict split is enabled); and the full QC block of the grid. For intervals
//! `i = 0..M-1` it holds, per generator, `dp, dq, switch` and per battery `dp, dq`.
//!
//! With `G` generators, `B` batteries, `N` buses and `L` lines the counts are
//!
//! ```text
//! vars = (M+1) (4G + 4B + 5N + 15L) + M (3G + 2B)       [+ (M+1) B strict]
//! rows = (M+1) (8G + 2B + 6N + 28L + D)  + M (12G + 3B) [+ 4 (M+1) B strict]
//! ```
//!
//! where `D` is the number of generators with a finite max on- or off-time and
//! `28L` becomes `39L` without symmetry reduction. Per interval and generator the
//! 12 rows are 2 power dynamics, 4 switch dynamics, 3 counter dynamics, 2 ramping
//! and 1 min-dwell row.

use serde::{Deserialize, Serialize};

use microgrid_opt::{big_m_indicator, BigM, ConicProgram, ConvexConstraint, LinExpr, VarId};

use crate::error::DispatchError;
use crate::grid::{DemandSnapshot, MicrogridSpec, PowerSetpoint};
use crate::qc::{add_qc, QcLayout, QcOptions};

/// Times are in sampling intervals; `None` means unlimited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub name: String,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// Fraction of `p_max` per hour.
    pub ramp: f64,
    pub min_on: u32,
    pub max_on: Option<u32>,
    pub min_off: u32,
    pub max_off: Option<u32>,
    /// Per window of one period.
    pub max_startups: Option<u32>,
    /// Cost per hour while on.
    pub base_cost: f64,
    /// Cost per p.u. and hour.
    pub fuel_cost: f64,
    pub startup_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryParams {
    pub name: String,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// State-of-charge bounds in p.u. h.
    pub soc_min: f64,
    pub soc_max: f64,
    pub efficiency: f64,
    /// Self-discharge rate per hour.
    pub loss_rate: f64,
    pub throughput_cost: f64,
    pub soc_aging_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchParams {
    pub generators: Vec<GeneratorParams>,
    pub batteries: Vec<BatteryParams>,
}

impl DispatchParams {
    pub fn validate(&self, spec: &MicrogridSpec) -> Result<(), DispatchError> {
        let bad = |m: String| Err(DispatchError::Params(m));
        if self.generators.len() != spec.generators.len() || self.batteries.len() != spec.batteries.len() {
            return bad("device parameter count does not match the grid".into());
        }
        for g in &self.generators {
            let finite = [g.p_min, g.p_max, g.q_min, g.q_max, g.ramp].iter().all(|x| x.is_finite());
            if !finite {
                return bad(format!("{}: power bounds must be finite", g.name));
            }
            if !(g.p_min > 0.0 && g.p_min <= g.p_max) || g.q_min > g.q_max {
                return bad(format!("{}: need 0 < p_min <= p_max and q_min <= q_max", g.name));
            }
            if !(g.ramp > 0.0 && g.ramp <= 1.0) {
                return bad(format!("{}: ramp must lie in (0, 1]", g.name));
            }
            if g.min_on < 1 || g.min_off < 1 {
                return bad(format!("{}: min on/off times must be at least 1", g.name));
            }
            if g.max_on.is_some_and(|m| m < g.min_on) || g.max_off.is_some_and(|m| m < g.min_off) {
                return bad(format!("{}: max dwell below min dwell", g.name));
            }
        }
        for b in &self.batteries {
            let finite = [b.p_min, b.p_max, b.q_min, b.q_max, b.soc_min, b.soc_max].iter().all(|x| x.is_finite());
            if !finite || b.p_min > b.p_max || b.q_min > b.q_max || b.soc_min > b.soc_max {
                return bad(format!("{}: bounds must be finite and ordered", b.name));
            }
            if !(b.efficiency > 0.0 && b.efficiency <= 1.0) || b.loss_rate < 0.0 {
                return bad(format!("{}: need 0 < efficiency <= 1 and loss_rate >= 0", b.name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchState {
    pub p_g: Vec<f64>,
    pub q_g: Vec<f64>,
    pub on: Vec<bool>,
    pub counter: Vec<u32>,
    pub p_b: Vec<f64>,
    pub q_b: Vec<f64>,
    pub soc: Vec<f64>,
}

impl DispatchState {
    pub fn setpoint(&self) -> PowerSetpoint {
        PowerSetpoint { p_g: self.p_g.clone(), q_g: self.q_g.clone(), p_b: self.p_b.clone(), q_b: self.q_b.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub dp_g: Vec<f64>,
    pub dq_g: Vec<f64>,
    pub switch: Vec<bool>,
    pub dp_b: Vec<f64>,
    pub dq_b: Vec<f64>,
}

/// One simulation step.
pub fn step_dynamics(x: &DispatchState, u: &ControlInput, params: &DispatchParams, dt: f64) -> DispatchState {
    let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<_>>();
    let p_b = add(&x.p_b, &u.dp_b);
    let soc = x
        .soc
        .iter()
        .zip(&p_b)
        .zip(&params.batteries)
        .map(|((&s, &p), b)| (1.0 - b.loss_rate * dt) * s - dt * (p + (1.0 - b.efficiency) * p.abs()))
        .collect();
    DispatchState {
        p_g: add(&x.p_g, &u.dp_g),
        q_g: add(&x.q_g, &u.dq_g),
        on: x.on.iter().zip(&u.switch).map(|(&o, &s)| o ^ s).collect(),
        counter: x.counter.iter().zip(&u.switch).map(|(&c, &s)| if s { 0 } else { c + 1 }).collect(),
        q_b: add(&x.q_b, &u.dq_b),
        p_b,
        soc,
    }
}

/// Cost of the interval starting at `x` under input `u`, evaluated on the post-step state.
pub fn stage_cost(x: &DispatchState, u: &ControlInput, params: &DispatchParams, dt: f64) -> f64 {
    let next = step_dynamics(x, u, params, dt);
    let mut cost = 0.0;
    for (k, g) in params.generators.iter().enumerate() {
        if next.on[k] {
            cost += g.base_cost * dt;
        }
        cost += g.fuel_cost * next.p_g[k] * dt;
        if !x.on[k] && u.switch[k] {
            cost += g.startup_cost;
        }
    }
    for (k, b) in params.batteries.iter().enumerate() {
        cost += (b.throughput_cost * next.p_b[k].abs() + b.soc_aging_cost * next.soc[k]) * dt;
    }
    cost
}

/// Startups in a window from its on-states at both ends and its switch sequence.
pub fn startup_count(on_start: bool, on_end: bool, switches: &[bool]) -> Result<u32, DispatchError> {
    let n = switches.iter().filter(|&&s| s).count() as i64;
    if (on_start ^ (n % 2 == 1)) != on_end {
        return Err(DispatchError::Parity { on_start: on_start as u8, on_end: on_end as u8 });
    }
    Ok(((on_end as i64 - on_start as i64 + n) / 2) as u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenStepVars {
    pub p: VarId,
    pub q: VarId,
    pub on: VarId,
    pub counter: VarId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatStepVars {
    pub p: VarId,
    pub q: VarId,
    pub soc: VarId,
    /// Epigraph of `|p|`.
    pub abs: VarId,
    /// Discharge indicator of the strict split.
    pub mode: Option<VarId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepVars {
    pub gens: Vec<GenStepVars>,
    pub bats: Vec<BatStepVars>,
    pub qc: QcLayout,
}

impl StepVars {
    /// Every variable of the step in a fixed order, so that values can be moved
    /// between encodings of the same grid.
    pub fn all(&self) -> Vec<VarId> {
        let mut out = Vec::new();
        for g in &self.gens {
            out.extend([g.p, g.q, g.on, g.counter]);
        }
        for b in &self.bats {
            out.extend([b.p, b.q, b.soc, b.abs]);
            out.extend(b.mode);
        }
        for b in &self.qc.buses {
            out.extend([b.v, b.theta, b.p, b.q, b.vsq]);
        }
        for l in &self.qc.lines {
            for d in [l.fwd, l.rev] {
                out.extend([d.vv, d.s, d.c, d.wc, d.ws]);
            }
            out.extend([l.p_ij, l.q_ij, l.p_ji, l.q_ji, l.current]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenControlVars {
    pub dp: VarId,
    pub dq: VarId,
    pub switch: VarId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatControlVars {
    pub dp: VarId,
    pub dq: VarId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlVars {
    pub gens: Vec<GenControlVars>,
    pub bats: Vec<BatControlVars>,
}

impl ControlVars {
    pub fn all(&self) -> Vec<VarId> {
        let mut out = Vec::new();
        for g in &self.gens {
            out.extend([g.dp, g.dq, g.switch]);
        }
        for b in &self.bats {
            out.extend([b.dp, b.dq]);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeOptions {
    pub qc: QcOptions,
    /// Replace the relaxed `|p_b|` epigraph by an exact binary split.
    pub strict_battery_split: bool,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        Self { qc: QcOptions::default(), strict_battery_split: false }
    }
}

/// Block names used by [`encode_horizon`].
pub mod blocks {
    pub const GEN_DYNAMICS: &str = "gen-dynamics";
    pub const SWITCH_DYNAMICS: &str = "switch-dynamics";
    pub const COUNTER_DYNAMICS: &str = "counter-dynamics";
    pub const BATTERY_DYNAMICS: &str = "battery-dynamics";
    pub const SOC_DYNAMICS: &str = "soc-dynamics";
    pub const ABS_EPIGRAPH: &str = "abs-epigraph";
    pub const MODE_BOUNDS: &str = "mode-bounds";
    pub const RAMPING: &str = "ramping";
    pub const MAX_DWELL: &str = "max-dwell";
    pub const MIN_DWELL: &str = "min-dwell";
    pub const BALANCE: &str = "balance";
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonEncoding {
    pub program: ConicProgram,
    pub steps: Vec<StepVars>,
    pub controls: Vec<ControlVars>,
    pub m: usize,
    pub dt: f64,
}

/// Where the step-0 state comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState<'a> {
    /// Step 0 is fixed to this state.
    Fixed(&'a DispatchState),
    /// Step 0 is free within the device boxes; counters lie in the given range.
    Free { counter_max: u32 },
}

fn gen_boxes(g: &GeneratorParams) -> ((f64, f64), (f64, f64)) {
    ((g.p_min.min(0.0), g.p_max.max(0.0)), (g.q_min.min(0.0), g.q_max.max(0.0)))
}

/// Assemble dynamics, bounds, dwell rows, QC blocks, balance rows and the stage
/// cost over `M` intervals. `demand` has `M + 1` entries.
pub fn encode_horizon(
    spec: &MicrogridSpec,
    params: &DispatchParams,
    demand: &[DemandSnapshot],
    m: usize,
    dt: f64,
    initial: InitialState,
    opts: &EncodeOptions,
) -> Result<HorizonEncoding, DispatchError> {
    params.validate(spec)?;
    if demand.len() != m + 1 {
        return Err(DispatchError::DemandLength { got: demand.len(), want: m + 1 });
    }
    if !(dt > 0.0) {
        return Err(DispatchError::Params(format!("dt must be positive, got {dt}")));
    }
    if let InitialState::Fixed(x0) = initial {
        let ok = x0.p_g.len() == params.generators.len()
            && x0.q_g.len() == x0.p_g.len()
            && x0.on.len() == x0.p_g.len()
            && x0.counter.len() == x0.p_g.len()
            && x0.p_b.len() == params.batteries.len()
            && x0.q_b.len() == x0.p_b.len()
            && x0.soc.len() == x0.p_b.len();
        if !ok {
            return Err(DispatchError::Params("initial state dimensions do not match the devices".into()));
        }
    }
    let mut prog = ConicProgram::new();
    let inf = f64::INFINITY;
    let mut steps = Vec::with_capacity(m + 1);
    for i in 0..=m {
        let mut gens = Vec::new();
        for (k, g) in params.generators.iter().enumerate() {
            let ((pl, pu), (ql, qu)) = gen_boxes(g);
            let c_max = match initial {
                InitialState::Fixed(x0) => x0.counter[k] as f64 + i as f64,
                InitialState::Free { counter_max } => counter_max as f64 + i as f64,
            };
            gens.push(GenStepVars {
                p: prog.continuous(format!("p_g{k}({i})"), pl, pu),
                q: prog.continuous(format!("q_g{k}({i})"), ql, qu),
                on: prog.binary(format!("on{k}({i})")),
                counter: prog.integer(format!("counter{k}({i})"), 0.0, c_max),
            });
        }
        let mut bats = Vec::new();
        for (k, b) in params.batteries.iter().enumerate() {
            let cap = b.p_min.abs().max(b.p_max.abs());
            bats.push(BatStepVars {
                p: prog.continuous(format!("p_b{k}({i})"), b.p_min, b.p_max),
                q: prog.continuous(format!("q_b{k}({i})"), b.q_min, b.q_max),
                soc: prog.continuous(format!("soc{k}({i})"), b.soc_min, b.soc_max),
                abs: prog.continuous(format!("abs_p_b{k}({i})"), 0.0, cap),
                mode: opts.strict_battery_split.then(|| prog.binary(format!("discharge{k}({i})"))),
            });
        }
        let qc = add_qc(&mut prog, spec, "", opts.qc)?;
        steps.push(StepVars { gens, bats, qc });
    }
    if let InitialState::Fixed(x0) = initial {
        let s0 = &steps[0];
        let mut fix = |v: VarId, val: f64| {
            prog.vars[v.0].lower = val;
            prog.vars[v.0].upper = val;
        };
        for (k, g) in s0.gens.iter().enumerate() {
            fix(g.p, x0.p_g[k]);
            fix(g.q, x0.q_g[k]);
            fix(g.on, if x0.on[k] { 1.0 } else { 0.0 });
            fix(g.counter, x0.counter[k] as f64);
        }
        for (k, b) in s0.bats.iter().enumerate() {
            fix(b.p, x0.p_b[k]);
            fix(b.q, x0.q_b[k]);
            fix(b.soc, x0.soc[k]);
        }
    }
    let mut controls = Vec::with_capacity(m);
    for i in 0..m {
        let gens = (0..params.generators.len())
            .map(|k| GenControlVars {
                dp: prog.continuous(format!("dp_g{k}({i})"), -inf, inf),
                dq: prog.continuous(format!("dq_g{k}({i})"), -inf, inf),
                switch: prog.binary(format!("switch{k}({i})")),
            })
            .collect();
        let bats = (0..params.batteries.len())
            .map(|k| BatControlVars {
                dp: prog.continuous(format!("dp_b{k}({i})"), -inf, inf),
                dq: prog.continuous(format!("dq_b{k}({i})"), -inf, inf),
            })
            .collect();
        controls.push(ControlVars { gens, bats });
    }

    let b_gen = prog.block(blocks::GEN_DYNAMICS);
    let b_sw = prog.block(blocks::SWITCH_DYNAMICS);
    let b_cnt = prog.block(blocks::COUNTER_DYNAMICS);
    let b_bat = prog.block(blocks::BATTERY_DYNAMICS);
    let b_soc = prog.block(blocks::SOC_DYNAMICS);
    let b_abs = prog.block(blocks::ABS_EPIGRAPH);
    let b_mode = prog.block(blocks::MODE_BOUNDS);
    let b_ramp = prog.block(blocks::RAMPING);
    let b_maxd = prog.block(blocks::MAX_DWELL);
    let b_mind = prog.block(blocks::MIN_DWELL);
    let b_bal = prog.block(blocks::BALANCE);

    for (i, st) in steps.iter().enumerate() {
        for (g, gv) in params.generators.iter().zip(&st.gens) {
            let f0 = [LinExpr::from(gv.p), -LinExpr::from(gv.p), LinExpr::from(gv.q), -LinExpr::from(gv.q)];
            let f1 = [gv.p - g.p_max, LinExpr::constant(g.p_min) - gv.p, gv.q - g.q_max, LinExpr::constant(g.q_min) - gv.q];
            prog.add_rows(b_mode, big_m_indicator(&prog, gv.on, &f0, &f1, &BigM::Tightest)?);
            let c = LinExpr::from(gv.counter);
            match (g.max_on, g.max_off) {
                (Some(on), Some(off)) => {
                    // c <= on * Gi + off * (1 - Gi)
                    let rhs = gv.on * (on as f64 - off as f64) + off as f64;
                    prog.add_row(b_maxd, ConvexConstraint::le(c, rhs));
                }
                (Some(on), None) => {
                    let rows = big_m_indicator(&prog, gv.on, &[], &[c - on as f64], &BigM::Tightest)?;
                    prog.add_rows(b_maxd, rows);
                }
                (None, Some(off)) => {
                    let rows = big_m_indicator(&prog, gv.on, &[c - off as f64], &[], &BigM::Tightest)?;
                    prog.add_rows(b_maxd, rows);
                }
                (None, None) => {}
            }
        }
        for (b, bv) in params.batteries.iter().zip(&st.bats) {
            match bv.mode {
                None => {
                    prog.add_row(b_abs, ConvexConstraint::le(bv.p, bv.abs));
                    prog.add_row(b_abs, ConvexConstraint::le(-LinExpr::from(bv.p), bv.abs));
                }
                Some(z) => {
                    // z = 1: p >= 0 and t = p; z = 0: p <= 0 and t = -p.
                    let lo = -b.p_min.min(0.0);
                    let hi = b.p_max.max(0.0);
                    let off = LinExpr::constant(1.0) - z;
                    prog.add_row(b_abs, ConvexConstraint::le(bv.p, z * hi));
                    prog.add_row(b_abs, ConvexConstraint::ge(bv.p, off.clone() * (-lo)));
                    prog.add_row(b_abs, ConvexConstraint::le(bv.p, bv.abs));
                    prog.add_row(b_abs, ConvexConstraint::le(-LinExpr::from(bv.p), bv.abs));
                    prog.add_row(b_abs, ConvexConstraint::le(bv.abs, bv.p + off * (2.0 * lo)));
                    prog.add_row(b_abs, ConvexConstraint::le(bv.abs, -LinExpr::from(bv.p) + z * (2.0 * hi)));
                }
            }
        }
        // p_l = sum p_g + sum p_b - p_d at every bus.
        let d = &demand[i];
        for (l, bus) in st.qc.buses.iter().enumerate() {
            let mut p = LinExpr::constant(-d.p_d[l]);
            let mut q = LinExpr::constant(-d.q_d[l]);
            for (k, &gb) in spec.generators.iter().enumerate() {
                if gb == l {
                    p.add_term(st.gens[k].p, 1.0);
                    q.add_term(st.gens[k].q, 1.0);
                }
            }
            for (k, &bb) in spec.batteries.iter().enumerate() {
                if bb == l {
                    p.add_term(st.bats[k].p, 1.0);
                    q.add_term(st.bats[k].q, 1.0);
                }
            }
            prog.add_row(b_bal, ConvexConstraint::eq(bus.p, p));
            prog.add_row(b_bal, ConvexConstraint::eq(bus.q, q));
        }
    }

    let mut objective = LinExpr::new();
    for i in 0..m {
        let (cur, next, u) = (&steps[i], &steps[i + 1], &controls[i]);
        for (k, g) in params.generators.iter().enumerate() {
            let (a, b, c) = (cur.gens[k], next.gens[k], u.gens[k]);
            prog.add_row(b_gen, ConvexConstraint::eq(b.p, a.p + c.dp));
            prog.add_row(b_gen, ConvexConstraint::eq(b.q, a.q + c.dq));
            let f0 = [b.on - a.on, a.on - b.on];
            let f1 = [(b.on + a.on) - 1.0, LinExpr::constant(1.0) - b.on - a.on];
            prog.add_rows(b_sw, big_m_indicator(&prog, c.switch, &f0, &f1, &BigM::Tightest)?);
            let f0 = [(b.counter - a.counter) - 1.0, (a.counter - b.counter) + 1.0];
            let f1 = [LinExpr::from(b.counter)];
            prog.add_rows(b_cnt, big_m_indicator(&prog, c.switch, &f0, &f1, &BigM::Tightest)?);
            let r = g.ramp * g.p_max * dt;
            prog.add_row(b_ramp, ConvexConstraint::le(c.dp, LinExpr::constant(r)));
            prog.add_row(b_ramp, ConvexConstraint::ge(c.dp, LinExpr::constant(-r)));
            // switch = 1 => Gi (min_on - min_off) + min_off <= counter
            let need = a.on * (g.min_on as f64 - g.min_off as f64) + g.min_off as f64 - a.counter;
            prog.add_rows(b_mind, big_m_indicator(&prog, c.switch, &[], &[need], &BigM::Tightest)?);

            objective.add_term(b.on, g.base_cost * dt);
            objective.add_term(b.p, g.fuel_cost * dt);
            // startups = (on' - on + switch) / 2
            objective.add_term(b.on, 0.5 * g.startup_cost);
            objective.add_term(a.on, -0.5 * g.startup_cost);
            objective.add_term(c.switch, 0.5 * g.startup_cost);
        }
        for (k, bp) in params.batteries.iter().enumerate() {
            let (a, b, c) = (cur.bats[k], next.bats[k], u.bats[k]);
            prog.add_row(b_bat, ConvexConstraint::eq(b.p, a.p + c.dp));
            prog.add_row(b_bat, ConvexConstraint::eq(b.q, a.q + c.dq));
            let rhs = a.soc * (1.0 - bp.loss_rate * dt) - (b.p + b.abs * (1.0 - bp.efficiency)) * dt;
            prog.add_row(b_soc, ConvexConstraint::eq(b.soc, rhs));
            objective.add_term(b.abs, bp.throughput_cost * dt);
            objective.add_term(b.soc, bp.soc_aging_cost * dt);
        }
    }
    prog.set_objective(objective.compact());
    Ok(HorizonEncoding { program: prog, steps, controls, m, dt })
}

impl HorizonEncoding {
    pub fn state(&self, x: &[f64], i: usize) -> DispatchState {
        let s = &self.steps[i];
        DispatchState {
            p_g: s.gens.iter().map(|g| x[g.p.0]).collect(),
            q_g: s.gens.iter().map(|g| x[g.q.0]).collect(),
            on: s.gens.iter().map(|g| x[g.on.0] > 0.5).collect(),
            counter: s.gens.iter().map(|g| x[g.counter.0].round().max(0.0) as u32).collect(),
            p_b: s.bats.iter().map(|b| x[b.p.0]).collect(),
            q_b: s.bats.iter().map(|b| x[b.q.0]).collect(),
            soc: s.bats.iter().map(|b| x[b.soc.0]).collect(),
        }
    }

    pub fn control(&self, x: &[f64], i: usize) -> ControlInput {
        let c = &self.controls[i];
        ControlInput {
            dp_g: c.gens.iter().map(|g| x[g.dp.0]).collect(),
            dq_g: c.gens.iter().map(|g| x[g.dq.0]).collect(),
            switch: c.gens.iter().map(|g| x[g.switch.0] > 0.5).collect(),
            dp_b: c.bats.iter().map(|b| x[b.dp.0]).collect(),
            dq_b: c.bats.iter().map(|b| x[b.dq.0]).collect(),
        }
    }

    pub fn step_values(&self, x: &[f64], i: usize) -> Vec<f64> {
        self.steps[i].all().iter().map(|v| x[v.0]).collect()
    }

    pub fn set_step_values(&self, x: &mut [f64], i: usize, vals: &[f64]) {
        for (v, &val) in self.steps[i].all().iter().zip(vals) {
            x[v.0] = val;
        }
    }

    pub fn control_values(&self, x: &[f64], i: usize) -> Vec<f64> {
        self.controls[i].all().iter().map(|v| x[v.0]).collect()
    }

    pub fn set_control_values(&self, x: &mut [f64], i: usize, vals: &[f64]) {
        for (v, &val) in self.controls[i].all().iter().zip(vals) {
            x[v.0] = val;
        }
    }

    /// Expected `(vars, rows)` of an encoding, per the layout formula.
    pub fn expected_counts(spec: &MicrogridSpec, params: &DispatchParams, m: usize, opts: &EncodeOptions) -> (usize, usize) {
        let (g, b, n, l) = (params.generators.len(), params.batteries.len(), spec.n_buses, spec.lines.len());
        let strict = opts.strict_battery_split as usize;
        let d = params.generators.iter().filter(|p| p.max_on.is_some() || p.max_off.is_some()).count();
        let vars = (m + 1) * (4 * g + 4 * b + 5 * n + 15 * l + strict * b) + m * (3 * g + 2 * b);
        let qc_rows = QcLayout::n_rows(n, l, opts.qc);
        let rows = (m + 1) * (8 * g + 2 * b + 2 * n + qc_rows + d + 4 * strict * b) + m * (12 * g + 3 * b);
        (vars, rows)
    }
}
