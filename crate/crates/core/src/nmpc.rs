//! Periodic reference, NMPC subproblems anchored on it, and the closed loop.
//!
//! Absolute step `t` corresponds to reference index `t mod n_per`. A subproblem
//! at step `k` fixes step 0 to the measured state, ends on the reference at
//! `j = (M + k) mod n_per`, and adds three groups of rows:
//!
//! * `terminal`: generator `p, q, on` and battery SOC equal the reference at `j`.
//! * `extendability`: with `tau` intervals until the reference next switches,
//!   `min <= Gc(M) + tau <= max` for the dwell limits of the mode that switch leaves.
//! * `startup-window`: for every window of `n_per` intervals that overlaps the
//!   horizon, the startups counted on realized history, prediction and reference
//!   tail stay within the per-day budget.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use microgrid_opt::{
    max_violation, solve_miqcp, solve_with_fixed_integers, BnBOptions, ConicProgram, ConvexConstraint, LinExpr, SolveStatus, Solution, VarId,
};

use crate::acpf::{deviation_check, DeviationOptions, DeviceBoxes};
use crate::dispatch::{
    encode_horizon, stage_cost, step_dynamics, ControlInput, DispatchParams, DispatchState, EncodeOptions,
    HorizonEncoding, InitialState,
};
use crate::error::NmpcError;
use crate::grid::{build_admittance, DemandSnapshot, MicrogridSpec};
use crate::scenario::ScenarioTimeline;

pub mod blocks {
    pub const PERIODICITY: &str = "periodicity";
    pub const STARTUP_BUDGET: &str = "startup-budget";
    pub const TERMINAL: &str = "terminal";
    pub const EXTENDABILITY: &str = "extendability";
    pub const STARTUP_WINDOW: &str = "startup-window";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicReference {
    pub n_per: usize,
    pub dt: f64,
    /// `x_per(0..n_per)`.
    pub states: Vec<DispatchState>,
    /// `u_per(0..n_per)`.
    pub controls: Vec<ControlInput>,
    /// Full step assignments of the periodic solution, in [`crate::dispatch::StepVars::all`] order.
    pub step_values: Vec<Vec<f64>>,
    pub control_values: Vec<Vec<f64>>,
    /// Per generator and index, intervals until the next switch; `None` if it never switches.
    pub tau: Vec<Vec<Option<usize>>>,
    /// Per generator, `switch_prefix[l][j]` switches at indices `< j`, for `j = 0..=n_per`.
    pub switch_prefix: Vec<Vec<u32>>,
    pub objective: f64,
    pub best_bound: f64,
    /// `(Gc(n_per) - Gc(0)) / n_per` per generator.
    pub gcmod: Vec<i64>,
    /// `n_per + 1` snapshots.
    pub demand: Vec<DemandSnapshot>,
}

impl PeriodicReference {
    /// Assemble a reference and its switch tables from a periodic trajectory.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        dt: f64,
        states: Vec<DispatchState>,
        controls: Vec<ControlInput>,
        step_values: Vec<Vec<f64>>,
        control_values: Vec<Vec<f64>>,
        objective: f64,
        best_bound: f64,
        gcmod: Vec<i64>,
        demand: Vec<DemandSnapshot>,
    ) -> Self {
        let n = controls.len();
        let n_gens = controls.first().map_or(0, |u| u.switch.len());
        let mut tau = vec![vec![None; n]; n_gens];
        let mut switch_prefix = vec![vec![0u32; n + 1]; n_gens];
        for l in 0..n_gens {
            for j in 0..n {
                switch_prefix[l][j + 1] = switch_prefix[l][j] + controls[j].switch[l] as u32;
            }
            for j in 0..n {
                tau[l][j] = (0..n).find(|&s| controls[(j + s) % n].switch[l]);
            }
        }
        Self {
            n_per: n,
            dt,
            states,
            controls,
            step_values,
            control_values,
            tau,
            switch_prefix,
            objective,
            best_bound,
            gcmod,
            demand,
        }
    }

    fn index(&self, t: i64) -> usize {
        t.rem_euclid(self.n_per as i64) as usize
    }

    pub fn on_at(&self, l: usize, t: i64) -> bool {
        self.states[self.index(t)].on[l]
    }

    pub fn switch_at(&self, l: usize, t: i64) -> bool {
        self.controls[self.index(t)].switch[l]
    }

    /// Switches of the periodically extended reference at absolute times `a..=b`.
    pub fn switch_count(&self, l: usize, a: i64, b: i64) -> u32 {
        if b < a {
            return 0;
        }
        let n = self.n_per as i64;
        let per_period = self.switch_prefix[l][self.n_per] as i64;
        // Switches at times < t.
        let before = |t: i64| t.div_euclid(n) * per_period + self.switch_prefix[l][t.rem_euclid(n) as usize] as i64;
        (before(b + 1) - before(a)) as u32
    }

    /// Startups per period of generator `l`.
    pub fn startups_per_period(&self, l: usize) -> u32 {
        self.switch_prefix[l][self.n_per] / 2
    }
}

/// Intervals from index `j` until the reference next switches generator `l`.
pub fn time_to_next_switch(reference: &PeriodicReference, l: usize, j: usize) -> Option<usize> {
    reference.tau[l][j % reference.n_per]
}

#[derive(Debug, Clone)]
pub struct PeriodicOptions {
    pub encode: EncodeOptions,
    pub bnb: BnBOptions,
}

impl Default for PeriodicOptions {
    fn default() -> Self {
        Self { encode: EncodeOptions::default(), bnb: BnBOptions::default() }
    }
}

/// The periodic OCP encoding: `n_per` intervals with free initial state,
/// periodicity rows, the counter-modulo condition and the per-day startup budget.
pub struct PeriodicProblem {
    pub enc: HorizonEncoding,
    pub gcmod: Vec<VarId>,
}

pub fn encode_periodic(
    spec: &MicrogridSpec,
    params: &DispatchParams,
    d_per: &[DemandSnapshot],
    dt: f64,
    opts: &EncodeOptions,
) -> Result<PeriodicProblem, NmpcError> {
    if d_per.len() < 2 {
        return Err(NmpcError::Config("periodic demand needs at least two snapshots".into()));
    }
    let n = d_per.len() - 1;
    let max_diff = d_per[0]
        .p_d
        .iter()
        .zip(&d_per[n].p_d)
        .chain(d_per[0].q_d.iter().zip(&d_per[n].q_d))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if max_diff > 1e-12 {
        return Err(NmpcError::Config("periodic demand must satisfy d(0) = d(n_per)".into()));
    }
    let mut enc =
        encode_horizon(spec, params, d_per, n, dt, InitialState::Free { counter_max: n as u32 - 1 }, opts)?;
    let prog = &mut enc.program;
    let b_per = prog.block(blocks::PERIODICITY);
    let (first, last) = (enc.steps[0].clone(), enc.steps[n].clone());
    for (a, b) in first.gens.iter().zip(&last.gens) {
        for (x, y) in [(a.p, b.p), (a.q, b.q), (a.on, b.on)] {
            prog.add_row(b_per, ConvexConstraint::eq(y, x));
        }
    }
    for (a, b) in first.bats.iter().zip(&last.bats) {
        for (x, y) in [(a.p, b.p), (a.q, b.q), (a.soc, b.soc)] {
            prog.add_row(b_per, ConvexConstraint::eq(y, x));
        }
    }
    let mut gcmod = Vec::new();
    for (k, (a, b)) in first.gens.iter().zip(&last.gens).enumerate() {
        let g = prog.integer(format!("gcmod{k}"), -1.0, 2.0);
        // Gc(n) - Gc(0) - n * Gcmod = 0
        prog.add_row(b_per, ConvexConstraint::eq(b.counter - a.counter, g * n as f64));
        gcmod.push(g);
    }
    let b_budget = prog.block(blocks::STARTUP_BUDGET);
    for (k, g) in params.generators.iter().enumerate() {
        if let Some(s) = g.max_startups {
            let mut sum = LinExpr::new();
            for u in &enc.controls {
                sum.add_term(u.gens[k].switch, 0.5);
            }
            prog.add_row(b_budget, ConvexConstraint::le(sum, LinExpr::constant(s as f64)));
        }
    }
    Ok(PeriodicProblem { enc, gcmod })
}

/// Integer part of a switch-free periodic trajectory with the given on-states;
/// counters start at 0. Continuous entries are left at 0.
pub fn constant_mode_hint(prob: &PeriodicProblem, on: &[bool]) -> Vec<f64> {
    let enc = &prob.enc;
    let mut x = vec![0.0; enc.program.num_vars()];
    for (i, st) in enc.steps.iter().enumerate() {
        for (g, &o) in st.gens.iter().zip(on) {
            x[g.on.0] = o as u8 as f64;
            x[g.counter.0] = i as f64;
        }
    }
    for g in &prob.gcmod {
        x[g.0] = 1.0;
    }
    x
}

/// Cheapest switch-free mode pattern, over all on/off combinations of up to
/// `max_gens` generators.
pub fn best_constant_mode(prob: &PeriodicProblem, opts: &BnBOptions, max_gens: usize) -> Result<Option<Solution>, NmpcError> {
    let g = prob.gcmod.len();
    if g > max_gens {
        return Ok(None);
    }
    let mut best: Option<Solution> = None;
    for mask in 0..(1usize << g) {
        let on: Vec<bool> = (0..g).map(|l| mask >> l & 1 == 1).collect();
        let hint = constant_mode_hint(prob, &on);
        if let Some(s) = solve_with_fixed_integers(&prob.enc.program, &hint, opts)? {
            if best.as_ref().is_none_or(|b| s.objective < b.objective) {
                best = Some(s);
            }
        }
    }
    Ok(best)
}

/// Solve the periodic OCP and tabulate `tau` and the switch prefix sums.
///
/// Without a caller-supplied hint, the search starts from the best switch-free
/// mode pattern.
pub fn solve_periodic_ocp(
    spec: &MicrogridSpec,
    params: &DispatchParams,
    d_per: &[DemandSnapshot],
    dt: f64,
    opts: &PeriodicOptions,
) -> Result<PeriodicReference, NmpcError> {
    let prob = encode_periodic(spec, params, d_per, dt, &opts.encode)?;
    let mut bnb = opts.bnb.clone();
    if bnb.incumbent_hint.is_none() {
        bnb.incumbent_hint = best_constant_mode(&prob, &bnb, 6)?.map(|s| s.x);
    }
    let sol = solve_miqcp(&prob.enc.program, &bnb)?;
    match sol.status {
        SolveStatus::Infeasible => {
            return Err(NmpcError::Infeasible("demand cannot be served within the device limits".into()))
        }
        s if !s.has_solution() || sol.x.is_empty() => {
            return Err(NmpcError::NoSolution(format!("periodic problem ended with status {s}")))
        }
        _ => {}
    }
    Ok(reference_from_solution(&prob, &sol, d_per))
}

pub fn reference_from_solution(prob: &PeriodicProblem, sol: &Solution, d_per: &[DemandSnapshot]) -> PeriodicReference {
    let enc = &prob.enc;
    let x = &sol.x;
    let n = enc.m;
    // Step 0 carries no stage cost, so auxiliary values there (the |p_b|
    // epigraph) can be slack. Step n is the same point with costed values.
    let mut wrapped = x.clone();
    for (a, b) in enc.steps[0].gens.iter().zip(&enc.steps[n].gens) {
        wrapped[b.counter.0] = x[a.counter.0];
    }
    let mut step_values: Vec<Vec<f64>> = (0..n).map(|j| enc.step_values(x, j)).collect();
    step_values[0] = enc.step_values(&wrapped, n);
    PeriodicReference::from_parts(
        enc.dt,
        (0..n).map(|j| enc.state(x, j)).collect(),
        (0..n).map(|j| enc.control(x, j)).collect(),
        step_values,
        (0..n).map(|j| enc.control_values(x, j)).collect(),
        sol.objective,
        sol.best_bound,
        prob.gcmod.iter().map(|g| x[g.0].round() as i64).collect(),
        d_per.to_vec(),
    )
}

/// Realized on-states and switches before the current step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchHistory {
    /// Absolute time of the first entry.
    pub start: i64,
    /// `on[l][t - start]`, one entry more than `switch[l]`.
    pub on: Vec<Vec<bool>>,
    pub switch: Vec<Vec<bool>>,
}

impl SwitchHistory {
    /// The reference extended backwards over one period before `k0`.
    pub fn from_reference(reference: &PeriodicReference, k0: usize) -> Self {
        let n = reference.n_per as i64;
        let start = k0 as i64 - n + 1;
        let gens = reference.states[0].on.len();
        Self {
            start,
            on: (0..gens).map(|l| (start..=k0 as i64).map(|t| reference.on_at(l, t)).collect()).collect(),
            switch: (0..gens).map(|l| (start..k0 as i64).map(|t| reference.switch_at(l, t)).collect()).collect(),
        }
    }

    /// No recorded history: windows reaching into the past are skipped.
    pub fn empty(k0: usize, x0: &DispatchState) -> Self {
        Self {
            start: k0 as i64,
            on: x0.on.iter().map(|&o| vec![o]).collect(),
            switch: vec![Vec::new(); x0.on.len()],
        }
    }

    pub fn on_at(&self, l: usize, t: i64) -> Option<bool> {
        let i = usize::try_from(t - self.start).ok()?;
        self.on[l].get(i).copied()
    }

    pub fn switch_at(&self, l: usize, t: i64) -> Option<bool> {
        let i = usize::try_from(t - self.start).ok()?;
        self.switch[l].get(i).copied()
    }

    pub fn push(&mut self, switch: &[bool], on_next: &[bool]) {
        for (l, (&s, &o)) in switch.iter().zip(on_next).enumerate() {
            self.switch[l].push(s);
            self.on[l].push(o);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminalSoc {
    Equal,
    AtLeast,
}

#[derive(Debug, Clone)]
pub struct NmpcConfig {
    pub horizon: usize,
    pub dt: f64,
    pub bnb: BnBOptions,
    pub encode: EncodeOptions,
    pub terminal_soc: TerminalSoc,
    /// Attach the shifted-and-extended previous solution as incumbent hint.
    pub extension_hint: bool,
    /// Tolerance for [`check_feasible`] on extension candidates.
    pub candidate_tol: f64,
    pub deviation_check: bool,
    pub deviation: DeviationOptions,
}

impl NmpcConfig {
    pub fn new(horizon: usize, dt: f64) -> Self {
        Self {
            horizon,
            dt,
            bnb: BnBOptions::default(),
            encode: EncodeOptions::default(),
            terminal_soc: TerminalSoc::Equal,
            extension_hint: true,
            candidate_tol: 1e-6,
            deviation_check: true,
            deviation: DeviationOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<(), NmpcError> {
        if self.horizon < 1 {
            return Err(NmpcError::Config("horizon must be at least 1".into()));
        }
        if !(self.dt > 0.0) {
            return Err(NmpcError::Config("dt must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Subproblem {
    pub enc: HorizonEncoding,
    pub k: usize,
    /// Reference index of the terminal step.
    pub terminal_index: usize,
}

/// One window term: a variable, or a constant from history or the reference.
enum Term {
    Var(VarId),
    Const(bool),
}

#[allow(clippy::too_many_arguments)]
pub fn build_subproblem(
    spec: &MicrogridSpec,
    params: &DispatchParams,
    x0: &DispatchState,
    k: usize,
    forecast: &[DemandSnapshot],
    reference: &PeriodicReference,
    history: &SwitchHistory,
    cfg: &NmpcConfig,
) -> Result<Subproblem, NmpcError> {
    cfg.validate()?;
    let m = cfg.horizon;
    if (cfg.dt - reference.dt).abs() > 1e-12 {
        return Err(NmpcError::Config(format!("dt {} differs from the reference's {}", cfg.dt, reference.dt)));
    }
    if reference.states.first().is_some_and(|s| s.on.len() != params.generators.len()) {
        return Err(NmpcError::Config("reference does not match the generator count".into()));
    }
    let mut enc = encode_horizon(spec, params, forecast, m, cfg.dt, InitialState::Fixed(x0), &cfg.encode)?;
    let n = reference.n_per;
    let j = (m + k) % n;
    let xr = &reference.states[j];
    let last = enc.steps[m].clone();
    let prog = &mut enc.program;

    let b_term = prog.block(blocks::TERMINAL);
    for (l, g) in last.gens.iter().enumerate() {
        prog.add_row(b_term, ConvexConstraint::eq(g.p, LinExpr::constant(xr.p_g[l])));
        prog.add_row(b_term, ConvexConstraint::eq(g.q, LinExpr::constant(xr.q_g[l])));
        prog.add_row(b_term, ConvexConstraint::eq(g.on, LinExpr::constant(xr.on[l] as u8 as f64)));
    }
    for (l, b) in last.bats.iter().enumerate() {
        let rhs = LinExpr::constant(xr.soc[l]);
        let row = match cfg.terminal_soc {
            TerminalSoc::Equal => ConvexConstraint::eq(b.soc, rhs),
            TerminalSoc::AtLeast => ConvexConstraint::ge(b.soc, rhs),
        };
        prog.add_row(b_term, row);
    }

    let b_ext = prog.block(blocks::EXTENDABILITY);
    for (l, (g, gv)) in params.generators.iter().zip(&last.gens).enumerate() {
        let Some(tau) = time_to_next_switch(reference, l, j) else { continue };
        // The next reference switch leaves the mode it finds at j + tau.
        let leaving_on = reference.states[(j + tau) % n].on[l];
        let (lo, hi) = if leaving_on { (g.min_on, g.max_on) } else { (g.min_off, g.max_off) };
        prog.add_row(b_ext, ConvexConstraint::ge(gv.counter, LinExpr::constant(lo as f64 - tau as f64)));
        if let Some(hi) = hi {
            prog.add_row(b_ext, ConvexConstraint::le(gv.counter, LinExpr::constant(hi as f64 - tau as f64)));
        }
    }

    let b_win = prog.block(blocks::STARTUP_WINDOW);
    let (k_i, m_i, n_i) = (k as i64, m as i64, n as i64);
    for (l, g) in params.generators.iter().enumerate() {
        let Some(budget) = g.max_startups else { continue };
        let on_term = |t: i64| -> Option<Term> {
            if t < k_i {
                history.on_at(l, t).map(Term::Const)
            } else if t <= k_i + m_i {
                Some(Term::Var(enc.steps[(t - k_i) as usize].gens[l].on))
            } else {
                Some(Term::Const(reference.on_at(l, t)))
            }
        };
        let switch_term = |t: i64| -> Option<Term> {
            if t < k_i {
                history.switch_at(l, t).map(Term::Const)
            } else if t < k_i + m_i {
                Some(Term::Var(enc.controls[(t - k_i) as usize].gens[l].switch))
            } else {
                Some(Term::Const(reference.switch_at(l, t)))
            }
        };
        'window: for a in (k_i - n_i + 1)..(k_i + m_i) {
            // on(a + n) - on(a) + sum_{t=a}^{a+n-1} switch(t) <= 2 budget
            let mut e = LinExpr::new();
            let add = |t: Option<Term>, coef: f64, e: &mut LinExpr| -> bool {
                match t {
                    Some(Term::Var(v)) => {
                        e.add_term(v, coef);
                        true
                    }
                    Some(Term::Const(b)) => {
                        e.add_constant(coef * b as u8 as f64);
                        true
                    }
                    None => false,
                }
            };
            if !add(on_term(a + n_i), 1.0, &mut e) || !add(on_term(a), -1.0, &mut e) {
                continue 'window;
            }
            for t in a..a + n_i {
                if !add(switch_term(t), 1.0, &mut e) {
                    continue 'window;
                }
            }
            prog.add_row(b_win, ConvexConstraint::le(e.compact(), LinExpr::constant(2.0 * budget as f64)));
        }
    }
    Ok(Subproblem { enc, k, terminal_index: j })
}

/// Recompute step counters from step 0 and the switch values.
fn fix_counters(enc: &HorizonEncoding, x: &mut [f64]) {
    for i in 0..enc.m {
        for (l, u) in enc.controls[i].gens.iter().enumerate() {
            let c = enc.steps[i].gens[l].counter;
            let next = enc.steps[i + 1].gens[l].counter;
            x[next.0] = if x[u.switch.0] > 0.5 { 0.0 } else { x[c.0] + 1.0 };
        }
    }
}

/// Control values for reference index `j`, with device increments recomputed
/// so that `prev_values` (a step assignment) moves to reference step `j + 1`.
fn reference_control(enc: &HorizonEncoding, reference: &PeriodicReference, j: usize, x: &mut [f64], i: usize) {
    let n = reference.n_per;
    enc.set_control_values(x, i, &reference.control_values[j]);
    let next = &reference.states[(j + 1) % n];
    let (from, u) = (&enc.steps[i], &enc.controls[i]);
    for (l, g) in u.gens.iter().enumerate() {
        x[g.dp.0] = next.p_g[l] - x[from.gens[l].p.0];
        x[g.dq.0] = next.q_g[l] - x[from.gens[l].q.0];
    }
    for (l, b) in u.bats.iter().enumerate() {
        x[b.dp.0] = next.p_b[l] - x[from.bats[l].p.0];
        x[b.dq.0] = next.q_b[l] - x[from.bats[l].q.0];
    }
}

/// The reference shifted to start at absolute step `k`, laid out for `enc`.
pub fn reference_candidate(enc: &HorizonEncoding, reference: &PeriodicReference, k: usize) -> Vec<f64> {
    let n = reference.n_per;
    let mut x = vec![0.0; enc.program.num_vars()];
    enc.set_step_values(&mut x, 0, &reference.step_values[k % n]);
    for i in 0..enc.m {
        enc.set_step_values(&mut x, i + 1, &reference.step_values[(k + i + 1) % n]);
        reference_control(enc, reference, (k + i) % n, &mut x, i);
    }
    fix_counters(enc, &mut x);
    x
}

/// Shift the step-`k` solution by one interval and append the reference at
/// index `(M + k) mod n_per`: the candidate for the step-`k + 1` subproblem.
pub fn extend_with_reference(prev: &Subproblem, x_prev: &[f64], reference: &PeriodicReference) -> Vec<f64> {
    let enc = &prev.enc;
    let (m, n) = (enc.m, reference.n_per);
    let j = (m + prev.k) % n;
    let mut x = vec![0.0; enc.program.num_vars()];
    for i in 0..m {
        enc.set_step_values(&mut x, i, &enc.step_values(x_prev, i + 1));
    }
    for i in 0..m - 1 {
        enc.set_control_values(&mut x, i, &enc.control_values(x_prev, i + 1));
    }
    enc.set_step_values(&mut x, m, &reference.step_values[(j + 1) % n]);
    reference_control(enc, reference, j, &mut x, m - 1);
    fix_counters(enc, &mut x);
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Row block name, or `bounds` / `integrality`.
    pub block: String,
    /// Row or variable index.
    pub index: usize,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub violations: Vec<Violation>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn max_violation(&self) -> f64 {
        self.violations.iter().map(|v| v.magnitude).fold(0.0, f64::max)
    }

    /// Distinct violated block names in first-seen order.
    pub fn blocks(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for v in &self.violations {
            if !out.contains(&v.block.as_str()) {
                out.push(&v.block);
            }
        }
        out
    }
}

/// Every row, bound and integrality condition violated by more than `tol`.
pub fn check_feasible(prog: &ConicProgram, x: &[f64], tol: f64) -> FeasibilityReport {
    let mut violations = Vec::new();
    if x.len() != prog.num_vars() {
        violations.push(Violation { block: "dimension".into(), index: x.len(), magnitude: f64::INFINITY });
        return FeasibilityReport { violations };
    }
    for (i, r) in prog.rows.iter().enumerate() {
        let v = r.constraint.violation(x);
        if v > tol {
            violations.push(Violation { block: prog.block_name(r.block).to_string(), index: i, magnitude: v });
        }
    }
    for (i, var) in prog.vars.iter().enumerate() {
        let v = (var.lower - x[i]).max(x[i] - var.upper);
        if v > tol {
            violations.push(Violation { block: "bounds".into(), index: i, magnitude: v });
        }
        if var.kind.is_integral() {
            let f = (x[i] - x[i].round()).abs();
            if f > tol {
                violations.push(Violation { block: "integrality".into(), index: i, magnitude: f });
            }
        }
    }
    FeasibilityReport { violations }
}

/// `min_j` of the squared distance to `x_per(j)` over device powers, on-states,
/// counters modulo `n_per` and SOC.
pub fn distance_to_reference(x: &DispatchState, reference: &PeriodicReference) -> f64 {
    let n = reference.n_per as u32;
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    reference
        .states
        .iter()
        .map(|r| {
            let on: f64 = x.on.iter().zip(&r.on).filter(|(a, b)| a != b).count() as f64;
            let cnt: f64 = x.counter.iter().zip(&r.counter).map(|(a, b)| ((a % n) as f64 - (b % n) as f64).powi(2)).sum();
            sq(&x.p_g, &r.p_g) + sq(&x.q_g, &r.q_g) + sq(&x.p_b, &r.p_b) + sq(&x.q_b, &r.q_b) + sq(&x.soc, &r.soc) + on + cnt
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn solve_subproblem(sub: &Subproblem, hint: Option<Vec<f64>>, cfg: &NmpcConfig) -> Result<Solution, NmpcError> {
    let opts = BnBOptions { incumbent_hint: hint, ..cfg.bnb.clone() };
    Ok(solve_miqcp(&sub.enc.program, &opts)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Realized demand at the step.
    pub demand: DemandSnapshot,
    /// State at the start of the interval.
    pub state: DispatchState,
    pub input: ControlInput,
    pub stage_cost: f64,
    pub cumulative_cost: f64,
    pub status: String,
    pub objective: f64,
    pub gap: f64,
    pub nodes: usize,
    pub hint_accepted: bool,
    pub from_hint: bool,
    /// Violations of the extension candidate; at step 0 the candidate is the
    /// reference itself.
    pub candidate_violations: usize,
    pub candidate_max_violation: f64,
    /// Deviation check of the setpoint reached at the end of the interval.
    pub v_check: Option<f64>,
    pub distance: f64,
    pub solve_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopRecord {
    pub steps: Vec<StepRecord>,
    pub final_state: DispatchState,
    pub final_distance: f64,
}

impl ClosedLoopRecord {
    pub fn max_distance(&self) -> f64 {
        self.steps.iter().map(|s| s.distance).fold(self.final_distance, f64::max)
    }

    pub fn total_cost(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.cumulative_cost)
    }
}

/// Device boxes for the deviation check; generators that are off are pinned to zero.
pub fn device_boxes(params: &DispatchParams, x: &DispatchState) -> DeviceBoxes {
    let gen = |f: fn(&crate::dispatch::GeneratorParams) -> (f64, f64)| {
        params.generators.iter().zip(&x.on).map(|(g, &on)| if on { f(g) } else { (0.0, 0.0) }).collect()
    };
    DeviceBoxes {
        p_g: gen(|g| (g.p_min, g.p_max)),
        q_g: gen(|g| (g.q_min, g.q_max)),
        p_b: params.batteries.iter().map(|b| (b.p_min, b.p_max)).collect(),
        q_b: params.batteries.iter().map(|b| (b.q_min, b.q_max)).collect(),
    }
}

/// Receding-horizon loop over `steps` steps starting from `x0` at step 0.
#[allow(clippy::too_many_arguments)]
pub fn closed_loop_simulate(
    spec: &MicrogridSpec,
    params: &DispatchParams,
    reference: &PeriodicReference,
    scenario: &ScenarioTimeline,
    x0: &DispatchState,
    mut history: SwitchHistory,
    steps: usize,
    cfg: &NmpcConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<ClosedLoopRecord, NmpcError> {
    cfg.validate()?;
    if scenario.horizon != cfg.horizon || scenario.steps() < steps {
        return Err(NmpcError::Config(format!(
            "scenario covers {} steps with horizon {}, need {steps} with horizon {}",
            scenario.steps(),
            scenario.horizon,
            cfg.horizon
        )));
    }
    let y = build_admittance(spec).map_err(|e| NmpcError::Config(e.to_string()))?;
    let mut x = x0.clone();
    let mut records = Vec::with_capacity(steps);
    let mut prev: Option<(Subproblem, Vec<f64>)> = None;
    let mut cumulative = 0.0;
    for k in 0..steps {
        let forecast = scenario.forecast(k);
        let sub = build_subproblem(spec, params, &x, k, &forecast, reference, &history, cfg)?;
        let candidate = match &prev {
            Some((p, xp)) => extend_with_reference(p, xp, reference),
            None => reference_candidate(&sub.enc, reference, k),
        };
        let report = check_feasible(&sub.enc.program, &candidate, cfg.candidate_tol);
        let started = Instant::now();
        let hint = cfg.extension_hint.then(|| candidate.clone());
        let sol = solve_subproblem(&sub, hint, cfg)?;
        let solve_seconds = started.elapsed().as_secs_f64();
        if !sol.status.has_solution() || sol.x.is_empty() {
            let blocks = report.blocks().join(", ");
            return Err(NmpcError::SubproblemInfeasible {
                step: k,
                detail: format!(
                    "status {}, {} nodes; extension candidate violates [{}] (max {:.3e})",
                    sol.status,
                    sol.nodes,
                    blocks,
                    report.max_violation()
                ),
            });
        }
        let u = sub.enc.control(&sol.x, 0);
        let next = step_dynamics(&x, &u, params, cfg.dt);
        let cost = stage_cost(&x, &u, params, cfg.dt);
        cumulative += cost;
        let v_check = if cfg.deviation_check {
            let boxes = device_boxes(params, &next);
            let qc = sub.enc.steps[1].qc.state(&sol.x);
            let r = deviation_check(&next.setpoint(), &scenario.realized[k + 1], spec, &y, &boxes, Some(&qc), &cfg.deviation)?;
            Some(r.v_check)
        } else {
            None
        };
        let rec = StepRecord {
            step: k,
            demand: scenario.realized[k].clone(),
            distance: distance_to_reference(&x, reference),
            state: x.clone(),
            input: u.clone(),
            stage_cost: cost,
            cumulative_cost: cumulative,
            status: sol.status.to_string(),
            objective: sol.objective,
            gap: sol.gap,
            nodes: sol.nodes,
            hint_accepted: sol.hint_accepted,
            from_hint: sol.from_hint,
            candidate_violations: report.violations.len(),
            candidate_max_violation: report.max_violation(),
            v_check,
            solve_seconds,
        };
        on_step(&rec);
        records.push(rec);
        history.push(&u.switch, &next.on);
        debug_assert!(max_violation(&sub.enc.program, &sol.x, true) <= 10.0 * cfg.bnb.feas_tol);
        prev = Some((sub, sol.x));
        x = next;
    }
    let final_distance = distance_to_reference(&x, reference);
    Ok(ClosedLoopRecord { steps: records, final_state: x, final_distance })
}
