//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use microgrid_core::config::MicrogridConfig;
use microgrid_core::dispatch::{startup_count, step_dynamics, ControlInput, DispatchParams, DispatchState};
use microgrid_core::grid::{build_admittance, MicrogridSpec};
use microgrid_core::nmpc::{
    closed_loop_simulate, solve_periodic_ocp, ClosedLoopRecord, NmpcConfig, PeriodicOptions, PeriodicReference,
    SwitchHistory,
};
use microgrid_core::qc::{assemble_qc, lift_ac_point, QcOptions};
use microgrid_core::scenario::{make_nominal_profile, scenario_sources, ScenarioContext};
use microgrid_opt::instances::{known_optimum, random_miqcp};
use microgrid_opt::{max_violation, solve_continuous, solve_miqcp, BnBOptions, ConicProgram, SolveStatus};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn qc_soundness() -> Outcome {
    let t = Instant::now();
    let spec = MicrogridConfig::six_bus().grid_spec().unwrap();
    let y = build_admittance(&spec).unwrap();
    let states = common::newton_states(&spec, &y, 1000, 2024);
    let (prog, layout) = assemble_qc(&spec, QcOptions::default()).unwrap();
    let mut worst: f64 = 0.0;
    for z in &states {
        let lift = lift_ac_point(&spec, z).unwrap();
        let mut x = vec![0.0; prog.num_vars()];
        layout.write(z, &lift, &mut x);
        worst = worst.max(max_violation(&prog, &x, false));
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = states.len() == 1000 && worst <= 1e-9 && secs <= 60.0;
    outcome(pass, format!("{} states, max violation {worst:.2e} (tol 1e-9), {secs:.1} s (limit 60 s)", states.len()))
}

fn enumerate(prog: &ConicProgram) -> Option<f64> {
    let ints = prog.integer_vars();
    let mut best: Option<f64> = None;
    for mask in 0u32..(1 << ints.len()) {
        let mut fixed = prog.relaxed();
        for (k, v) in ints.iter().enumerate() {
            let val = f64::from((mask >> k) & 1);
            fixed.vars[v.0].lower = val;
            fixed.vars[v.0].upper = val;
        }
        let s = solve_continuous(&fixed).unwrap();
        if s.status == SolveStatus::Optimal {
            best = Some(best.map_or(s.objective, |b: f64| b.min(s.objective)));
        }
    }
    best
}

fn miqcp_oracle() -> Outcome {
    let t = Instant::now();
    let opts = BnBOptions { gap_tol: 1e-9, abs_gap_tol: 1e-9, ..Default::default() };
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for seed in 0..200u64 {
        let prog = random_miqcp(seed, (seed % 11) as usize);
        let want = enumerate(&prog);
        let got = solve_miqcp(&prog, &opts).unwrap();
        match want {
            Some(w) if got.status == SolveStatus::Optimal => worst = worst.max((got.objective - w).abs()),
            _ => failures += 1,
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = failures == 0 && worst <= 1e-6 && secs <= 300.0;
    outcome(pass, format!("200 instances, {failures} failed, max |bnb - enum| {worst:.2e} (tol 1e-6), {secs:.1} s (limit 300 s)"))
}

fn encoding_equivalence() -> Outcome {
    use common::encoding::*;
    let counts = [
        ("mode-bounds", mode_bounds_mismatches()),
        ("switch", switch_mismatches()),
        ("counter", counter_mismatches()),
        ("min-dwell", min_dwell_mismatches()),
        ("max-dwell", max_dwell_mismatches()),
        ("battery-split", battery_split_mismatches()),
    ];
    let printed = printed_switch_rows_match();
    let pass = counts.iter().all(|c| c.1 == 0) && printed.is_ok();
    let list: Vec<String> = counts.iter().map(|(n, c)| format!("{n} {c}")).collect();
    outcome(pass, format!("mismatches: {}; unit big-M switch rows {}", list.join(", "), if printed.is_ok() { "exact" } else { "differ" }))
}

/// Startups by walking the switch sequence event by event.
fn walk(on_start: bool, switches: &[bool]) -> (bool, u32) {
    let mut on = on_start;
    let mut n = 0;
    for &s in switches {
        if s {
            if !on {
                n += 1;
            }
            on = !on;
        }
    }
    (on, n)
}

fn dynamics_suite() -> Outcome {
    let (_, params) = common::two_bus();
    let state = |on: bool, c: u32, soc: f64| DispatchState {
        p_g: vec![0.0],
        q_g: vec![0.0],
        on: vec![on],
        counter: vec![c],
        p_b: vec![0.0],
        q_b: vec![0.0],
        soc: vec![soc],
    };
    let input = |sw: bool, dp_b: f64| ControlInput { dp_g: vec![0.0], dq_g: vec![0.0], switch: vec![sw], dp_b: vec![dp_b], dq_b: vec![0.0] };
    let soc = step_dynamics(&state(false, 3, 3.0), &input(false, 1.0), &params, 1.0).soc[0];
    let soc_ok = (soc - 1.95).abs() <= 1e-12;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut walk_bad = 0;
    for _ in 0..500 {
        let on_start = rng.random_bool(0.5);
        let len = rng.random_range(0..60);
        let sw: Vec<bool> = (0..len).map(|_| rng.random_bool(0.3)).collect();
        let (on_end, n) = walk(on_start, &sw);
        if startup_count(on_start, on_end, &sw).ok() != Some(n) {
            walk_bad += 1;
        }
    }

    let mut table_bad = 0;
    for on in [false, true] {
        for sw in [false, true] {
            for c in 0..8 {
                let next = step_dynamics(&state(on, c, 1.0), &input(sw, 0.0), &params, 1.0);
                let want = if sw { (!on, 0) } else { (on, c + 1) };
                table_bad += ((next.on[0], next.counter[0]) != want) as usize;
            }
        }
    }
    let pass = soc_ok && walk_bad == 0 && table_bad == 0;
    outcome(pass, format!("soc' {soc:.12} (want 1.95), startup walk mismatches {walk_bad}/500, counter table mismatches {table_bad}/32"))
}

fn kkt_suite() -> Outcome {
    let mut worst_kkt: f64 = 0.0;
    let mut worst_obj: f64 = 0.0;
    let mut bad = 0;
    for seed in 0..100 {
        let k = known_optimum(seed);
        let s = solve_continuous(&k.program).unwrap();
        match (s.status, s.kkt) {
            (SolveStatus::Optimal, Some(kkt)) => {
                worst_kkt = worst_kkt.max(kkt.max());
                worst_obj = worst_obj.max((s.objective - k.objective).abs() / k.objective.abs().max(1.0));
            }
            _ => bad += 1,
        }
    }
    let pass = bad == 0 && worst_kkt <= 1e-6 && worst_obj <= 1e-6;
    outcome(pass, format!("100 instances, {bad} not optimal, max KKT residual {worst_kkt:.2e} (tol 1e-6), max rel objective error {worst_obj:.2e}"))
}

struct Desk {
    cfg: MicrogridConfig,
    spec: MicrogridSpec,
    params: DispatchParams,
    reference: PeriodicReference,
    ctx: ScenarioContext,
    nmpc: NmpcConfig,
}

const STEPS: usize = 48;
const HORIZON: usize = 24;

fn desk() -> Desk {
    let cfg = MicrogridConfig::six_bus();
    let dt = cfg.run.dt;
    let spec = cfg.grid_spec().unwrap();
    let params = cfg.dispatch_params(dt).unwrap();
    let (load_bus, pv_bus) = cfg.demand_buses().unwrap();
    let periodic = make_nominal_profile(spec.n_buses, cfg.run.n_per, dt, load_bus, pv_bus, &cfg.demand).unwrap();
    let bnb = |nodes: usize, dive: usize| BnBOptions {
        gap_tol: cfg.run.gap,
        node_limit: Some(nodes),
        dive_nodes: dive,
        ..Default::default()
    };
    let t = Instant::now();
    let popts = PeriodicOptions { bnb: bnb(300, 100), ..Default::default() };
    let reference = solve_periodic_ocp(&spec, &params, &periodic, dt, &popts).unwrap();
    println!(
        "  periodic reference: objective {:.4}, bound {:.4}, {:.1} s",
        reference.objective,
        reference.best_bound,
        t.elapsed().as_secs_f64()
    );
    let mut nmpc = NmpcConfig::new(HORIZON, dt);
    nmpc.bnb = bnb(60, 40);
    nmpc.deviation.seed = cfg.run.seed;
    let ctx = ScenarioContext {
        periodic,
        load_bus,
        pv_bus,
        dt,
        steps: STEPS,
        horizon: HORIZON,
        seed: cfg.run.seed,
        perturbation: cfg.perturbation.clone(),
        file: None,
    };
    Desk { cfg, spec, params, reference, ctx, nmpc }
}

fn run(d: &Desk, scenario: &str) -> (ClosedLoopRecord, f64) {
    let scen = scenario_sources().create(scenario).unwrap().build(&d.ctx).unwrap();
    let hist = SwitchHistory::from_reference(&d.reference, 0);
    let t = Instant::now();
    let rec = closed_loop_simulate(&d.spec, &d.params, &d.reference, &scen, &d.reference.states[0], hist, STEPS, &d.nmpc, |_| {})
        .unwrap();
    (rec, t.elapsed().as_secs_f64())
}

fn max_gap(rec: &ClosedLoopRecord) -> f64 {
    rec.steps.iter().map(|s| s.gap).fold(0.0, f64::max)
}

fn nominal_loop(d: &Desk) -> (Outcome, Outcome) {
    let (rec, secs) = run(d, "nominal");
    let infeasible = rec.steps.iter().filter(|s| !matches!(s.status.as_str(), "optimal" | "gap-limit" | "time-limit")).count();
    let bad_candidates = rec.steps.iter().filter(|s| s.candidate_violations != 0).count();
    let dist = rec.max_distance();
    let pass5 = infeasible == 0 && bad_candidates == 0 && dist <= 1e-6 && secs <= 1800.0;
    let c5 = outcome(
        pass5,
        format!(
            "M={HORIZON}, {STEPS} steps: {infeasible} without solution, {bad_candidates} candidates rejected, max distance {dist:.2e} (tol 1e-6), max gap {:.2e}, {secs:.0} s (limit 1800 s)",
            max_gap(&rec)
        ),
    );
    let missing = rec.steps.iter().filter(|s| s.v_check.is_none()).count();
    let worst = rec.steps.iter().filter_map(|s| s.v_check).fold(0.0, f64::max);
    let c6 = outcome(missing == 0 && worst <= 1e-4, format!("max v_check {worst:.2e} p.u.^2 (tol 1e-4), {missing} steps unchecked"));
    (c5, c6)
}

fn perturbed_loop(d: &Desk) -> Outcome {
    let (rec, secs) = run(d, "varying-solar");
    // On-states at steps 0..=STEPS.
    let on: Vec<Vec<bool>> = rec.steps.iter().map(|s| s.state.on.clone()).chain([rec.final_state.on.clone()]).collect();
    let n_per = d.cfg.run.n_per;
    let dg2 = 1;
    let min_off = d.params.generators[dg2].min_off as usize;
    let mut off_runs = Vec::new();
    let mut t = 1;
    while t < on.len() {
        if on[t - 1][dg2] && !on[t][dg2] {
            let first = t;
            while t < on.len() && !on[t][dg2] {
                t += 1;
            }
            if t < on.len() {
                off_runs.push(t - first);
            }
        } else {
            t += 1;
        }
    }
    let off_ok = off_runs.iter().any(|&len| len >= min_off);
    let mut worst_window = Vec::new();
    let mut window_ok = true;
    for (l, g) in d.params.generators.iter().enumerate() {
        let starts: Vec<u32> = (0..STEPS).map(|t| (!on[t][l] && on[t + 1][l]) as u32).collect();
        let worst = (0..=STEPS - n_per).map(|a| starts[a..a + n_per].iter().sum::<u32>()).max().unwrap_or(0);
        window_ok &= g.max_startups.is_none_or(|m| worst <= m);
        worst_window.push(worst);
    }
    let budget: Vec<Option<u32>> = d.params.generators.iter().map(|g| g.max_startups).collect();
    let day1: f64 = rec.steps[..n_per].iter().map(|s| s.stage_cost).sum();
    let day2: f64 = rec.steps[n_per..2 * n_per].iter().map(|s| s.stage_cost).sum();
    let pattern = |l: usize| on.iter().map(|o| if o[l] { '#' } else { '.' }).collect::<String>();
    println!("  DG1 {}\n  DG2 {}", pattern(0), pattern(1));
    let pass = off_ok && window_ok && day2 < day1;
    outcome(
        pass,
        format!(
            "DG2 complete off runs {off_runs:?} (need one >= {min_off}), max startups per {n_per}-step window {worst_window:?} (limits {budget:?}), day-1 cost {day1:.2}, day-2 cost {day2:.2}, max gap {:.2e}, {secs:.0} s",
            max_gap(&rec)
        ),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |id: usize, name: &'static str, o: Outcome| {
        println!("criterion {id} {} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };
    report(1, "QC soundness", qc_soundness());
    report(2, "MIQCP vs enumeration", miqcp_oracle());
    report(3, "encoding equivalence", encoding_equivalence());
    report(4, "dynamics suite", dynamics_suite());
    report(8, "convex solver KKT", kkt_suite());
    let d = desk();
    let (c5, c6) = nominal_loop(&d);
    report(5, "nominal closed loop", c5);
    report(6, "deviation check", c6);
    report(7, "perturbed scenario", perturbed_loop(&d));
    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
