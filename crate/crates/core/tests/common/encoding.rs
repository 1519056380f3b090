//! Enumeration oracles for the indicator blocks of the horizon encoding on a
//! one-generator, two-step instance.

use microgrid_core::dispatch::{blocks, encode_horizon, DispatchParams, EncodeOptions, HorizonEncoding, InitialState};
use microgrid_core::grid::DemandSnapshot;
use microgrid_opt::{ConvexConstraint, LinExpr, VarId};

use super::two_bus;

pub const MIN_ON: u32 = 2;
pub const MIN_OFF: u32 = 3;
pub const MAX_ON: u32 = 2;
pub const MAX_OFF: u32 = 3;

pub fn instance(strict: bool, dwell_caps: bool) -> HorizonEncoding {
    let (spec, mut params): (_, DispatchParams) = two_bus();
    let g = &mut params.generators[0];
    g.min_on = MIN_ON;
    g.min_off = MIN_OFF;
    if dwell_caps {
        g.max_on = Some(MAX_ON);
        g.max_off = Some(MAX_OFF);
    }
    let demand = vec![DemandSnapshot::zeros(2); 2];
    let opts = EncodeOptions { strict_battery_split: strict, ..Default::default() };
    encode_horizon(&spec, &params, &demand, 1, 1.0, InitialState::Free { counter_max: 3 }, &opts).unwrap()
}

/// Whether every row of `block` holds at the given assignment (other variables 0).
fn block_holds(enc: &HorizonEncoding, block: &str, assign: &[(VarId, f64)]) -> bool {
    let prog = &enc.program;
    let id = prog.find_block(block).unwrap();
    let mut x = vec![0.0; prog.num_vars()];
    for &(v, val) in assign {
        x[v.0] = val;
    }
    prog.rows.iter().filter(|r| r.block == id).all(|r| r.constraint.violation(&x) <= 1e-9)
}

fn bit(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Counts the assignments where rows and logic disagree.
pub fn mode_bounds_mismatches() -> usize {
    let enc = instance(false, false);
    let g: Vec<_> = enc.steps.iter().map(|s| s.gens[0]).collect();
    let ps = [0.0, 0.5, 1.0, 2.0, 3.0];
    let qs = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let mut bad = 0;
    let mut per_step = Vec::new();
    for on in [false, true] {
        for &p in &ps {
            for &q in &qs {
                per_step.push((on, p, q));
            }
        }
    }
    let logic = |&(on, p, q): &(bool, f64, f64)| if on { (1.0..=3.0).contains(&p) } else { p == 0.0 && q == 0.0 };
    for a in &per_step {
        for b in &per_step {
            let assign = [(g[0].on, bit(a.0)), (g[0].p, a.1), (g[0].q, a.2), (g[1].on, bit(b.0)), (g[1].p, b.1), (g[1].q, b.2)];
            if block_holds(&enc, blocks::MODE_BOUNDS, &assign) != (logic(a) && logic(b)) {
                bad += 1;
            }
        }
    }
    bad
}

pub fn switch_mismatches() -> usize {
    let enc = instance(false, false);
    let (a, b, s) = (enc.steps[0].gens[0].on, enc.steps[1].gens[0].on, enc.controls[0].gens[0].switch);
    let mut bad = 0;
    for on0 in [false, true] {
        for on1 in [false, true] {
            for sw in [false, true] {
                let holds = block_holds(&enc, blocks::SWITCH_DYNAMICS, &[(a, bit(on0)), (b, bit(on1)), (s, bit(sw))]);
                bad += (holds != (sw == (on0 != on1))) as usize;
            }
        }
    }
    bad
}

pub fn counter_mismatches() -> usize {
    let enc = instance(false, false);
    let (a, b, s) = (enc.steps[0].gens[0].counter, enc.steps[1].gens[0].counter, enc.controls[0].gens[0].switch);
    let mut bad = 0;
    for c0 in 0..=3u32 {
        for c1 in 0..=4u32 {
            for sw in [false, true] {
                let holds = block_holds(&enc, blocks::COUNTER_DYNAMICS, &[(a, c0 as f64), (b, c1 as f64), (s, bit(sw))]);
                let want = if sw { c1 == 0 } else { c1 == c0 + 1 };
                bad += (holds != want) as usize;
            }
        }
    }
    bad
}

pub fn min_dwell_mismatches() -> usize {
    let enc = instance(false, false);
    let (on, c, s) = (enc.steps[0].gens[0].on, enc.steps[0].gens[0].counter, enc.controls[0].gens[0].switch);
    let mut bad = 0;
    for on0 in [false, true] {
        for c0 in 0..=3u32 {
            for sw in [false, true] {
                let holds = block_holds(&enc, blocks::MIN_DWELL, &[(on, bit(on0)), (c, c0 as f64), (s, bit(sw))]);
                let want = !sw || c0 >= if on0 { MIN_ON } else { MIN_OFF };
                bad += (holds != want) as usize;
            }
        }
    }
    bad
}

pub fn max_dwell_mismatches() -> usize {
    let enc = instance(false, true);
    let g: Vec<_> = enc.steps.iter().map(|s| s.gens[0]).collect();
    let mut bad = 0;
    for on0 in [false, true] {
        for on1 in [false, true] {
            for c0 in 0..=3u32 {
                for c1 in 0..=4u32 {
                    let assign = [(g[0].on, bit(on0)), (g[0].counter, c0 as f64), (g[1].on, bit(on1)), (g[1].counter, c1 as f64)];
                    let cap = |on: bool| if on { MAX_ON } else { MAX_OFF };
                    let want = c0 <= cap(on0) && c1 <= cap(on1);
                    bad += (block_holds(&enc, blocks::MAX_DWELL, &assign) != want) as usize;
                }
            }
        }
    }
    bad
}

/// Strict battery split: `z = 1` means discharge with `t = p`, `z = 0` charge with `t = -p`.
pub fn battery_split_mismatches() -> usize {
    let enc = instance(true, false);
    let mut bad = 0;
    for st in &enc.steps {
        let bv = st.bats[0];
        let z = bv.mode.unwrap();
        for p in [-5.0, -2.0, 0.0, 2.0, 5.0] {
            for t in [0.0, 2.0, 5.0] {
                for on in [false, true] {
                    let holds = block_holds(&enc, blocks::ABS_EPIGRAPH, &[(bv.p, p), (bv.abs, t), (z, bit(on))]);
                    let want = if on { p >= 0.0 && t == p } else { p <= 0.0 && t == -p };
                    // The other step sits at p = t = z = 0, which satisfies its rows.
                    bad += (holds != want) as usize;
                }
            }
        }
    }
    bad
}

fn key(e: &LinExpr) -> (Vec<(usize, i64)>, i64) {
    let c = e.compact();
    let mut terms: Vec<(usize, i64)> =
        c.terms.iter().filter(|t| t.1 != 0.0).map(|&(v, k)| (v.0, (k * 1e9).round() as i64)).collect();
    terms.sort();
    (terms, (c.constant * 1e9).round() as i64)
}

/// The switch rows, as `expr <= 0`, must be exactly
/// `on' - on <= S`, `on - on' <= S`, `on' + on <= 1 + (1 - S)` and
/// `-on' - on <= -1 + (1 - S)`.
pub fn printed_switch_rows_match() -> Result<(), String> {
    let enc = instance(false, false);
    let prog = &enc.program;
    let (a, b, s) = (enc.steps[0].gens[0].on, enc.steps[1].gens[0].on, enc.controls[0].gens[0].switch);
    let id = prog.find_block(blocks::SWITCH_DYNAMICS).unwrap();
    let mut got = Vec::new();
    for r in prog.rows.iter().filter(|r| r.block == id) {
        match &r.constraint {
            ConvexConstraint::LinearLe(e) => got.push(key(e)),
            other => return Err(format!("unexpected row {other:?}")),
        }
    }
    let one = LinExpr::constant(1.0);
    let not_s = one.clone() - s;
    let mut want = vec![
        key(&((b - a) - LinExpr::from(s))),
        key(&((a - b) - LinExpr::from(s))),
        key(&((b + a) - (one.clone() + not_s.clone()))),
        key(&((-LinExpr::from(b) - a) - (-one + not_s))),
    ];
    got.sort();
    want.sort();
    if got == want {
        Ok(())
    } else {
        Err(format!("switch rows {got:?}, want {want:?}"))
    }
}
