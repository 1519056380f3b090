//! Seeded random instance generators for solver benchmarking and regression.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::program::{ConicProgram, ConvexConstraint, LinExpr, VarId};

/// A continuous instance whose optimum is known in closed form.
#[derive(Debug, Clone)]
pub struct KnownOptimum {
    pub family: &'static str,
    pub program: ConicProgram,
    pub x_opt: Vec<f64>,
    pub objective: f64,
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Instance `seed` cycles through four families: box LP, ball as SOC row,
/// ball as quadratic row, axis-aligned ellipsoid as quadratic row (with an
/// inactive box and a redundant linear row).
pub fn known_optimum(seed: u64) -> KnownOptimum {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..7);
    let c = rand_vec(&mut rng, n, -3.0, 3.0);
    let center = rand_vec(&mut rng, n, -2.0, 2.0);
    let mut p = ConicProgram::new();
    let family = match seed % 4 {
        0 => "box-lp",
        1 => "ball-soc",
        2 => "ball-quadratic",
        _ => "ellipsoid-quadratic",
    };
    if family == "box-lp" {
        let lo = rand_vec(&mut rng, n, -4.0, 0.0);
        let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.5..4.0)).collect();
        let x: Vec<VarId> = (0..n).map(|i| p.continuous(format!("x{i}"), lo[i], hi[i])).collect();
        let b = p.block("sum");
        // A redundant coupling row keeps the constraint matrix nontrivial.
        let total = x.iter().fold(LinExpr::new(), |e, &v| e + v);
        p.add_row(b, ConvexConstraint::le(total, hi.iter().sum::<f64>() + 1.0));
        p.set_objective(x.iter().zip(&c).fold(LinExpr::new(), |e, (&v, &ci)| e + v * ci));
        let x_opt: Vec<f64> = (0..n).map(|i| if c[i] > 0.0 { lo[i] } else { hi[i] }).collect();
        let objective = dot(&c, &x_opt);
        return KnownOptimum { family, program: p, x_opt, objective };
    }
    let r = rng.random_range(0.5..3.0);
    let d: Vec<f64> = if family == "ellipsoid-quadratic" { rand_vec(&mut rng, n, 0.5, 4.0) } else { vec![1.0; n] };
    let x: Vec<VarId> =
        (0..n).map(|i| p.continuous(format!("x{i}"), center[i] - 10.0, center[i] + 10.0)).collect();
    let b = p.block("ball");
    match family {
        "ball-soc" => {
            let elems = (0..n).map(|i| x[i] - center[i]).collect();
            p.add_row(b, ConvexConstraint::Soc { bound: LinExpr::constant(r), elems });
        }
        _ => {
            let quad = (0..n).map(|i| (x[i], x[i], d[i])).collect();
            let mut linear = LinExpr::constant(-r * r);
            for i in 0..n {
                linear.add_term(x[i], -2.0 * d[i] * center[i]);
                linear.add_constant(d[i] * center[i] * center[i]);
            }
            p.add_row(b, ConvexConstraint::Quadratic { quad, linear });
        }
    }
    // min c'x s.t. sum d_i (x_i - x0_i)^2 <= r^2  ->  x = x0 - r D^-1 c / sqrt(c' D^-1 c)
    let s = (0..n).map(|i| c[i] * c[i] / d[i]).sum::<f64>().sqrt();
    let x_opt: Vec<f64> = (0..n).map(|i| center[i] - r * c[i] / (d[i] * s)).collect();
    let objective = dot(&c, &center) - r * s;
    p.set_objective(x.iter().zip(&c).fold(LinExpr::new(), |e, (&v, &ci)| e + v * ci));
    KnownOptimum { family, program: p, x_opt, objective }
}

/// A feasible, bounded mixed-binary instance with `n_bin` binaries.
///
/// Feasibility is built in by sampling a reference point first and choosing
/// row right-hand sides so that it satisfies every row with nonnegative slack.
/// Rows mix linear couplings, on/off links `x <= ub * s`, one convex quadratic
/// ball and one second-order cone.
pub fn random_miqcp(seed: u64, n_bin: usize) -> ConicProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_cont = rng.random_range(1..5);
    let mut p = ConicProgram::new();
    let s: Vec<VarId> = (0..n_bin).map(|i| p.binary(format!("s{i}"))).collect();
    let x: Vec<VarId> = (0..n_cont).map(|i| p.continuous(format!("x{i}"), -5.0, 5.0)).collect();
    let s0: Vec<f64> = (0..n_bin).map(|_| f64::from(rng.random_range(0..2u8))).collect();
    let x0 = rand_vec(&mut rng, n_cont, -2.0, 2.0);
    let mut ref_point = s0.clone();
    ref_point.extend(&x0);

    let lin = p.block("linear");
    for _ in 0..rng.random_range(1..4) {
        let mut e = LinExpr::new();
        for &v in s.iter().chain(&x) {
            if rng.random_bool(0.6) {
                e.add_term(v, rng.random_range(-3.0..3.0));
            }
        }
        let rhs = e.eval(&ref_point) + rng.random_range(0.0..1.5);
        p.add_row(lin, ConvexConstraint::le(e, rhs));
    }
    let link = p.block("link");
    for (k, &sv) in s.iter().enumerate() {
        if rng.random_bool(0.5) {
            let j = k % n_cont;
            // x_j <= 5 s_k, emitted only when the reference point satisfies it.
            if x0[j] <= 0.0 || s0[k] == 1.0 {
                p.add_row(link, ConvexConstraint::le(x[j], sv * 5.0));
            }
        }
    }
    let quad_b = p.block("quadratic");
    let center = rand_vec(&mut rng, n_cont, -1.0, 1.0);
    let r2 = x0.iter().zip(&center).map(|(a, c)| (a - c).powi(2)).sum::<f64>() + rng.random_range(0.2..2.0);
    let mut linear = LinExpr::constant(-r2);
    let mut quad = Vec::new();
    for j in 0..n_cont {
        quad.push((x[j], x[j], 1.0));
        linear.add_term(x[j], -2.0 * center[j]);
        linear.add_constant(center[j] * center[j]);
    }
    // Allow switches to shift the budget so binaries interact with the ball.
    if n_bin > 0 {
        let k = rng.random_range(0..n_bin);
        let w = rng.random_range(-1.0..1.0);
        linear.add_term(s[k], w);
        linear.add_constant(-w * s0[k]);
    }
    p.add_row(quad_b, ConvexConstraint::Quadratic { quad, linear });
    let soc_b = p.block("soc");
    let elems: Vec<LinExpr> = x.iter().map(|&v| LinExpr::from(v) * rng.random_range(0.2..1.0)).collect();
    let mut bound = LinExpr::new();
    for &sv in &s {
        if rng.random_bool(0.3) {
            bound.add_term(sv, rng.random_range(0.0..2.0));
        }
    }
    let need = elems.iter().map(|e| e.eval(&ref_point).powi(2)).sum::<f64>().sqrt();
    let have = bound.eval(&ref_point);
    bound.add_constant(need - have + rng.random_range(0.1..1.0));
    p.add_row(soc_b, ConvexConstraint::Soc { bound, elems });

    let mut obj = LinExpr::new();
    for &v in s.iter().chain(&x) {
        obj.add_term(v, rng.random_range(-4.0..4.0));
    }
    p.set_objective(obj);
    p
}
