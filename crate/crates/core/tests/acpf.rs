mod common;

use nalgebra::Complex;

use microgrid_core::acpf::{deviation_check, net_injection, newton_solve, DeviationOptions, DeviceBoxes, NewtonOptions};
use microgrid_core::config::MicrogridConfig;
use microgrid_core::grid::{build_admittance, AdmittanceMatrix, DemandSnapshot, Line, MicrogridSpec, PowerSetpoint};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Gauss-Seidel on complex voltages with the reference bus as slack.
fn gauss_seidel(spec: &MicrogridSpec, y: &AdmittanceMatrix, p: &[f64], q: &[f64]) -> Vec<Complex<f64>> {
    let n = spec.n_buses;
    let r = spec.reference_bus;
    let yc = |i: usize, j: usize| Complex::new(y.g[(i, j)], y.b[(i, j)]);
    let mut v = vec![Complex::new(1.0, 0.0); n];
    v[r] = Complex::new(spec.v_bounds[r].0, 0.0);
    for _ in 0..20_000 {
        let mut delta: f64 = 0.0;
        for i in (0..n).filter(|&i| i != r) {
            let s = Complex::new(p[i], -q[i]);
            let mut acc = s / v[i].conj();
            for j in (0..n).filter(|&j| j != i) {
                acc -= yc(i, j) * v[j];
            }
            let new = acc / yc(i, i);
            delta = delta.max((new - v[i]).norm());
            v[i] = new;
        }
        if delta < 1e-14 {
            break;
        }
    }
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn newton_matches_gauss_seidel(seed in 0u64..1_000_000) {
        let spec = MicrogridConfig::six_bus().grid_spec().unwrap();
        let y = build_admittance(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f64> = (0..6).map(|_| rng.random_range(-0.8..0.8)).collect();
        let q: Vec<f64> = (0..6).map(|_| rng.random_range(-0.3..0.3)).collect();
        let mut box_free = spec.clone();
        box_free.v_bounds = vec![(0.0, 2.0); 6];
        box_free.v_bounds[spec.reference_bus] = spec.v_bounds[spec.reference_bus];
        box_free.theta_bounds = vec![(-1.0, 1.0); 6];
        let z = newton_solve(&box_free, &y, &p, &q, &NewtonOptions { tol: 1e-12, ..Default::default() }).unwrap();
        let v = gauss_seidel(&spec, &y, &p, &q);
        for i in 0..6 {
            prop_assert!((z.v[i] - v[i].norm()).abs() < 1e-8, "bus {} v {} vs {}", i, z.v[i], v[i].norm());
            prop_assert!((z.theta[i] - v[i].arg()).abs() < 1e-8, "bus {} theta", i);
        }
    }
}

fn boxes(spec: &MicrogridSpec) -> DeviceBoxes {
    DeviceBoxes {
        p_g: vec![(0.0, 5.0); spec.generators.len()],
        q_g: vec![(-5.0, 5.0); spec.generators.len()],
        p_b: vec![(-5.0, 5.0); spec.batteries.len()],
        q_b: vec![(-5.0, 5.0); spec.batteries.len()],
    }
}

#[test]
fn on_manifold_setpoint_has_zero_deviation() {
    let spec = MicrogridConfig::six_bus().grid_spec().unwrap();
    let y = build_admittance(&spec).unwrap();
    let mut d = DemandSnapshot::zeros(6);
    d.p_d[2] = 0.3;
    let set = PowerSetpoint { p_g: vec![0.5, 1.1], q_g: vec![0.1, 0.3], p_b: vec![-0.2], q_b: vec![0.0] };
    let (p, q) = net_injection(&spec, &set, &d);
    let z = newton_solve(&spec, &y, &p, &q, &NewtonOptions::default()).unwrap();
    let r = spec.reference_bus;
    d.p_d[r] = -z.p[r];
    d.q_d[r] = -z.q[r];
    let res = deviation_check(&set, &d, &spec, &y, &boxes(&spec), None, &DeviationOptions::default()).unwrap();
    assert!(res.v_check <= 1e-10, "{}", res.v_check);

    // Reactive setpoints are free, so the original point bounds the deviation
    // of any active-power perturbation by its squared size.
    for dp in [0.1, 0.5, 1.5] {
        let off = PowerSetpoint { p_g: vec![0.5 + dp, 1.1], ..set.clone() };
        let res = deviation_check(&off, &d, &spec, &y, &boxes(&spec), None, &DeviationOptions::default()).unwrap();
        assert!(res.v_check <= dp * dp + 1e-9, "dp {dp}: {}", res.v_check);
        if dp > 1.0 {
            // Too much to burn off as line losses inside the voltage box.
            assert!(res.v_check > 1e-3, "dp {dp}: {}", res.v_check);
        }
    }
}

/// A generator at bus 0 serving a load at the reference bus 1: the AC point is
/// unique, so the deviation is the squared gap to the generator output that
/// closes both balance equations at bus 1.
#[test]
fn two_bus_deviation_matches_direct_solve() {
    let spec = MicrogridSpec {
        n_buses: 2,
        generators: vec![0],
        batteries: vec![],
        reference_bus: 1,
        lines: vec![Line { from: 0, to: 1, g: 4.0, b: -12.0 }],
        ground: vec![(0.0, 0.0); 2],
        v_bounds: vec![(0.9, 1.1), (1.0, 1.0)],
        theta_bounds: vec![(-0.5, 0.5), (0.0, 0.0)],
    };
    let y = build_admittance(&spec).unwrap();
    let (g, b) = (4.0, -12.0);
    // Injection at bus 1 from the line, as a function of bus-0 voltage.
    let inj1 = |v0: f64, t0: f64| {
        let t = -t0;
        let p = g - v0 * (g * t.cos() + b * t.sin());
        let q = -b - v0 * (g * t.sin() - b * t.cos());
        (p, q)
    };
    let inj0 = |v0: f64, t0: f64| {
        let p = g * v0 * v0 - v0 * (g * t0.cos() + b * t0.sin());
        (p, 0.0)
    };
    for (pd, qd) in [(0.5, 0.1), (1.2, 0.4), (2.0, 0.0)] {
        // Newton on (v0, t0) with central differences.
        let (mut v0, mut t0) = (1.0, 0.0);
        for _ in 0..50 {
            let (p, q) = inj1(v0, t0);
            let f = [p + pd, q + qd];
            let h = 1e-7;
            let dv = [(inj1(v0 + h, t0).0 - inj1(v0 - h, t0).0) / (2.0 * h), (inj1(v0 + h, t0).1 - inj1(v0 - h, t0).1) / (2.0 * h)];
            let dt = [(inj1(v0, t0 + h).0 - inj1(v0, t0 - h).0) / (2.0 * h), (inj1(v0, t0 + h).1 - inj1(v0, t0 - h).1) / (2.0 * h)];
            let det = dv[0] * dt[1] - dt[0] * dv[1];
            v0 -= (f[0] * dt[1] - dt[0] * f[1]) / det;
            t0 -= (dv[0] * f[1] - f[0] * dv[1]) / det;
        }
        let p_star = inj0(v0, t0).0;
        let mut d = DemandSnapshot::zeros(2);
        d.p_d[1] = pd;
        d.q_d[1] = qd;
        for p_set in [p_star, p_star + 0.05, p_star - 0.2] {
            let set = PowerSetpoint { p_g: vec![p_set], q_g: vec![0.0], p_b: vec![], q_b: vec![] };
            let bx = DeviceBoxes { p_g: vec![(0.0, 5.0)], q_g: vec![(-5.0, 5.0)], p_b: vec![], q_b: vec![] };
            let res = deviation_check(&set, &d, &spec, &y, &bx, None, &DeviationOptions::default()).unwrap();
            let want = (p_set - p_star).powi(2);
            assert!((res.v_check - want).abs() <= 1e-9, "demand {pd}: {} vs {want}", res.v_check);
        }
    }
}
