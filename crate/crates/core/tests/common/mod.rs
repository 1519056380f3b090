#![allow(dead_code)]

use microgrid_core::dispatch::{BatteryParams, DispatchParams, GeneratorParams};
use microgrid_core::grid::{DemandSnapshot, Line, MicrogridSpec};

pub fn generator() -> GeneratorParams {
    GeneratorParams {
        name: "DG".into(),
        p_min: 1.0,
        p_max: 3.0,
        q_min: -2.0,
        q_max: 2.0,
        ramp: 1.0,
        min_on: 2,
        max_on: None,
        min_off: 2,
        max_off: None,
        max_startups: Some(2),
        base_cost: 5.0,
        fuel_cost: 20.0,
        startup_cost: 5.0,
    }
}

pub fn battery() -> BatteryParams {
    BatteryParams {
        name: "BA".into(),
        p_min: -5.0,
        p_max: 5.0,
        q_min: -2.0,
        q_max: 2.0,
        soc_min: 0.5,
        soc_max: 5.0,
        efficiency: 0.95,
        loss_rate: 0.0,
        throughput_cost: 1.0,
        soc_aging_cost: 1.0,
    }
}

/// Generator and battery at bus 0, load and reference at bus 1.
pub fn two_bus() -> (MicrogridSpec, DispatchParams) {
    let h = 5f64.to_radians();
    let spec = MicrogridSpec {
        n_buses: 2,
        generators: vec![0],
        batteries: vec![0],
        reference_bus: 1,
        lines: vec![Line { from: 0, to: 1, g: 40.0, b: -80.0 }],
        ground: vec![(0.0, 0.0); 2],
        v_bounds: vec![(0.95, 1.05), (1.0, 1.0)],
        theta_bounds: vec![(-h, h), (0.0, 0.0)],
    };
    (spec, DispatchParams { generators: vec![generator()], batteries: vec![battery()] })
}

/// `n + 1` snapshots of a load `p(t)` at bus 1 with power factor 0.95.
pub fn load_profile(n: usize, p: impl Fn(usize) -> f64) -> Vec<DemandSnapshot> {
    let tan = (1.0f64 / 0.95 / 0.95 - 1.0).sqrt();
    (0..=n)
        .map(|t| {
            let mut d = DemandSnapshot::zeros(2);
            d.p_d[1] = p(t % n);
            d.q_d[1] = d.p_d[1] * tan;
            d
        })
        .collect()
}

use microgrid_core::acpf::{newton_solve, pf_residual, NewtonOptions};
use microgrid_core::grid::{AdmittanceMatrix, GridAlgebraicState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// AC-feasible states inside the voltage and angle boxes: a random point in
/// the box fixes the injections, and Newton from a flat start solves for the
/// state those injections produce. Candidates that leave the box are dropped.
pub fn newton_states(spec: &MicrogridSpec, y: &AdmittanceMatrix, count: usize, seed: u64) -> Vec<GridAlgebraicState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut tries = 0;
    while out.len() < count {
        tries += 1;
        assert!(tries < 20 * count + 100, "too few Newton states land in the box");
        let n = spec.n_buses;
        let mut z = GridAlgebraicState::flat(n);
        for i in 0..n {
            let (vl, vh) = spec.v_bounds[i];
            let (tl, th) = spec.theta_bounds[i];
            z.v[i] = if vl < vh { rng.random_range(vl..vh) } else { vl };
            z.theta[i] = if tl < th { rng.random_range(tl..th) } else { tl };
        }
        let r = pf_residual(&z, y);
        let p: Vec<f64> = r.r_p.iter().map(|x| -x).collect();
        let q: Vec<f64> = r.r_q.iter().map(|x| -x).collect();
        if let Ok(s) = newton_solve(spec, y, &p, &q, &NewtonOptions::default()) {
            out.push(s);
        }
    }
    out
}

pub mod encoding;
