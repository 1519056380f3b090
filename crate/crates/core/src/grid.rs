//! Static network description, bus admittance matrix, and line powers.
//!
//! Buses are indexed from 0 inside the library; config files use 1-based ids.
//! All electrical quantities are per-unit on a 100 kW base.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::GridError;

/// A line with series admittance `g + j b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub g: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicrogridSpec {
    pub n_buses: usize,
    /// Bus index of each generator.
    pub generators: Vec<usize>,
    /// Bus index of each battery.
    pub batteries: Vec<usize>,
    pub reference_bus: usize,
    pub lines: Vec<Line>,
    /// Shunt admittance to ground per bus, `(g, b)`.
    pub ground: Vec<(f64, f64)>,
    pub v_bounds: Vec<(f64, f64)>,
    /// Radians.
    pub theta_bounds: Vec<(f64, f64)>,
}

impl MicrogridSpec {
    pub fn validate(&self) -> Result<(), GridError> {
        let n = self.n_buses;
        let bad = |m: String| Err(GridError::Invalid(m));
        if n == 0 {
            return bad("grid has no buses".into());
        }
        if self.ground.len() != n || self.v_bounds.len() != n || self.theta_bounds.len() != n {
            return bad(format!("per-bus vectors must have {n} entries"));
        }
        if self.reference_bus >= n {
            return bad(format!("reference bus {} out of range", self.reference_bus));
        }
        for (kind, set) in [("generator", &self.generators), ("battery", &self.batteries)] {
            if let Some(&b) = set.iter().find(|&&b| b >= n) {
                return bad(format!("{kind} bus {b} out of range"));
            }
        }
        for (i, (&(vl, vh), &(tl, th))) in self.v_bounds.iter().zip(&self.theta_bounds).enumerate() {
            if vl.is_nan() || th.is_nan() || vl > vh || tl > th {
                return bad(format!("bus {i} has inverted bounds"));
            }
            if vl <= 0.0 {
                return bad(format!("bus {i} voltage lower bound must be positive"));
            }
        }
        let r = self.reference_bus;
        let (vl, vh) = self.v_bounds[r];
        let (tl, th) = self.theta_bounds[r];
        if vl != vh || tl != 0.0 || th != 0.0 {
            return bad("reference bus must have fixed voltage and zero angle".into());
        }
        for l in &self.lines {
            if l.from >= n || l.to >= n {
                return bad(format!("line {}-{} has an endpoint out of range", l.from, l.to));
            }
        }
        Ok(())
    }

    /// Lines with endpoints ordered so that `from < to`.
    pub fn ordered_lines(&self) -> Vec<Line> {
        self.lines
            .iter()
            .map(|l| if l.from < l.to { *l } else { Line { from: l.to, to: l.from, ..*l } })
            .collect()
    }

    /// Whether bus `l` has a generator or battery attached.
    pub fn devices_at(&self, bus: usize) -> (Vec<usize>, Vec<usize>) {
        let g = self.generators.iter().enumerate().filter(|(_, &b)| b == bus).map(|(k, _)| k).collect();
        let b = self.batteries.iter().enumerate().filter(|(_, &b)| b == bus).map(|(k, _)| k).collect();
        (g, b)
    }
}

/// `Y = G + j B`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl AdmittanceMatrix {
    pub fn n(&self) -> usize {
        self.g.nrows()
    }
}

/// Off-diagonal `(l, m)` is minus the admittance of line `l-m`; the diagonal is the
/// ground admittance plus all incident line admittances.
pub fn build_admittance(spec: &MicrogridSpec) -> Result<AdmittanceMatrix, GridError> {
    let n = spec.n_buses;
    let mut g = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, n);
    let mut seen = std::collections::HashSet::new();
    for l in &spec.lines {
        if l.from == l.to {
            return Err(GridError::SelfLoop(l.from));
        }
        let key = (l.from.min(l.to), l.from.max(l.to));
        if !seen.insert(key) {
            return Err(GridError::DuplicateLine(key.0, key.1));
        }
        let (i, j) = (l.from, l.to);
        g[(i, j)] -= l.g;
        g[(j, i)] -= l.g;
        b[(i, j)] -= l.b;
        b[(j, i)] -= l.b;
        g[(i, i)] += l.g;
        g[(j, j)] += l.g;
        b[(i, i)] += l.b;
        b[(j, j)] += l.b;
    }
    for (i, &(gs, bs)) in spec.ground.iter().enumerate() {
        g[(i, i)] += gs;
        b[(i, i)] += bs;
    }
    Ok(AdmittanceMatrix { g, b })
}

/// Per-bus `(p, q, v, theta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAlgebraicState {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
}

impl GridAlgebraicState {
    pub fn flat(n: usize) -> Self {
        Self { p: vec![0.0; n], q: vec![0.0; n], v: vec![1.0; n], theta: vec![0.0; n] }
    }
}

/// Device setpoints, ordered as in [`MicrogridSpec::generators`] and [`MicrogridSpec::batteries`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSetpoint {
    pub p_g: Vec<f64>,
    pub q_g: Vec<f64>,
    pub p_b: Vec<f64>,
    pub q_b: Vec<f64>,
}

/// Per-bus demand; PV output enters as negative active demand at its bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandSnapshot {
    pub p_d: Vec<f64>,
    pub q_d: Vec<f64>,
}

impl DemandSnapshot {
    pub fn zeros(n: usize) -> Self {
        Self { p_d: vec![0.0; n], q_d: vec![0.0; n] }
    }
}

/// `(p_lm, q_lm)` with `p_lm = v_l v_m (G_lm cos t + B_lm sin t)` and
/// `q_lm = v_l v_m (G_lm sin t - B_lm cos t)`, `t = theta_l - theta_m`.
pub fn line_power(z: &GridAlgebraicState, l: usize, m: usize, y: &AdmittanceMatrix) -> (f64, f64) {
    let t = z.theta[l] - z.theta[m];
    let (s, c) = t.sin_cos();
    let vv = z.v[l] * z.v[m];
    let (g, b) = (y.g[(l, m)], y.b[(l, m)]);
    (vv * (g * c + b * s), vv * (g * s - b * c))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_bus() -> MicrogridSpec {
        MicrogridSpec {
            n_buses: 2,
            generators: vec![],
            batteries: vec![],
            reference_bus: 0,
            lines: vec![Line { from: 0, to: 1, g: 1.0, b: -5.0 }],
            ground: vec![(0.0, 0.0); 2],
            v_bounds: vec![(1.0, 1.0), (0.9, 1.1)],
            theta_bounds: vec![(0.0, 0.0), (-0.5, 0.5)],
        }
    }

    #[test]
    fn single_bus_ground_only() {
        let spec = MicrogridSpec {
            n_buses: 1,
            generators: vec![],
            batteries: vec![],
            reference_bus: 0,
            lines: vec![],
            ground: vec![(0.1, -0.2)],
            v_bounds: vec![(1.0, 1.0)],
            theta_bounds: vec![(0.0, 0.0)],
        };
        let y = build_admittance(&spec).unwrap();
        assert_eq!((y.g[(0, 0)], y.b[(0, 0)]), (0.1, -0.2));
    }

    #[test]
    fn two_bus_admittance() {
        let y = build_admittance(&two_bus()).unwrap();
        assert_eq!(y.g, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        assert_eq!(y.b, DMatrix::from_row_slice(2, 2, &[-5.0, 5.0, 5.0, -5.0]));
    }

    #[test]
    fn rejects_duplicates_and_self_loops() {
        let mut s = two_bus();
        s.lines.push(Line { from: 1, to: 0, g: 1.0, b: -1.0 });
        assert!(matches!(build_admittance(&s), Err(GridError::DuplicateLine(0, 1))));
        let mut s = two_bus();
        s.lines[0].to = 0;
        assert!(matches!(build_admittance(&s), Err(GridError::SelfLoop(0))));
    }

    #[test]
    fn line_power_examples() {
        let y = build_admittance(&two_bus()).unwrap();
        let z = GridAlgebraicState::flat(2);
        let (p, q) = line_power(&z, 0, 1, &y);
        assert_eq!((p, q), (y.g[(0, 1)], -y.b[(0, 1)]));
        let (p, q) = line_power(&z, 0, 0, &y);
        assert_eq!((p, q), (y.g[(0, 0)], -y.b[(0, 0)]));
        let y0 = AdmittanceMatrix {
            g: DMatrix::zeros(2, 2),
            b: DMatrix::from_row_slice(2, 2, &[0.0, -5.0, -5.0, 0.0]),
        };
        let z = GridAlgebraicState { theta: vec![0.1, 0.0], ..GridAlgebraicState::flat(2) };
        let (p, q) = line_power(&z, 0, 1, &y0);
        assert!((p + 0.4992).abs() < 1e-4 && (q - 4.9750).abs() < 1e-4);
    }
}
