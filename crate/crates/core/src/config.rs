//! TOML configuration for grids, device parameters, demand shapes and runs.
//!
//! Bus ids in the file are 1-based. Dwell times are given in hours and
//! converted to intervals with the run's `dt`, rounding up.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dispatch::{BatteryParams, DispatchParams, GeneratorParams};
use crate::error::ConfigError;
use crate::grid::{Line, MicrogridSpec};
use crate::scenario::{NominalProfileParams, PerturbationParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineConfig {
    pub from: usize,
    pub to: usize,
    /// Series admittance, or give `r` and `x` instead.
    pub g: Option<f64>,
    pub b: Option<f64>,
    pub r: Option<f64>,
    pub x: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusOverride {
    pub id: usize,
    pub v_bounds: Option<[f64; 2]>,
    pub theta_bounds_deg: Option<[f64; 2]>,
    pub ground: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_buses: usize,
    pub reference_bus: usize,
    #[serde(default = "one")]
    pub reference_voltage: f64,
    pub v_bounds: [f64; 2],
    pub theta_bounds_deg: [f64; 2],
    pub lines: Vec<LineConfig>,
    #[serde(default)]
    pub buses: Vec<BusOverride>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub name: String,
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub ramp: f64,
    pub min_on_h: f64,
    pub max_on_h: Option<f64>,
    pub min_off_h: f64,
    pub max_off_h: Option<f64>,
    pub max_startups: Option<u32>,
    pub base_cost: f64,
    pub fuel_cost: f64,
    pub startup_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryConfig {
    pub name: String,
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub efficiency: f64,
    /// Self-discharge per hour.
    pub loss_rate: f64,
    pub throughput_cost: f64,
    pub soc_aging_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    #[serde(default = "one")]
    pub dt: f64,
    #[serde(default = "default_n_per")]
    pub n_per: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_gap")]
    pub gap: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_steps")]
    pub steps: usize,
}

fn default_n_per() -> usize {
    24
}
fn default_horizon() -> usize {
    48
}
fn default_gap() -> f64 {
    1e-4
}
fn default_steps() -> usize {
    48
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            dt: 1.0,
            n_per: default_n_per(),
            horizon: default_horizon(),
            gap: default_gap(),
            seed: 0,
            steps: default_steps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicrogridConfig {
    pub grid: GridConfig,
    pub generators: Vec<GeneratorConfig>,
    #[serde(default)]
    pub batteries: Vec<BatteryConfig>,
    pub demand: NominalProfileParams,
    #[serde(default)]
    pub perturbation: PerturbationParams,
    #[serde(default)]
    pub run: RunSettings,
}

/// The 6-bus test grid shipped with the crate.
pub const SIX_BUS_TOML: &str = include_str!("../data/six_bus.toml");

impl MicrogridConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn six_bus() -> Self {
        Self::from_toml(SIX_BUS_TOML).expect("shipped config parses")
    }

    fn bus(&self, id: usize, what: &str) -> Result<usize, ConfigError> {
        if id == 0 || id > self.grid.n_buses {
            return Err(ConfigError::Invalid(format!("{what}: bus {id} not in 1..={}", self.grid.n_buses)));
        }
        Ok(id - 1)
    }

    pub fn grid_spec(&self) -> Result<MicrogridSpec, ConfigError> {
        let g = &self.grid;
        let n = g.n_buses;
        if n == 0 {
            return Err(ConfigError::Invalid("grid has no buses".into()));
        }
        let deg = std::f64::consts::PI / 180.0;
        let mut v_bounds = vec![(g.v_bounds[0], g.v_bounds[1]); n];
        let mut theta_bounds = vec![(g.theta_bounds_deg[0] * deg, g.theta_bounds_deg[1] * deg); n];
        let mut ground = vec![(0.0, 0.0); n];
        for o in &g.buses {
            let i = self.bus(o.id, "bus override")?;
            if let Some([lo, hi]) = o.v_bounds {
                v_bounds[i] = (lo, hi);
            }
            if let Some([lo, hi]) = o.theta_bounds_deg {
                theta_bounds[i] = (lo * deg, hi * deg);
            }
            if let Some([gs, bs]) = o.ground {
                ground[i] = (gs, bs);
            }
        }
        let r = self.bus(g.reference_bus, "reference")?;
        v_bounds[r] = (g.reference_voltage, g.reference_voltage);
        theta_bounds[r] = (0.0, 0.0);
        let mut lines = Vec::with_capacity(g.lines.len());
        for l in &g.lines {
            let (from, to) = (self.bus(l.from, "line")?, self.bus(l.to, "line")?);
            let (gg, bb) = match (l.g, l.b, l.r, l.x) {
                (Some(gg), Some(bb), None, None) => (gg, bb),
                (None, None, Some(r), Some(x)) => {
                    let d = r * r + x * x;
                    if d == 0.0 {
                        return Err(ConfigError::Invalid(format!("line {}-{} has zero impedance", l.from, l.to)));
                    }
                    (r / d, -x / d)
                }
                _ => {
                    return Err(ConfigError::Invalid(format!(
                        "line {}-{}: give either g and b, or r and x",
                        l.from, l.to
                    )))
                }
            };
            lines.push(Line { from, to, g: gg, b: bb });
        }
        let generators = self.generators.iter().map(|d| self.bus(d.bus, &d.name)).collect::<Result<_, _>>()?;
        let batteries = self.batteries.iter().map(|d| self.bus(d.bus, &d.name)).collect::<Result<_, _>>()?;
        let spec = MicrogridSpec { n_buses: n, generators, batteries, reference_bus: r, lines, ground, v_bounds, theta_bounds };
        spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(spec)
    }

    /// Device parameters with dwell times in intervals of length `dt`.
    pub fn dispatch_params(&self, dt: f64) -> Result<DispatchParams, ConfigError> {
        if !(dt > 0.0) {
            return Err(ConfigError::Invalid(format!("dt must be positive, got {dt}")));
        }
        let intervals = |h: f64, what: &str| -> Result<u32, ConfigError> {
            if !(h >= 0.0) || !h.is_finite() {
                return Err(ConfigError::Invalid(format!("{what} must be a finite non-negative number of hours")));
            }
            Ok(((h / dt) - 1e-9).ceil().max(0.0) as u32)
        };
        let generators = self
            .generators
            .iter()
            .map(|g| {
                Ok(GeneratorParams {
                    name: g.name.clone(),
                    p_min: g.p_min,
                    p_max: g.p_max,
                    q_min: g.q_min,
                    q_max: g.q_max,
                    ramp: g.ramp,
                    min_on: intervals(g.min_on_h, "min_on_h")?.max(1),
                    max_on: g.max_on_h.map(|h| intervals(h, "max_on_h")).transpose()?,
                    min_off: intervals(g.min_off_h, "min_off_h")?.max(1),
                    max_off: g.max_off_h.map(|h| intervals(h, "max_off_h")).transpose()?,
                    max_startups: g.max_startups,
                    base_cost: g.base_cost,
                    fuel_cost: g.fuel_cost,
                    startup_cost: g.startup_cost,
                })
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;
        let batteries = self
            .batteries
            .iter()
            .map(|b| BatteryParams {
                name: b.name.clone(),
                p_min: b.p_min,
                p_max: b.p_max,
                q_min: b.q_min,
                q_max: b.q_max,
                soc_min: b.soc_min,
                soc_max: b.soc_max,
                efficiency: b.efficiency,
                loss_rate: b.loss_rate,
                throughput_cost: b.throughput_cost,
                soc_aging_cost: b.soc_aging_cost,
            })
            .collect();
        let params = DispatchParams { generators, batteries };
        let spec = self.grid_spec()?;
        params.validate(&spec).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(params)
    }

    /// 0-based load and PV buses of the demand profile.
    pub fn demand_buses(&self) -> Result<(usize, Option<usize>), ConfigError> {
        let load = self.bus(self.demand.load_bus, "demand load bus")?;
        let pv = self.demand.pv_bus.map(|b| self.bus(b, "demand pv bus")).transpose()?;
        Ok((load, pv))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_bus_loads() {
        let cfg = MicrogridConfig::six_bus();
        let spec = cfg.grid_spec().unwrap();
        assert_eq!(spec.n_buses, 6);
        assert_eq!(spec.generators, vec![0, 1]);
        assert_eq!(spec.batteries, vec![2]);
        assert_eq!(spec.reference_bus, 5);
        let l = spec.lines[0];
        assert!((l.g - 40.0).abs() < 1e-9 && (l.b + 80.0).abs() < 1e-9);
        let p = cfg.dispatch_params(1.0).unwrap();
        assert_eq!((p.generators[0].min_on, p.generators[0].max_on), (2, None));
        let p = cfg.dispatch_params(0.5).unwrap();
        assert_eq!(p.generators[1].min_off, 4);
    }

    #[test]
    fn rejects_bad_ids_and_lines() {
        let mut cfg = MicrogridConfig::six_bus();
        cfg.generators[0].bus = 7;
        assert!(matches!(cfg.grid_spec(), Err(ConfigError::Invalid(_))));
        let mut cfg = MicrogridConfig::six_bus();
        cfg.grid.lines[0].r = Some(0.1);
        assert!(matches!(cfg.grid_spec(), Err(ConfigError::Invalid(_))));
        assert!(matches!(MicrogridConfig::from_toml("grid = 3"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = MicrogridConfig::six_bus();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(MicrogridConfig::from_toml(&text).unwrap(), cfg);
    }
}
