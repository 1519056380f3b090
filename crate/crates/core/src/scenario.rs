//! Demand profiles and scenario timelines.
//!
//! The periodic profile places the load at one bus and PV generation, as
//! negative active demand, at another. The load is a base level with a morning
//! and an evening Gaussian bump (distances measured around the 24 h clock); PV
//! is a half-sine between sunrise and sunset. Reactive demand follows the load
//! at a fixed power factor.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use microgrid_opt::strategy::Registry;

use crate::error::ScenarioError;
use crate::grid::DemandSnapshot;

const DAY_H: f64 = 24.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NominalProfileParams {
    /// 1-based in config files.
    pub load_bus: usize,
    pub pv_bus: Option<usize>,
    pub base: f64,
    pub morning_peak: f64,
    pub morning_hour: f64,
    pub morning_width: f64,
    pub evening_peak: f64,
    pub evening_hour: f64,
    pub evening_width: f64,
    pub pv_peak: f64,
    pub sunrise: f64,
    pub sunset: f64,
    pub power_factor: f64,
}

impl NominalProfileParams {
    pub fn load_at(&self, hour: f64) -> f64 {
        let bump = |peak: f64, at: f64, width: f64| {
            let d = (hour - at).rem_euclid(DAY_H);
            let d = d.min(DAY_H - d);
            peak * (-0.5 * (d / width).powi(2)).exp()
        };
        self.base + bump(self.morning_peak, self.morning_hour, self.morning_width)
            + bump(self.evening_peak, self.evening_hour, self.evening_width)
    }

    pub fn pv_at(&self, hour: f64) -> f64 {
        let h = hour.rem_euclid(DAY_H);
        if h <= self.sunrise || h >= self.sunset {
            return 0.0;
        }
        self.pv_peak * (std::f64::consts::PI * (h - self.sunrise) / (self.sunset - self.sunrise)).sin()
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Invalid(m.into()));
        if !(self.power_factor > 0.0 && self.power_factor <= 1.0) {
            return bad("power factor must lie in (0, 1]");
        }
        if !(self.morning_width > 0.0 && self.evening_width > 0.0) {
            return bad("bump widths must be positive");
        }
        if !(0.0 <= self.sunrise && self.sunrise < self.sunset && self.sunset <= DAY_H) {
            return bad("need 0 <= sunrise < sunset <= 24");
        }
        if self.base < 0.0 || self.pv_peak < 0.0 {
            return bad("base load and PV peak must be non-negative");
        }
        Ok(())
    }
}

/// One day of demand at `n_per` steps of `dt` hours, as `n_per + 1` snapshots
/// with the last equal to the first. `load_bus` and `pv_bus` are 0-based.
pub fn make_nominal_profile(
    n_buses: usize,
    n_per: usize,
    dt: f64,
    load_bus: usize,
    pv_bus: Option<usize>,
    params: &NominalProfileParams,
) -> Result<Vec<DemandSnapshot>, ScenarioError> {
    if n_per == 0 || !(dt > 0.0) || (n_per as f64 * dt - DAY_H).abs() > 1e-9 {
        return Err(ScenarioError::PeriodMismatch { n_per, dt });
    }
    if load_bus >= n_buses || pv_bus.is_some_and(|b| b >= n_buses || b == load_bus) {
        return Err(ScenarioError::Invalid("load and PV buses must be distinct buses of the grid".into()));
    }
    params.validate()?;
    let tan_phi = (1.0 - params.power_factor.powi(2)).sqrt() / params.power_factor;
    let mut out: Vec<DemandSnapshot> = (0..n_per)
        .map(|j| {
            let hour = j as f64 * dt;
            let mut d = DemandSnapshot::zeros(n_buses);
            let load = params.load_at(hour);
            d.p_d[load_bus] = load;
            d.q_d[load_bus] = load * tan_phi;
            if let Some(pv) = pv_bus {
                d.p_d[pv] = -params.pv_at(hour);
            }
            d
        })
        .collect();
    out.push(out[0].clone());
    Ok(out)
}

/// Multiplicative bounded noise plus a demand-drop / solar-boost window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationParams {
    /// Load is scaled by `1 + load_noise * U(-1, 1)`.
    pub load_noise: f64,
    /// PV is scaled by `1 + pv_noise * U(-1, 1)`.
    pub pv_noise: f64,
    /// Absolute hours from the start of the run.
    pub drop_start_h: f64,
    pub drop_end_h: f64,
    /// Load multiplier inside the window.
    pub drop_factor: f64,
    /// PV multiplier inside the window.
    pub solar_boost: f64,
}

impl Default for PerturbationParams {
    fn default() -> Self {
        Self {
            load_noise: 0.0,
            pv_noise: 0.0,
            drop_start_h: 30.0,
            drop_end_h: 42.0,
            drop_factor: 1.0,
            solar_boost: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Nominal,
    VaryingSolar,
    CustomFile,
}

/// Realized demand per absolute step plus the periodic profile used at the
/// horizon end of each forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTimeline {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub horizon: usize,
    /// `n_per + 1` entries.
    pub periodic: Vec<DemandSnapshot>,
    /// Covers steps `0..=steps + horizon`.
    pub realized: Vec<DemandSnapshot>,
}

impl ScenarioTimeline {
    pub fn n_per(&self) -> usize {
        self.periodic.len() - 1
    }

    pub fn steps(&self) -> usize {
        self.realized.len() - self.horizon - 1
    }

    /// `d(0..=M | k)`: realized demand for `i < M`, the periodic demand at `i = M`.
    pub fn forecast(&self, k: usize) -> Vec<DemandSnapshot> {
        let m = self.horizon;
        let mut out: Vec<DemandSnapshot> = self.realized[k..k + m].to_vec();
        out.push(self.periodic[(k + m) % self.n_per()].clone());
        out
    }

    /// The periodic profile repeated over the run.
    pub fn nominal(periodic: &[DemandSnapshot], steps: usize, horizon: usize) -> Self {
        let n = periodic.len() - 1;
        Self {
            kind: ScenarioKind::Nominal,
            seed: 0,
            horizon,
            periodic: periodic.to_vec(),
            realized: (0..=steps + horizon).map(|t| periodic[t % n].clone()).collect(),
        }
    }
}

/// Perturb `base` (a nominal profile of `n_per + 1` entries) over `steps + horizon + 1` steps.
/// Step 0 is left unperturbed.
#[allow(clippy::too_many_arguments)]
pub fn make_perturbed_profile(
    base: &[DemandSnapshot],
    load_bus: usize,
    pv_bus: Option<usize>,
    dt: f64,
    steps: usize,
    horizon: usize,
    seed: u64,
    params: &PerturbationParams,
) -> Result<ScenarioTimeline, ScenarioError> {
    if base.len() < 2 || base[0] != base[base.len() - 1] {
        return Err(ScenarioError::Invalid("base profile must be periodic with n_per + 1 entries".into()));
    }
    if params.load_noise < 0.0 || params.pv_noise < 0.0 || params.drop_factor < 0.0 || params.solar_boost < 0.0 {
        return Err(ScenarioError::Invalid("perturbation magnitudes must be non-negative".into()));
    }
    let n = base.len() - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut realized = Vec::with_capacity(steps + horizon + 1);
    // Step 0 stays on the periodic demand: the initial state was set up for it.
    realized.push(base[0].clone());
    for t in 1..=steps + horizon {
        let mut d = base[t % n].clone();
        let hour = t as f64 * dt;
        let in_window = hour >= params.drop_start_h && hour < params.drop_end_h;
        let load_scale = 1.0 + params.load_noise * rng.random_range(-1.0..=1.0);
        let pv_scale = 1.0 + params.pv_noise * rng.random_range(-1.0..=1.0);
        let (ls, ps) = if in_window {
            (load_scale * params.drop_factor, pv_scale * params.solar_boost)
        } else {
            (load_scale, pv_scale)
        };
        d.p_d[load_bus] *= ls;
        d.q_d[load_bus] *= ls;
        if let Some(pv) = pv_bus {
            d.p_d[pv] *= ps;
        }
        for (bus, &p) in d.p_d.iter().enumerate() {
            if Some(bus) != pv_bus && p < 0.0 {
                return Err(ScenarioError::NegativeDemand { bus, step: t });
            }
        }
        realized.push(d);
    }
    Ok(ScenarioTimeline { kind: ScenarioKind::VaryingSolar, seed, horizon, periodic: base.to_vec(), realized })
}

/// Read realized demand from a CSV with columns `step, bus, p_d, q_d`
/// (1-based buses). Steps missing from the file repeat the periodic profile.
pub fn read_custom_profile(
    path: &std::path::Path,
    periodic: &[DemandSnapshot],
    steps: usize,
    horizon: usize,
) -> Result<ScenarioTimeline, ScenarioError> {
    #[derive(Deserialize)]
    struct Entry {
        step: usize,
        bus: usize,
        p_d: f64,
        q_d: f64,
    }
    let mut base = ScenarioTimeline::nominal(periodic, steps, horizon);
    let mut reader = csv::Reader::from_path(path).map_err(|e| ScenarioError::Invalid(format!("{}: {e}", path.display())))?;
    for row in reader.deserialize() {
        let e: Entry = row.map_err(|e| ScenarioError::Invalid(format!("{}: {e}", path.display())))?;
        let n_buses = periodic[0].p_d.len();
        if e.bus == 0 || e.bus > n_buses {
            return Err(ScenarioError::Invalid(format!("bus {} not in 1..={n_buses}", e.bus)));
        }
        if let Some(d) = base.realized.get_mut(e.step) {
            d.p_d[e.bus - 1] = e.p_d;
            d.q_d[e.bus - 1] = e.q_d;
        }
    }
    base.kind = ScenarioKind::CustomFile;
    Ok(base)
}

/// Inputs shared by all scenario sources.
#[derive(Debug, Clone)]
pub struct ScenarioContext {
    pub periodic: Vec<DemandSnapshot>,
    pub load_bus: usize,
    pub pv_bus: Option<usize>,
    pub dt: f64,
    pub steps: usize,
    pub horizon: usize,
    pub seed: u64,
    pub perturbation: PerturbationParams,
    pub file: Option<PathBuf>,
}

pub trait ScenarioSource: Send + Sync {
    fn name(&self) -> &'static str;
    fn build(&self, ctx: &ScenarioContext) -> Result<ScenarioTimeline, ScenarioError>;
}

#[derive(Debug, Default)]
pub struct NominalSource;

impl ScenarioSource for NominalSource {
    fn name(&self) -> &'static str {
        "nominal"
    }

    fn build(&self, ctx: &ScenarioContext) -> Result<ScenarioTimeline, ScenarioError> {
        Ok(ScenarioTimeline::nominal(&ctx.periodic, ctx.steps, ctx.horizon))
    }
}

#[derive(Debug, Default)]
pub struct VaryingSolarSource;

impl ScenarioSource for VaryingSolarSource {
    fn name(&self) -> &'static str {
        "varying-solar"
    }

    fn build(&self, ctx: &ScenarioContext) -> Result<ScenarioTimeline, ScenarioError> {
        make_perturbed_profile(
            &ctx.periodic,
            ctx.load_bus,
            ctx.pv_bus,
            ctx.dt,
            ctx.steps,
            ctx.horizon,
            ctx.seed,
            &ctx.perturbation,
        )
    }
}

#[derive(Debug, Default)]
pub struct CustomFileSource;

impl ScenarioSource for CustomFileSource {
    fn name(&self) -> &'static str {
        "custom-file"
    }

    fn build(&self, ctx: &ScenarioContext) -> Result<ScenarioTimeline, ScenarioError> {
        let path = ctx.file.as_ref().ok_or_else(|| ScenarioError::Invalid("custom-file needs a demand file".into()))?;
        read_custom_profile(path, &ctx.periodic, ctx.steps, ctx.horizon)
    }
}

pub fn scenario_sources() -> Registry<dyn ScenarioSource> {
    let mut r: Registry<dyn ScenarioSource> = Registry::new("scenario source");
    r.register("nominal", || Box::new(NominalSource));
    r.register("varying-solar", || Box::new(VaryingSolarSource));
    r.register("custom-file", || Box::new(CustomFileSource));
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MicrogridConfig;

    fn profile() -> (Vec<DemandSnapshot>, NominalProfileParams) {
        let cfg = MicrogridConfig::six_bus();
        let p = cfg.demand.clone();
        (make_nominal_profile(6, 24, 1.0, 5, Some(3), &p).unwrap(), p)
    }

    #[test]
    fn nominal_profile_shape() {
        let (d, p) = profile();
        assert_eq!(d.len(), 25);
        assert_eq!(d[0], d[24]);
        for (j, s) in d.iter().enumerate().take(24) {
            if !(6..=18).contains(&j) {
                assert_eq!(s.p_d[3], 0.0, "PV at night step {j}");
            }
            assert!(s.p_d[3] <= 0.0);
        }
        let mean = d[..24].iter().map(|s| s.p_d[5]).sum::<f64>() / 24.0;
        assert!(d[p.morning_hour as usize].p_d[5] > mean);
        let pf = d[8].p_d[5] / d[8].p_d[5].hypot(d[8].q_d[5]);
        assert!((pf - 0.95).abs() < 1e-12);
    }

    #[test]
    fn period_mismatch_rejected() {
        let (_, p) = profile();
        assert!(matches!(make_nominal_profile(6, 24, 0.5, 5, Some(3), &p), Err(ScenarioError::PeriodMismatch { .. })));
        assert!(make_nominal_profile(6, 48, 0.5, 5, Some(3), &p).is_ok());
    }

    #[test]
    fn perturbed_profile_properties() {
        let (d, _) = profile();
        let cfg = MicrogridConfig::six_bus();
        let a = make_perturbed_profile(&d, 5, Some(3), 1.0, 48, 24, 7, &cfg.perturbation).unwrap();
        let b = make_perturbed_profile(&d, 5, Some(3), 1.0, 48, 24, 7, &cfg.perturbation).unwrap();
        assert_eq!(a, b);
        let zero = make_perturbed_profile(&d, 5, Some(3), 1.0, 48, 24, 7, &PerturbationParams::default()).unwrap();
        assert_eq!(zero.realized, ScenarioTimeline::nominal(&d, 48, 24).realized);
        let day_mean = |k: usize| a.realized[24 * k..24 * (k + 1)].iter().map(|s| s.p_d[5]).sum::<f64>() / 24.0;
        assert!(day_mean(1) < day_mean(0));
        let f = a.forecast(5);
        assert_eq!(f.len(), 25);
        assert_eq!(f[24], d[(5 + 24) % 24]);
        assert_eq!(f[3], a.realized[8]);
        let heavy = PerturbationParams { load_noise: 1.5, ..PerturbationParams::default() };
        assert!(matches!(
            make_perturbed_profile(&d, 5, Some(3), 1.0, 48, 24, 1, &heavy),
            Err(ScenarioError::NegativeDemand { bus: 5, .. })
        ));
    }

    #[test]
    fn nominal_forecasts_shift_consistently() {
        let (d, _) = profile();
        let t = ScenarioTimeline::nominal(&d, 48, 24);
        for k in 0..47 {
            let (a, b) = (t.forecast(k), t.forecast(k + 1));
            for i in 0..24 {
                assert_eq!(a[i + 1], b[i]);
            }
        }
    }

    #[test]
    fn registry_knows_sources() {
        let r = scenario_sources();
        assert_eq!(r.names(), vec!["nominal", "varying-solar", "custom-file"]);
        assert!(r.create("nope").is_err());
    }
}
