//! Files written by runs: JSON for references and full records, a CSV table of
//! the closed loop, and a plain-text summary.
//!
//! # CSV columns
//!
//! One row per simulated step `k`, describing the interval `[t_k, t_k+1)`:
//!
//! | column | content |
//! |---|---|
//! | `step`, `time_h` | step index and `k * dt` |
//! | `load_p`, `load_q` | total positive active / reactive demand |
//! | `pv_p` | PV infeed (negated negative active demand) |
//! | `p_g[name]`, `q_g[name]`, `on[name]`, `counter[name]` | generator state at `t_k` |
//! | `switch[name]` | switch applied at `t_k` (0/1) |
//! | `p_b[name]`, `q_b[name]`, `soc[name]` | battery state at `t_k` |
//! | `stage_cost`, `cumulative_cost` | cost of the interval and running sum |
//! | `v_check` | deviation check of the setpoint reached at `t_k+1` (empty when off) |
//! | `distance` | squared distance of the state at `t_k` to the reference |
//! | `status`, `gap`, `nodes`, `solve_seconds` | subproblem solve |

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dispatch::DispatchParams;
use crate::error::IoError;
use crate::nmpc::ClosedLoopRecord;

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub step: usize,
    pub time_h: f64,
    pub load_p: f64,
    pub load_q: f64,
    pub pv_p: f64,
    pub p_g: Vec<f64>,
    pub q_g: Vec<f64>,
    pub on: Vec<bool>,
    pub counter: Vec<u32>,
    pub switch: Vec<bool>,
    pub p_b: Vec<f64>,
    pub q_b: Vec<f64>,
    pub soc: Vec<f64>,
    pub stage_cost: f64,
    pub cumulative_cost: f64,
    pub v_check: Option<f64>,
    pub distance: f64,
    pub status: String,
    pub gap: f64,
    pub nodes: usize,
    pub solve_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub generators: Vec<String>,
    pub batteries: Vec<String>,
    pub rows: Vec<TableRow>,
}

impl Table {
    pub fn from_record(rec: &ClosedLoopRecord, params: &DispatchParams, dt: f64) -> Self {
        let rows = rec
            .steps
            .iter()
            .map(|s| {
                let load_p = s.demand.p_d.iter().filter(|&&p| p > 0.0).sum();
                let pv_p = -s.demand.p_d.iter().filter(|&&p| p < 0.0).sum::<f64>();
                TableRow {
                    step: s.step,
                    time_h: s.step as f64 * dt,
                    load_p,
                    load_q: s.demand.q_d.iter().filter(|&&q| q > 0.0).sum(),
                    pv_p,
                    p_g: s.state.p_g.clone(),
                    q_g: s.state.q_g.clone(),
                    on: s.state.on.clone(),
                    counter: s.state.counter.clone(),
                    switch: s.input.switch.clone(),
                    p_b: s.state.p_b.clone(),
                    q_b: s.state.q_b.clone(),
                    soc: s.state.soc.clone(),
                    stage_cost: s.stage_cost,
                    cumulative_cost: s.cumulative_cost,
                    v_check: s.v_check,
                    distance: s.distance,
                    status: s.status.clone(),
                    gap: s.gap,
                    nodes: s.nodes,
                    solve_seconds: s.solve_seconds,
                }
            })
            .collect();
        Self {
            generators: params.generators.iter().map(|g| g.name.clone()).collect(),
            batteries: params.batteries.iter().map(|b| b.name.clone()).collect(),
            rows,
        }
    }

    fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["step", "time_h", "load_p", "load_q", "pv_p"].map(String::from).to_vec();
        for g in &self.generators {
            for c in ["p_g", "q_g", "on", "counter", "switch"] {
                h.push(format!("{c}[{g}]"));
            }
        }
        for b in &self.batteries {
            for c in ["p_b", "q_b", "soc"] {
                h.push(format!("{c}[{b}]"));
            }
        }
        h.extend(["stage_cost", "cumulative_cost", "v_check", "distance", "status", "gap", "nodes", "solve_seconds"].map(String::from));
        h
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), IoError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.header())?;
        let b = |x: bool| (x as u8).to_string();
        for r in &self.rows {
            let mut rec: Vec<String> =
                vec![r.step.to_string(), r.time_h.to_string(), r.load_p.to_string(), r.load_q.to_string(), r.pv_p.to_string()];
            for l in 0..self.generators.len() {
                rec.extend([r.p_g[l].to_string(), r.q_g[l].to_string(), b(r.on[l]), r.counter[l].to_string(), b(r.switch[l])]);
            }
            for l in 0..self.batteries.len() {
                rec.extend([r.p_b[l].to_string(), r.q_b[l].to_string(), r.soc[l].to_string()]);
            }
            rec.extend([
                r.stage_cost.to_string(),
                r.cumulative_cost.to_string(),
                r.v_check.map(|v| v.to_string()).unwrap_or_default(),
                r.distance.to_string(),
                r.status.clone(),
                r.gap.to_string(),
                r.nodes.to_string(),
                r.solve_seconds.to_string(),
            ]);
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self, IoError> {
        let mut rd = csv::Reader::from_path(path)?;
        let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
        let names = |prefix: &str| -> Vec<String> {
            header
                .iter()
                .filter_map(|h| h.strip_prefix(prefix).and_then(|s| s.strip_prefix('[')).and_then(|s| s.strip_suffix(']')))
                .map(String::from)
                .collect()
        };
        let mut table = Self { generators: names("p_g"), batteries: names("p_b"), rows: Vec::new() };
        if header != table.header() {
            return Err(IoError::Format("unexpected CSV header".into()));
        }
        for rec in rd.records() {
            let rec = rec?;
            let mut it = rec.iter().map(String::from);
            let mut next = || it.next().ok_or_else(|| IoError::Format("short CSV row".into()));
            fn num<T: std::str::FromStr>(s: String) -> Result<T, IoError> {
                s.parse().map_err(|_| IoError::Format(format!("bad number '{s}'")))
            }
            let flag = |s: String| -> Result<bool, IoError> {
                match s.as_str() {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    _ => Err(IoError::Format(format!("bad flag '{s}'"))),
                }
            };
            let mut row = TableRow {
                step: num(next()?)?,
                time_h: num(next()?)?,
                load_p: num(next()?)?,
                load_q: num(next()?)?,
                pv_p: num(next()?)?,
                p_g: vec![],
                q_g: vec![],
                on: vec![],
                counter: vec![],
                switch: vec![],
                p_b: vec![],
                q_b: vec![],
                soc: vec![],
                stage_cost: 0.0,
                cumulative_cost: 0.0,
                v_check: None,
                distance: 0.0,
                status: String::new(),
                gap: 0.0,
                nodes: 0,
                solve_seconds: 0.0,
            };
            for _ in &table.generators {
                row.p_g.push(num(next()?)?);
                row.q_g.push(num(next()?)?);
                row.on.push(flag(next()?)?);
                row.counter.push(num(next()?)?);
                row.switch.push(flag(next()?)?);
            }
            for _ in &table.batteries {
                row.p_b.push(num(next()?)?);
                row.q_b.push(num(next()?)?);
                row.soc.push(num(next()?)?);
            }
            row.stage_cost = num(next()?)?;
            row.cumulative_cost = num(next()?)?;
            let v = next()?;
            row.v_check = if v.is_empty() { None } else { Some(num(v)?) };
            row.distance = num(next()?)?;
            row.status = next()?;
            row.gap = num(next()?)?;
            row.nodes = num(next()?)?;
            row.solve_seconds = num(next()?)?;
            table.rows.push(row);
        }
        Ok(table)
    }
}

/// Aggregate properties of a closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: usize,
    pub n_per: usize,
    pub total_cost: f64,
    /// Cost of each complete period of the run.
    pub period_costs: Vec<f64>,
    pub max_distance: f64,
    pub max_v_check: Option<f64>,
    /// Per generator: most startups in any window of `n_per` realized intervals.
    pub max_window_startups: Vec<u32>,
    /// Per generator: `(first step, length)` of each off run that starts and ends inside the run.
    pub off_runs: Vec<Vec<(usize, usize)>>,
    pub max_gap: f64,
    pub statuses: Vec<(String, usize)>,
    pub solve_seconds: f64,
}

impl RunSummary {
    pub fn from_record(rec: &ClosedLoopRecord, n_per: usize) -> Self {
        let steps = rec.steps.len();
        let period_costs = rec
            .steps
            .chunks(n_per)
            .filter(|c| c.len() == n_per)
            .map(|c| c.iter().map(|s| s.stage_cost).sum())
            .collect();
        let n_gens = rec.final_state.on.len();
        // on[t] for t = 0..=steps
        let on_at = |l: usize, t: usize| if t < steps { rec.steps[t].state.on[l] } else { rec.final_state.on[l] };
        let mut max_window_startups = vec![0; n_gens];
        let mut off_runs = vec![Vec::new(); n_gens];
        for l in 0..n_gens {
            let starts: Vec<u32> = (0..steps).map(|t| (!on_at(l, t) && on_at(l, t + 1)) as u32).collect();
            for a in 0..steps.saturating_sub(n_per - 1).max(1) {
                let n: u32 = starts[a..(a + n_per).min(steps)].iter().sum();
                max_window_startups[l] = max_window_startups[l].max(n);
            }
            let mut t = 1;
            while t <= steps {
                if on_at(l, t - 1) && !on_at(l, t) {
                    let first = t;
                    while t <= steps && !on_at(l, t) {
                        t += 1;
                    }
                    if t <= steps {
                        off_runs[l].push((first, t - first));
                    }
                } else {
                    t += 1;
                }
            }
        }
        let mut statuses: Vec<(String, usize)> = Vec::new();
        for s in &rec.steps {
            match statuses.iter_mut().find(|(k, _)| *k == s.status) {
                Some(e) => e.1 += 1,
                None => statuses.push((s.status.clone(), 1)),
            }
        }
        Self {
            steps,
            n_per,
            total_cost: rec.total_cost(),
            period_costs,
            max_distance: rec.max_distance(),
            max_v_check: rec.steps.iter().filter_map(|s| s.v_check).reduce(f64::max),
            max_window_startups,
            off_runs,
            max_gap: rec.steps.iter().map(|s| s.gap).fold(0.0, f64::max),
            statuses,
            solve_seconds: rec.steps.iter().map(|s| s.solve_seconds).sum(),
        }
    }

    pub fn to_text(&self, params: &DispatchParams) -> String {
        let mut out = String::new();
        let mut line = |s: String| {
            out.push_str(&s);
            out.push('\n');
        };
        line(format!("steps: {} (period {})", self.steps, self.n_per));
        line(format!("total cost: {:.4}", self.total_cost));
        for (d, c) in self.period_costs.iter().enumerate() {
            line(format!("period {} cost: {c:.4}", d + 1));
        }
        line(format!("max distance to reference: {:.3e}", self.max_distance));
        match self.max_v_check {
            Some(v) => line(format!("max v_check: {v:.3e}")),
            None => line("max v_check: not computed".into()),
        }
        for (l, g) in params.generators.iter().enumerate() {
            let runs: Vec<String> = self.off_runs[l].iter().map(|(a, n)| format!("{a}+{n}")).collect();
            line(format!(
                "{}: max startups per window {}, complete off runs [{}]",
                g.name,
                self.max_window_startups[l],
                runs.join(", ")
            ));
        }
        let st: Vec<String> = self.statuses.iter().map(|(s, n)| format!("{s} x{n}")).collect();
        line(format!("subproblem status: {}", st.join(", ")));
        line(format!("max gap: {:.3e}", self.max_gap));
        line(format!("solve time: {:.1} s", self.solve_seconds));
        out
    }
}
