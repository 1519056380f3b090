use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use microgrid_core::acpf::{deviation_check, DeviationOptions, DeviationResult};
use microgrid_core::config::MicrogridConfig;
use microgrid_core::dispatch::{DispatchParams, DispatchState};
use microgrid_core::error::{ConfigError, DispatchError, IoError, NmpcError, PfError, ScenarioError};
use microgrid_core::grid::{build_admittance, DemandSnapshot, MicrogridSpec, PowerSetpoint};
use microgrid_core::io::{load_json, save_json, RunSummary, Table};
use microgrid_core::nmpc::{
    build_subproblem, check_feasible, closed_loop_simulate, device_boxes, reference_candidate, solve_periodic_ocp,
    solve_subproblem, NmpcConfig, PeriodicOptions, PeriodicReference, SwitchHistory,
};
use microgrid_core::scenario::{make_nominal_profile, scenario_sources, ScenarioContext, ScenarioTimeline};
use microgrid_opt::{dump, BnBOptions, OptError};

#[derive(Parser)]
#[command(name = "microgrid", version, about = "Periodic references and closed-loop NMPC dispatch for AC microgrids")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Grid and device configuration (TOML). Defaults to the shipped 6-bus grid.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for scenario noise and deviation-check restarts.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sampling interval in hours.
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// NMPC prediction horizon in intervals.
    #[arg(long, global = true)]
    horizon: Option<usize>,
    /// Relative optimality gap for branch-and-bound.
    #[arg(long, global = true)]
    gap: Option<f64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Node selection rule (best-first, depth-first, dive-then-best).
    #[arg(long, global = true, default_value = "best-first")]
    node_order: String,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the periodic optimal control problem and write the reference.
    Periodic(PeriodicArgs),
    /// Build and solve one NMPC subproblem, writing the program and solution.
    Nmpc(NmpcArgs),
    /// Run the power-flow deviation check on a setpoint file.
    CheckPf(CheckPfArgs),
    /// Run the closed loop and write CSV, JSON and a summary.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct PeriodicArgs {
    /// Branch-and-bound node limit for the periodic problem.
    #[arg(long, default_value_t = 300)]
    node_limit: usize,
    /// Depth-first nodes before switching to the node order.
    #[arg(long, default_value_t = 100)]
    dive: usize,
}

#[derive(Args)]
struct ReferenceArgs {
    /// Precomputed reference; solved on the fly when absent.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Node limit when solving the reference on the fly.
    #[arg(long, default_value_t = 300)]
    periodic_node_limit: usize,
}

#[derive(Args)]
struct SubproblemArgs {
    /// Branch-and-bound node limit per subproblem (0 for none).
    #[arg(long, default_value_t = 60)]
    node_limit: usize,
    /// Depth-first nodes before switching to the node order.
    #[arg(long, default_value_t = 40)]
    dive: usize,
    /// Skip the deviation check on applied setpoints.
    #[arg(long)]
    no_deviation_check: bool,
}

#[derive(Args)]
struct ScenarioArgs {
    /// nominal, varying-solar or custom-file.
    #[arg(long, default_value = "nominal")]
    scenario: String,
    /// Demand CSV (step,bus,p_d,q_d) for the custom-file scenario.
    #[arg(long)]
    demand_file: Option<PathBuf>,
}

#[derive(Args)]
struct NmpcArgs {
    #[command(flatten)]
    reference: ReferenceArgs,
    #[command(flatten)]
    solve: SubproblemArgs,
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Absolute step of the subproblem; the state is the reference state there.
    #[arg(long, default_value_t = 0)]
    step: usize,
}

#[derive(Args)]
struct CheckPfArgs {
    /// JSON file with `setpoint`, `demand` and optionally `on`.
    setpoint: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    reference: ReferenceArgs,
    #[command(flatten)]
    solve: SubproblemArgs,
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Closed-loop steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Suppress per-step progress lines.
    #[arg(long)]
    quiet: bool,
}

/// Setpoint file of `check-pf`.
#[derive(Debug, Serialize, Deserialize)]
struct SetpointFile {
    setpoint: PowerSetpoint,
    demand: DemandSnapshot,
    /// Generator on-states; inferred from `p_g > 0` when absent.
    #[serde(default)]
    on: Option<Vec<bool>>,
}

struct Setup {
    cfg: MicrogridConfig,
    spec: MicrogridSpec,
    params: DispatchParams,
    dt: f64,
    n_per: usize,
    horizon: usize,
    seed: u64,
    gap: f64,
    periodic_demand: Vec<DemandSnapshot>,
    load_bus: usize,
    pv_bus: Option<usize>,
}

impl Setup {
    fn new(c: &Common) -> Result<Self> {
        let cfg = match &c.config {
            Some(p) => MicrogridConfig::load(p)?,
            None => MicrogridConfig::six_bus(),
        };
        let dt = c.dt.unwrap_or(cfg.run.dt);
        let n_per = if c.dt.is_some() { (24.0 / dt).round() as usize } else { cfg.run.n_per };
        let spec = cfg.grid_spec()?;
        let params = cfg.dispatch_params(dt)?;
        let (load_bus, pv_bus) = cfg.demand_buses()?;
        let periodic_demand = make_nominal_profile(spec.n_buses, n_per, dt, load_bus, pv_bus, &cfg.demand)?;
        let gap = c.gap.unwrap_or(cfg.run.gap);
        if !(gap >= 0.0) {
            return Err(ConfigError::Invalid(format!("gap must be non-negative, got {gap}")).into());
        }
        Ok(Self {
            horizon: c.horizon.unwrap_or(cfg.run.horizon),
            seed: c.seed.unwrap_or(cfg.run.seed),
            cfg,
            spec,
            params,
            dt,
            n_per,
            gap,
            periodic_demand,
            load_bus,
            pv_bus,
        })
    }

    fn bnb(&self, c: &Common, node_limit: usize, dive: usize) -> BnBOptions {
        BnBOptions {
            gap_tol: self.gap,
            node_limit: (node_limit > 0).then_some(node_limit),
            dive_nodes: dive,
            node_order: c.node_order.clone(),
            ..BnBOptions::default()
        }
    }

    fn periodic(&self, c: &Common, node_limit: usize, dive: usize) -> Result<PeriodicReference> {
        let opts = PeriodicOptions { bnb: self.bnb(c, node_limit, dive), ..Default::default() };
        Ok(solve_periodic_ocp(&self.spec, &self.params, &self.periodic_demand, self.dt, &opts)?)
    }

    fn reference(&self, c: &Common, args: &ReferenceArgs) -> Result<PeriodicReference> {
        match &args.reference {
            Some(p) => {
                let r: PeriodicReference =
                    load_json(p).with_context(|| format!("reading reference {}", p.display()))?;
                if r.n_per != self.n_per || (r.dt - self.dt).abs() > 1e-12 {
                    return Err(ConfigError::Invalid(format!(
                        "reference has n_per {} and dt {}, run uses {} and {}",
                        r.n_per, r.dt, self.n_per, self.dt
                    ))
                    .into());
                }
                Ok(r)
            }
            None => {
                let r = self.periodic(c, args.periodic_node_limit, 100)?;
                save_json(&c.out.join("reference.json"), &r)?;
                Ok(r)
            }
        }
    }

    fn nmpc_config(&self, c: &Common, args: &SubproblemArgs) -> NmpcConfig {
        let mut cfg = NmpcConfig::new(self.horizon, self.dt);
        cfg.bnb = self.bnb(c, args.node_limit, args.dive);
        cfg.deviation_check = !args.no_deviation_check;
        cfg.deviation = DeviationOptions { seed: self.seed, ..DeviationOptions::default() };
        cfg
    }

    fn scenario(&self, args: &ScenarioArgs, steps: usize) -> Result<ScenarioTimeline> {
        let source = scenario_sources().create(&args.scenario).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let ctx = ScenarioContext {
            periodic: self.periodic_demand.clone(),
            load_bus: self.load_bus,
            pv_bus: self.pv_bus,
            dt: self.dt,
            steps,
            horizon: self.horizon,
            seed: self.seed,
            perturbation: self.cfg.perturbation.clone(),
            file: args.demand_file.clone(),
        };
        Ok(source.build(&ctx)?)
    }
}

fn reference_summary(r: &PeriodicReference, params: &DispatchParams) -> String {
    let mut s = format!(
        "period: {} intervals of {} h\nobjective: {:.6}\nbest bound: {:.6}\ngap: {:.3e}\n",
        r.n_per,
        r.dt,
        r.objective,
        r.best_bound,
        (r.objective - r.best_bound) / r.objective.abs().max(1e-12)
    );
    for (l, g) in params.generators.iter().enumerate() {
        let on: String = r.states.iter().map(|x| if x.on[l] { '#' } else { '.' }).collect();
        s += &format!("{}: {on} startups {} gcmod {}\n", g.name, r.startups_per_period(l), r.gcmod[l]);
    }
    for (l, b) in params.batteries.iter().enumerate() {
        let soc: Vec<String> = r.states.iter().map(|x| format!("{:.2}", x.soc[l])).collect();
        s += &format!("{} soc: {}\n", b.name, soc.join(" "));
    }
    s
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let setup = Setup::new(c)?;
    std::fs::create_dir_all(&c.out).map_err(IoError::from).with_context(|| format!("creating {}", c.out.display()))?;
    match &cli.command {
        Command::Periodic(a) => {
            let r = setup.periodic(c, a.node_limit, a.dive)?;
            save_json(&c.out.join("reference.json"), &r)?;
            let text = reference_summary(&r, &setup.params);
            std::fs::write(c.out.join("periodic_summary.txt"), &text).map_err(IoError::from)?;
            print!("{text}");
        }
        Command::Nmpc(a) => {
            let r = setup.reference(c, &a.reference)?;
            let cfg = setup.nmpc_config(c, &a.solve);
            let scen = setup.scenario(&a.scenario, a.step + 1)?;
            let k = a.step;
            let x0: DispatchState = r.states[k % r.n_per].clone();
            let hist = SwitchHistory::from_reference(&r, k);
            let sub = build_subproblem(&setup.spec, &setup.params, &x0, k, &scen.forecast(k), &r, &hist, &cfg)?;
            let candidate = reference_candidate(&sub.enc, &r, k);
            let report = check_feasible(&sub.enc.program, &candidate, cfg.candidate_tol);
            let sol = solve_subproblem(&sub, Some(candidate), &cfg)?;
            std::fs::write(c.out.join("subproblem.txt"), dump::write_program(&sub.enc.program)).map_err(IoError::from)?;
            let out = serde_json::json!({
                "step": k,
                "status": sol.status.to_string(),
                "objective": sol.objective,
                "best_bound": sol.best_bound,
                "gap": sol.gap,
                "nodes": sol.nodes,
                "x": sol.x,
                "reference_candidate_violations": report.violations,
                "first_input": (!sol.x.is_empty()).then(|| sub.enc.control(&sol.x, 0)),
            });
            save_json(&c.out.join("subproblem_solution.json"), &out)?;
            println!("step {k}: {} objective {:.6} gap {:.3e} nodes {}", sol.status, sol.objective, sol.gap, sol.nodes);
            if !sol.status.has_solution() {
                return Err(NmpcError::SubproblemInfeasible { step: k, detail: format!("status {}", sol.status) }.into());
            }
        }
        Command::CheckPf(a) => {
            let f: SetpointFile = load_json(&a.setpoint).with_context(|| format!("reading {}", a.setpoint.display()))?;
            let on = f.on.clone().unwrap_or_else(|| f.setpoint.p_g.iter().map(|&p| p > 0.0).collect());
            let x = DispatchState {
                p_g: f.setpoint.p_g.clone(),
                q_g: f.setpoint.q_g.clone(),
                on,
                counter: vec![0; f.setpoint.p_g.len()],
                p_b: f.setpoint.p_b.clone(),
                q_b: f.setpoint.q_b.clone(),
                soc: vec![0.0; f.setpoint.p_b.len()],
            };
            if x.on.len() != x.p_g.len() {
                return Err(ConfigError::Invalid("`on` must list every generator".into()).into());
            }
            let y = build_admittance(&setup.spec)?;
            let opts = DeviationOptions { seed: setup.seed, ..DeviationOptions::default() };
            let res: DeviationResult =
                deviation_check(&f.setpoint, &f.demand, &setup.spec, &y, &device_boxes(&setup.params, &x), None, &opts)?;
            save_json(&c.out.join("check_pf.json"), &res)?;
            println!("v_check {:e}", res.v_check);
        }
        Command::Simulate(a) => {
            let r = setup.reference(c, &a.reference)?;
            let cfg = setup.nmpc_config(c, &a.solve);
            let steps = a.steps.unwrap_or(setup.cfg.run.steps);
            let scen = setup.scenario(&a.scenario, steps)?;
            let hist = SwitchHistory::from_reference(&r, 0);
            let quiet = a.quiet;
            let rec = closed_loop_simulate(&setup.spec, &setup.params, &r, &scen, &r.states[0], hist, steps, &cfg, |s| {
                if !quiet {
                    eprintln!(
                        "step {:>3}: {} gap {:.2e} cost {:.3} distance {:.2e} ({:.1} s)",
                        s.step, s.status, s.gap, s.stage_cost, s.distance, s.solve_seconds
                    );
                }
            })?;
            Table::from_record(&rec, &setup.params, setup.dt).write_csv(&c.out.join("records.csv"))?;
            save_json(&c.out.join("records.json"), &rec)?;
            let text = RunSummary::from_record(&rec, setup.n_per).to_text(&setup.params);
            std::fs::write(c.out.join("summary.txt"), &text).map_err(IoError::from)?;
            print!("{text}");
        }
    }
    Ok(())
}

/// Exit codes: 1 internal, 2 configuration, 3 file I/O, 4 infeasible,
/// 5 numerical failure, 6 power flow not converged.
fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    fn opt(e: &OptError) -> (&'static str, u8) {
        match e {
            OptError::NumericalFailure(_) => ("numerical", 5),
            OptError::Io(_) => ("io", 3),
            OptError::UnknownStrategy { .. } | OptError::Parse { .. } => ("config", 2),
            _ => ("internal", 1),
        }
    }
    fn pf(e: &PfError) -> (&'static str, u8) {
        match e {
            PfError::NoConvergence { .. } | PfError::NoFeasiblePoint => ("convergence", 6),
            PfError::OutOfBounds { .. } => ("convergence", 6),
            PfError::Dimension(_) => ("config", 2),
        }
    }
    fn dispatch(e: &DispatchError) -> (&'static str, u8) {
        match e {
            DispatchError::Opt(o) => opt(o),
            _ => ("config", 2),
        }
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<NmpcError>() {
            return match e {
                NmpcError::Infeasible(_) | NmpcError::SubproblemInfeasible { .. } => ("infeasible", 4),
                NmpcError::NoSolution(_) => ("numerical", 5),
                NmpcError::Config(_) => ("config", 2),
                NmpcError::Dispatch(d) => dispatch(d),
                NmpcError::Opt(o) => opt(o),
                NmpcError::Pf(p) => pf(p),
            };
        }
        if let Some(e) = cause.downcast_ref::<ConfigError>() {
            return match e {
                ConfigError::Read { .. } => ("io", 3),
                _ => ("config", 2),
            };
        }
        if let Some(e) = cause.downcast_ref::<ScenarioError>() {
            return match e {
                ScenarioError::Opt(o) => opt(o),
                _ => ("config", 2),
            };
        }
        if cause.downcast_ref::<IoError>().is_some() {
            return ("io", 3);
        }
        if let Some(e) = cause.downcast_ref::<PfError>() {
            return pf(e);
        }
        if let Some(e) = cause.downcast_ref::<OptError>() {
            return opt(e);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return ("io", 3);
        }
        if cause.downcast_ref::<microgrid_core::error::GridError>().is_some() {
            return ("config", 2);
        }
    }
    ("internal", 1)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (category, code) = classify(&e);
            eprintln!("error[{category}]: {e:#}");
            ExitCode::from(code)
        }
    }
}
