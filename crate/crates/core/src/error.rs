use thiserror::Error;

use microgrid_opt::OptError;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("duplicate line between buses {0} and {1}")]
    DuplicateLine(usize, usize),
    #[error("line from bus {0} to itself")]
    SelfLoop(usize),
}

#[derive(Debug, Error)]
pub enum PfError {
    #[error("Newton power flow did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("power flow solution violates bounds at bus {bus}: {what}")]
    OutOfBounds { bus: usize, what: String },
    #[error("no start of the deviation check reached an AC-feasible point")]
    NoFeasiblePoint,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Error)]
pub enum QcError {
    #[error("inverted bounds [{lo}, {hi}]")]
    InvertedBounds { lo: f64, hi: f64 },
    #[error("angle difference box [{lo}, {hi}] must contain 0 and stay within (-pi/2, pi/2)")]
    AngleBox { lo: f64, hi: f64 },
    #[error("bus {bus} needs finite voltage and angle bounds")]
    MissingBounds { bus: usize },
    #[error("state outside the bound box at bus {bus}: {what}")]
    OutOfBox { bus: usize, what: String },
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("switch sequence parity does not match on-state change from {on_start} to {on_end}")]
    Parity { on_start: u8, on_end: u8 },
    #[error("demand series has {got} entries, expected {want}")]
    DemandLength { got: usize, want: usize },
    #[error(transparent)]
    Qc(#[from] QcError),
    #[error(transparent)]
    Opt(#[from] OptError),
}

#[derive(Debug, Error)]
pub enum NmpcError {
    #[error("periodic problem is infeasible: {0}")]
    Infeasible(String),
    #[error("subproblem at step {step} is infeasible: {detail}")]
    SubproblemInfeasible { step: usize, detail: String },
    #[error("solver stopped without a solution: {0}")]
    NoSolution(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Opt(#[from] OptError),
    #[error(transparent)]
    Pf(#[from] PfError),
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("period of {n_per} steps at dt = {dt} h does not cover 24 h")]
    PeriodMismatch { n_per: usize, dt: f64 },
    #[error("perturbation makes demand negative at bus {bus}, step {step}")]
    NegativeDemand { bus: usize, step: usize },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Opt(#[from] OptError),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed file: {0}")]
    Format(String),
}
