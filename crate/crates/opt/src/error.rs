use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptError {
    #[error("invalid program: {0}")]
    InvalidProgram(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("big-M coefficient {given} below the box supremum {required} for row {row}")]
    BigMTooSmall { row: usize, given: f64, required: f64 },
    #[error("big-M undefined for row {row}: unbounded variable box")]
    UnboundedBigM { row: usize },
    #[error("unknown strategy '{name}' (known: {known})")]
    UnknownStrategy { name: String, known: String },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
