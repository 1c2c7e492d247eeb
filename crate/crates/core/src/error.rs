use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("routing loop detected for service {service}")]
    LoopDetected { service: usize },

    #[error("infeasible load on {location}: load {load} >= capacity {capacity}")]
    InfeasibleLoad {
        location: String,
        load: f64,
        capacity: f64,
    },

    #[error("flow fixed point did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergent { iterations: usize, residual: f64 },

    #[error("tunneling feedback unstable on link {link}: B = {gain}")]
    FeedbackUnstable { link: usize, gain: f64 },

    #[error("no feasible placement: {0}")]
    NoFeasiblePlacement(String),

    #[error("node {node} cannot reach any host of service {service}")]
    UnreachableHost { node: usize, service: usize },

    #[error("message protocol stalled in phase {phase} with {pending} pending node-services")]
    Stalled { phase: u8, pending: usize },

    #[error("file not found: {0}")]
    FileNotFound(String),

    #[error("graph still disconnected after {0} retries")]
    DisconnectedAfterRetries(usize),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
