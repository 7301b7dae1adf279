use thiserror::Error;

/// Errors produced by the estimation, simulation and bound-evaluation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("alphabet size {0} is out of range (must be 2..=256)")]
    InvalidAlphabet(usize),

    #[error("symbol {symbol} at position {position} is out of range for alphabet size {alphabet_size}")]
    SymbolOutOfRange {
        symbol: usize,
        position: usize,
        alphabet_size: usize,
    },

    #[error("sample is empty")]
    EmptySample,

    #[error("value {value} is outside the domain of {what}")]
    Domain { what: &'static str, value: f64 },

    #[error("window of length {window} is shorter than string depth {depth}")]
    EmptyWindow { depth: usize, window: usize },

    #[error("order {k} is out of range for a sample of length {n} (need {requirement})")]
    OrderOutOfRange {
        k: usize,
        n: usize,
        requirement: &'static str,
    },

    #[error("|A|^{k} overflows 64-bit integers; the largest representable order is {max_k}")]
    OrderOverflow { k: usize, max_k: usize },

    #[error("capacity exceeded: {what} needs {needed} but the budget is {budget}; {hint}")]
    Capacity {
        what: &'static str,
        needed: u128,
        budget: u128,
        hint: &'static str,
    },

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("missing constants: {}", .0.join(", "))]
    MissingConstants(Vec<&'static str>),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("optimality certificate failed (residual {0:e})")]
    Certificate(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
