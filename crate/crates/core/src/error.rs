//! Error type shared by all engine modules.

use thiserror::Error;

/// Everything that can go wrong while setting up or running a simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid trap parameter: {0}")]
    InvalidTrap(String),

    #[error("level ladder is non-monotone at index {index}: e[{index}] = {energy} <= e[{prev}] = {prev_energy}")]
    NonMonotoneLadder {
        index: usize,
        energy: f64,
        prev: usize,
        prev_energy: f64,
    },

    #[error("trap holds {capacity} atoms in {levels} levels but {requested} were requested")]
    CapacityExceeded {
        requested: f64,
        capacity: f64,
        levels: usize,
    },

    #[error("thermal tail spills past the level cutoff: occupation at the top level is {top_occupation:.3e} (limit {limit:.1e}); raise n_max or lower the temperature")]
    TailTruncated { top_occupation: f64, limit: f64 },

    #[error("invalid matrix-element argument: {0}")]
    InvalidFcArgument(String),

    #[error("table would need {needed_mb:.0} MB but the budget is {budget_mb:.0} MB")]
    MemoryBudget { needed_mb: f64, budget_mb: f64 },

    #[error("bisection bracket does not contain a root: f({lo}) and f({hi}) have the same sign while solving for {what}")]
    BracketFailure { what: String, lo: f64, hi: f64 },

    #[error("no solution: {0}")]
    NoSolution(String),

    #[error("integration aborted: {0}")]
    IntegrationAborted(String),

    #[error("invalid pulse parameter: {0}")]
    InvalidPulse(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
