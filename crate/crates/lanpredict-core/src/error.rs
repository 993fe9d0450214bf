use thiserror::Error;

/// Errors produced by model construction, simulation, estimation and the
/// Monte Carlo drivers.
#[derive(Debug, Error)]
pub enum Error {
    /// The drift parameter left the stationarity region `alpha > |beta|`.
    #[error("parameter out of domain: need alpha > |beta|, got alpha={alpha}, beta={beta}")]
    ParameterDomain { alpha: f64, beta: f64 },

    /// A time grid was requested with a nonpositive step, too few nodes, or
    /// a horizon that does not sit on the grid.
    #[error("invalid time grid: {0}")]
    Grid(String),

    /// A scalar input (horizon, box bound, ...) violated its domain.
    #[error("invalid input: {0}")]
    Domain(String),

    /// The likelihood maximizer did not converge within the iteration budget,
    /// or the data were too degenerate to estimate from.
    #[error("estimation failed after {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    Estimation { iterations: u32, gradient_norm: f64 },

    /// An experiment configuration failed validation.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Output file handling failed.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
