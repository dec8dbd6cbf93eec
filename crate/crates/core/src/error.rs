use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid feature map: {0}")]
    InvalidFeatureMap(String),

    #[error("policy parameters contain a non-finite entry at ({feature}, {action})")]
    NonFiniteTheta { feature: usize, action: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("linear solve failed: {0}")]
    Solve(String),

    #[error("{what} did not converge after {iters} iterations{hint}")]
    NoConvergence {
        what: &'static str,
        iters: usize,
        hint: String,
    },

    #[error("invalid environment spec: {0}")]
    InvalidEnv(String),

    #[error("negative probability {value} at state {state}")]
    NegativeProbability { state: usize, value: f64 },

    #[error("non-finite log density {value} at state {state}")]
    NonFiniteDensity { state: usize, value: f64 },

    #[error("entropy gradient is singular: state {0} has zero occupancy under lambda > 0")]
    SingularEntropy(usize),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("learning-rate schedules violate the timescale conditions: {}", .0.join("; "))]
    Schedule(Vec<String>),

    #[error("invalid config: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
