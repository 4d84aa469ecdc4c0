use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matrix decomposition did not converge")]
    SvdNoConvergence,

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    /// The linear term has a component outside the range of the Hessian.
    /// `directions` are the null-space eigenvectors along which the objective decreases
    /// without bound, `components` the projection of the linear term onto each.
    #[error(
        "objective is unbounded below along {} null-space direction(s) (residual {residual:e})",
        directions.len()
    )]
    Unbounded {
        directions: Vec<Vec<f64>>,
        components: Vec<f64>,
        residual: f64,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("function class is empty")]
    EmptyClass,

    #[error("every member of the class has zero Bellman error under both distributions")]
    DegenerateConcentrability,

    #[error("version space of policy {policy} is empty at epsilon {epsilon:e}")]
    EmptyVersionSpace { policy: usize, epsilon: f64 },

    #[error("every policy has an empty version space")]
    AllVersionSpacesEmpty,

    #[error("cannot step a terminal cartpole state")]
    TerminalState,

    #[error("parameter norm {norm:e} exceeded divergence limit {limit:e} in sweep {sweep}")]
    Divergence { norm: f64, limit: f64, sweep: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("cache mismatch: {0}")]
    CacheMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
