use thiserror::Error;

pub type Result<T> = std::result::Result<T, FedSeaError>;

#[derive(Debug, Error)]
pub enum FedSeaError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("step size violates theory precondition: eta = {eta} exceeds cap {cap}")]
    StepSizePrecondition { eta: f64, cap: f64 },

    #[error("unsupported distribution: {0}")]
    UnsupportedDistribution(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite vector component at index {index}")]
    NonFinite { index: usize },

    #[error("analytic expectation unavailable for the {0} family; use the Monte Carlo oracle")]
    AnalyticUnavailable(&'static str),

    #[error("bounded-variance assumption violated on unbounded domain")]
    UnboundedVariance,

    #[error("zeta undefined on unbounded domain for x-dependent gradient gaps")]
    ZetaUndefined,

    #[error("index out of range: t = {t}, m = {m} (horizon {horizon}, clients {clients})")]
    IndexOutOfRange {
        t: usize,
        m: usize,
        horizon: usize,
        clients: usize,
    },

    #[error("divergence at t = {t}: eta_t = {eta}, |x_t| = {norm}")]
    Divergence { t: usize, eta: f64, norm: f64 },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("comparator solver failure: K_t^2 = {value} < 0 at t = {t}")]
    NegativeTemporalGap { t: usize, value: f64 },

    #[error("insufficient Monte Carlo budget: {0}")]
    InsufficientBudget(String),

    #[error("audit precondition violated: {0}")]
    AuditPrecondition(String),

    #[error("audit failed: {0}")]
    AuditFailed(String),

    #[error("degenerate fit data: {0}")]
    DegenerateFit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FedSeaError {
    /// Process exit code for the CLI: 2 for configuration problems, 3 for
    /// divergence, 4 for audit failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            FedSeaError::Config(_)
            | FedSeaError::StepSizePrecondition { .. }
            | FedSeaError::UnsupportedDistribution(_)
            | FedSeaError::DimensionMismatch { .. }
            | FedSeaError::NonFinite { .. }
            | FedSeaError::UnboundedVariance
            | FedSeaError::ZetaUndefined
            | FedSeaError::Json(_) => 2,
            FedSeaError::Divergence { .. } => 3,
            FedSeaError::AuditFailed(_) | FedSeaError::AuditPrecondition(_) => 4,
            _ => 1,
        }
    }
}
