use thiserror::Error;

/// Errors raised anywhere in the analysis pipeline.
#[derive(Debug, Error)]
pub enum GridError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("duplicate bus id \"{0}\"")]
    DuplicateBus(String),
    #[error("unknown bus \"{bus}\" referenced by line {line}")]
    UnknownBus { bus: String, line: usize },
    #[error("invalid value for {field}: {reason}")]
    InvalidValue { field: String, reason: String },
    #[error("heterogeneous R/X ratio: common rho = {rho:.6}, offending lines: {offending}")]
    HeterogeneousRho { rho: f64, offending: String },
    #[error("droop ratio m/n is not uniform across inverters: {0}")]
    NonUniformDroopRatio(String),
    #[error("line {0} has zero reactance")]
    ZeroReactance(usize),
    #[error("eliminated block is singular: isolated eliminated component {{{}}}", .0.join(", "))]
    IsolatedComponent(Vec<String>),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("droop matrix must be diagonal with positive entries: {0}")]
    InvalidDroopMatrix(String),
    #[error("spectrum has a negative eigenvalue {0:e}; the weighted susceptance matrix is not positive semidefinite")]
    NegativeSpectrum(f64),
    #[error("mu must be non-negative, got {0}")]
    NegativeMu(f64),
    #[error("{0}")]
    Domain(String),
    #[error("no finite stability boundary in search range (mu <= {0})")]
    NoBoundary(f64),
    #[error("eigenvalue {0} is degenerate; subspace sensitivity is not supported")]
    Degenerate(usize),
    #[error("sensitivity only for retained lines (line {0} touches an eliminated node)")]
    EliminatedLine(usize),
    #[error("eigenvalue crossing within the finite-difference step for cluster {0}")]
    EigenvalueCrossing(usize),
    #[error("eigensolver did not converge: {0}")]
    NonConvergence(String),
    #[error("decoupling hypotheses not satisfied: {0}")]
    Hypothesis(String),
    #[error("time step too large for stiffness: |lambda|max * dt = {product:.3} > 2.5; try dt <= {suggested:.3e}")]
    StepTooLarge { product: f64, suggested: f64 },
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("parameter not found: {0}")]
    ParameterNotFound(String),
}

pub type Result<T> = std::result::Result<T, GridError>;

impl GridError {
    /// Stable snake_case name of the variant, for machine-readable output.
    pub fn kind(&self) -> &'static str {
        match self {
            GridError::Syntax { .. } => "syntax",
            GridError::Io { .. } => "io",
            GridError::Schema(_) => "schema",
            GridError::DuplicateBus(_) => "duplicate_bus",
            GridError::UnknownBus { .. } => "unknown_bus",
            GridError::InvalidValue { .. } => "invalid_value",
            GridError::HeterogeneousRho { .. } => "heterogeneous_rho",
            GridError::NonUniformDroopRatio(_) => "non_uniform_droop_ratio",
            GridError::ZeroReactance(_) => "zero_reactance",
            GridError::IsolatedComponent(_) => "isolated_component",
            GridError::Dimension(_) => "dimension",
            GridError::InvalidDroopMatrix(_) => "invalid_droop_matrix",
            GridError::NegativeSpectrum(_) => "negative_spectrum",
            GridError::NegativeMu(_) => "negative_mu",
            GridError::Domain(_) => "domain",
            GridError::NoBoundary(_) => "no_boundary",
            GridError::Degenerate(_) => "degenerate",
            GridError::EliminatedLine(_) => "eliminated_line",
            GridError::EigenvalueCrossing(_) => "eigenvalue_crossing",
            GridError::NonConvergence(_) => "non_convergence",
            GridError::Hypothesis(_) => "hypothesis",
            GridError::StepTooLarge { .. } => "step_too_large",
            GridError::Scenario(_) => "scenario",
            GridError::ParameterNotFound(_) => "parameter_not_found",
        }
    }
}
