use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid resolution {0} is below the minimum of 17 nodes per axis")]
    ResolutionTooSmall(usize),
    #[error("grid resolution {0} is even; an odd node count is required so the center is a node")]
    EvenResolution(usize),
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("field left the plurisubharmonic cone: eigenvalue {eigenvalue:.3e} at node {node}")]
    NotPsh { node: usize, eigenvalue: f64 },

    #[error("syntax error at column {column}: {message}")]
    ExpressionSyntax { column: usize, message: String },
    #[error("expression domain error: {0}")]
    ExpressionDomain(String),

    #[error("mollifier radius {delta} exceeds half the atom distance to the boundary ({limit})")]
    MollifierTooWide { delta: f64, limit: f64 },

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NewtonDiverged { iterations: usize, residual: f64 },
    #[error("time step {0} exceeds the admissible maximum 0.1")]
    StepTooLarge(f64),
    #[error("linear solver stalled after {iterations} iterations (relative residual {residual:.3e})")]
    LinearSolver { iterations: usize, residual: f64 },

    #[error("Lelong radii out of range: {0}")]
    RadiiOutOfRange(String),

    #[error("quadrature for Gram entry ({row}, {col}) did not stabilize (relative change {change:.3e})")]
    QuadratureNotConverged { row: usize, col: usize, change: f64 },
    #[error("Gram matrix is not positive definite on the kept monomials")]
    GramNotPd,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("wrong regime: {0}")]
    WrongRegime(String),
    #[error("the decay coefficient A must be positive for the time rescaling")]
    AIsZero,
    #[error("requested time {0} is outside the solved range")]
    TimeOutOfRange(f64),

    #[error("config syntax error at line {line}, column {column}: {message}")]
    ConfigSyntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown config key: {0}")]
    UnknownKey(String),
    #[error("config constraint violated: {0}")]
    Constraint(String),

    #[error("field file has a bad magic number")]
    BadMagic,
    #[error("field file format version {0} is not supported")]
    VersionMismatch(u32),
    #[error("field file is truncated")]
    TruncatedFile,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
