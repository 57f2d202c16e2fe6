use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("division by zero (denominator {0:e})")]
    DivisionByZero(f64),

    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unknown identifier `{name}` at line {line}, column {column}")]
    UnknownIdentifier {
        name: String,
        line: usize,
        column: usize,
    },

    #[error("exponent must be an integer constant (line {line}, column {column})")]
    NonIntegerExponent { line: usize, column: usize },

    #[error("unbound variable index {0}")]
    UnboundVariable(usize),

    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("black-box curve samples do not contract under Richardson extrapolation (last residual {0:e})")]
    NonSmoothSample(f64),

    #[error("dilation scale must be positive, got {0}")]
    NonpositiveScale(f64),

    #[error("bilinear maps differ by a non-symmetric part (residual {0:e})")]
    SkewPartMismatch(f64),

    #[error("chart is not centered at the point (|chart(m)| = {0:e})")]
    NotCentered(f64),

    #[error("frame is degenerate at the point (condition number {0:e})")]
    DegenerateFrame(f64),

    #[error("map is not a change of H-charts (residual {0:e})")]
    NotHChartChange(f64),

    #[error("map does not send H into H' (residual {0:e})")]
    NotHCompatible(f64),

    #[error("integration step underflow (t = {t}, steps = {steps})")]
    StepUnderflow { t: f64, steps: usize },

    #[error("integrator produced a non-finite state")]
    NonFiniteState,

    #[error("curve or flow is not tangent to H (normal residual {0:e})")]
    NotTangentToH(f64),

    #[error("vector field leaves H along the flow line (residual {0:e})")]
    FieldNotInH(f64),

    #[error("geodesic integration blew up")]
    GeodesicBlowup,

    #[error("connection does not preserve H (worst residual {0:e})")]
    NotHPreserving(f64),

    #[error("chart family is not a family of H-charts (residual {0:e})")]
    InvalidHChartFamily(f64),

    #[error("arrow outside the exponential map domain box (norm {0})")]
    OutsideDomain(f64),

    #[error("Newton inversion diverged (residual {0:e})")]
    NewtonDivergence(f64),

    #[error("groupoid elements are not composable: {0}")]
    NotComposable(String),

    #[error("unknown name `{0}`")]
    UnknownName(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Source position `(line, column)` of a parse or schema error; schema
    /// errors carry only a line.
    pub fn position(&self) -> Option<(usize, Option<usize>)> {
        match self {
            Error::Syntax { line, column, .. }
            | Error::UnknownIdentifier { line, column, .. }
            | Error::NonIntegerExponent { line, column } => Some((*line, Some(*column))),
            Error::Schema { line, .. } => Some((*line, None)),
            _ => None,
        }
    }
}
