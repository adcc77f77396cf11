use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate model denominator at vx = {vx}")]
    DegenerateDenominator { vx: f64 },
    #[error("insufficient excitation: var(a) = {var_a:.3e}, var(delta) = {var_delta:.3e}")]
    InsufficientExcitation { var_a: f64, var_delta: f64 },
    #[error("parameter identification diverged: {0}")]
    IdentificationDiverged(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("lane map contains no lanes")]
    EmptyMap,
    #[error("no route between the start and target waypoints")]
    NoRoute,
    #[error("pose ({x:.2}, {y:.2}) is farther than {radius} m from every waypoint")]
    SnapFailed { x: f64, y: f64, radius: f64 },
    #[error("spline knots must have strictly increasing parameters")]
    DegenerateKnots,

    #[error("coincident centers (distance {0:.3e} m)")]
    CoincidentCenters(f64),

    #[error("expected {expected} states, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("need at least {min} training records, got {got}")]
    TooFewRecords { min: usize, got: usize },
    #[error("gram matrix not positive definite even with jitter {jitter:.1e}")]
    SingularGram { jitter: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),
    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    /// Stable machine-readable category, used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::DegenerateDenominator { .. } => "degenerate_denominator",
            Error::InsufficientExcitation { .. } => "insufficient_excitation",
            Error::IdentificationDiverged(_) => "identification_diverged",
            Error::Precondition(_) => "precondition",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::EmptyMap => "empty_map",
            Error::NoRoute => "no_route",
            Error::SnapFailed { .. } => "snap_failed",
            Error::DegenerateKnots => "degenerate_knots",
            Error::CoincidentCenters(_) => "coincident_centers",
            Error::ArityMismatch { .. } => "arity_mismatch",
            Error::TooFewRecords { .. } => "too_few_records",
            Error::SingularGram { .. } => "singular_gram",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::Scenario(_) => "scenario",
            Error::Format(_) | Error::Csv(_) | Error::Json(_) | Error::TomlDe(_) | Error::TomlSer(_) => "format",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
