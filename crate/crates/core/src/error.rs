use thiserror::Error;

pub type Result<T> = std::result::Result<T, FhnError>;

#[derive(Debug, Error)]
pub enum FhnError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("size mismatch: expected {expected} entries, found {found}")]
    SizeMismatch { expected: usize, found: usize },

    #[error("negative density {value} in cell {cell}")]
    NegativeDensity { cell: usize, value: f64 },

    #[error("kernel under-resolved: length scale {length_scale} is below the cell spacing {spacing}")]
    UnderResolvedKernel { length_scale: f64, spacing: f64 },

    #[error("integration blow-up at t = {time}: non-finite state at index {index}")]
    Blowup { time: f64, index: usize },

    #[error(
        "particle {index} left the (v,w) safety box at t = {time} (|v| or |w| = {value} > {limit}); \
         the characteristic support estimate R(t) <= C2 exp(C1 (1 + 1/eps) t) was violated or the box is too small"
    )]
    SupportExceeded { time: f64, index: usize, value: f64, limit: f64 },

    #[error("initial (v,w) support leaves the safety box in cell {cell}: extent {extent} > {limit}")]
    SpreadTooLarge { cell: usize, extent: f64, limit: f64 },

    #[error("neuron {index} lies outside the periodic box")]
    PositionOutsideBox { index: usize },

    #[error("relaxation parameter eps must be positive, got {0}")]
    InvalidEpsilon(f64),

    #[error("time step must be positive and finite, got {0}")]
    InvalidTimeStep(f64),

    #[error("V trajectory covers [{covered_start}, {covered_end}] but [{start}, {end}] was requested")]
    TrajectoryGap { start: f64, end: f64, covered_start: f64, covered_end: f64 },

    #[error("need at least {needed} records, found {found}")]
    TooFewRecords { needed: usize, found: usize },

    #[error("misaligned time series: {0}")]
    MisalignedSeries(String),

    #[error("dissipation D{p} = {value} is negative beyond round-off; moments and particles disagree")]
    NegativeDissipation { p: u32, value: f64 },

    #[error("config parse error at line {line}, column {column}: {message}")]
    ConfigParse { line: usize, column: usize, message: String },

    #[error("config validation failed:\n  {}", .0.join("\n  "))]
    ConfigInvalid(Vec<String>),

    #[error("run failed at t = {time}: {source}")]
    RunFailed {
        time: f64,
        #[source]
        source: Box<FhnError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
