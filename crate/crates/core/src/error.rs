use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate data: |z| = {norm:e} is below the cutoff (sum of y_i x_i vanishes)")]
    DegenerateData { norm: f64 },

    #[error("dataset synthesis failed after {attempts} resampling attempts")]
    SynthesisFailed { attempts: usize },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse { row: usize, column: usize, message: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no derivative of order <= {max_p} is above tolerance at 0")]
    NoMultiplicity { max_p: usize },

    #[error("unknown activation `{0}` (expected tanh | silu2 | xtanh | softplus2 | linear)")]
    UnknownActivation(String),

    #[error("unknown initialization scheme `{0}` (expected lecun | he | xavier | huang)")]
    UnknownScheme(String),

    #[error("parameters blew up at t = {t}")]
    Blowup { t: f64 },

    #[error("Jacobi iteration did not converge within {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("|z| t = {exponent} exceeds the representable horizon")]
    HorizonExceeded { exponent: f64 },

    #[error("wrong regime: {0}")]
    WrongRegime(String),

    #[error("initial weight norm is zero")]
    ZeroInitialNorm,

    #[error("weight norm is zero")]
    ZeroNorm,

    #[error("trajectory carries neither snapshots nor online summaries")]
    MissingSummaries,

    #[error("abscissa values are all equal")]
    DegenerateAbscissa,

    #[error("horizon-limited runs at widths {widths:?}")]
    HorizonLimited { widths: Vec<usize> },

    #[error(
        "sweep cell (gamma = {gamma}, gamma' = {gamma_prime}, m = {m}, seed = {seed}): {source}"
    )]
    Cell {
        gamma: f64,
        gamma_prime: f64,
        m: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("schema version mismatch in {path}: expected {expected}, found {found}")]
    SchemaVersion { path: PathBuf, expected: u32, found: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for failures caused by the numerics rather than by the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Blowup { .. } | Error::NoConvergence { .. } | Error::HorizonExceeded { .. } => {
                true
            }
            Error::Cell { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
