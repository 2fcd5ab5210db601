use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spacetime: {0}")]
    InvalidSpacetime(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("CFL margin violated: max c*dt/dx = {ratio:.6} > eta = {eta}; largest admissible dt = {max_dt:.6e}")]
    CflViolation { ratio: f64, eta: f64, max_dt: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("rank mismatch: expected {expected}, got {got}")]
    RankMismatch { expected: usize, got: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("support must vanish on at least {required} slices at each end of the slab; {0}", .violation)]
    Padding { required: usize, violation: String },

    #[error("derivative order {0} unsupported (max 4)")]
    UnsupportedOrder(usize),

    #[error("event off the grid: {0}")]
    OffGrid(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite value detected: {0}")]
    NonFinite(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed field file: {0}")]
    Format(String),
}
