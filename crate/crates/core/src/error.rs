use thiserror::Error;

/// Errors raised anywhere in the two-scale pipeline.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("no periodic partner for boundary node at ({x}, {y})")]
    PairingFailure { x: f64, y: f64 },
    #[error("incompressible material (nu = 0.5) is not supported")]
    IncompressibleUnsupported,
    #[error("non-physical deformation: det F = {det:e}")]
    NonPhysicalDeformation { det: f64 },
    #[error("degenerate element geometry: det J = {det:e}")]
    DegenerateElement { det: f64 },
    #[error("element {element}: {source}")]
    Element {
        element: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("redundant constraint rows {rows:?}")]
    ConstraintRedundancy { rows: Vec<usize> },
    #[error("no convergence after {iterations} iterations (residual history {history:?})")]
    NoConvergence { iterations: usize, history: Vec<f64> },
    #[error("singular average deformation gradient (det = {det:e})")]
    NonPhysicalAverage { det: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid mesh pairing: {0}")]
    InvalidPairing(String),
    #[error("invalid comparison: {0}")]
    InvalidComparison(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True when the root cause is an inverted or collapsed deformation,
    /// i.e. the load increment should be cut back.
    pub fn is_non_physical(&self) -> bool {
        match self {
            Error::NonPhysicalDeformation { .. } | Error::NonPhysicalAverage { .. } => true,
            Error::Element { source, .. } => source.is_non_physical(),
            _ => false,
        }
    }

    pub(crate) fn in_element(self, element: usize) -> Self {
        match self {
            e @ Error::Element { .. } => e,
            e => Error::Element {
                element,
                source: Box::new(e),
            },
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
