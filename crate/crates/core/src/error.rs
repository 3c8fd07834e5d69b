use std::fmt;
use std::path::PathBuf;

/// One violated instance invariant, located by a field path such as
/// `agents[3].a_tilde` or `topology.prices.matrix[1][2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationError {
    pub path: String,
    pub kind: ValidationErrorKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ValidationErrorKind {
    NonPositiveCoefficient { value: f64 },
    NegativeValue { value: f64 },
    NonFinite,
    AsymmetricCapacity { first: f64, second: f64 },
    NegativeCapacity { value: f64 },
    MissingRootLink { node: usize },
    /// Heterogeneous prices with `c_nm == c_mn` for a non-root pair. The
    /// bilateral trades are then underdetermined.
    SymmetricPricePair { n: usize, m: usize, price: f64 },
    AsymmetricRootPrice { node: usize, c_0n: f64, c_n0: f64 },
    EmptyTightenedInterval { lower: f64, upper: f64 },
    InvalidEdge { n: usize, m: usize },
    AgentCountMismatch { expected: usize, found: usize },
    TooFewAgents { found: usize },
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ValidationErrorKind::*;
        write!(f, "{}: ", self.path)?;
        match &self.kind {
            NonPositiveCoefficient { value } => write!(f, "NonPositiveCoefficient (got {value})"),
            NegativeValue { value } => write!(f, "NegativeValue (got {value})"),
            NonFinite => write!(f, "NonFinite"),
            AsymmetricCapacity { first, second } => {
                write!(f, "AsymmetricCapacity ({first} vs {second})")
            }
            NegativeCapacity { value } => write!(f, "NegativeCapacity (got {value})"),
            MissingRootLink { node } => write!(f, "MissingRootLink (node {node} not linked to 0)"),
            SymmetricPricePair { n, m, price } => {
                write!(f, "SymmetricPricePair (c_{n}{m} = c_{m}{n} = {price})")
            }
            AsymmetricRootPrice { node, c_0n, c_n0 } => {
                write!(f, "AsymmetricRootPrice (c_0{node} = {c_0n}, c_{node}0 = {c_n0})")
            }
            EmptyTightenedInterval { lower, upper } => {
                write!(f, "EmptyTightenedInterval ([{lower}, {upper}])")
            }
            InvalidEdge { n, m } => write!(f, "InvalidEdge ({n}, {m})"),
            AgentCountMismatch { expected, found } => {
                write!(f, "AgentCountMismatch (expected {expected}, found {found})")
            }
            TooFewAgents { found } => write!(f, "TooFewAgents (found {found})"),
        }
    }
}

/// Every violated invariant of one instance. Never empty when returned as an error.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationErrors(pub Vec<ValidationError>);

impl ValidationErrors {
    pub fn iter(&self) -> impl Iterator<Item = &ValidationError> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} invariant violation(s)", self.0.len())?;
        for e in &self.0 {
            write!(f, "\n  {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationErrors {}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid instance: {0}")]
    Validation(#[from] ValidationErrors),

    #[error("negative variance {0}")]
    NegativeVariance(f64),

    /// Zero variance with a report different from the truth: the privacy
    /// loss is infinite.
    #[error("degenerate mechanism: zero variance with y = {y}, y_hat = {y_hat}")]
    DegenerateMechanism { y: f64, y_hat: f64 },

    #[error("symmetric price pair c_{n}{m} = c_{m}{n}: bilateral trades are underdetermined")]
    SymmetricPricePair { n: usize, m: usize },

    #[error("solver diverged at iteration {iteration} (iterate norm {norm:e})")]
    Diverged { iteration: usize, norm: f64 },

    #[error("invalid options: {0}")]
    InvalidOptions(String),

    #[error("{context}: {source}")]
    Sweep {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// The innermost error, looking through sweep context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Sweep { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
