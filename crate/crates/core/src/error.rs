use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input (shapes, ranges, missing fields).
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{what} is not positive semidefinite (min eigenvalue {min_eig:e})")]
    NotPsd { what: &'static str, min_eig: f64 },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("{what}: factorization failed")]
    Factorization { what: &'static str },

    #[error("innovation covariance is numerically singular (condition estimate {condition:e})")]
    SingularInnovation { condition: f64 },

    #[error("LMI solver failure: {0}")]
    Solver(String),

    #[error("objective is unbounded")]
    Unbounded,

    #[error("not second-moment stabilizable: LMI infeasible at lambda = {lambda}")]
    NotStabilizable { lambda: f64 },

    #[error("no Lyapunov certificate for lambda <= {lambda_max}: unbounded second-moment growth")]
    UnboundedGrowth { lambda_max: f64 },

    #[error("pair (A, b) is not controllable: controllability matrix rank {rank} < {n}")]
    Uncontrollable { rank: usize, n: usize },

    #[error("experiment diverged at step {step} (state estimate norm {norm:e})")]
    Diverged { step: usize, norm: f64 },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("path with seed {seed}: {source}")]
    Path {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{}: {source}", path.display())]
    File {
        path: std::path::PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Error {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    pub fn in_file(self, path: impl Into<std::path::PathBuf>) -> Error {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// Peels off step/path wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. }
            | Error::Path { source, .. }
            | Error::File { source, .. } => source.root(),
            e => e,
        }
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            got,
        })
    }
}
