use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid case: {0}")]
    InvalidCase(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("singular Jacobian in {what} (condition estimate {condition:.3e})")]
    SingularJacobian { what: &'static str, condition: f64 },

    #[error("algebraic Jacobian h_a is singular at the base point (condition estimate {0:.3e})")]
    SingularAlgebraicJacobian(f64),

    #[error("pair (A, B) is not stabilizable: {stable} stable Hamiltonian eigenvalues, expected {expected}")]
    UnstabilizablePair { stable: usize, expected: usize },

    #[error("ill-conditioned U11 block in Riccati solve (condition estimate {0:.3e})")]
    IllConditionedU11(f64),

    #[error("closed loop A + BK is not Hurwitz (max real eigenvalue {0:.3e})")]
    NotStabilizing(f64),

    #[error("Schur decomposition failed: {0}")]
    Schur(String),

    #[error("quadratic program infeasible: {0}")]
    Infeasible(String),

    #[error("quadratic program hit the iteration limit ({0})")]
    MaxIterations(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("algebraic solve failed at t = {t:.4} s: {source}")]
    AlgebraicSolveFailure {
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite state at t = {0:.4} s")]
    NonFiniteState(f64),

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps the error with a label naming the workflow stage it came from.
    pub fn at_stage(self, stage: impl Into<String>) -> Error {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Attaches a stage label to the error side of a result.
pub trait StageContext<T> {
    fn stage(self, stage: &str) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: &str) -> Result<T> {
        self.map_err(|e| e.at_stage(stage))
    }
}
