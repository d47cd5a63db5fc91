use thiserror::Error;

/// Errors raised while building, compiling, or fitting an MFA model.
#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate process id `{0}`")]
    DuplicateProcess(String),
    #[error("unknown process `{0}`")]
    UnknownProcess(String),
    #[error("parent process `{0}` has no children")]
    EmptyParent(String),
    #[error("containment cycle through process `{0}`")]
    ContainmentCycle(String),
    #[error("process `{child}` is listed under more than one parent (`{first}` and `{second}`)")]
    MultipleParents {
        child: String,
        first: String,
        second: String,
    },
    #[error("flow arc {from}->{to}: endpoint `{endpoint}` is a parent process")]
    ParentEndpoint {
        from: String,
        to: String,
        endpoint: String,
    },
    #[error("flow arc {0}->{0} is a self-loop")]
    SelfLoop(String),
    #[error("duplicate flow arc {0}->{1}")]
    DuplicateArc(String, String),
    #[error("no flow arc {0}->{1}")]
    UnknownArc(String, String),
    #[error("process `{0}` is a parent; expected a child process")]
    NotChild(String),
    #[error("no constituent arcs between `{0}` and `{1}`")]
    NoConstituentArcs(String, String),
    #[error("stock observation on `{0}`, which has no stock")]
    NoStock(String),
    #[error("invalid observation row {row}: {reason}")]
    InvalidRow { row: usize, reason: String },
    #[error("observation row {0} has no coefficients")]
    EmptyRow(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("ratio denominator is not positive ({0})")]
    DegenerateRatio(f64),
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("value must be positive, got {0}")]
    NonPositive(f64),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("ratio rows must be linearized before Gaussian inference")]
    NonlinearRows,
    #[error("noise must be homoscedastic for the MSE bound")]
    Heteroscedastic,
    #[error("parameter outside support: {0}")]
    OutsideSupport(String),
    #[error("non-finite value in {block} block")]
    NonFinite { block: &'static str },
    #[error("sampler failure in chain {chain}: {reason}")]
    Sampler { chain: usize, reason: String },
    #[error("optimizer did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NoConvergence { iterations: usize, grad_norm: f64 },
    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("need at least two chains")]
    SingleChain,
    #[error("project file: {0}")]
    Project(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by invalid input rather than numerical trouble.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::DegenerateRatio(_)
                | Error::NotPositiveDefinite(_)
                | Error::NonFinite { .. }
                | Error::Sampler { .. }
                | Error::NoConvergence { .. }
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
