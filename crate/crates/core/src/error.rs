use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("jump equal to -1 at grid index {0}")]
    JumpAtMinusOne(usize),

    #[error("exponents must differ (gamma = delta = {0})")]
    EqualExponents(f64),

    #[error("unknown theorem id `{0}`")]
    UnknownTheorem(String),

    #[error("increment law at step {step} has non-zero mean {mean:e}")]
    NonZeroMean { step: usize, mean: f64 },

    #[error("step {0} has zero compensator increment")]
    DegenerateStep(usize),

    #[error("covariance at step {step} has negative eigenvalue {eigenvalue:e}")]
    NonPsd { step: usize, eigenvalue: f64 },

    #[error("theta violates |theta| <= |I| at step {step}, atom {atom}")]
    ThetaBoundViolated { step: usize, atom: usize },

    #[error("scenario tree needs {nodes} nodes, budget is {budget}")]
    BudgetExceeded { nodes: u128, budget: u128 },

    /// `diffs` holds the squared contracted differences of every sweep.
    #[error("Picard iteration did not converge in {iterations} iterations (last difference {last:e})")]
    NotConverged { iterations: usize, last: f64, diffs: Vec<f64> },

    #[error("Picard iteration diverging at iteration {iteration} (ratio {ratio:e}); the sufficient contraction condition may fail")]
    DivergenceDetected { iteration: usize, ratio: f64, diffs: Vec<f64> },

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),

    #[error("measures live on different spaces (dims {0} and {1})")]
    SpaceMismatch(usize, usize),

    #[error("q must exceed 2, got {0}")]
    QTooSmall(f64),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
