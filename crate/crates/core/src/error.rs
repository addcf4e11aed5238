use thiserror::Error;

/// Errors raised while evaluating, compiling or running a program.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("type error: {0}")]
    TypeError(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("choice probability {0} outside [0, 1]")]
    ChoiceOutOfRange(String),
    #[error("uniform bound {0} is not a positive integer")]
    UniformNonPositive(String),
    #[error("expectation is negative ({0}) on a reachable state")]
    NegativeExpectation(String),
    #[error("liberal expectation exceeds 1 ({0})")]
    BoundError(String),
    #[error("conditioning event has probability zero")]
    ZeroDenominator,
    #[error("every path fails; conditional distribution undefined")]
    AllMassFails,
    #[error("reference distribution sums to {0}, not 1")]
    NotNormalized(String),
    #[error("empirical distribution is empty")]
    EmptySamples,
    #[error("tree is not unbiased: choice with probability {0}")]
    NotUnbiased(String),
    #[error("step budget of {0} node visits exceeded")]
    StepBudgetExceeded(u64),
    #[error("restart budget of {0} attempts exceeded")]
    RestartBudgetExceeded(u64),
    #[error("bit stream exhausted")]
    Exhausted,
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
