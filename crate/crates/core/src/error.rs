use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ApplianceError {
    #[error("invalid appliance spec: {0}")]
    InvalidSpec(String),
    #[error("inconsistent constraint block: {0}")]
    Shape(String),
    #[error("{appliance} constraints cannot be met ({row}): {detail}")]
    Infeasible {
        appliance: &'static str,
        row: String,
        detail: String,
    },
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid neighborhood config: {0}")]
    Config(String),
    #[error("home {home} still infeasible after {attempts} sampling attempts: {last}")]
    Unsatisfiable {
        home: usize,
        attempts: usize,
        last: String,
    },
    #[error(transparent)]
    Appliance(#[from] ApplianceError),
    #[error(transparent)]
    Solver(#[from] SolveError),
    #[error("scenario file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("comfort weight {0} is not strictly positive")]
    NonPositiveWeight(f64),
    #[error("price vector contains a non-finite entry")]
    NonFinitePrice,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensitivityError {
    #[error("solution is not optimal ({0}); cannot differentiate")]
    NotOptimal(String),
    #[error("reduced KKT system singular for appliance {appliance} ({active} active rows, pivot ratio {pivot_ratio:.3e})")]
    SingularSystem {
        appliance: usize,
        active: usize,
        pivot_ratio: f64,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Error)]
pub enum CoordinatorError {
    #[error("invalid coordinator config: {0}")]
    Config(String),
    #[error("iteration {iteration}: home {home} solve failed: {detail}")]
    Solve {
        iteration: usize,
        home: usize,
        detail: String,
    },
    #[error("could not build worker pool: {0}")]
    Pool(String),
}
