use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("offspring table is empty")]
    EmptyTable,
    #[error("offspring probability p_{index} = {value} is not a finite nonnegative number")]
    InvalidProbability { index: usize, value: f64 },
    #[error("offspring probabilities sum to {sum}, not 1")]
    Normalization { sum: f64 },
    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("model is not subcritical: lambda = rho + beta*(1 - mean) = {lambda} <= 0")]
    NotSubcritical { lambda: f64 },
    #[error("decay exponent a = {a} must lie in (0, min(lambda, beta) = {ceiling})")]
    DecayExponent { a: f64, ceiling: f64 },
    #[error("slack epsilon = {epsilon} must lie in (0, min(lambda, beta) - a = {limit})")]
    Slack { epsilon: f64, limit: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("cannot step an extinct population")]
    Extinct,
    #[error("host type 0 is not a valid population entry")]
    ZeroType,
    #[error("event budget of {max_events} exhausted at t = {clock} with {hosts} hosts alive")]
    BudgetExhausted {
        max_events: u64,
        clock: f64,
        hosts: u64,
    },
    #[error("replicate {replicate}: {source}")]
    Replicate {
        replicate: u64,
        #[source]
        source: Box<SimError>,
    },
    #[error("invalid simulation input: {0}")]
    InvalidInput(String),
}

impl SimError {
    /// Innermost error, with replicate context stripped.
    pub fn root(&self) -> &SimError {
        match self {
            SimError::Replicate { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_budget(&self) -> bool {
        matches!(self.root(), SimError::BudgetExhausted { .. })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("step size underflow: no step down to h = {h:e} reached tolerance {tol:e} (last error estimate {estimate:e})")]
    StepUnderflow { h: f64, tol: f64, estimate: f64 },
    #[error("invalid solver input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("{0}")]
    InvalidInput(String),
    #[error("e^(lambda t) q_1(t) did not settle before t = {t_max}; last values {last_h:?}")]
    NotConverged { t_max: f64, last_h: Vec<f64> },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    InvalidInput(String),
    #[error("survival estimate is {q} at t = {t}; the fit window must hold positive values only")]
    Window { t: f64, q: f64 },
}
