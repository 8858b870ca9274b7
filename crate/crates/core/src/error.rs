use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("derivative order {0} is not supported (max 4)")]
    UnsupportedOrder(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid support [{a}, {b}]")]
    InvalidSupport { a: f64, b: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no one-cut solution: {0}")]
    NoOneCut(String),

    #[error("critical equilibrium measure: density factor {min_s:.3e} below floor")]
    Criticality { min_s: f64 },

    #[error("equilibrium iteration did not converge after {iterations} steps (movement {movement:.3e})")]
    NonConvergence { iterations: usize, movement: f64 },

    #[error("point {0} lies on the support")]
    Domain(f64),

    #[error("Ξ inversion failed: endpoint residual {0:.3e}")]
    InversionFailure(f64),

    #[error("step size underflow at t = {t}: flow is too stiff")]
    StiffFlow { t: f64 },

    #[error("coincident eigenvalues at indices {i} and {j}")]
    DegenerateConfiguration { i: usize, j: usize },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the one-cut / non-criticality hypotheses, as
    /// opposed to purely numerical breakdowns.
    pub fn is_hypothesis_failure(&self) -> bool {
        matches!(self, Error::NoOneCut(_) | Error::Criticality { .. })
    }
}
