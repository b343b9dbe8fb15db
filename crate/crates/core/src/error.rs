use thiserror::Error;

/// Errors raised by the model, its components and the estimators.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of the function (e.g. a probability outside (0, 1)).
    #[error("domain error: {0}")]
    Domain(String),

    /// A parameter value violating the constraints of its family.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Copula arguments sitting on the boundary of the unit square.
    #[error("boundary value: {0}")]
    Boundary(String),

    #[error("failed to bracket a root on [{lo}, {hi}]: {context}")]
    Bracket { lo: f64, hi: f64, context: String },

    #[error(
        "{stage}: optimizer did not converge after {iterations} iterations \
         (gradient norm {grad_norm:.3e})"
    )]
    NonConvergence {
        stage: String,
        iterations: usize,
        grad_norm: f64,
        last_iterate: Vec<f64>,
    },

    #[error("non-finite log-likelihood term in cluster {cluster}{}", unit.map(|u| format!(", unit {u}")).unwrap_or_default())]
    NonFinite { cluster: usize, unit: Option<usize> },

    #[error("ties detected ({0}); add a small random perturbation before rank-based diagnostics")]
    Ties(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("not identifiable: {0}")]
    NonIdentifiable(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{failures} of {total} bootstrap refits failed")]
    BootstrapFailures { failures: usize, total: usize },

    #[error("invalid data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Whether the error stems from numerical failure (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonConvergence { .. }
            | Error::Bracket { .. }
            | Error::NonFinite { .. }
            | Error::BootstrapFailures { .. } => true,
            Error::Stage { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
