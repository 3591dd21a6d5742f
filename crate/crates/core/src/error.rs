use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("unknown treatment label {0:?}")]
    UnknownTreatment(String),

    #[error("study {study:?} lists treatment {treatment:?} more than once")]
    DuplicateArm { study: String, treatment: String },

    #[error("invalid arm in study {study:?}: {message}")]
    InvalidArm { study: String, message: String },

    #[error("treatment network is disconnected; components: {}", format_components(.components))]
    Disconnected { components: Vec<Vec<String>> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("trial {trial_id} has a zero or negative cell; apply a continuity correction first")]
    NonPositiveCell { trial_id: u32 },

    #[error("treatment {treatment} is not an arm of trial {trial_id}")]
    NotInTrial { trial_id: u32, treatment: String },

    #[error("unknown trial id {0}")]
    UnknownTrial(u32),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("optimizer did not converge after {iterations} iterations (best tau2 = {best_tau2})")]
    NonConvergence { iterations: usize, best_tau2: f64 },

    #[error("not computable: {0}")]
    NotComputable(String),

    #[error("percentile of an empty sample")]
    EmptySamples,

    #[error("{failed} of {replicates} bootstrap replicates failed (limit {limit})")]
    TooManyFailures {
        failed: usize,
        replicates: usize,
        limit: usize,
    },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical machinery, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        if let Error::Context { source, .. } = self {
            return source.is_numerical();
        }
        matches!(
            self,
            Error::NotPositiveDefinite(_)
                | Error::NonConvergence { .. }
                | Error::NotComputable(_)
                | Error::TooManyFailures { .. }
        )
    }
}

/// Attaches a description of the failing step to an error.
pub trait Context<T> {
    fn context<C: Into<String>>(self, context: impl FnOnce() -> C) -> Result<T>;
}

impl<T> Context<T> for Result<T> {
    fn context<C: Into<String>>(self, context: impl FnOnce() -> C) -> Result<T> {
        self.map_err(|e| Error::Context {
            context: context().into(),
            source: Box::new(e),
        })
    }
}

fn format_components(components: &[Vec<String>]) -> String {
    components
        .iter()
        .map(|c| format!("{{{}}}", c.join(", ")))
        .collect::<Vec<_>>()
        .join(", ")
}
