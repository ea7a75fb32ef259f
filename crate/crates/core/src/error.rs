use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("state error: {0}")]
    State(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("spectral separation: {0}")]
    Separation(String),

    #[error("contour crosses spectrum: {0}")]
    Contour(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("divergence: {message} (eps * |R(eps) f| = {scaled:?})")]
    Divergence { message: String, scaled: Vec<f64> },

    #[error("no convergence after {iterations} iterations (best estimate {best})")]
    NoConvergence { iterations: usize, best: f64 },

    #[error("fit error: {0}")]
    Fit(String),

    #[error("stability: {0}")]
    Stability(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config { path: path.into(), message: msg.into() }
    }

    /// Process exit code: 2 for usage/config problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config { .. } | Error::Json(_) => 2,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::State(_) => "state",
            Error::Precondition(_) => "precondition",
            Error::Separation(_) => "separation",
            Error::Contour(_) => "contour",
            Error::Singular(_) => "singular",
            Error::Divergence { .. } => "divergence",
            Error::NoConvergence { .. } => "no_convergence",
            Error::Fit(_) => "fit",
            Error::Stability(_) => "stability",
            Error::Config { .. } => "config",
            Error::Usage(_) => "usage",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
