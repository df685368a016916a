use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Invalid parameters or inconsistent inputs, detected before any computation.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A 2x2 covariance block that is not positive semidefinite beyond tolerance.
    #[error("covariance block {pair} is not PSD: [[{a:e}, {c:e}], [{c:e}, {b:e}]]", pair = fmt_pair(.pair))]
    NonPsdCovariance {
        pair: Option<(usize, usize)>,
        a: f64,
        b: f64,
        c: f64,
    },

    #[error("numerical domain error: {0}")]
    NumericalDomain(String),

    /// Non-finite state encountered while integrating.
    #[error("divergence at t = {t}{}", .width.map(|w| format!(" (width {w})")).unwrap_or_default())]
    Divergence { t: f64, width: Option<usize> },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),
}

fn fmt_pair(pair: &Option<(usize, usize)>) -> String {
    match pair {
        Some((i, j)) => format!("({i}, {j})"),
        None => "(unindexed)".to_string(),
    }
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                context,
                expected,
                got,
            })
        }
    }
}
