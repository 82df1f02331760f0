//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("truncation region has numerically zero mass{}", unit.map(|i| format!(" at unit {i}")).unwrap_or_default())]
    ZeroMass { unit: Option<usize> },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("probit separation detected: estimates diverging")]
    Separation,

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("data set too small or degenerate for estimation: {0}")]
    Estimability(String),

    #[error("non-finite log-likelihood contribution at unit {unit}")]
    NonFinite { unit: usize },

    #[error("log-likelihood decreased by {drop:.3e} at iteration {iter}; inconsistent E/CM step")]
    Ascent { iter: usize, drop: f64 },

    #[error("nesting violation: alternative log-likelihood {alt} below null {null}")]
    Nesting { null: f64, alt: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("configuration error: {0}")]
    Config(String),
}
