// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the toolkit.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file contents. `offset` is the byte position where parsing failed.
    #[error("format error in {path} at byte {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("non-finite value in {what} at row {row}, column {col}")]
    NonFinite {
        what: String,
        row: usize,
        col: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty dataset: {0}")]
    EmptyData(String),

    #[error("degenerate scale: all normalization rows are zero")]
    DegenerateScale,

    #[error("fraction of variance explained is undefined: input has zero variance")]
    UndefinedFve,

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("non-finite gradient for parameter {param}")]
    NonFiniteGradient { param: &'static str },

    #[error("solver did not converge after {iterations} iterations (last deviance change {last_change:e})")]
    NotConverged {
        iterations: usize,
        last_change: f64,
        trace: Vec<f64>,
    },

    #[error("bridge {kind} error: {message}")]
    Bridge { kind: String, message: String },

    /// A steering campaign stopped early; `cursor` is the index of the first
    /// intervention that was not completed, so the campaign can be resumed.
    #[error("campaign aborted at intervention #{cursor}: {source}")]
    CampaignAborted {
        cursor: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn bridge(kind: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Bridge {
            kind: kind.into(),
            message: message.into(),
        }
    }

    /// True when the error originated in the bridge transport or the bridge process.
    pub fn is_bridge(&self) -> bool {
        match self {
            Error::Bridge { .. } => true,
            Error::CampaignAborted { source, .. } => source.is_bridge(),
            _ => false,
        }
    }
}
