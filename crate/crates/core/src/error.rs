// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

use crate::model::ChannelSet;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Every logit is `-inf`, so no token can be produced.
    #[error("every logit is masked (-inf)")]
    AllMasked,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    /// `p` puts mass on a token where the reference has none.
    #[error("support mismatch at token {token}: mass where the reference is zero")]
    SupportMismatch { token: usize },

    /// A product or tilted distribution has no token with positive mass.
    #[error("empty support: the combined distribution has zero normalizer")]
    EmptySupport,

    #[error("invalid logits: {0}")]
    InvalidLogits(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("model does not support channel set {0}")]
    UnsupportedChannels(ChannelSet),

    #[error("no table row for context {0}")]
    MissingRow(String),

    #[error("policy {policy} requires the {channel} channel")]
    MissingChannel {
        policy: &'static str,
        channel: &'static str,
    },

    #[error("lambda {value} outside the accepted range {range}")]
    LambdaOutOfRange { value: f64, range: &'static str },

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("context has no scorable output tokens")]
    NoOutputTokens,

    #[error("total attention contribution is zero")]
    ZeroContribution,

    #[error("schema error: {0}")]
    Schema(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
}

impl Error {
    /// Stable, machine-readable identifier for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::AllMasked => "all_masked",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::SupportMismatch { .. } => "support_mismatch",
            Error::EmptySupport => "empty_support",
            Error::InvalidLogits(_) => "invalid_logits",
            Error::InvalidDistribution(_) => "invalid_distribution",
            Error::UnsupportedChannels(_) => "unsupported_channels",
            Error::MissingRow(_) => "missing_row",
            Error::MissingChannel { .. } => "missing_channel",
            Error::LambdaOutOfRange { .. } => "lambda_out_of_range",
            Error::InvalidPolicy(_) => "invalid_policy",
            Error::IndexOutOfRange(_) => "index_out_of_range",
            Error::NoOutputTokens => "no_output_tokens",
            Error::ZeroContribution => "zero_contribution",
            Error::Schema(_) => "schema",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Csv { .. } => "csv",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
