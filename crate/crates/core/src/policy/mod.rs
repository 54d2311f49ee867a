// SPDX-License-Identifier: MIT OR Apache-2.0

//! Decoding policies: single-conditional baselines, rationale-enhanced
//! decoding (power-of-experts), and the ablation/contrastive variants.
//!
//! A [`PolicySpec`] is declarative. Its compact string form, used in
//! experiment configs and on the command line, is
//!
//! ```text
//! kind[:lambda[:contrast[:space]]]
//! ```
//!
//! e.g. `image-only`, `red:0.5`, `moe:0.3`, `contrastive-pair:1:swap-image-query:prob`.

mod combine;
mod step;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Context;

pub use combine::{
    contrastive_combine, contrastive_combine_prob, moe_combine, red_combine, red_logits,
    reversed_poe_combine, validate_lambda, MAX_LAMBDA,
};
pub use step::{step_distribution, StepDistributions};

/// Candidate `λ` values for power-of-experts decoding.
pub const LAMBDA_GRID: [f64; 5] = [0.1, 0.3, 0.5, 1.0, 10.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyKind {
    /// `p(y | x, q)`
    ImageOnly,
    /// `p(y | r, q)`
    RationaleOnly,
    /// `p(y | x, r, q)`, the standard chain-of-thought answer step.
    JointConditional,
    /// `p(y | x, q) · p(y | r, q)^λ / Z`
    Red,
    /// `(1 − λ) p(y | x, q) + λ p(y | r, q)`
    MixtureOfExperts,
    /// `p(y | r, q) · p(y | x, q)^λ / Z`
    ReversedPoE,
    /// Image-conditional main distribution against a contrast context.
    Contrastive,
    /// Joint `(x, r, q)` main distribution against a contrast context.
    ContrastivePair,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 8] = [
        PolicyKind::ImageOnly,
        PolicyKind::RationaleOnly,
        PolicyKind::JointConditional,
        PolicyKind::Red,
        PolicyKind::MixtureOfExperts,
        PolicyKind::ReversedPoE,
        PolicyKind::Contrastive,
        PolicyKind::ContrastivePair,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::ImageOnly => "image-only",
            PolicyKind::RationaleOnly => "rationale-only",
            PolicyKind::JointConditional => "joint",
            PolicyKind::Red => "red",
            PolicyKind::MixtureOfExperts => "moe",
            PolicyKind::ReversedPoE => "rev-poe",
            PolicyKind::Contrastive => "contrastive",
            PolicyKind::ContrastivePair => "contrastive-pair",
        }
    }

    pub fn uses_lambda(self) -> bool {
        !matches!(
            self,
            PolicyKind::ImageOnly | PolicyKind::RationaleOnly | PolicyKind::JointConditional
        )
    }

    pub fn is_contrastive(self) -> bool {
        matches!(self, PolicyKind::Contrastive | PolicyKind::ContrastivePair)
    }

    pub fn needs_rationale(self) -> bool {
        !matches!(self, PolicyKind::ImageOnly | PolicyKind::Contrastive)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidPolicy(format!("unknown policy kind {s:?}")))
    }
}

impl Serialize for PolicyKind {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for PolicyKind {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// How a contrastive policy obtains its contrast context.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ContrastDescriptor {
    /// Image and query taken from another instance; the rationale, if the
    /// main context has one, is kept. Resolved by the experiment runner.
    SwapImageQuery,
    /// The main context with its image channel removed.
    DropImage,
}

impl ContrastDescriptor {
    pub fn as_str(self) -> &'static str {
        match self {
            ContrastDescriptor::SwapImageQuery => "swap-image-query",
            ContrastDescriptor::DropImage => "drop-image",
        }
    }
}

impl FromStr for ContrastDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "swap-image-query" => Ok(ContrastDescriptor::SwapImageQuery),
            "drop-image" => Ok(ContrastDescriptor::DropImage),
            _ => Err(Error::InvalidPolicy(format!("unknown contrast descriptor {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ContrastSource {
    Descriptor(ContrastDescriptor),
    /// A concrete contrast context; its prefix is replaced by the main
    /// context's prefix at every step.
    Context(Box<Context>),
}

/// Where the contrastive difference is taken.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum ContrastSpace {
    /// `softmax((1+λ)·log p − λ·log p′)`
    #[default]
    Log,
    /// `(1+λ)·p − λ·p′`, clamped at zero and renormalized.
    Prob,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub lambda: f64,
    pub contrast: Option<ContrastSource>,
    pub contrast_space: ContrastSpace,
}

impl PolicySpec {
    fn plain(kind: PolicyKind, lambda: f64) -> Self {
        PolicySpec {
            kind,
            lambda,
            contrast: None,
            contrast_space: ContrastSpace::Log,
        }
    }

    pub fn image_only() -> Self {
        Self::plain(PolicyKind::ImageOnly, 0.0)
    }

    pub fn rationale_only() -> Self {
        Self::plain(PolicyKind::RationaleOnly, 0.0)
    }

    pub fn joint() -> Self {
        Self::plain(PolicyKind::JointConditional, 0.0)
    }

    pub fn red(lambda: f64) -> Self {
        Self::plain(PolicyKind::Red, lambda)
    }

    pub fn moe(lambda: f64) -> Self {
        Self::plain(PolicyKind::MixtureOfExperts, lambda)
    }

    pub fn reversed_poe(lambda: f64) -> Self {
        Self::plain(PolicyKind::ReversedPoE, lambda)
    }

    pub fn contrastive(lambda: f64, source: ContrastSource) -> Self {
        PolicySpec {
            contrast: Some(source),
            ..Self::plain(PolicyKind::Contrastive, lambda)
        }
    }

    pub fn contrastive_pair(lambda: f64, source: ContrastSource) -> Self {
        PolicySpec {
            contrast: Some(source),
            ..Self::plain(PolicyKind::ContrastivePair, lambda)
        }
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        PolicySpec {
            lambda,
            ..self.clone()
        }
    }

    pub fn with_contrast_space(mut self, space: ContrastSpace) -> Self {
        self.contrast_space = space;
        self
    }

    /// Replaces the contrast source with a concrete context.
    pub fn with_contrast_context(&self, ctx: Context) -> Self {
        PolicySpec {
            contrast: Some(ContrastSource::Context(Box::new(ctx))),
            ..self.clone()
        }
    }

    pub fn contrast_descriptor(&self) -> Option<ContrastDescriptor> {
        match &self.contrast {
            Some(ContrastSource::Descriptor(d)) => Some(*d),
            _ => None,
        }
    }

    /// `λ` as reported in result tables; `None` for kinds without one.
    pub fn reported_lambda(&self) -> Option<f64> {
        self.kind.uses_lambda().then_some(self.lambda)
    }

    pub fn validate(&self) -> Result<()> {
        validate_lambda(self.lambda)?;
        if self.kind == PolicyKind::MixtureOfExperts && self.lambda > 1.0 {
            return Err(Error::LambdaOutOfRange {
                value: self.lambda,
                range: "[0, 1]",
            });
        }
        if self.kind.is_contrastive() && self.contrast.is_none() {
            return Err(Error::InvalidPolicy(format!(
                "{} requires a contrast context",
                self.kind
            )));
        }
        Ok(())
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind)?;
        if self.kind.uses_lambda() {
            write!(f, ":{}", self.lambda)?;
        }
        match &self.contrast {
            Some(ContrastSource::Descriptor(d)) => write!(f, ":{}", d.as_str())?,
            Some(ContrastSource::Context(_)) => write!(f, ":explicit")?,
            None => {}
        }
        if self.contrast_space == ContrastSpace::Prob {
            write!(f, ":prob")?;
        }
        Ok(())
    }
}

impl FromStr for PolicySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        let kind: PolicyKind = parts.next().unwrap_or_default().parse()?;
        let mut spec = Self::plain(kind, 0.0);
        if kind.uses_lambda() {
            let raw = parts
                .next()
                .ok_or_else(|| Error::InvalidPolicy(format!("{kind} needs a lambda, e.g. {kind}:1.0")))?;
            spec.lambda = raw
                .parse()
                .map_err(|_| Error::InvalidPolicy(format!("bad lambda {raw:?}")))?;
        }
        for part in parts {
            match part {
                "prob" if kind.is_contrastive() => spec.contrast_space = ContrastSpace::Prob,
                "log" if kind.is_contrastive() => spec.contrast_space = ContrastSpace::Log,
                other if kind.is_contrastive() && spec.contrast.is_none() => {
                    spec.contrast = Some(ContrastSource::Descriptor(other.parse()?));
                }
                other => {
                    return Err(Error::InvalidPolicy(format!(
                        "unexpected field {other:?} in policy {s:?}"
                    )))
                }
            }
        }
        if kind.is_contrastive() && spec.contrast.is_none() {
            spec.contrast = Some(ContrastSource::Descriptor(ContrastDescriptor::SwapImageQuery));
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl Serialize for PolicySpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if matches!(self.contrast, Some(ContrastSource::Context(_))) {
            return Err(serde::ser::Error::custom(
                "policies with an explicit contrast context have no config form",
            ));
        }
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PolicySpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
