// SPDX-License-Identifier: MIT OR Apache-2.0

//! Log-space probability primitives.
//!
//! Every distribution in the crate is produced by subtracting a
//! max-shifted log-sum-exp from a logit vector. Masked tokens are carried
//! as `-inf` logits and surface as exact zeros in a [`ProbDist`].

use std::fmt;
use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Centralized tolerances.
pub mod tol {
    /// Maximum deviation of a distribution's total mass from 1.
    pub const NORMALIZATION: f64 = 1e-12;
    /// Agreement required between an implementation and its oracle.
    pub const ORACLE: f64 = 1e-10;
    /// Rows loaded from files are renormalized only within this distance of 1.
    pub const LOAD_RENORMALIZE: f64 = 1e-9;
}

/// Identity of a token in a closed vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    /// Reserved end-of-sequence token.
    pub const EOS: TokenId = TokenId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_eos(self) -> bool {
        self == Self::EOS
    }
}

impl From<usize> for TokenId {
    fn from(index: usize) -> Self {
        TokenId(u32::try_from(index).expect("token index exceeds u32"))
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Unnormalized log-scores over the vocabulary, in nats.
///
/// Entries are finite or `-inf` (masked); `NaN` and `+inf` are rejected.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits(Vec<f64>);

impl Logits {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidLogits("empty logit vector".into()));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| v.is_nan() || **v == f64::INFINITY)
        {
            return Err(Error::InvalidLogits(format!("entry {i} is {v}")));
        }
        Ok(Logits(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Adds `c` to every finite entry.
    pub fn shifted(&self, c: f64) -> Logits {
        Logits(self.0.iter().map(|v| v + c).collect())
    }
}

impl Index<usize> for Logits {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// A normalized distribution over the vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProbDist(Vec<f64>);

impl ProbDist {
    /// Validates an already-normalized probability vector.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_weights(&probs)?;
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > tol::NORMALIZATION {
            return Err(Error::InvalidDistribution(format!(
                "mass sums to {total}, expected 1"
            )));
        }
        if let Some(p) = probs.iter().find(|p| **p > 1.0) {
            return Err(Error::InvalidDistribution(format!("entry {p} exceeds 1")));
        }
        Ok(ProbDist(probs))
    }

    /// Normalizes non-negative weights; fails with `EmptySupport` when they sum to zero.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        check_weights(&weights)?;
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::EmptySupport);
        }
        Ok(ProbDist(weights.into_iter().map(|w| w / total).collect()))
    }

    /// Uniform mass over `support`, zero elsewhere.
    pub fn uniform_over(len: usize, support: &[TokenId]) -> Result<Self> {
        let mut weights = vec![0.0; len];
        for t in support {
            let slot = weights
                .get_mut(t.index())
                .ok_or_else(|| Error::IndexOutOfRange(format!("token {t} in vocab of {len}")))?;
            *slot = 1.0;
        }
        Self::from_weights(weights)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Element-wise natural log; zero mass maps to `-inf`.
    pub fn log_probs(&self) -> Logits {
        Logits(self.0.iter().map(|p| p.ln()).collect())
    }

    pub fn support(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(i, _)| TokenId::from(i))
    }

    /// Sum of absolute differences halved.
    pub fn total_variation(&self, other: &ProbDist) -> Result<f64> {
        same_len(self.len(), other.len())?;
        Ok(0.5
            * self
                .0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>())
    }

    pub fn max_abs_diff(&self, other: &ProbDist) -> Result<f64> {
        same_len(self.len(), other.len())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

impl Index<usize> for ProbDist {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl<'de> Deserialize<'de> for ProbDist {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let probs = Vec::<f64>::deserialize(deserializer)?;
        ProbDist::new(probs).map_err(serde::de::Error::custom)
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::InvalidDistribution("empty vector".into()));
    }
    if let Some((i, w)) = weights
        .iter()
        .enumerate()
        .find(|(_, w)| !w.is_finite() || **w < 0.0)
    {
        return Err(Error::InvalidDistribution(format!("entry {i} is {w}")));
    }
    Ok(())
}

pub(crate) fn same_len(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { left, right });
    }
    Ok(())
}

/// `ln Σ exp(v)`, or `None` if every entry is `-inf`.
pub fn logsumexp(values: &[f64]) -> Option<f64> {
    max_and_log_sum(values).map(|(max, log_sum)| max + log_sum)
}

/// `(m, ln Σ exp(v − m))` with `m = max v`. Keeping the two parts apart
/// avoids rounding `v − lse` against a large `m`.
fn max_and_log_sum(values: &[f64]) -> Option<(f64, f64)> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Some((max, sum.ln()))
}

pub fn softmax(logits: &Logits) -> Result<ProbDist> {
    Ok(ProbDist(
        log_softmax(logits)?.0.into_iter().map(f64::exp).collect(),
    ))
}

pub fn log_softmax(logits: &Logits) -> Result<Logits> {
    let (max, log_sum) = max_and_log_sum(logits.as_slice()).ok_or(Error::AllMasked)?;
    Ok(Logits(
        logits.as_slice().iter().map(|l| (l - max) - log_sum).collect(),
    ))
}

/// `KL(p || q) = Σ p ln(p/q)` with `0 ln(0/q) = 0`.
pub fn kl_divergence(p: &ProbDist, q: &ProbDist) -> Result<f64> {
    same_len(p.len(), q.len())?;
    let mut total = 0.0;
    for (token, (&pi, &qi)) in p.as_slice().iter().zip(q.as_slice()).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::SupportMismatch { token });
        }
        total += pi * (pi / qi).ln();
    }
    Ok(total)
}

/// Greedy choice; ties go to the lowest token id.
pub fn argmax_token(dist: &ProbDist) -> TokenId {
    TokenId::from(argmax_index(dist.as_slice()))
}

pub(crate) fn argmax_index(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
