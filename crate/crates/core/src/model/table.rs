// SPDX-License-Identifier: MIT OR Apache-2.0

//! Table-driven conditional model.
//!
//! Each row maps an exact context (channel subset plus the full token tuple
//! of every present channel and the generated prefix) to a next-token
//! distribution. Lookups are exact; there is no smoothing or backoff.
//!
//! # File format
//!
//! Tables load from TOML. Tokens are referenced by vocabulary name and the
//! first vocabulary entry is the end-of-sequence token.
//!
//! ```toml
//! vocab = ["<eos>", "yes", "no", "cat", "q"]
//!
//! [[rows]]
//! channels = "x,q"          # one of "q", "x,q", "r,q", "x,r,q"
//! image = ["cat"]           # required iff channels include x
//! query = ["q"]
//! prefix = []               # optional, defaults to []
//! probs = [0.0, 0.5, 0.5, 0.0, 0.0]
//! ```
//!
//! `rationale` is required iff `channels` include `r`. A row whose mass is
//! within 1e-9 of one is renormalized; anything further off is rejected.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ChannelSet, ConditionalModel, Context, Vocab};
use crate::error::{Error, Result};
use crate::numerics::{tol, Logits, ProbDist, TokenId};

#[derive(Clone, Debug)]
pub struct TableLm {
    vocab: Vocab,
    rows: HashMap<Context, Arc<ProbDist>>,
    channel_sets: BTreeSet<ChannelSet>,
}

impl TableLm {
    pub fn new(vocab: Vocab) -> Self {
        TableLm {
            vocab,
            rows: HashMap::new(),
            channel_sets: BTreeSet::new(),
        }
    }

    /// Adds a row keyed by `ctx`. Re-inserting an identical row is a no-op;
    /// a conflicting row is an error.
    pub fn insert(&mut self, ctx: Context, row: ProbDist) -> Result<()> {
        self.insert_shared(ctx, Arc::new(row))
    }

    /// Like [`TableLm::insert`] but shares an existing allocation.
    pub fn insert_shared(&mut self, ctx: Context, row: Arc<ProbDist>) -> Result<()> {
        if row.len() != self.vocab.len() {
            return Err(Error::LengthMismatch {
                left: row.len(),
                right: self.vocab.len(),
            });
        }
        self.check_tokens(&ctx)?;
        if let Some(existing) = self.rows.get(&ctx) {
            if **existing != *row {
                return Err(Error::Schema(format!(
                    "conflicting rows for context {}",
                    describe(&ctx)
                )));
            }
            return Ok(());
        }
        self.channel_sets.insert(ctx.channel_set());
        self.rows.insert(ctx, row);
        Ok(())
    }

    pub fn row(&self, ctx: &Context) -> Option<&ProbDist> {
        self.rows.get(ctx).map(Arc::as_ref)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn channel_sets(&self) -> impl Iterator<Item = ChannelSet> + '_ {
        self.channel_sets.iter().copied()
    }

    fn check_tokens(&self, ctx: &Context) -> Result<()> {
        let v = self.vocab.len();
        match ctx.tokens().into_iter().find(|t| t.index() >= v) {
            Some(t) => Err(Error::IndexOutOfRange(format!(
                "token {t} outside vocabulary of {v}"
            ))),
            None => Ok(()),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawTable = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        let vocab = Vocab::new(raw.vocab)?;
        let mut table = TableLm::new(vocab);
        for (n, row) in raw.rows.into_iter().enumerate() {
            let ctx = row.context(&table.vocab).map_err(|e| row_error(n, e))?;
            if table.rows.contains_key(&ctx) {
                return Err(row_error(n, Error::Schema("duplicate context".into())));
            }
            let dist = load_row(row.probs, table.vocab.len()).map_err(|e| row_error(n, e))?;
            table.insert(ctx, dist)?;
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Serializes to the documented TOML schema, rows in sorted context order.
    pub fn to_toml_string(&self) -> Result<String> {
        let mut keys: Vec<&Context> = self.rows.keys().collect();
        keys.sort();
        let name = |t: &TokenId| self.vocab.name(*t).unwrap_or_default().to_string();
        let names = |ts: &[TokenId]| ts.iter().map(name).collect::<Vec<_>>();
        let rows = keys
            .into_iter()
            .map(|ctx| RawRow {
                channels: ctx.channel_set().as_str().to_string(),
                image: ctx.image.as_deref().map(names),
                rationale: ctx.rationale.as_deref().map(names),
                query: names(&ctx.query),
                prefix: names(&ctx.prefix),
                probs: self.rows[ctx].as_slice().to_vec(),
            })
            .collect();
        let raw = RawTable {
            vocab: self.vocab.names().to_vec(),
            rows,
        };
        toml::to_string(&raw).map_err(|e| Error::Schema(e.to_string()))
    }
}

impl ConditionalModel for TableLm {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn supports(&self, channels: ChannelSet) -> bool {
        self.channel_sets.contains(&channels)
    }

    fn logits(&self, ctx: &Context) -> Result<Logits> {
        let row = self
            .rows
            .get(ctx)
            .ok_or_else(|| Error::MissingRow(describe(ctx)))?;
        Ok(row.log_probs())
    }
}

fn describe(ctx: &Context) -> String {
    let fmt = |ts: &[TokenId]| {
        ts.iter()
            .map(TokenId::to_string)
            .collect::<Vec<_>>()
            .join(" ")
    };
    format!(
        "{} x=[{}] r=[{}] q=[{}] y=[{}]",
        ctx.channel_set(),
        ctx.image.as_deref().map(fmt).unwrap_or_default(),
        ctx.rationale.as_deref().map(fmt).unwrap_or_default(),
        fmt(&ctx.query),
        fmt(&ctx.prefix)
    )
}

fn row_error(n: usize, e: Error) -> Error {
    Error::Schema(format!("row {n}: {e}"))
}

fn load_row(probs: Vec<f64>, vocab_len: usize) -> Result<ProbDist> {
    if probs.len() != vocab_len {
        return Err(Error::Schema(format!(
            "row has {} probabilities for a vocabulary of {vocab_len}",
            probs.len()
        )));
    }
    let total: f64 = probs.iter().sum();
    if !total.is_finite() || (total - 1.0).abs() > tol::LOAD_RENORMALIZE {
        return Err(Error::Schema(format!("row mass {total} is not within 1e-9 of 1")));
    }
    if (total - 1.0).abs() <= tol::NORMALIZATION {
        return ProbDist::new(probs);
    }
    ProbDist::from_weights(probs)
}

#[derive(Debug, Serialize, Deserialize)]
struct RawTable {
    vocab: Vec<String>,
    #[serde(default)]
    rows: Vec<RawRow>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRow {
    channels: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rationale: Option<Vec<String>>,
    query: Vec<String>,
    #[serde(default)]
    prefix: Vec<String>,
    probs: Vec<f64>,
}

impl RawRow {
    fn context(&self, vocab: &Vocab) -> Result<Context> {
        let channels: ChannelSet = self.channels.parse()?;
        let ids = |names: &[String]| -> Result<Vec<TokenId>> {
            names
                .iter()
                .map(|n| {
                    vocab
                        .id(n)
                        .ok_or_else(|| Error::Schema(format!("unknown token {n:?}")))
                })
                .collect()
        };
        let channel = |field: &Option<Vec<String>>, wanted: bool, label: &str| -> Result<Option<Vec<TokenId>>> {
            match (field, wanted) {
                (Some(names), true) => Ok(Some(ids(names)?)),
                (None, false) => Ok(None),
                (None, true) => Err(Error::Schema(format!(
                    "channels {channels} require a `{label}` field"
                ))),
                (Some(_), false) => Err(Error::Schema(format!(
                    "`{label}` given but channels are {channels}"
                ))),
            }
        };
        Ok(Context {
            image: channel(&self.image, channels.has_image(), "image")?,
            rationale: channel(&self.rationale, channels.has_rationale(), "rationale")?,
            query: ids(&self.query)?,
            prefix: ids(&self.prefix)?,
        })
    }
}
