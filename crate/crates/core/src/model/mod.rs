// SPDX-License-Identifier: MIT OR Apache-2.0

//! Conditional language models over multi-channel contexts.
//!
//! A [`Context`] carries up to three conditioning channels (image evidence,
//! rationale, query) plus the generated prefix. Models implement
//! [`ConditionalModel`] and are queried for next-token logits.

mod generate;
mod table;
mod transformer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{softmax, Logits, ProbDist, TokenId};

pub use generate::{generate, generate_rationale, Sampler};
pub use table::TableLm;
pub use transformer::{AttentionTrace, HeadWeights, TinyConfig, TinyTransformer};

/// Names for the token ids of a closed vocabulary. Id 0 is end-of-sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    names: Vec<String>,
}

impl Vocab {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Schema("vocabulary is empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::Schema(format!("duplicate vocabulary entry {n:?}")));
            }
        }
        Ok(Vocab { names })
    }

    /// `<eos>` followed by `t1..t{len-1}`.
    pub fn synthetic(len: usize) -> Self {
        let names = (0..len)
            .map(|i| if i == 0 { "<eos>".to_string() } else { format!("t{i}") })
            .collect();
        Vocab { names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<TokenId> {
        self.names.iter().position(|n| n == name).map(TokenId::from)
    }

    pub fn name(&self, id: TokenId) -> Option<&str> {
        self.names.get(id.index()).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Position groups used for tagging every token of a model input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    Image,
    Rationale,
    Query,
    Output,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::Image, Group::Rationale, Group::Query, Group::Output];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Image => "image",
            Group::Rationale => "rationale",
            Group::Query => "query",
            Group::Output => "output",
        }
    }
}

/// Which conditioning channels are present. The query is always present.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChannelSet {
    /// `(q)`
    Query,
    /// `(x, q)`
    ImageQuery,
    /// `(r, q)`
    RationaleQuery,
    /// `(x, r, q)`
    Full,
}

impl ChannelSet {
    pub const ALL: [ChannelSet; 4] = [
        ChannelSet::Query,
        ChannelSet::ImageQuery,
        ChannelSet::RationaleQuery,
        ChannelSet::Full,
    ];

    pub fn from_flags(image: bool, rationale: bool) -> Self {
        match (image, rationale) {
            (false, false) => ChannelSet::Query,
            (true, false) => ChannelSet::ImageQuery,
            (false, true) => ChannelSet::RationaleQuery,
            (true, true) => ChannelSet::Full,
        }
    }

    pub fn has_image(self) -> bool {
        matches!(self, ChannelSet::ImageQuery | ChannelSet::Full)
    }

    pub fn has_rationale(self) -> bool {
        matches!(self, ChannelSet::RationaleQuery | ChannelSet::Full)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelSet::Query => "q",
            ChannelSet::ImageQuery => "x,q",
            ChannelSet::RationaleQuery => "r,q",
            ChannelSet::Full => "x,r,q",
        }
    }
}

impl fmt::Display for ChannelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({})", self.as_str())
    }
}

impl FromStr for ChannelSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace() && *c != '(' && *c != ')').collect();
        ChannelSet::ALL
            .into_iter()
            .find(|c| c.as_str() == compact)
            .ok_or_else(|| Error::Schema(format!("unknown channel set {s:?}")))
    }
}

/// Conditioning state for one next-token query.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Context {
    pub image: Option<Vec<TokenId>>,
    pub rationale: Option<Vec<TokenId>>,
    pub query: Vec<TokenId>,
    /// Tokens generated so far.
    #[serde(default)]
    pub prefix: Vec<TokenId>,
}

impl Context {
    pub fn new(query: Vec<TokenId>) -> Self {
        Context {
            query,
            ..Default::default()
        }
    }

    pub fn with_image(mut self, image: Vec<TokenId>) -> Self {
        self.image = Some(image);
        self
    }

    pub fn with_rationale(mut self, rationale: Vec<TokenId>) -> Self {
        self.rationale = Some(rationale);
        self
    }

    pub fn with_prefix(mut self, prefix: Vec<TokenId>) -> Self {
        self.prefix = prefix;
        self
    }

    pub fn channel_set(&self) -> ChannelSet {
        ChannelSet::from_flags(self.image.is_some(), self.rationale.is_some())
    }

    /// Drops channels not in `set`. Fails if `set` asks for a channel this context lacks.
    pub fn restrict(&self, set: ChannelSet, policy: &'static str) -> Result<Context> {
        if set.has_image() && self.image.is_none() {
            return Err(Error::MissingChannel {
                policy,
                channel: "image",
            });
        }
        if set.has_rationale() && self.rationale.is_none() {
            return Err(Error::MissingChannel {
                policy,
                channel: "rationale",
            });
        }
        Ok(Context {
            image: if set.has_image() { self.image.clone() } else { None },
            rationale: if set.has_rationale() {
                self.rationale.clone()
            } else {
                None
            },
            query: self.query.clone(),
            prefix: self.prefix.clone(),
        })
    }

    /// Flattened model input: image, rationale, query, then generated prefix.
    pub fn tokens(&self) -> Vec<TokenId> {
        self.tagged().map(|(t, _)| t).collect()
    }

    /// Group of every position of [`Context::tokens`].
    pub fn groups(&self) -> Vec<Group> {
        self.tagged().map(|(_, g)| g).collect()
    }

    pub fn group_len(&self, group: Group) -> usize {
        match group {
            Group::Image => self.image.as_ref().map_or(0, Vec::len),
            Group::Rationale => self.rationale.as_ref().map_or(0, Vec::len),
            Group::Query => self.query.len(),
            Group::Output => self.prefix.len(),
        }
    }

    pub fn len(&self) -> usize {
        Group::ALL.iter().map(|g| self.group_len(*g)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn tagged(&self) -> impl Iterator<Item = (TokenId, Group)> + '_ {
        let image = self.image.iter().flatten().map(|t| (*t, Group::Image));
        let rationale = self.rationale.iter().flatten().map(|t| (*t, Group::Rationale));
        let query = self.query.iter().map(|t| (*t, Group::Query));
        let output = self.prefix.iter().map(|t| (*t, Group::Output));
        image.chain(rationale).chain(query).chain(output)
    }
}

/// A deterministic conditional next-token model.
pub trait ConditionalModel: Send + Sync {
    fn vocab(&self) -> &Vocab;

    fn supports(&self, channels: ChannelSet) -> bool;

    /// Next-token logits; identical contexts must yield bit-identical output.
    fn logits(&self, ctx: &Context) -> Result<Logits>;
}

/// `softmax(model.logits(ctx))`, after checking the channel subset is supported.
pub fn next_token_dist<M: ConditionalModel + ?Sized>(model: &M, ctx: &Context) -> Result<ProbDist> {
    let channels = ctx.channel_set();
    if !model.supports(channels) {
        return Err(Error::UnsupportedChannels(channels));
    }
    softmax(&model.logits(ctx)?)
}
