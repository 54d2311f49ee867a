// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic channel-split question answering.
//!
//! Each instance has an image-evidence answer set `A_x` and a rationale answer
//! set `A_r` whose only common element is the correct answer. The image also
//! carries hint tokens from which the rationale is decoded, so the rationale
//! is produced by the model rather than handed over.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{generate_rationale, Context, Sampler, TableLm, Vocab};
use crate::numerics::{ProbDist, TokenId};
use crate::seeding::item_rng;

/// How the joint `(x, r, q)` rows are authored.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JointMode {
    /// `p(y | x, r, q) = p(y | x, q)`
    #[default]
    RationaleIgnoring,
    /// Uniform over `A_x ∩ A_r`, falling back to `A_x` when the sets are disjoint.
    Faithful,
}

impl JointMode {
    pub fn as_str(self) -> &'static str {
        match self {
            JointMode::RationaleIgnoring => "rationale-ignoring",
            JointMode::Faithful => "faithful",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Intervention {
    #[default]
    None,
    /// Each instance decodes its answer with another instance's rationale.
    Swap,
    /// `A_r = {correct}`
    PerfectRationale,
    /// `A_r` is the full answer set.
    DegradedRationale,
}

impl Intervention {
    pub const ALL: [Intervention; 4] = [
        Intervention::None,
        Intervention::Swap,
        Intervention::PerfectRationale,
        Intervention::DegradedRationale,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Intervention::None => "none",
            Intervention::Swap => "swap",
            Intervention::PerfectRationale => "perfect-rationale",
            Intervention::DegradedRationale => "degraded-rationale",
        }
    }
}

impl fmt::Display for Intervention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Intervention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Intervention::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown intervention mode {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaskParams {
    pub instances: usize,
    pub answers: usize,
    pub image_set_size: usize,
    pub rationale_set_size: usize,
    pub joint: JointMode,
    pub intervention: Intervention,
    pub seed: u64,
}

impl Default for TaskParams {
    fn default() -> Self {
        TaskParams {
            instances: 2000,
            answers: 6,
            image_set_size: 2,
            rationale_set_size: 2,
            joint: JointMode::RationaleIgnoring,
            intervention: Intervention::None,
            seed: 0,
        }
    }
}

impl TaskParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.instances == 0 {
            return bad("instances must be at least 1".into());
        }
        if self.intervention == Intervention::Swap && self.instances < 2 {
            return bad("swap needs at least 2 instances".into());
        }
        if self.image_set_size < 2 || self.rationale_set_size < 2 {
            return bad("image_set_size and rationale_set_size must be at least 2".into());
        }
        if self.image_set_size + self.rationale_set_size - 1 > self.answers {
            return bad(format!(
                "answers ({}) must be at least image_set_size + rationale_set_size - 1 ({})",
                self.answers,
                self.image_set_size + self.rationale_set_size - 1
            ));
        }
        let vocab = Layout::new(self.answers).vocab_size();
        if vocab > u32::MAX as usize {
            return bad(format!("answers ({}) too large", self.answers));
        }
        Ok(())
    }
}

/// Token id layout for `K` answers: EOS, answers, image evidence, image
/// hints, rationale tokens, the question and the rationale prompt.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub answers: usize,
}

impl Layout {
    pub fn new(answers: usize) -> Self {
        Layout { answers }
    }

    fn id(&self, block: usize, a: usize) -> TokenId {
        debug_assert!(a < self.answers);
        TokenId::from(1 + block * self.answers + a)
    }

    pub fn answer(&self, a: usize) -> TokenId {
        self.id(0, a)
    }

    pub fn evidence(&self, a: usize) -> TokenId {
        self.id(1, a)
    }

    pub fn hint(&self, a: usize) -> TokenId {
        self.id(2, a)
    }

    pub fn rationale(&self, a: usize) -> TokenId {
        self.id(3, a)
    }

    pub fn question(&self) -> TokenId {
        TokenId::from(1 + 4 * self.answers)
    }

    pub fn cot_prompt(&self) -> TokenId {
        TokenId::from(2 + 4 * self.answers)
    }

    pub fn vocab_size(&self) -> usize {
        3 + 4 * self.answers
    }

    /// Answer index of `t`, if it is an answer token.
    pub fn answer_index(&self, t: TokenId) -> Option<usize> {
        let i = t.index();
        (1..=self.answers).contains(&i).then(|| i - 1)
    }

    pub fn vocab(&self) -> Vocab {
        let mut names = vec!["<eos>".to_string()];
        for prefix in ["a", "img", "hint", "rat"] {
            names.extend((0..self.answers).map(|a| format!("{prefix}{a}")));
        }
        names.push("<q>".into());
        names.push("<cot>".into());
        Vocab::new(names).expect("distinct names")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    /// Answer indices, sorted.
    pub image_set: Vec<usize>,
    pub rationale_set: Vec<usize>,
    pub correct: usize,
}

impl Instance {
    /// Correct answer plus `k_x − 1` distractors in `A_x` and `k_r − 1`
    /// further distractors in `A_r`, disjoint from `A_x`.
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, params: &TaskParams) -> Self {
        let k = params.answers;
        let correct = rng.random_range(0..k);
        let mut others: Vec<usize> = (0..k).filter(|&a| a != correct).collect();
        others.shuffle(rng);
        let kx = params.image_set_size - 1;
        let kr = params.rationale_set_size - 1;
        let mut image_set: Vec<usize> = std::iter::once(correct).chain(others[..kx].iter().copied()).collect();
        let mut rationale_set: Vec<usize> = match params.intervention {
            Intervention::PerfectRationale => vec![correct],
            Intervention::DegradedRationale => (0..k).collect(),
            Intervention::None | Intervention::Swap => std::iter::once(correct)
                .chain(others[kx..kx + kr].iter().copied())
                .collect(),
        };
        image_set.sort_unstable();
        rationale_set.sort_unstable();
        Instance {
            image_set,
            rationale_set,
            correct,
        }
    }
}

/// Uniformly random cyclic permutation (Sattolo). For `n ≥ 2` it has no
/// fixed points; for `n = 1` it is the identity.
pub fn derangement<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..i);
        p.swap(i, j);
    }
    p
}

const PARTNER_STREAM: u64 = 0x5A77_0D3E;

#[derive(Clone, Debug)]
pub struct ChannelSplitTask {
    pub params: TaskParams,
    pub layout: Layout,
    pub model: TableLm,
    pub instances: Vec<Instance>,
    /// Derangement assigning each instance the instance it borrows from.
    pub partner: Vec<usize>,
    /// Rationales decoded from each instance's image.
    pub rationales: Vec<Vec<TokenId>>,
}

impl ChannelSplitTask {
    pub fn generate(params: TaskParams) -> Result<Self> {
        params.validate()?;
        let layout = Layout::new(params.answers);
        let instances: Vec<Instance> = (0..params.instances)
            .map(|i| Instance::draw(&mut item_rng(params.seed, i as u64), &params))
            .collect();
        let partner = derangement(&mut item_rng(params.seed ^ PARTNER_STREAM, 0), params.instances);

        let mut builder = Builder {
            layout,
            model: TableLm::new(layout.vocab()),
            joint: params.joint,
        };
        for (i, inst) in instances.iter().enumerate() {
            builder.instance_rows(inst)?;
            builder.joint_rows(inst, inst)?;
            let other = &instances[partner[i]];
            builder.joint_rows(inst, other)?;
            builder.joint_rows(other, inst)?;
        }
        let model = builder.model;

        let mut sampler = Sampler::greedy();
        let rationales = instances
            .iter()
            .map(|inst| {
                generate_rationale(
                    &model,
                    &image_tokens(&layout, inst),
                    &rationale_query(&layout),
                    layout.answers + 1,
                    &mut sampler,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(ChannelSplitTask {
            params,
            layout,
            model,
            instances,
            partner,
            rationales,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn image(&self, i: usize) -> Vec<TokenId> {
        image_tokens(&self.layout, &self.instances[i])
    }

    pub fn query(&self) -> Vec<TokenId> {
        vec![self.layout.question()]
    }

    /// Answer context for instance `i`, with the rationale of `rationale_from`.
    pub fn context(&self, i: usize, rationale_from: usize) -> Context {
        Context::new(self.query())
            .with_image(self.image(i))
            .with_rationale(self.rationales[rationale_from].clone())
    }

    pub fn correct_token(&self, i: usize) -> TokenId {
        self.layout.answer(self.instances[i].correct)
    }
}

pub fn image_tokens(layout: &Layout, inst: &Instance) -> Vec<TokenId> {
    inst.image_set
        .iter()
        .map(|&a| layout.evidence(a))
        .chain(inst.rationale_set.iter().map(|&b| layout.hint(b)))
        .collect()
}

pub fn rationale_tokens(layout: &Layout, inst: &Instance) -> Vec<TokenId> {
    inst.rationale_set.iter().map(|&b| layout.rationale(b)).collect()
}

pub fn rationale_query(layout: &Layout) -> Vec<TokenId> {
    vec![layout.cot_prompt(), layout.question()]
}

struct Builder {
    layout: Layout,
    model: TableLm,
    joint: JointMode,
}

impl Builder {
    fn uniform(&self, answers: &[usize]) -> Arc<ProbDist> {
        let ids: Vec<TokenId> = answers.iter().map(|&a| self.layout.answer(a)).collect();
        Arc::new(ProbDist::uniform_over(self.layout.vocab_size(), &ids).expect("non-empty answer set"))
    }

    fn point(&self, t: TokenId) -> Arc<ProbDist> {
        Arc::new(ProbDist::uniform_over(self.layout.vocab_size(), &[t]).expect("one token"))
    }

    /// Answer row at the empty prefix plus an EOS row after every answer.
    fn answer_rows(&mut self, ctx: Context, answers: &[usize]) -> Result<()> {
        let eos = self.point(TokenId::EOS);
        for a in 0..self.layout.answers {
            let after = ctx.clone().with_prefix(vec![self.layout.answer(a)]);
            self.model.insert_shared(after, eos.clone())?;
        }
        let row = self.uniform(answers);
        self.model.insert_shared(ctx, row)
    }

    fn instance_rows(&mut self, inst: &Instance) -> Result<()> {
        let layout = self.layout;
        let image = image_tokens(&layout, inst);
        let rationale = rationale_tokens(&layout, inst);
        let query = vec![layout.question()];

        let cot = Context::new(rationale_query(&layout)).with_image(image.clone());
        for k in 0..=rationale.len() {
            let next = rationale.get(k).copied().unwrap_or(TokenId::EOS);
            let row = self.point(next);
            self.model
                .insert_shared(cot.clone().with_prefix(rationale[..k].to_vec()), row)?;
        }

        let all: Vec<usize> = (0..layout.answers).collect();
        self.answer_rows(Context::new(query.clone()), &all)?;
        self.answer_rows(Context::new(query.clone()).with_image(image), &inst.image_set)?;
        self.answer_rows(Context::new(query).with_rationale(rationale), &inst.rationale_set)?;
        Ok(())
    }

    /// Joint rows for the image of `img` with the rationale of `rat`.
    fn joint_rows(&mut self, img: &Instance, rat: &Instance) -> Result<()> {
        let layout = self.layout;
        let ctx = Context::new(vec![layout.question()])
            .with_image(image_tokens(&layout, img))
            .with_rationale(rationale_tokens(&layout, rat));
        let answers = match self.joint {
            JointMode::RationaleIgnoring => img.image_set.clone(),
            JointMode::Faithful => {
                let both: Vec<usize> = img
                    .image_set
                    .iter()
                    .copied()
                    .filter(|a| rat.rationale_set.contains(a))
                    .collect();
                if both.is_empty() {
                    img.image_set.clone()
                } else {
                    both
                }
            }
        };
        self.answer_rows(ctx, &answers)
    }
}
