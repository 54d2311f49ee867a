// SPDX-License-Identifier: MIT OR Apache-2.0

use super::combine::{
    contrastive_combine, contrastive_combine_prob, moe_combine, red_combine, reversed_poe_combine,
};
use super::{ContrastDescriptor, ContrastSource, ContrastSpace, PolicyKind, PolicySpec};
use crate::error::{Error, Result};
use crate::model::{next_token_dist, ChannelSet, ConditionalModel, Context};
use crate::numerics::ProbDist;

/// The conditional distributions a policy combines at one decoding step.
/// All of them are taken with the same generated prefix.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepDistributions {
    /// `p(y | y<i, x, q)`
    pub p_x: Option<ProbDist>,
    /// `p(y | y<i, r, q)`
    pub p_r: Option<ProbDist>,
    /// `p(y | y<i, x, r, q)`
    pub p_joint: Option<ProbDist>,
    /// Distribution under the contrast context.
    pub p_contrast: Option<ProbDist>,
}

impl StepDistributions {
    /// Queries `model` for exactly the conditionals `policy` needs.
    pub fn collect<M: ConditionalModel + ?Sized>(
        model: &M,
        ctx: &Context,
        policy: &PolicySpec,
    ) -> Result<Self> {
        policy.validate()?;
        let name = policy.kind.as_str();
        let query = |set: ChannelSet| -> Result<ProbDist> {
            next_token_dist(model, &ctx.restrict(set, name)?)
        };
        let mut out = StepDistributions::default();
        match policy.kind {
            PolicyKind::ImageOnly => out.p_x = Some(query(ChannelSet::ImageQuery)?),
            PolicyKind::RationaleOnly => out.p_r = Some(query(ChannelSet::RationaleQuery)?),
            PolicyKind::JointConditional => out.p_joint = Some(query(ChannelSet::Full)?),
            PolicyKind::Red | PolicyKind::MixtureOfExperts | PolicyKind::ReversedPoE => {
                out.p_x = Some(query(ChannelSet::ImageQuery)?);
                out.p_r = Some(query(ChannelSet::RationaleQuery)?);
            }
            PolicyKind::Contrastive | PolicyKind::ContrastivePair => {
                let main_set = if policy.kind == PolicyKind::Contrastive {
                    ChannelSet::ImageQuery
                } else {
                    ChannelSet::Full
                };
                let main = ctx.restrict(main_set, name)?;
                let contrast = contrast_context(policy, &main)?;
                let p_main = next_token_dist(model, &main)?;
                if main_set == ChannelSet::ImageQuery {
                    out.p_x = Some(p_main);
                } else {
                    out.p_joint = Some(p_main);
                }
                out.p_contrast = Some(next_token_dist(model, &contrast)?);
            }
        }
        Ok(out)
    }

    pub fn combine(&self, policy: &PolicySpec) -> Result<ProbDist> {
        let need = |p: &Option<ProbDist>, what: &'static str| {
            p.clone().ok_or(Error::MissingChannel {
                policy: policy.kind.as_str(),
                channel: what,
            })
        };
        let lambda = policy.lambda;
        match policy.kind {
            PolicyKind::ImageOnly => need(&self.p_x, "image"),
            PolicyKind::RationaleOnly => need(&self.p_r, "rationale"),
            PolicyKind::JointConditional => need(&self.p_joint, "joint"),
            PolicyKind::Red => red_combine(&need(&self.p_x, "image")?, &need(&self.p_r, "rationale")?, lambda),
            PolicyKind::MixtureOfExperts => {
                moe_combine(&need(&self.p_x, "image")?, &need(&self.p_r, "rationale")?, lambda)
            }
            PolicyKind::ReversedPoE => {
                reversed_poe_combine(&need(&self.p_x, "image")?, &need(&self.p_r, "rationale")?, lambda)
            }
            PolicyKind::Contrastive | PolicyKind::ContrastivePair => {
                let main = if policy.kind == PolicyKind::Contrastive {
                    need(&self.p_x, "image")?
                } else {
                    need(&self.p_joint, "joint")?
                };
                let contrast = need(&self.p_contrast, "contrast")?;
                match policy.contrast_space {
                    ContrastSpace::Log => {
                        contrastive_combine(&main.log_probs(), &contrast.log_probs(), lambda)
                    }
                    ContrastSpace::Prob => contrastive_combine_prob(&main, &contrast, lambda),
                }
            }
        }
    }
}

fn contrast_context(policy: &PolicySpec, main: &Context) -> Result<Context> {
    match &policy.contrast {
        Some(ContrastSource::Context(c)) => {
            let mut c = (**c).clone();
            c.prefix = main.prefix.clone();
            Ok(c)
        }
        Some(ContrastSource::Descriptor(ContrastDescriptor::DropImage)) => {
            let mut c = main.clone();
            c.image = None;
            Ok(c)
        }
        Some(ContrastSource::Descriptor(d)) => Err(Error::InvalidPolicy(format!(
            "contrast descriptor {} must be resolved to a context before decoding",
            d.as_str()
        ))),
        None => Err(Error::InvalidPolicy(format!(
            "{} requires a contrast context",
            policy.kind
        ))),
    }
}

/// One decoding step: gather the conditionals `policy` uses and combine them.
pub fn step_distribution<M: ConditionalModel + ?Sized>(
    model: &M,
    ctx: &Context,
    policy: &PolicySpec,
) -> Result<ProbDist> {
    StepDistributions::collect(model, ctx, policy)?.combine(policy)
}
