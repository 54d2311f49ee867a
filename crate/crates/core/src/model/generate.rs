// SPDX-License-Identifier: MIT OR Apache-2.0

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ChannelSet, ConditionalModel, Context};
use crate::error::{Error, Result};
use crate::numerics::{argmax_token, ProbDist, TokenId};
use crate::policy::{step_distribution, PolicySpec};

/// Token selection rule applied to each per-step distribution.
#[derive(Clone, Debug)]
pub enum Sampler {
    /// Argmax with lowest-id tie-break.
    Greedy,
    /// Inverse-CDF draw from one uniform `f64` per step.
    Seeded(Box<ChaCha8Rng>),
}

impl Sampler {
    pub fn greedy() -> Self {
        Sampler::Greedy
    }

    pub fn seeded(seed: u64) -> Self {
        Sampler::Seeded(Box::new(ChaCha8Rng::seed_from_u64(seed)))
    }

    pub fn pick(&mut self, dist: &ProbDist) -> TokenId {
        match self {
            Sampler::Greedy => argmax_token(dist),
            Sampler::Seeded(rng) => {
                let u: f64 = rng.random();
                let mut cdf = 0.0;
                let mut last_positive = 0;
                for (i, p) in dist.as_slice().iter().enumerate() {
                    if *p > 0.0 {
                        last_positive = i;
                    }
                    cdf += p;
                    if u < cdf {
                        return TokenId::from(i);
                    }
                }
                TokenId::from(last_positive)
            }
        }
    }
}

/// Autoregressive decoding under `policy`: one token per step, appended to
/// a shared prefix, until EOS or `max_len` tokens. The returned tokens
/// include the EOS if one was produced.
pub fn generate<M: ConditionalModel + ?Sized>(
    model: &M,
    ctx: &Context,
    policy: &PolicySpec,
    max_len: usize,
    sampler: &mut Sampler,
) -> Result<Vec<TokenId>> {
    if max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let mut state = ctx.clone();
    let start = state.prefix.len();
    while state.prefix.len() - start < max_len {
        let dist = step_distribution(model, &state, policy)?;
        let token = sampler.pick(&dist);
        state.prefix.push(token);
        if token.is_eos() {
            break;
        }
    }
    Ok(state.prefix.split_off(start))
}

/// First chain-of-thought step: decode a rationale from the image-conditional
/// distribution. The trailing EOS, if any, is dropped so the result can be
/// installed as [`Context::rationale`].
pub fn generate_rationale<M: ConditionalModel + ?Sized>(
    model: &M,
    image: &[TokenId],
    query: &[TokenId],
    max_len: usize,
    sampler: &mut Sampler,
) -> Result<Vec<TokenId>> {
    if !model.supports(ChannelSet::ImageQuery) {
        return Err(Error::UnsupportedChannels(ChannelSet::ImageQuery));
    }
    let ctx = Context::new(query.to_vec()).with_image(image.to_vec());
    let mut tokens = generate(model, &ctx, &PolicySpec::image_only(), max_len, sampler)?;
    if tokens.last().is_some_and(|t| t.is_eos()) {
        tokens.pop();
    }
    Ok(tokens)
}
