// SPDX-License-Identifier: MIT OR Apache-2.0

//! A tiny seeded decoder-only transformer.
//!
//! Each block is causal multi-head attention with a residual connection:
//!
//! ```text
//! z^l_i = z^{l-1}_i + Σ_h Σ_{j<=i} α^{l,h}_{i,j} · z^{l-1}_j W^{l,h}_OV
//! ```
//!
//! where `W_OV = W_V W_O`. Inputs are token + position + segment (group)
//! embeddings; output logits are the last position's state against the
//! tied token embedding, scaled by `1/sqrt(d)`. There is no MLP and no
//! normalization layer, which keeps the forward pass small enough to
//! recompute by hand in tests.

use ndarray::{s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ChannelSet, ConditionalModel, Context, Group, Vocab};
use crate::error::{Error, Result};
use crate::numerics::Logits;

#[derive(Clone, Debug, PartialEq)]
pub struct TinyConfig {
    pub vocab_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub max_positions: usize,
    pub seed: u64,
    /// Add learned absolute position embeddings.
    pub positional: bool,
    /// Add a learned embedding per [`Group`].
    pub segment: bool,
}

impl Default for TinyConfig {
    fn default() -> Self {
        TinyConfig {
            vocab_size: 32,
            layers: 4,
            heads: 2,
            d_model: 16,
            max_positions: 64,
            seed: 42,
            positional: true,
            segment: true,
        }
    }
}

impl TinyConfig {
    pub const MAX_VOCAB: usize = 64;

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.vocab_size > Self::MAX_VOCAB {
            return Err(Error::Config(format!(
                "vocab size {} outside 2..={}",
                self.vocab_size,
                Self::MAX_VOCAB
            )));
        }
        if self.layers == 0 || self.heads == 0 || self.max_positions == 0 {
            return Err(Error::Config("layers, heads and positions must be positive".into()));
        }
        if self.d_model == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

/// Projection matrices of one attention head. Row-vector convention: `x W`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadWeights {
    /// `d × d_head`
    pub w_q: Array2<f64>,
    /// `d × d_head`
    pub w_k: Array2<f64>,
    /// `d × d_head`
    pub w_v: Array2<f64>,
    /// `d_head × d`
    pub w_o: Array2<f64>,
}

impl HeadWeights {
    /// Combined output-value projection `W_V W_O` (`d × d`).
    pub fn w_ov(&self) -> Array2<f64> {
        self.w_v.dot(&self.w_o)
    }
}

#[derive(Clone, Debug)]
pub struct TinyTransformer {
    config: TinyConfig,
    vocab: Vocab,
    token_embedding: Array2<f64>,
    position_embedding: Array2<f64>,
    segment_embedding: Array2<f64>,
    layers: Vec<Vec<HeadWeights>>,
}

impl TinyTransformer {
    pub fn new(config: TinyConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let dh = config.head_dim();
        let mut normal = |rows: usize, cols: usize, std: f64| {
            Array2::from_shape_fn((rows, cols), |_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * std
            })
        };

        let token_embedding = normal(config.vocab_size, d, 1.0);
        let position_embedding = normal(config.max_positions, d, 0.5);
        let segment_embedding = normal(Group::ALL.len(), d, 0.5);
        let proj_std = 1.0 / (d as f64).sqrt();
        let out_std = 1.0 / ((dh * config.layers * config.heads) as f64).sqrt();
        let layers = (0..config.layers)
            .map(|_| {
                (0..config.heads)
                    .map(|_| HeadWeights {
                        w_q: normal(d, dh, proj_std),
                        w_k: normal(d, dh, proj_std),
                        w_v: normal(d, dh, proj_std),
                        w_o: normal(dh, d, out_std),
                    })
                    .collect()
            })
            .collect();

        let mut model = TinyTransformer {
            vocab: Vocab::synthetic(config.vocab_size),
            config,
            token_embedding,
            position_embedding,
            segment_embedding,
            layers,
        };
        if !model.config.positional {
            model.position_embedding.fill(0.0);
        }
        if !model.config.segment {
            model.segment_embedding.fill(0.0);
        }
        Ok(model)
    }

    pub fn config(&self) -> &TinyConfig {
        &self.config
    }

    pub fn layer_count(&self) -> usize {
        self.config.layers
    }

    pub fn head_count(&self) -> usize {
        self.config.heads
    }

    pub fn token_embedding(&self) -> &Array2<f64> {
        &self.token_embedding
    }

    pub fn position_embedding(&self) -> &Array2<f64> {
        &self.position_embedding
    }

    /// Rows indexed in [`Group::ALL`] order.
    pub fn segment_embedding(&self) -> &Array2<f64> {
        &self.segment_embedding
    }

    pub fn layers(&self) -> &[Vec<HeadWeights>] {
        &self.layers
    }

    fn embed(&self, ctx: &Context) -> Result<(Array2<f64>, Vec<Group>)> {
        let tokens = ctx.tokens();
        let groups = ctx.groups();
        if tokens.is_empty() {
            return Err(Error::InvalidLogits("empty context".into()));
        }
        if tokens.len() > self.config.max_positions {
            return Err(Error::IndexOutOfRange(format!(
                "context of {} tokens exceeds {} positions",
                tokens.len(),
                self.config.max_positions
            )));
        }
        let d = self.config.d_model;
        let mut z = Array2::zeros((tokens.len(), d));
        for (i, (tok, group)) in tokens.iter().zip(&groups).enumerate() {
            if tok.index() >= self.config.vocab_size {
                return Err(Error::IndexOutOfRange(format!(
                    "token {tok} outside vocabulary of {}",
                    self.config.vocab_size
                )));
            }
            let seg = Group::ALL.iter().position(|g| g == group).unwrap_or(0);
            let mut row = z.row_mut(i);
            row += &self.token_embedding.row(tok.index());
            row += &self.position_embedding.row(i);
            row += &self.segment_embedding.row(seg);
        }
        Ok((z, groups))
    }

    /// Runs the forward pass and records every attention map, the input
    /// state of every block, and every head's `W_OV`.
    pub fn trace(&self, ctx: &Context) -> Result<AttentionTrace> {
        let (mut z, groups) = self.embed(ctx)?;
        let n = z.nrows();
        let scale = 1.0 / (self.config.head_dim() as f64).sqrt();
        let mut alphas = Vec::with_capacity(self.config.layers);
        let mut states = Vec::with_capacity(self.config.layers + 1);
        let mut w_ovs = Vec::with_capacity(self.config.layers);

        for heads in &self.layers {
            let mut update = Array2::<f64>::zeros(z.raw_dim());
            let mut layer_alpha = Vec::with_capacity(heads.len());
            let mut layer_ov = Vec::with_capacity(heads.len());
            for head in heads {
                let q = z.dot(&head.w_q);
                let k = z.dot(&head.w_k);
                let mut alpha = q.dot(&k.t()) * scale;
                for i in 0..n {
                    let mut row = alpha.row_mut(i);
                    row.slice_mut(s![i + 1..]).fill(f64::NEG_INFINITY);
                    let max = row.slice(s![..=i]).fold(f64::NEG_INFINITY, |m, v| m.max(*v));
                    row.mapv_inplace(|v| (v - max).exp());
                    let total = row.sum();
                    row /= total;
                }
                let w_ov = head.w_ov();
                update += &alpha.dot(&z.dot(&w_ov));
                layer_alpha.push(alpha);
                layer_ov.push(w_ov);
            }
            states.push(z.clone());
            z += &update;
            alphas.push(layer_alpha);
            w_ovs.push(layer_ov);
        }
        states.push(z);

        Ok(AttentionTrace {
            alphas,
            states,
            w_ov: w_ovs,
            groups,
        })
    }

    fn logits_from_state(&self, last: Array1<f64>) -> Logits {
        let scale = 1.0 / (self.config.d_model as f64).sqrt();
        let values = self.token_embedding.dot(&last).mapv(|v| v * scale).to_vec();
        Logits::new(values).expect("finite weights produce finite logits")
    }
}

impl ConditionalModel for TinyTransformer {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn supports(&self, _channels: ChannelSet) -> bool {
        true
    }

    fn logits(&self, ctx: &Context) -> Result<Logits> {
        let trace = self.trace(ctx)?;
        let final_state = trace.states.last().expect("at least one state");
        let last = final_state.index_axis(Axis(0), final_state.nrows() - 1).to_owned();
        Ok(self.logits_from_state(last))
    }
}

/// Attention maps, block-input states, and `W_OV` matrices captured during a
/// forward pass.
#[derive(Clone, Debug)]
pub struct AttentionTrace {
    /// `[layer][head]`, each `n × n`, rows sum to one, zero above the diagonal.
    alphas: Vec<Vec<Array2<f64>>>,
    /// `states[l]` is the input to block `l` (`n × d`); the final entry is the output.
    states: Vec<Array2<f64>>,
    /// `[layer][head]`, each `d × d`.
    w_ov: Vec<Vec<Array2<f64>>>,
    groups: Vec<Group>,
}

impl AttentionTrace {
    const ROW_SUM_TOL: f64 = 1e-9;

    /// Builds a trace from raw parts. `states` must hold one input state per
    /// layer and may include a trailing output state.
    pub fn new(
        alphas: Vec<Vec<Array2<f64>>>,
        states: Vec<Array2<f64>>,
        w_ov: Vec<Vec<Array2<f64>>>,
        groups: Vec<Group>,
    ) -> Result<Self> {
        let layers = alphas.len();
        let n = groups.len();
        if layers == 0 || w_ov.len() != layers || states.len() < layers {
            return Err(Error::Schema("trace layer counts disagree".into()));
        }
        let d = states[0].ncols();
        for (l, heads) in alphas.iter().enumerate() {
            if heads.is_empty() || heads.len() != w_ov[l].len() {
                return Err(Error::Schema(format!("layer {l}: head counts disagree")));
            }
            if states[l].dim() != (n, d) {
                return Err(Error::Schema(format!("layer {l}: state shape mismatch")));
            }
            for (h, a) in heads.iter().enumerate() {
                if a.dim() != (n, n) || w_ov[l][h].dim() != (d, d) {
                    return Err(Error::Schema(format!("layer {l} head {h}: shape mismatch")));
                }
                for (i, row) in a.outer_iter().enumerate() {
                    let causal = row.iter().skip(i + 1).all(|v| *v == 0.0);
                    let valid = row.iter().all(|v| v.is_finite() && *v >= 0.0);
                    if !causal || !valid || (row.sum() - 1.0).abs() > Self::ROW_SUM_TOL {
                        return Err(Error::Schema(format!(
                            "layer {l} head {h} row {i}: not a causal distribution"
                        )));
                    }
                }
            }
        }
        Ok(AttentionTrace {
            alphas,
            states,
            w_ov,
            groups,
        })
    }

    pub fn layers(&self) -> usize {
        self.alphas.len()
    }

    pub fn heads(&self, layer: usize) -> usize {
        self.alphas.get(layer).map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn alpha(&self, layer: usize, head: usize) -> Option<&Array2<f64>> {
        self.alphas.get(layer)?.get(head)
    }

    /// Input to block `layer`.
    pub fn state(&self, layer: usize) -> Option<&Array2<f64>> {
        self.states.get(layer)
    }

    pub fn w_ov(&self, layer: usize, head: usize) -> Option<&Array2<f64>> {
        self.w_ov.get(layer)?.get(head)
    }

    /// Multiplies every recorded `W_OV` by `c`; attention maps and states are kept.
    pub fn scale_w_ov(&mut self, c: f64) {
        for heads in &mut self.w_ov {
            for m in heads {
                *m *= c;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::TokenId;

    fn ctx() -> Context {
        let t = |v: &[u32]| v.iter().map(|x| TokenId(*x)).collect::<Vec<_>>();
        Context::new(t(&[20, 21]))
            .with_image(t(&[3, 4, 5]))
            .with_rationale(t(&[9, 10]))
            .with_prefix(t(&[7]))
    }

    #[test]
    fn attention_rows_are_distributions() {
        let model = TinyTransformer::new(TinyConfig::default()).unwrap();
        let trace = model.trace(&ctx()).unwrap();
        assert_eq!(trace.layers(), 4);
        for l in 0..trace.layers() {
            for h in 0..trace.heads(l) {
                let a = trace.alpha(l, h).unwrap();
                for (i, row) in a.outer_iter().enumerate() {
                    assert!((row.sum() - 1.0).abs() < 1e-9);
                    assert!(row.iter().all(|v| *v >= 0.0));
                    assert!(row.iter().skip(i + 1).all(|v| *v == 0.0));
                }
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let a = TinyTransformer::new(TinyConfig::default()).unwrap();
        let b = TinyTransformer::new(TinyConfig::default()).unwrap();
        assert_eq!(a.logits(&ctx()).unwrap(), b.logits(&ctx()).unwrap());
        assert_eq!(a.logits(&ctx()).unwrap(), a.logits(&ctx()).unwrap());
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = TinyTransformer::new(TinyConfig::default()).unwrap();
        assert!(model.logits(&Context::new(vec![TokenId(99)])).is_err());
        assert!(model.logits(&Context::new(vec![])).is_err());
        let long = Context::new(vec![TokenId(1); 65]);
        assert!(matches!(model.logits(&long), Err(Error::IndexOutOfRange(_))));
        let bad = TinyConfig {
            vocab_size: 65,
            ..TinyConfig::default()
        };
        assert!(TinyTransformer::new(bad).is_err());
    }

    #[test]
    fn trace_validation() {
        let groups = vec![Group::Query, Group::Output];
        let ok_alpha = ndarray::array![[1.0, 0.0], [0.5, 0.5]];
        let state = Array2::<f64>::zeros((2, 2));
        let eye = Array2::<f64>::eye(2);
        assert!(AttentionTrace::new(
            vec![vec![ok_alpha]],
            vec![state.clone()],
            vec![vec![eye.clone()]],
            groups.clone()
        )
        .is_ok());
        let acausal = ndarray::array![[0.5, 0.5], [0.5, 0.5]];
        assert!(AttentionTrace::new(vec![vec![acausal]], vec![state], vec![vec![eye]], groups).is_err());
    }
}
