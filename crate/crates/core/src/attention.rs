// SPDX-License-Identifier: MIT OR Apache-2.0

//! Attention contribution shares by input group.
//!
//! The contribution of context position `j` to position `i` through head
//! `h` of block `l` is `‖α^{l,h}_{i,j} · z^{l−1}_j W^{l,h}_OV‖₂`. Scores are
//! summed over heads, over output positions (excluding a final EOS) and
//! over the context positions of each group, then reported as percentages.

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};
use crate::model::{AttentionTrace, Context, Group, TinyTransformer};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSelect {
    /// `floor(L / 2)`
    Middle,
    Index(usize),
}

impl std::str::FromStr for LayerSelect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "middle" => Ok(LayerSelect::Middle),
            other => other
                .parse()
                .map(LayerSelect::Index)
                .map_err(|_| Error::Config(format!("layer must be `middle` or an index, got {other:?}"))),
        }
    }
}

pub fn select_layer(model: &TinyTransformer, strategy: LayerSelect) -> Result<usize> {
    let layers = model.layer_count();
    match strategy {
        LayerSelect::Middle => Ok(layers / 2),
        LayerSelect::Index(k) if k < layers => Ok(k),
        LayerSelect::Index(k) => Err(Error::IndexOutOfRange(format!(
            "layer {k} of a {layers}-layer model"
        ))),
    }
}

/// `‖α_{i,j} · z_j W_OV‖₂` for one head.
pub fn contribution_score(
    trace: &AttentionTrace,
    layer: usize,
    head: usize,
    from: usize,
    to: usize,
) -> Result<f64> {
    let out_of_range = || {
        Error::IndexOutOfRange(format!(
            "layer {layer} head {head} position ({from}, {to}) in a trace of {} positions",
            trace.len()
        ))
    };
    let alpha = trace.alpha(layer, head).ok_or_else(out_of_range)?;
    let w_ov = trace.w_ov(layer, head).ok_or_else(out_of_range)?;
    let state = trace.state(layer).ok_or_else(out_of_range)?;
    if from >= trace.len() || to > from {
        return Err(out_of_range());
    }
    let a = alpha[[from, to]];
    Ok(a.abs() * l2(state.row(to).dot(w_ov).view()))
}

fn l2(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContributionReport {
    pub image: f64,
    pub rationale: f64,
    pub query: f64,
    pub image_pct: f64,
    pub rationale_pct: f64,
    pub query_pct: f64,
    pub layer: usize,
    /// Number of heads summed.
    pub heads: usize,
}

impl ContributionReport {
    pub fn total(&self, group: Group) -> f64 {
        match group {
            Group::Image => self.image,
            Group::Rationale => self.rationale,
            Group::Query => self.query,
            Group::Output => 0.0,
        }
    }

    pub fn percentage(&self, group: Group) -> f64 {
        match group {
            Group::Image => self.image_pct,
            Group::Rationale => self.rationale_pct,
            Group::Query => self.query_pct,
            Group::Output => 0.0,
        }
    }

    pub fn percentage_sum(&self) -> f64 {
        self.image_pct + self.rationale_pct + self.query_pct
    }
}

/// Group shares at `layer` of a captured trace. When `final_is_eos`, the
/// last output position is not scored.
pub fn group_contributions_from_trace(
    trace: &AttentionTrace,
    layer: usize,
    final_is_eos: bool,
) -> Result<ContributionReport> {
    let state = trace
        .state(layer)
        .filter(|_| layer < trace.layers())
        .ok_or_else(|| Error::IndexOutOfRange(format!("layer {layer} of {}", trace.layers())))?;
    let groups = trace.groups();
    let mut outputs: Vec<usize> = groups
        .iter()
        .enumerate()
        .filter(|(_, g)| **g == Group::Output)
        .map(|(i, _)| i)
        .collect();
    if final_is_eos {
        outputs.pop();
    }
    if outputs.is_empty() {
        return Err(Error::NoOutputTokens);
    }

    let heads = trace.heads(layer);
    let mut totals = [0.0f64; 3];
    for head in 0..heads {
        let alpha = trace.alpha(layer, head).expect("head in range");
        let w_ov = trace.w_ov(layer, head).expect("head in range");
        let norms: Array1<f64> = state
            .outer_iter()
            .map(|z| l2(z.dot(w_ov).view()))
            .collect();
        for &i in &outputs {
            for (j, group) in groups.iter().enumerate().take(i + 1) {
                let slot = match group {
                    Group::Image => 0,
                    Group::Rationale => 1,
                    Group::Query => 2,
                    Group::Output => continue,
                };
                totals[slot] += alpha[[i, j]].abs() * norms[j];
            }
        }
    }

    let sum: f64 = totals.iter().sum();
    if sum <= 0.0 {
        return Err(Error::ZeroContribution);
    }
    let pct = |t: f64| 100.0 * t / sum;
    Ok(ContributionReport {
        image: totals[0],
        rationale: totals[1],
        query: totals[2],
        image_pct: pct(totals[0]),
        rationale_pct: pct(totals[1]),
        query_pct: pct(totals[2]),
        layer,
        heads,
    })
}

/// Traces `ctx` (whose prefix holds the generated output) and reports group shares.
pub fn group_contributions(
    model: &TinyTransformer,
    ctx: &Context,
    layer: usize,
) -> Result<ContributionReport> {
    if layer >= model.layer_count() {
        return Err(Error::IndexOutOfRange(format!(
            "layer {layer} of {}",
            model.layer_count()
        )));
    }
    let trace = model.trace(ctx)?;
    let final_is_eos = ctx.prefix.last().is_some_and(|t| t.is_eos());
    group_contributions_from_trace(&trace, layer, final_is_eos)
}
