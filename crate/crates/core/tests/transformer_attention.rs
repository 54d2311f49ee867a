// SPDX-License-Identifier: MIT OR Apache-2.0

use red_core::attention::{contribution_score, group_contributions, group_contributions_from_trace};
use red_core::model::{ChannelSet, Group};
use red_core::{ConditionalModel, Context, TinyConfig, TinyTransformer, TokenId};

type Mat = Vec<Vec<f64>>;

fn to_mat(a: &ndarray::Array2<f64>) -> Mat {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

fn vec_mat(v: &[f64], m: &Mat) -> Vec<f64> {
    let cols = m[0].len();
    let mut out = vec![0.0; cols];
    for (k, vk) in v.iter().enumerate() {
        for c in 0..cols {
            out[c] += vk * m[k][c];
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Straight-line forward pass over plain vectors. Returns block-input states,
/// attention maps `[layer][head]` and final logits.
struct Forward {
    states: Vec<Mat>,
    alphas: Vec<Vec<Mat>>,
    logits: Vec<f64>,
}

fn forward(model: &TinyTransformer, ctx: &Context) -> Forward {
    let cfg = model.config();
    let tok = to_mat(model.token_embedding());
    let pos = to_mat(model.position_embedding());
    let seg = to_mat(model.segment_embedding());
    let mut tagged: Vec<(TokenId, usize)> = Vec::new();
    for t in ctx.image.iter().flatten() {
        tagged.push((*t, 0));
    }
    for t in ctx.rationale.iter().flatten() {
        tagged.push((*t, 1));
    }
    for t in &ctx.query {
        tagged.push((*t, 2));
    }
    for t in &ctx.prefix {
        tagged.push((*t, 3));
    }
    let mut z: Mat = tagged
        .iter()
        .enumerate()
        .map(|(i, (t, g))| (0..cfg.d_model).map(|c| tok[t.index()][c] + pos[i][c] + seg[*g][c]).collect())
        .collect();
    let n = z.len();
    let dh = cfg.d_model / cfg.heads;
    let mut states = Vec::new();
    let mut alphas = Vec::new();
    for heads in model.layers() {
        let mut next = z.clone();
        let mut layer_alpha = Vec::new();
        for h in heads {
            let (wq, wk, wv, wo) = (to_mat(&h.w_q), to_mat(&h.w_k), to_mat(&h.w_v), to_mat(&h.w_o));
            let q: Mat = z.iter().map(|r| vec_mat(r, &wq)).collect();
            let k: Mat = z.iter().map(|r| vec_mat(r, &wk)).collect();
            let v: Mat = z.iter().map(|r| vec_mat(r, &wv)).collect();
            let mut alpha = vec![vec![0.0; n]; n];
            for i in 0..n {
                let s: Vec<f64> = (0..=i).map(|j| dot(&q[i], &k[j]) / (dh as f64).sqrt()).collect();
                let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
                let total: f64 = e.iter().sum();
                for j in 0..=i {
                    alpha[i][j] = e[j] / total;
                }
                let mut mixed = vec![0.0; dh];
                for j in 0..=i {
                    for c in 0..dh {
                        mixed[c] += alpha[i][j] * v[j][c];
                    }
                }
                let out = vec_mat(&mixed, &wo);
                for c in 0..cfg.d_model {
                    next[i][c] += out[c];
                }
            }
            layer_alpha.push(alpha);
        }
        states.push(z);
        alphas.push(layer_alpha);
        z = next;
    }
    let last = &z[n - 1];
    let logits = tok.iter().map(|e| dot(e, last) / (cfg.d_model as f64).sqrt()).collect();
    Forward { states, alphas, logits }
}

/// Group percentages at `layer` from the oracle forward pass.
fn oracle_shares(model: &TinyTransformer, ctx: &Context, layer: usize) -> [f64; 3] {
    let f = forward(model, ctx);
    let groups = ctx.groups();
    let mut outputs: Vec<usize> = (0..groups.len()).filter(|&i| groups[i] == Group::Output).collect();
    if ctx.prefix.last().is_some_and(|t| t.is_eos()) {
        outputs.pop();
    }
    let mut totals = [0.0; 3];
    for (h, head) in model.layers()[layer].iter().enumerate() {
        let (wv, wo) = (to_mat(&head.w_v), to_mat(&head.w_o));
        for &i in &outputs {
            for (j, group) in groups.iter().enumerate().take(i + 1) {
                let slot = match group {
                    Group::Image => 0,
                    Group::Rationale => 1,
                    Group::Query => 2,
                    Group::Output => continue,
                };
                let contrib = vec_mat(&vec_mat(&f.states[layer][j], &wv), &wo);
                totals[slot] += f.alphas[layer][h][i][j] * norm(&contrib);
            }
        }
    }
    let sum: f64 = totals.iter().sum();
    totals.map(|t| 100.0 * t / sum)
}

fn ids(v: &[u32]) -> Vec<TokenId> {
    v.iter().map(|&t| TokenId(t)).collect()
}

fn mixed_context() -> Context {
    Context::new(ids(&[10, 11]))
        .with_image(ids(&[3, 4, 5, 6]))
        .with_rationale(ids(&[7, 8, 9]))
        .with_prefix(ids(&[12, 13, 0]))
}

#[test]
fn logits_match_forward_oracle() {
    let model = TinyTransformer::new(TinyConfig::default()).unwrap();
    for ctx in [
        mixed_context(),
        Context::new(ids(&[1])),
        Context::new(ids(&[2, 3])).with_rationale(ids(&[31, 30])).with_prefix(ids(&[5])),
    ] {
        let got = model.logits(&ctx).unwrap();
        let want = forward(&model, &ctx).logits;
        for (a, b) in got.as_slice().iter().zip(&want) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}

#[test]
fn trace_matches_forward_oracle() {
    let model = TinyTransformer::new(TinyConfig::default()).unwrap();
    let ctx = mixed_context();
    let trace = model.trace(&ctx).unwrap();
    let f = forward(&model, &ctx);
    for l in 0..trace.layers() {
        for h in 0..trace.heads(l) {
            let alpha = trace.alpha(l, h).unwrap();
            for i in 0..trace.len() {
                let row_sum: f64 = alpha.row(i).sum();
                assert!((row_sum - 1.0).abs() < 1e-9);
                for j in 0..trace.len() {
                    assert!(alpha[[i, j]] >= 0.0);
                    assert!((alpha[[i, j]] - f.alphas[l][h][i][j]).abs() < 1e-12);
                }
            }
            let head = &model.layers()[l][h];
            let (wv, wo) = (to_mat(&head.w_v), to_mat(&head.w_o));
            for i in [5, 9, 11] {
                for j in [0, 4, i] {
                    let want = f.alphas[l][h][i][j]
                        * norm(&vec_mat(&vec_mat(&f.states[l][j], &wv), &wo));
                    let got = contribution_score(&trace, l, h, i, j).unwrap();
                    assert!((got - want).abs() < 1e-12, "l{l} h{h} ({i},{j}): {got} vs {want}");
                }
            }
        }
    }
}

/// Group percentages of the default model (seed 42) on [`mixed_context`]
/// at the middle layer, recorded from the oracle forward pass.
fn golden_shares() -> [f64; 3] {
    let text = include_str!("fixtures/attention_golden.csv");
    let values: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    [values[0], values[1], values[2]]
}

#[test]
fn golden_report() {
    let model = TinyTransformer::new(TinyConfig::default()).unwrap();
    let ctx = mixed_context();
    let report = group_contributions(&model, &ctx, 2).unwrap();
    let oracle = oracle_shares(&model, &ctx, 2);
    let got = [report.image_pct, report.rationale_pct, report.query_pct];
    let golden = golden_shares();
    for k in 0..3 {
        assert!((got[k] - oracle[k]).abs() < 1e-9);
        assert!((got[k] - golden[k]).abs() < 1e-9, "{got:?}");
    }
    assert!((report.percentage_sum() - 100.0).abs() < 1e-9);
}

#[test]
fn oracle_agrees_on_every_layer() {
    let model = TinyTransformer::new(TinyConfig::default()).unwrap();
    let ctx = mixed_context();
    for layer in 0..4 {
        let r = group_contributions(&model, &ctx, layer).unwrap();
        let o = oracle_shares(&model, &ctx, layer);
        assert!((r.image_pct - o[0]).abs() < 1e-9);
        assert!((r.rationale_pct - o[1]).abs() < 1e-9);
        assert!((r.query_pct - o[2]).abs() < 1e-9);
    }
}

#[test]
fn w_ov_scale_invariance() {
    let model = TinyTransformer::new(TinyConfig::default()).unwrap();
    let base = model.trace(&mixed_context()).unwrap();
    for layer in 0..4 {
        let r = group_contributions_from_trace(&base, layer, true).unwrap();
        for c in [1e-3, 0.5, 3.0, 1e4] {
            let mut scaled = base.clone();
            scaled.scale_w_ov(c);
            let s = group_contributions_from_trace(&scaled, layer, true).unwrap();
            assert!((s.image_pct - r.image_pct).abs() < 1e-9);
            assert!((s.rationale_pct - r.rationale_pct).abs() < 1e-9);
            assert!((s.query_pct - r.query_pct).abs() < 1e-9);
            assert!((s.image - c * r.image).abs() <= 1e-9 * c * r.image.max(1.0));
        }
    }
}

#[test]
fn mirrored_channels_share_equally() {
    // Without position and segment embeddings, block-0 inputs depend only on
    // the token, so identical image and rationale tokens give identical
    // keys and values.
    let model = TinyTransformer::new(TinyConfig {
        positional: false,
        segment: false,
        ..TinyConfig::default()
    })
    .unwrap();
    let ctx = Context::new(ids(&[20, 21]))
        .with_image(ids(&[3, 9, 14]))
        .with_rationale(ids(&[3, 9, 14]))
        .with_prefix(ids(&[5, 6, 0]));
    let r = group_contributions(&model, &ctx, 0).unwrap();
    assert!((r.image_pct - r.rationale_pct).abs() < 1e-6, "{r:?}");
    assert!(r.image_pct > 0.0);
}

#[test]
fn removed_channel_scores_zero() {
    let model = TinyTransformer::new(TinyConfig::default()).unwrap();
    let full = mixed_context();
    for set in [ChannelSet::ImageQuery, ChannelSet::RationaleQuery, ChannelSet::Query] {
        let ctx = full.restrict(set, "t").unwrap();
        let r = group_contributions(&model, &ctx, 2).unwrap();
        if !set.has_image() {
            assert_eq!(r.image, 0.0);
            assert_eq!(r.image_pct, 0.0);
        }
        if !set.has_rationale() {
            assert_eq!(r.rationale, 0.0);
            assert_eq!(r.rationale_pct, 0.0);
        }
        assert!((r.percentage_sum() - 100.0).abs() < 1e-9);
    }
}
