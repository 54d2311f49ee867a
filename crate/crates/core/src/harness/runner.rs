// SPDX-License-Identifier: MIT OR Apache-2.0

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::task::{ChannelSplitTask, Intervention};
use crate::attention::{group_contributions, select_layer, ContributionReport};
use crate::error::{Error, Result};
use crate::model::{generate, ChannelSet, Context, Sampler, TinyTransformer};
use crate::numerics::TokenId;
use crate::policy::{ContrastDescriptor, ContrastSpace, PolicyKind, PolicySpec};
use crate::seeding::item_rng;

/// One line of a result table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub policy: String,
    pub lambda: Option<f64>,
    pub mode: String,
    pub accuracy: f64,
    pub n: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn find(&self, policy: &str, lambda: Option<f64>, mode: &str) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.policy == policy && r.lambda == lambda && r.mode == mode)
    }
}

/// Table label of a policy: its kind, plus contrast source and space for
/// contrastive kinds.
pub fn policy_label(spec: &PolicySpec) -> String {
    let mut label = spec.kind.as_str().to_string();
    if let Some(d) = spec.contrast_descriptor() {
        label.push(':');
        label.push_str(d.as_str());
    }
    if spec.contrast_space == ContrastSpace::Prob {
        label.push_str(":prob");
    }
    label
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Outcome {
    /// First decoded token; `None` when decoding had no support.
    pub answer: Option<TokenId>,
    pub correct: bool,
}

/// Binds a `swap-image-query` contrast to instance `i`'s partner.
pub fn resolve_policy(
    task: &ChannelSplitTask,
    policy: &PolicySpec,
    i: usize,
    rationale_from: usize,
) -> Result<PolicySpec> {
    if policy.contrast_descriptor() != Some(ContrastDescriptor::SwapImageQuery) {
        return Ok(policy.clone());
    }
    let j = task.partner[i];
    if j == i {
        return Err(Error::Config("swap-image-query contrast needs at least 2 instances".into()));
    }
    let mut ctx = Context::new(task.query()).with_image(task.image(j));
    if policy.kind == PolicyKind::ContrastivePair {
        ctx = ctx.with_rationale(task.rationales[rationale_from].clone());
    }
    Ok(policy.with_contrast_context(ctx))
}

/// Greedy answer decoding for every instance. With `swapped`, instance `i`
/// is given the rationale of its partner.
pub fn evaluate(task: &ChannelSplitTask, policy: &PolicySpec, swapped: bool) -> Result<Vec<Outcome>> {
    policy.validate()?;
    (0..task.len())
        .into_par_iter()
        .map(|i| {
            let from = if swapped { task.partner[i] } else { i };
            let resolved = resolve_policy(task, policy, i, from)?;
            let ctx = task.context(i, from);
            let answer = match generate(&task.model, &ctx, &resolved, 2, &mut Sampler::greedy()) {
                Ok(tokens) => tokens.first().copied(),
                Err(Error::EmptySupport) => None,
                Err(e) => return Err(e),
            };
            Ok(Outcome {
                answer,
                correct: answer == Some(task.correct_token(i)),
            })
        })
        .collect()
}

pub fn accuracy(outcomes: &[Outcome]) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    outcomes.iter().filter(|o| o.correct).count() as f64 / outcomes.len() as f64
}

fn row(cfg: &ExperimentConfig, policy: &PolicySpec, mode: &str, outcomes: &[Outcome]) -> ResultRow {
    ResultRow {
        policy: policy_label(policy),
        lambda: policy.reported_lambda(),
        mode: mode.to_string(),
        accuracy: accuracy(outcomes),
        n: outcomes.len(),
        seed: cfg.seed,
    }
}

/// Accuracy of every configured policy under the configured intervention.
pub fn run_comparison(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    let task = ChannelSplitTask::generate(cfg.task_params())?;
    let swapped = cfg.intervention == Intervention::Swap;
    let mode = cfg.intervention.as_str();
    let rows = cfg
        .policies
        .iter()
        .map(|p| Ok(row(cfg, p, mode, &evaluate(&task, p, swapped)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ResultTable { rows })
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterventionSummary {
    pub policy: String,
    pub lambda: Option<f64>,
    pub original: f64,
    pub swapped: f64,
}

impl InterventionSummary {
    /// `swapped − original`
    pub fn delta(&self) -> f64 {
        self.swapped - self.original
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterventionReport {
    /// Rows with mode `original` and `swapped`, per policy.
    pub table: ResultTable,
    pub summaries: Vec<InterventionSummary>,
}

/// Original versus swapped-rationale accuracy for every configured policy.
/// The task is always generated in swap mode.
pub fn run_intervention(cfg: &ExperimentConfig) -> Result<InterventionReport> {
    let cfg = ExperimentConfig {
        intervention: Intervention::Swap,
        ..cfg.clone()
    };
    cfg.validate()?;
    let task = ChannelSplitTask::generate(cfg.task_params())?;
    let mut table = ResultTable::default();
    let mut summaries = Vec::new();
    for p in &cfg.policies {
        let original = row(&cfg, p, "original", &evaluate(&task, p, false)?);
        let swapped = row(&cfg, p, "swapped", &evaluate(&task, p, true)?);
        summaries.push(InterventionSummary {
            policy: original.policy.clone(),
            lambda: original.lambda,
            original: original.accuracy,
            swapped: swapped.accuracy,
        });
        table.rows.push(original);
        table.rows.push(swapped);
    }
    Ok(InterventionReport { table, summaries })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepCurve {
    pub kind: PolicyKind,
    pub lambdas: Vec<f64>,
    pub accuracies: Vec<f64>,
    /// Index of the best `λ`; ties go to the smaller `λ`.
    pub best: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    /// Baseline rows (`image-only`, `rationale-only`) followed by one row per
    /// swept kind and `λ`.
    pub table: ResultTable,
    pub image_only: f64,
    pub rationale_only: f64,
    pub curves: Vec<SweepCurve>,
}

/// Argmax over `values`, ties broken toward the smaller key.
pub fn best_index(keys: &[f64], values: &[f64]) -> Option<usize> {
    (0..values.len()).reduce(|best, i| {
        if values[i] > values[best] || (values[i] == values[best] && keys[i] < keys[best]) {
            i
        } else {
            best
        }
    })
}

pub fn lambda_sweep(cfg: &ExperimentConfig, lambdas: &[f64]) -> Result<SweepReport> {
    let cfg = ExperimentConfig {
        lambdas: lambdas.to_vec(),
        ..cfg.clone()
    };
    cfg.validate()?;
    let task = ChannelSplitTask::generate(cfg.task_params())?;
    let swapped = cfg.intervention == Intervention::Swap;
    let mode = cfg.intervention.as_str();
    let mut table = ResultTable::default();

    let mut baseline = |p: PolicySpec| -> Result<f64> {
        let r = row(&cfg, &p, mode, &evaluate(&task, &p, swapped)?);
        let acc = r.accuracy;
        table.rows.push(r);
        Ok(acc)
    };
    let image_only = baseline(PolicySpec::image_only())?;
    let rationale_only = baseline(PolicySpec::rationale_only())?;

    let mut curves = Vec::new();
    for &kind in &cfg.sweep_kinds {
        let mut accuracies = Vec::with_capacity(lambdas.len());
        for &lambda in lambdas {
            let spec: PolicySpec = format!("{kind}:{lambda}").parse()?;
            let r = row(&cfg, &spec, mode, &evaluate(&task, &spec, swapped)?);
            accuracies.push(r.accuracy);
            table.rows.push(r);
        }
        let best = best_index(lambdas, &accuracies).expect("non-empty lambdas");
        curves.push(SweepCurve {
            kind,
            lambdas: lambdas.to_vec(),
            accuracies,
            best,
        });
    }
    Ok(SweepReport {
        table,
        image_only,
        rationale_only,
        curves,
    })
}

const ATTN_STREAM: u64 = 0xA77E_4710;

/// Conditioning configurations of the attention study, in report order.
pub const ATTN_CONFIGURATIONS: [ChannelSet; 3] =
    [ChannelSet::ImageQuery, ChannelSet::RationaleQuery, ChannelSet::Full];

/// Context redraws allowed before the study gives up on finding one that
/// yields a non-EOS output under every configuration.
pub const ATTN_MAX_DRAWS: u64 = 64;

/// Random image, rationale and query tokens (never EOS) for the attention
/// study; `draw` selects an independent stream.
pub fn attention_context(cfg: &ExperimentConfig, draw: u64) -> Context {
    let mut rng = item_rng(cfg.seed ^ ATTN_STREAM, draw);
    let vocab = cfg.attn_vocab.max(2);
    let mut tokens = |n: usize| -> Vec<TokenId> {
        (0..n).map(|_| TokenId::from(rng.random_range(1..vocab))).collect()
    };
    let image = tokens(cfg.attn_image_len);
    let rationale = tokens(cfg.attn_rationale_len);
    let query = tokens(cfg.attn_query_len);
    Context::new(query).with_image(image).with_rationale(rationale)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionStudy {
    pub configuration: ChannelSet,
    pub context: Context,
    pub output: Vec<TokenId>,
    pub report: ContributionReport,
}

/// Greedy decoding under each configuration of the tiny transformer, then
/// group contribution shares at the selected layer.
///
/// Contexts are drawn in order until every configuration decodes at least
/// one non-EOS token; all configurations share that context.
pub fn attention_study(cfg: &ExperimentConfig) -> Result<Vec<AttentionStudy>> {
    cfg.validate()?;
    let model = TinyTransformer::new(cfg.tiny_config())?;
    let layer = select_layer(&model, cfg.layer_select()?)?;
    for draw in 0..ATTN_MAX_DRAWS {
        let base = attention_context(cfg, draw);
        let mut decoded = Vec::with_capacity(ATTN_CONFIGURATIONS.len());
        for &set in &ATTN_CONFIGURATIONS {
            let policy = match set {
                ChannelSet::ImageQuery => PolicySpec::image_only(),
                ChannelSet::RationaleQuery => PolicySpec::rationale_only(),
                _ => PolicySpec::joint(),
            };
            let ctx = base.restrict(set, "attention study")?;
            let output = generate(&model, &ctx, &policy, cfg.attn_max_len, &mut Sampler::greedy())?;
            if output.first().map_or(true, |t| t.is_eos()) {
                break;
            }
            decoded.push((set, ctx, output));
        }
        if decoded.len() < ATTN_CONFIGURATIONS.len() {
            continue;
        }
        return decoded
            .into_iter()
            .map(|(configuration, context, output)| {
                let report = group_contributions(&model, &context.clone().with_prefix(output.clone()), layer)?;
                Ok(AttentionStudy {
                    configuration,
                    context,
                    output,
                    report,
                })
            })
            .collect();
    }
    Err(Error::NoOutputTokens)
}

/// Runs `f` on a pool of `threads` workers (0 = rayon's default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
