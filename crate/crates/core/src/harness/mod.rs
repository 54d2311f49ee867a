// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment runner over synthetic channel-split tasks: policy comparison,
//! rationale-swap interventions, `λ` sweeps and the attention study, with
//! CSV and SVG output.

mod config;
pub mod report;
mod runner;
pub mod svg;
mod task;

pub use config::{ExperimentConfig, OutputFormat};
pub use report::{emit_results, parse_results_csv, read_results_csv, results_csv, RESULT_HEADER};
pub use runner::{
    accuracy, attention_context, attention_study, best_index, evaluate, lambda_sweep, policy_label,
    resolve_policy, run_comparison, run_intervention, with_threads, AttentionStudy,
    InterventionReport, InterventionSummary, Outcome, ResultRow, ResultTable, SweepCurve,
    SweepReport, ATTN_CONFIGURATIONS, ATTN_MAX_DRAWS,
};
pub use task::{
    derangement, image_tokens, rationale_query, rationale_tokens, ChannelSplitTask, Instance,
    Intervention, JointMode, Layout, TaskParams,
};
