// SPDX-License-Identifier: MIT OR Apache-2.0

//! Flat TOML experiment configuration. Every key is optional; missing keys
//! take the values of [`ExperimentConfig::default`].

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::task::{Intervention, JointMode, TaskParams};
use crate::attention::LayerSelect;
use crate::error::{Error, Result};
use crate::model::TinyConfig;
use crate::oracle::OracleSweepConfig;
use crate::policy::{validate_lambda, PolicyKind, PolicySpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputFormat {
    #[serde(rename = "csv")]
    Csv,
    #[default]
    #[serde(rename = "csv+svg")]
    CsvSvg,
}

impl OutputFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::CsvSvg => "csv+svg",
        }
    }

    pub fn svg(self) -> bool {
        self == OutputFormat::CsvSvg
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "csv+svg" => Ok(OutputFormat::CsvSvg),
            other => Err(Error::Config(format!("format must be csv or csv+svg, got {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed for task generation and the oracle sweep.
    pub seed: u64,
    pub instances: usize,
    /// Number of answer tokens.
    pub answers: usize,
    /// `|A_x|`
    pub image_set_size: usize,
    /// `|A_r|`
    pub rationale_set_size: usize,
    pub joint: JointMode,
    pub intervention: Intervention,
    /// Policies compared by `run-comparison` and `intervene`.
    pub policies: Vec<PolicySpec>,
    /// `λ` values of the sweep.
    pub lambdas: Vec<f64>,
    /// Policy kinds swept over `lambdas`.
    pub sweep_kinds: Vec<PolicyKind>,
    pub out_dir: PathBuf,
    pub format: OutputFormat,
    /// Worker threads; 0 uses all cores.
    pub threads: usize,

    pub oracle_instances: usize,
    pub oracle_min_vocab: usize,
    pub oracle_max_vocab: usize,
    pub oracle_certify_instances: usize,
    pub oracle_perturbations: usize,
    pub oracle_epsilon: f64,

    pub attn_model_seed: u64,
    pub attn_vocab: usize,
    pub attn_layers: usize,
    pub attn_heads: usize,
    pub attn_d_model: usize,
    /// `middle` or a block index.
    pub attn_layer: String,
    pub attn_image_len: usize,
    pub attn_rationale_len: usize,
    pub attn_query_len: usize,
    pub attn_max_len: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let task = TaskParams::default();
        let oracle = OracleSweepConfig::default();
        let tiny = TinyConfig::default();
        let policies = [
            "image-only",
            "rationale-only",
            "joint",
            "red:1",
            "moe:0.5",
            "rev-poe:1",
            "contrastive:1:swap-image-query",
            "contrastive-pair:1:swap-image-query",
        ]
        .iter()
        .map(|s| s.parse().expect("valid default policy"))
        .collect();
        ExperimentConfig {
            seed: task.seed,
            instances: task.instances,
            answers: task.answers,
            image_set_size: task.image_set_size,
            rationale_set_size: task.rationale_set_size,
            joint: task.joint,
            intervention: task.intervention,
            policies,
            lambdas: vec![0.0, 0.1, 0.3, 0.5, 1.0, 10.0],
            sweep_kinds: vec![PolicyKind::Red],
            out_dir: PathBuf::from("results"),
            format: OutputFormat::CsvSvg,
            threads: 0,
            oracle_instances: oracle.instances,
            oracle_min_vocab: oracle.min_vocab,
            oracle_max_vocab: oracle.max_vocab,
            oracle_certify_instances: oracle.certify_instances,
            oracle_perturbations: oracle.perturbations,
            oracle_epsilon: oracle.epsilon,
            attn_model_seed: tiny.seed,
            attn_vocab: tiny.vocab_size,
            attn_layers: tiny.layers,
            attn_heads: tiny.heads,
            attn_d_model: tiny.d_model,
            attn_layer: "middle".into(),
            attn_image_len: 6,
            attn_rationale_len: 6,
            attn_query_len: 3,
            attn_max_len: 4,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn task_params(&self) -> TaskParams {
        TaskParams {
            instances: self.instances,
            answers: self.answers,
            image_set_size: self.image_set_size,
            rationale_set_size: self.rationale_set_size,
            joint: self.joint,
            intervention: self.intervention,
            seed: self.seed,
        }
    }

    pub fn oracle_config(&self) -> OracleSweepConfig {
        OracleSweepConfig {
            instances: self.oracle_instances,
            min_vocab: self.oracle_min_vocab,
            max_vocab: self.oracle_max_vocab,
            certify_instances: self.oracle_certify_instances,
            perturbations: self.oracle_perturbations,
            epsilon: self.oracle_epsilon,
            seed: self.seed,
        }
    }

    pub fn tiny_config(&self) -> TinyConfig {
        TinyConfig {
            vocab_size: self.attn_vocab,
            layers: self.attn_layers,
            heads: self.attn_heads,
            d_model: self.attn_d_model,
            seed: self.attn_model_seed,
            ..TinyConfig::default()
        }
    }

    pub fn layer_select(&self) -> Result<LayerSelect> {
        self.attn_layer.parse()
    }

    pub fn validate(&self) -> Result<()> {
        self.task_params().validate()?;
        for p in &self.policies {
            p.validate()?;
        }
        if self.lambdas.is_empty() {
            return Err(Error::Config("lambdas must not be empty".into()));
        }
        for &l in &self.lambdas {
            validate_lambda(l)?;
        }
        for kind in &self.sweep_kinds {
            if !kind.uses_lambda() {
                return Err(Error::Config(format!("sweep kind {kind} has no lambda")));
            }
        }
        if !(self.oracle_epsilon >= 0.0 && self.oracle_epsilon.is_finite()) {
            return Err(Error::Config("oracle_epsilon must be a non-negative number".into()));
        }
        self.layer_select()?;
        if self.attn_query_len == 0 || self.attn_max_len == 0 {
            return Err(Error::Config("attn_query_len and attn_max_len must be at least 1".into()));
        }
        Ok(())
    }
}
