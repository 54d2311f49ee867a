// SPDX-License-Identifier: MIT OR Apache-2.0

//! Rationale-enhanced decoding over abstract conditional language models.
//!
//! Next-token distributions conditioned separately on image evidence and on
//! a generated rationale are combined as a power of experts,
//! `p(y | x, q) · p(y | r, q)^λ / Z`, which is the closed-form optimum of a
//! KL-constrained maximization of the rationale log-likelihood. The crate
//! provides
//!
//! - [`numerics`]: log-space probability primitives,
//! - [`model`]: multi-channel contexts, a table-driven model and a tiny
//!   seeded transformer,
//! - [`policy`]: the decoding-policy family and its combiners,
//! - [`oracle`]: the KL objective, its closed-form optimum and a
//!   perturbation certifier,
//! - [`attention`]: per-group attention contribution shares,
//! - [`harness`]: synthetic channel-split tasks, interventions, λ sweeps and
//!   CSV/SVG reporting.

pub mod attention;
pub mod error;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod oracle;
pub mod policy;
pub mod seeding;

pub use error::{Error, Result};
pub use model::{next_token_dist, ConditionalModel, Context, TableLm, TinyConfig, TinyTransformer, Vocab};
pub use numerics::{argmax_token, kl_divergence, log_softmax, softmax, Logits, ProbDist, TokenId};
pub use policy::{red_combine, red_logits, step_distribution, PolicyKind, PolicySpec};
