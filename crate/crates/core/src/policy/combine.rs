// SPDX-License-Identifier: MIT OR Apache-2.0

//! Pure next-token combiners.

use crate::error::{Error, Result};
use crate::numerics::{log_softmax, same_len, softmax, Logits, ProbDist};

/// Largest accepted `λ`; keeps `λ · log p` finite for every representable `p > 0`.
pub const MAX_LAMBDA: f64 = 1e9;

pub fn validate_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=MAX_LAMBDA).contains(&lambda) {
        return Err(Error::LambdaOutOfRange {
            value: lambda,
            range: "[0, 1e9]",
        });
    }
    Ok(())
}

/// `λ · v` with `0 · (−∞) = 0`, so that `p^0 = 1` even where `p = 0`.
fn weighted(lambda: f64, v: f64) -> f64 {
    if lambda == 0.0 {
        0.0
    } else {
        lambda * v
    }
}

fn weighted_sum(a: &[f64], b: &[f64], lambda: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + weighted(lambda, *y)).collect()
}

/// Power-of-experts: `p_x(w) · p_r(w)^λ / Z`, evaluated in log space.
pub fn red_combine(p_x: &ProbDist, p_r: &ProbDist, lambda: f64) -> Result<ProbDist> {
    same_len(p_x.len(), p_r.len())?;
    validate_lambda(lambda)?;
    let scores = weighted_sum(
        p_x.log_probs().as_slice(),
        p_r.log_probs().as_slice(),
        lambda,
    );
    let scores = Logits::new(scores)?;
    softmax(&scores).map_err(|e| match e {
        Error::AllMasked => Error::EmptySupport,
        other => other,
    })
}

/// `log_softmax(logits_x) + λ · log_softmax(logits_r)`. Its softmax is
/// [`red_combine`] of the two softmaxed inputs.
pub fn red_logits(logits_x: &Logits, logits_r: &Logits, lambda: f64) -> Result<Logits> {
    same_len(logits_x.len(), logits_r.len())?;
    validate_lambda(lambda)?;
    let lx = log_softmax(logits_x)?;
    let lr = log_softmax(logits_r)?;
    Logits::new(weighted_sum(lx.as_slice(), lr.as_slice(), lambda))
}

/// `(1 − λ) p_x + λ p_r` for `λ ∈ [0, 1]`.
pub fn moe_combine(p_x: &ProbDist, p_r: &ProbDist, lambda: f64) -> Result<ProbDist> {
    same_len(p_x.len(), p_r.len())?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::LambdaOutOfRange {
            value: lambda,
            range: "[0, 1]",
        });
    }
    let mixed = p_x
        .as_slice()
        .iter()
        .zip(p_r.as_slice())
        .map(|(a, b)| (1.0 - lambda) * a + lambda * b)
        .collect();
    ProbDist::from_weights(mixed)
}

/// `p_r(w) · p_x(w)^λ / Z`: the power-of-experts with the roles swapped.
pub fn reversed_poe_combine(p_x: &ProbDist, p_r: &ProbDist, lambda: f64) -> Result<ProbDist> {
    red_combine(p_r, p_x, lambda)
}

/// Log-space contrast: `softmax((1+λ)·log_softmax(main) − λ·log_softmax(contrast))`.
///
/// Tokens masked in `main` stay masked. If some token has mass under `main`
/// but none under `contrast` (and `λ > 0`), its score is unbounded; the
/// result is then the limit in which the contrast assigns those tokens a
/// common vanishing mass: `main^(1+λ)` renormalized over exactly those tokens.
pub fn contrastive_combine(main: &Logits, contrast: &Logits, lambda: f64) -> Result<ProbDist> {
    same_len(main.len(), contrast.len())?;
    validate_lambda(lambda)?;
    let lm = log_softmax(main)?;
    if lambda == 0.0 {
        return softmax(&lm);
    }
    let lc = log_softmax(contrast)?;
    let boosted: Vec<bool> = lm
        .as_slice()
        .iter()
        .zip(lc.as_slice())
        .map(|(m, c)| *m > f64::NEG_INFINITY && *c == f64::NEG_INFINITY)
        .collect();
    let scores: Vec<f64> = if boosted.iter().any(|b| *b) {
        lm.as_slice()
            .iter()
            .zip(&boosted)
            .map(|(m, b)| if *b { (1.0 + lambda) * m } else { f64::NEG_INFINITY })
            .collect()
    } else {
        lm.as_slice()
            .iter()
            .zip(lc.as_slice())
            .map(|(m, c)| {
                if *m == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    (1.0 + lambda) * m - lambda * c
                }
            })
            .collect()
    };
    softmax(&Logits::new(scores)?)
}

/// Probability-space contrast `(1+λ)·p − λ·p′`, negative entries clamped to
/// zero, then renormalized.
pub fn contrastive_combine_prob(main: &ProbDist, contrast: &ProbDist, lambda: f64) -> Result<ProbDist> {
    same_len(main.len(), contrast.len())?;
    validate_lambda(lambda)?;
    let raw = main
        .as_slice()
        .iter()
        .zip(contrast.as_slice())
        .map(|(p, q)| ((1.0 + lambda) * p - lambda * q).max(0.0))
        .collect();
    ProbDist::from_weights(raw)
}
