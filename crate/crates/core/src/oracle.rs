// SPDX-License-Identifier: MIT OR Apache-2.0

//! KL-constrained reward maximization and its closed-form optimum.
//!
//! For a reference policy `π_ref`, reward `R` and temperature `β > 0`, the
//! objective `E_π[R] − β·KL(π ‖ π_ref)` is maximized by
//! `π*(a) = π_ref(a)·exp(R(a)/β) / Z`. With `π_ref = p(y|x,q)`,
//! `R = log p(y|r,q)` and `β = 1/λ` this is exactly the power-of-experts
//! distribution computed by [`red_combine`]. This module evaluates the
//! objective, builds `π*` along an independent probability-space route,
//! and certifies optimality by random perturbation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{kl_divergence, same_len, softmax, Logits, ProbDist};
use crate::policy::{red_combine, LAMBDA_GRID};
use crate::seeding::item_rng;

/// Per-token reward and KL temperature.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardSpec {
    /// `R(a)`; `-inf` excludes a token from the feasible set.
    pub reward: Vec<f64>,
    pub beta: f64,
}

impl RewardSpec {
    pub fn new(reward: Vec<f64>, beta: f64) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidDistribution(format!("beta must be positive, got {beta}")));
        }
        if let Some(r) = reward.iter().find(|r| r.is_nan() || **r == f64::INFINITY) {
            return Err(Error::InvalidDistribution(format!("reward entry {r}")));
        }
        Ok(RewardSpec { reward, beta })
    }

    /// Rationale-grounding reward `R = ln p_r` with `β = 1/λ`.
    pub fn rationale_grounding(p_r: &ProbDist, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::LambdaOutOfRange {
                value: lambda,
                range: "(0, inf)",
            });
        }
        Self::new(p_r.log_probs().into_vec(), 1.0 / lambda)
    }

    pub fn with_shift(&self, c: f64) -> Self {
        RewardSpec {
            reward: self.reward.iter().map(|r| r + c).collect(),
            beta: self.beta,
        }
    }

    /// Tokens with positive reference mass and finite reward.
    pub fn feasible(&self, pi_ref: &ProbDist) -> Vec<usize> {
        pi_ref
            .as_slice()
            .iter()
            .zip(&self.reward)
            .enumerate()
            .filter(|(_, (p, r))| **p > 0.0 && r.is_finite())
            .map(|(i, _)| i)
            .collect()
    }
}

/// `Σ π(a) R(a) − β · KL(π ‖ π_ref)`.
pub fn objective(pi: &ProbDist, pi_ref: &ProbDist, spec: &RewardSpec) -> Result<f64> {
    same_len(pi.len(), pi_ref.len())?;
    same_len(pi.len(), spec.reward.len())?;
    let mut expected = 0.0;
    for (token, (&p, &r)) in pi.as_slice().iter().zip(&spec.reward).enumerate() {
        if p == 0.0 {
            continue;
        }
        if r == f64::NEG_INFINITY {
            return Err(Error::SupportMismatch { token });
        }
        expected += p * r;
    }
    Ok(expected - spec.beta * kl_divergence(pi, pi_ref)?)
}

/// `π*(a) = π_ref(a)·exp(R(a)/β) / Z`, computed in probability space with
/// the reward exponent shifted by its maximum.
pub fn closed_form_optimal(pi_ref: &ProbDist, spec: &RewardSpec) -> Result<ProbDist> {
    same_len(pi_ref.len(), spec.reward.len())?;
    let support = spec.feasible(pi_ref);
    let shift = support
        .iter()
        .map(|&a| spec.reward[a] / spec.beta)
        .fold(f64::NEG_INFINITY, f64::max);
    if shift == f64::NEG_INFINITY {
        return Err(Error::EmptySupport);
    }
    let mut weights = vec![0.0; pi_ref.len()];
    for &a in &support {
        weights[a] = pi_ref[a] * (spec.reward[a] / spec.beta - shift).exp();
    }
    ProbDist::from_weights(weights)
}

/// Largest elementwise gap between [`red_combine`] and the closed-form
/// optimum with `R = ln p_r`, `β = 1/λ`.
pub fn verify_proposition1(p_x: &ProbDist, p_r: &ProbDist, lambda: f64) -> Result<f64> {
    let spec = RewardSpec::rationale_grounding(p_r, lambda)?;
    let red = red_combine(p_x, p_r, lambda)?;
    let optimum = closed_form_optimal(p_x, &spec)?;
    red.max_abs_diff(&optimum)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Certification {
    pub passed: bool,
    /// `max(objective(π′) − objective(π*))` over all draws.
    pub worst_violation: f64,
    pub checked: usize,
}

/// Compares `objective(π*)` against `n_perturbations` feasible alternatives.
///
/// Even-numbered draws are uniform on the simplex over the feasible
/// support; odd-numbered draws perturb `π*` by a Gaussian step of random
/// scale in `[1e-6, 1e-1]` and project back onto that simplex. Draw `k`
/// is seeded from `(seed, k)`, so results do not depend on thread count.
pub fn certify_optimality(
    pi_star: &ProbDist,
    pi_ref: &ProbDist,
    spec: &RewardSpec,
    n_perturbations: usize,
    epsilon: f64,
    seed: u64,
) -> Result<Certification> {
    if n_perturbations == 0 {
        return Err(Error::Config("n_perturbations must be at least 1".into()));
    }
    let support = spec.feasible(pi_ref);
    if support.is_empty() {
        return Err(Error::EmptySupport);
    }
    let best = objective(pi_star, pi_ref, spec)?;
    let worst = (0..n_perturbations)
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let mut rng = item_rng(seed, k as u64);
            let candidate = if k % 2 == 0 {
                simplex_draw(&mut rng, pi_ref.len(), &support)
            } else {
                local_draw(&mut rng, pi_star, &support)
            }?;
            Ok(objective(&candidate, pi_ref, spec)? - best)
        })
        .try_reduce(|| f64::NEG_INFINITY, |a, b| Ok(a.max(b)))?;
    Ok(Certification {
        passed: worst <= epsilon,
        worst_violation: worst,
        checked: n_perturbations,
    })
}

fn simplex_draw(rng: &mut ChaCha8Rng, len: usize, support: &[usize]) -> Result<ProbDist> {
    let mut w = vec![0.0; len];
    for &a in support {
        let e: f64 = Exp1.sample(rng);
        w[a] = e;
    }
    ProbDist::from_weights(w)
}

fn local_draw(rng: &mut ChaCha8Rng, center: &ProbDist, support: &[usize]) -> Result<ProbDist> {
    let scale = 10f64.powf(rng.random_range(-6.0..-1.0));
    let moved: Vec<f64> = support
        .iter()
        .map(|&a| {
            let g: f64 = StandardNormal.sample(rng);
            center[a] + scale * g
        })
        .collect();
    let projected = project_to_simplex(&moved);
    let mut w = vec![0.0; center.len()];
    for (&a, p) in support.iter().zip(projected) {
        w[a] = p;
    }
    ProbDist::from_weights(w)
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// A random pair of distributions with a non-empty shared support.
///
/// Logits are Gaussian with a random spread; about a fifth of draws also
/// mask a random subset of tokens in each distribution.
pub fn random_pair(rng: &mut ChaCha8Rng, vocab: usize) -> (ProbDist, ProbDist) {
    let keep = rng.random_range(0..vocab);
    let draw = |rng: &mut ChaCha8Rng| {
        let spread = rng.random_range(0.1..5.0);
        let mask = rng.random_bool(0.2);
        let values = (0..vocab)
            .map(|i| {
                let z: f64 = StandardNormal.sample(rng);
                if mask && i != keep && rng.random_bool(0.3) {
                    f64::NEG_INFINITY
                } else {
                    spread * z
                }
            })
            .collect();
        softmax(&Logits::new(values).expect("finite or masked")).expect("one unmasked token")
    };
    let p_x = draw(rng);
    let p_r = draw(rng);
    (p_x, p_r)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleSweepConfig {
    pub instances: usize,
    pub min_vocab: usize,
    pub max_vocab: usize,
    pub certify_instances: usize,
    pub perturbations: usize,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for OracleSweepConfig {
    fn default() -> Self {
        OracleSweepConfig {
            instances: 10_000,
            min_vocab: 2,
            max_vocab: 32,
            certify_instances: 100,
            perturbations: 10_000,
            epsilon: 1e-9,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleSweepReport {
    pub instances: usize,
    pub max_difference: f64,
    pub certify_instances: usize,
    pub perturbations: usize,
    pub worst_violation: f64,
    pub violations: usize,
}

/// Runs [`verify_proposition1`] over random instances (λ cycling through
/// the standard grid) and [`certify_optimality`] on a further set.
pub fn run_oracle_sweep(cfg: &OracleSweepConfig) -> Result<OracleSweepReport> {
    if cfg.min_vocab < 2 || cfg.max_vocab < cfg.min_vocab {
        return Err(Error::Config("vocab range must satisfy 2 <= min <= max".into()));
    }
    let draw = |stream: u64, i: usize| {
        let mut rng = item_rng(cfg.seed ^ stream, i as u64);
        let vocab = rng.random_range(cfg.min_vocab..=cfg.max_vocab);
        let (p_x, p_r) = random_pair(&mut rng, vocab);
        (p_x, p_r, LAMBDA_GRID[i % LAMBDA_GRID.len()])
    };

    let max_difference = (0..cfg.instances)
        .into_par_iter()
        .map(|i| {
            let (p_x, p_r, lambda) = draw(0, i);
            verify_proposition1(&p_x, &p_r, lambda)
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))?;

    let certs = (0..cfg.certify_instances)
        .into_par_iter()
        .map(|i| {
            let (p_x, p_r, lambda) = draw(0xC3A7_1F1E, i);
            let spec = RewardSpec::rationale_grounding(&p_r, lambda)?;
            let star = closed_form_optimal(&p_x, &spec)?;
            certify_optimality(
                &star,
                &p_x,
                &spec,
                cfg.perturbations,
                cfg.epsilon,
                crate::seeding::derive_seed(cfg.seed, i as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(OracleSweepReport {
        instances: cfg.instances,
        max_difference,
        certify_instances: cfg.certify_instances,
        perturbations: cfg.perturbations,
        worst_violation: certs
            .iter()
            .map(|c| c.worst_violation)
            .fold(f64::NEG_INFINITY, f64::max),
        violations: certs.iter().filter(|c| !c.passed).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(v: &[f64]) -> ProbDist {
        ProbDist::new(v.to_vec()).unwrap()
    }

    #[test]
    fn objective_at_reference() {
        let pi_ref = dist(&[0.2, 0.3, 0.5]);
        let spec = RewardSpec::new(vec![1.0, -2.0, 0.5], 3.0).unwrap();
        let expected = 0.2 * 1.0 + 0.3 * -2.0 + 0.5 * 0.5;
        assert_eq!(objective(&pi_ref, &pi_ref, &spec).unwrap(), expected);
    }

    #[test]
    fn objective_constant_reward() {
        let pi_ref = dist(&[0.25, 0.75]);
        let pi = dist(&[0.5, 0.5]);
        let spec = RewardSpec::new(vec![2.0, 2.0], 1.5).unwrap();
        let kl = kl_divergence(&pi, &pi_ref).unwrap();
        let got = objective(&pi, &pi_ref, &spec).unwrap();
        assert!((got - (2.0 - 1.5 * kl)).abs() < 1e-15);
        assert!(got < objective(&pi_ref, &pi_ref, &spec).unwrap());
    }

    #[test]
    fn objective_three_token_instance() {
        let pi = [0.2, 0.5, 0.3];
        let pi_ref = [1.0 / 3.0; 3];
        let r = [0.1f64.ln(), 0.8f64.ln(), 0.1f64.ln()];
        let beta = 2.0;
        let mut oracle = 0.0;
        for a in 0..3 {
            oracle += pi[a] * r[a];
        }
        for a in 0..3 {
            oracle -= beta * pi[a] * (pi[a] / pi_ref[a]).ln();
        }
        let spec = RewardSpec::new(r.to_vec(), beta).unwrap();
        let got = objective(&dist(&pi), &ProbDist::new(pi_ref.to_vec()).unwrap(), &spec).unwrap();
        assert!((got - oracle).abs() < 1e-13, "{got} vs {oracle}");
    }

    #[test]
    fn objective_rejects_infeasible() {
        let spec = RewardSpec::new(vec![0.0, f64::NEG_INFINITY], 1.0).unwrap();
        let pi_ref = dist(&[0.5, 0.5]);
        assert!(matches!(
            objective(&pi_ref, &pi_ref, &spec),
            Err(Error::SupportMismatch { token: 1 })
        ));
        let spec = RewardSpec::new(vec![0.0, 0.0], 1.0).unwrap();
        assert!(matches!(
            objective(&pi_ref, &dist(&[1.0, 0.0]), &spec),
            Err(Error::SupportMismatch { token: 1 })
        ));
    }

    #[test]
    fn closed_form_examples() {
        let pi_ref = dist(&[0.6, 0.3, 0.1]);
        let zero = RewardSpec::new(vec![0.0; 3], 0.7).unwrap();
        let star = closed_form_optimal(&pi_ref, &zero).unwrap();
        assert!(star.max_abs_diff(&pi_ref).unwrap() < 1e-15);

        let p_r = dist(&[0.2, 0.5, 0.3]);
        let uniform = dist(&[1.0 / 3.0; 3]);
        let star = closed_form_optimal(&uniform, &RewardSpec::rationale_grounding(&p_r, 1.0).unwrap()).unwrap();
        assert!(star.max_abs_diff(&p_r).unwrap() < 1e-15);

        let spec = RewardSpec::new(p_r.log_probs().into_vec(), 2.0).unwrap();
        let star = closed_form_optimal(&pi_ref, &spec).unwrap();
        let red = red_combine(&pi_ref, &p_r, 0.5).unwrap();
        assert!(star.max_abs_diff(&red).unwrap() < 1e-12);
    }

    #[test]
    fn closed_form_empty_support() {
        let spec = RewardSpec::new(vec![f64::NEG_INFINITY, 0.0], 1.0).unwrap();
        assert!(matches!(
            closed_form_optimal(&dist(&[1.0, 0.0]), &spec),
            Err(Error::EmptySupport)
        ));
    }

    #[test]
    fn closed_form_shift_invariant() {
        let pi_ref = dist(&[0.1, 0.2, 0.3, 0.4]);
        let spec = RewardSpec::new(vec![-1.0, 0.5, 2.0, f64::NEG_INFINITY], 0.8).unwrap();
        let a = closed_form_optimal(&pi_ref, &spec).unwrap();
        let b = closed_form_optimal(&pi_ref, &spec.with_shift(37.25)).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
        assert_eq!(a[3], 0.0);
    }

    #[test]
    fn lambda_beta_correspondence() {
        let p_x = dist(&[0.5, 0.25, 0.25]);
        let p_r = dist(&[0.1, 0.6, 0.3]);
        let a = RewardSpec::rationale_grounding(&p_r, 2.0).unwrap();
        let b = RewardSpec::rationale_grounding(&p_r, 1.0).unwrap();
        assert_eq!(a.beta * 2.0, b.beta);
        let red = red_combine(&p_x, &p_r, 2.0).unwrap();
        assert!(closed_form_optimal(&p_x, &a).unwrap().max_abs_diff(&red).unwrap() < 1e-12);
    }

    #[test]
    fn degenerate_reward_spike() {
        let p_x = dist(&[0.25, 0.25, 0.5]);
        let p_r = dist(&[1.0, 0.0, 0.0]);
        assert!(verify_proposition1(&p_x, &p_r, 0.5).unwrap() < 1e-10);
        let star = closed_form_optimal(&p_x, &RewardSpec::rationale_grounding(&p_r, 0.5).unwrap()).unwrap();
        assert_eq!(star.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn verify_rejects_zero_lambda() {
        let p = dist(&[0.5, 0.5]);
        assert!(verify_proposition1(&p, &p, 0.0).is_err());
    }

    #[test]
    fn reference_is_suboptimal_for_nonconstant_reward() {
        let pi_ref = dist(&[0.5, 0.3, 0.2]);
        let spec = RewardSpec::new(vec![0.0, 1.0, -1.0], 1.0).unwrap();
        let star = closed_form_optimal(&pi_ref, &spec).unwrap();
        assert!(objective(&star, &pi_ref, &spec).unwrap() > objective(&pi_ref, &pi_ref, &spec).unwrap());
    }

    #[test]
    fn large_beta_stays_near_reference() {
        let pi_ref = dist(&[0.5, 0.3, 0.2]);
        let spec = RewardSpec::new(vec![0.1f64.ln(), 0.8f64.ln(), 0.1f64.ln()], 1e6).unwrap();
        let star = closed_form_optimal(&pi_ref, &spec).unwrap();
        assert!(star.total_variation(&pi_ref).unwrap() < 1e-5);
    }

    #[test]
    fn certification_passes_at_optimum_and_fails_elsewhere() {
        let pi_ref = dist(&[0.4, 0.3, 0.2, 0.1]);
        let spec = RewardSpec::new(vec![0.2f64.ln(), 0.1f64.ln(), 0.4f64.ln(), 0.3f64.ln()], 0.5).unwrap();
        let star = closed_form_optimal(&pi_ref, &spec).unwrap();
        let cert = certify_optimality(&star, &pi_ref, &spec, 2_000, 1e-9, 11).unwrap();
        assert!(cert.passed, "{cert:?}");
        assert_eq!(cert.checked, 2_000);
        let cert = certify_optimality(&pi_ref, &pi_ref, &spec, 2_000, 1e-9, 11).unwrap();
        assert!(!cert.passed);
        assert!(certify_optimality(&star, &pi_ref, &spec, 0, 1e-9, 11).is_err());
    }

    #[test]
    fn simplex_projection() {
        let p = project_to_simplex(&[0.5, 0.5]);
        assert_eq!(p, vec![0.5, 0.5]);
        let p = project_to_simplex(&[2.0, 0.0]);
        assert_eq!(p, vec![1.0, 0.0]);
        let p = project_to_simplex(&[0.4, 0.4, 0.4]);
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }
}
