// SPDX-License-Identifier: MIT OR Apache-2.0

use proptest::prelude::*;
use red_core::numerics::tol;
use red_core::policy::{contrastive_combine, moe_combine, reversed_poe_combine};
use red_core::{red_combine, red_logits, softmax, Logits, ProbDist};

/// Probability-space power of experts, evaluated term by term.
fn poe_oracle(a: &[f64], b: &[f64], lambda: f64) -> Vec<f64> {
    let w: Vec<f64> = a.iter().zip(b).map(|(x, r)| x * r.powf(lambda)).collect();
    let z: f64 = w.iter().sum();
    w.iter().map(|v| v / z).collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Pair of logit vectors of equal length, each with about a quarter of the
/// entries masked; at least one token is unmasked in both.
fn logit_pair(max_len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0, 0u8..8), 1..max_len).prop_map(|v| {
        let mut a = Vec::with_capacity(v.len());
        let mut b = Vec::with_capacity(v.len());
        for &(x, y, m) in &v {
            a.push(if m == 0 || m == 1 { f64::NEG_INFINITY } else { x });
            b.push(if m == 2 || m == 3 { f64::NEG_INFINITY } else { y });
        }
        a[0] = v[0].0;
        b[0] = v[0].1;
        (a, b)
    })
}

fn lambda() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), 0.0f64..10.0, Just(0.1), Just(0.3), Just(0.5), Just(1.0), Just(10.0)]
}

proptest! {
    #[test]
    fn log_space_equals_prob_space((a, b) in logit_pair(24), l in lambda()) {
        let la = Logits::new(a).unwrap();
        let lb = Logits::new(b).unwrap();
        let (pa, pb) = (softmax(&la).unwrap(), softmax(&lb).unwrap());
        let via_logits = softmax(&red_logits(&la, &lb, l).unwrap()).unwrap();
        let combined = red_combine(&pa, &pb, l).unwrap();
        let oracle = poe_oracle(pa.as_slice(), pb.as_slice(), l);
        prop_assert!(max_diff(via_logits.as_slice(), combined.as_slice()) < tol::NORMALIZATION);
        prop_assert!(max_diff(combined.as_slice(), &oracle) < tol::NORMALIZATION);
    }

    #[test]
    fn lambda_zero_collapse((a, b) in logit_pair(16)) {
        let pa = softmax(&Logits::new(a.clone()).unwrap()).unwrap();
        let pb = softmax(&Logits::new(b.clone()).unwrap()).unwrap();
        prop_assert!(red_combine(&pa, &pb, 0.0).unwrap().max_abs_diff(&pa).unwrap() < tol::NORMALIZATION);
        prop_assert!(reversed_poe_combine(&pa, &pb, 0.0).unwrap().max_abs_diff(&pb).unwrap() < tol::NORMALIZATION);
        let c = contrastive_combine(&Logits::new(a).unwrap(), &Logits::new(b).unwrap(), 0.0).unwrap();
        prop_assert!(c.max_abs_diff(&pa).unwrap() < tol::NORMALIZATION);
    }

    #[test]
    fn per_factor_shift_invariance((a, b) in logit_pair(16), l in lambda(), c in -100.0f64..100.0) {
        let la = Logits::new(a).unwrap();
        let lb = Logits::new(b).unwrap();
        let base = softmax(&red_logits(&la, &lb, l).unwrap()).unwrap();
        let shifted_x = softmax(&red_logits(&la.shifted(c), &lb, l).unwrap()).unwrap();
        let shifted_r = softmax(&red_logits(&la, &lb.shifted(c), l).unwrap()).unwrap();
        prop_assert!(base.max_abs_diff(&shifted_x).unwrap() < tol::NORMALIZATION);
        prop_assert!(base.max_abs_diff(&shifted_r).unwrap() < tol::NORMALIZATION);
    }

    #[test]
    fn large_lambda_picks_restricted_rationale_argmax(
        wx in prop::collection::vec(0u8..4, 5),
        wr in prop::collection::vec(1u32..1000, 5),
    ) {
        // Zero weights in p_x mask tokens; p_r has full support.
        prop_assume!(wx.iter().any(|&w| w > 0));
        let px = ProbDist::from_weights(wx.iter().map(|&w| w as f64).collect()).unwrap();
        let pr = ProbDist::from_weights(wr.iter().map(|&w| w as f64).collect()).unwrap();
        let mut shared: Vec<usize> = (0..5).filter(|&i| px.as_slice()[i] > 0.0).collect();
        shared.sort_by(|&i, &j| pr.as_slice()[j].total_cmp(&pr.as_slice()[i]));
        if shared.len() > 1 {
            prop_assume!(pr.as_slice()[shared[0]] > 1.001 * pr.as_slice()[shared[1]]);
        }
        let out = red_combine(&px, &pr, 1e6).unwrap();
        prop_assert_eq!(red_core::argmax_token(&out).index(), shared[0]);
    }

    #[test]
    fn moe_in_convex_hull((a, b) in logit_pair(16), l in 0.0f64..=1.0) {
        let pa = softmax(&Logits::new(a).unwrap()).unwrap();
        let pb = softmax(&Logits::new(b).unwrap()).unwrap();
        let m = moe_combine(&pa, &pb, l).unwrap();
        for ((x, r), v) in pa.as_slice().iter().zip(pb.as_slice()).zip(m.as_slice()) {
            prop_assert!(x.min(*r) - 1e-15 <= *v && *v <= x.max(*r) + 1e-15);
        }
    }

    #[test]
    fn contrastive_self_cancels((a, _b) in logit_pair(16), l in lambda()) {
        let la = Logits::new(a).unwrap();
        let c = contrastive_combine(&la, &la, l).unwrap();
        prop_assert!(c.max_abs_diff(&softmax(&la).unwrap()).unwrap() < tol::NORMALIZATION);
    }
}

#[test]
fn reversed_poe_examples() {
    let px = ProbDist::new(vec![0.6, 0.4]).unwrap();
    let pr = ProbDist::new(vec![0.1, 0.9]).unwrap();
    let got = reversed_poe_combine(&px, &pr, 2.0).unwrap();
    let z = 0.1 * 0.36 + 0.9 * 0.16;
    let want = [0.1 * 0.36 / z, 0.9 * 0.16 / z];
    assert!(max_diff(got.as_slice(), &want) < 1e-15);
    let red = red_combine(&px, &pr, 1.0).unwrap();
    assert!(reversed_poe_combine(&px, &pr, 1.0).unwrap().max_abs_diff(&red).unwrap() < tol::NORMALIZATION);
}
