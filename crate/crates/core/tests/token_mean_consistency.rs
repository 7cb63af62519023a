//! Self-normalisation bias of the token-mean aggregate, computed exactly.
//!
//! Each rollout has length `a` or `b` with probability 1/2 and contribution
//! `z = L²`, so the token mean `Σz/ΣL` is a ratio estimator of
//! `E[L²]/E[L]` (the per-prompt-mean estimand) with `O(1/n)` bias. Its
//! expectation is enumerated over the binomial count of long rollouts; the
//! aggregate is additive, so one pooled rollout per length class suffices.

use rollout_budget::estimator::{aggregate_per_prompt_mean, aggregate_token_mean, WeightedRollout};
use rollout_budget::PromptId;
use statrs::distribution::{Binomial, Discrete};

const A: u32 = 1;
const B: u32 = 3;

fn rollout(prompt: u32, z: f64, tokens: u32) -> WeightedRollout {
    WeightedRollout {
        prompt_id: PromptId(prompt),
        z,
        kept_tokens: tokens,
        aborted: false,
        propensity: 1.0,
        s_pre: 1.0,
    }
}

/// `E[token mean]` over `n` rollouts, and the mean kept-token count.
fn expected_token_mean(n: u64) -> (f64, f64) {
    let law = Binomial::new(0.5, n).unwrap();
    let mut e = 0.0;
    for k in 0..=n {
        let long = k as u32;
        let short = (n - k) as u32;
        let pooled = [
            rollout(0, (long * B * B) as f64, long * B),
            rollout(1, (short * A * A) as f64, short * A),
        ];
        e += law.pmf(k) * aggregate_token_mean(&pooled).value;
    }
    (e, n as f64 * (A + B) as f64 / 2.0)
}

/// `−E[z]/E[L]` from per-prompt means over the two equally likely classes.
fn estimand() -> f64 {
    let z = [rollout(0, (B * B) as f64, B), rollout(1, (A * A) as f64, A)];
    let l = [rollout(0, B as f64, B), rollout(1, A as f64, A)];
    -aggregate_per_prompt_mean(&z).value / aggregate_per_prompt_mean(&l).value
}

#[test]
fn gap_shrinks_tenfold_from_1e3_to_1e5_tokens() {
    let target = estimand();
    assert_eq!(target, -2.5);
    let (small, n_small) = expected_token_mean(500);
    let (large, n_large) = expected_token_mean(50_000);
    assert_eq!((n_small, n_large), (1e3, 1e5));
    let gap_small = (small - target).abs();
    let gap_large = (large - target).abs();
    println!("gap at N_t=1e3: {gap_small:.3e}, at N_t=1e5: {gap_large:.3e}");
    assert!(gap_small > 0.0);
    assert!(gap_large * 10.0 <= gap_small);
}
