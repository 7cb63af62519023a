//! Cost-weighted Neyman allocation and the budget-closing dual bisection.
//!
//! For independent rollouts with per-prompt spread `σ_q` and expected length
//! `L̄_q`, the variance `V(n) = Σ σ_q²/n_q` under `Σ n_q·L̄_q = B` is minimised
//! by `n_q* = σ_q / √(λ*·L̄_q)` with `√λ* = S/B`, `S = Σ σ_q·√L̄_q`, and
//! `V* = S²/B`. [`continuous_neyman`] evaluates that closed form;
//! [`solve_dual`] finds `λ*` by warm-started bisection on the plug-in
//! surrogates and rounds to integer counts.

use serde::{Deserialize, Serialize};

use crate::error::{require_positive, require_same_len, Error, Result};
use crate::estimator::stratification_weight;
use crate::types::{AllocationPlan, PromptId};

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousAllocation {
    pub n_star: Vec<f64>,
    pub lambda_star: f64,
    pub v_star: f64,
}

fn validate(sigmas: &[f64], lengths: &[f64]) -> Result<()> {
    if sigmas.is_empty() {
        return Err(Error::Empty("prompt list"));
    }
    require_same_len(sigmas.len(), lengths.len())?;
    for &s in sigmas {
        require_positive("sigma", s)?;
    }
    for &l in lengths {
        require_positive("length", l)?;
    }
    Ok(())
}

/// Closed-form optimum of `Σ σ_q²/n_q` subject to `Σ n_q·L_q = budget`.
pub fn continuous_neyman(
    sigmas: &[f64],
    lengths: &[f64],
    budget: f64,
) -> Result<ContinuousAllocation> {
    validate(sigmas, lengths)?;
    require_positive("budget", budget)?;
    let s: f64 = sigmas
        .iter()
        .zip(lengths)
        .map(|(sig, len)| sig * len.sqrt())
        .sum();
    let scale = budget / s;
    let n_star = sigmas
        .iter()
        .zip(lengths)
        .map(|(sig, len)| scale * sig / len.sqrt())
        .collect();
    Ok(ContinuousAllocation {
        n_star,
        lambda_star: (s / budget).powi(2),
        v_star: s * s / budget,
    })
}

/// `V(n) = Σ σ_q² / n_q`.
pub fn estimator_variance(counts: &[f64], sigmas: &[f64]) -> Result<f64> {
    require_same_len(counts.len(), sigmas.len())?;
    let mut v = 0.0;
    for (&n, &s) in counts.iter().zip(sigmas) {
        require_positive("count", n)?;
        if !(s.is_finite() && s >= 0.0) {
            return Err(Error::InvalidInput {
                name: "sigma",
                value: s,
                reason: "must be finite and non-negative",
            });
        }
        v += s * s / n;
    }
    Ok(v)
}

/// Variance of the uniform allocation relative to the optimum at matched
/// budget: `(Σ σ_q²)(Σ L_k) / (Σ σ_q √L_q)²`. Always `≥ 1`.
pub fn uniform_ratio(sigmas: &[f64], lengths: &[f64]) -> Result<f64> {
    validate(sigmas, lengths)?;
    let sum_sq: f64 = sigmas.iter().map(|s| s * s).sum();
    let sum_len: f64 = lengths.iter().sum();
    let s: f64 = sigmas
        .iter()
        .zip(lengths)
        .map(|(sig, len)| sig * len.sqrt())
        .sum();
    Ok(sum_sq * sum_len / (s * s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AllocatorConfig {
    pub n_min: u32,
    pub eps_pre: f64,
    /// Relative closure `|Φ(λ) − B| / B` at which bisection stops. Since
    /// `Φ ∝ λ^{-1/2}`, λ itself is then accurate to about twice this.
    pub tolerance: f64,
    pub max_iters: u32,
    /// Run exactly this many bisection steps instead of iterating to
    /// `tolerance`; ten steps is the usual setting.
    pub fixed_iters: Option<u32>,
    pub closure: DualClosure,
}

/// Which token demand the dual is solved against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DualClosure {
    /// Close the continuous demand `Φ(λ) = B`; rounding may then overshoot.
    #[default]
    Relaxed,
    /// After closing `Φ`, move to the smallest `λ` whose rounded and
    /// clipped demand `Σ n_q(λ) L̂_q` fits in the budget.
    Realized,
}

impl Default for AllocatorConfig {
    fn default() -> Self {
        Self {
            n_min: 1,
            eps_pre: 0.05,
            tolerance: 1e-7,
            max_iters: 64,
            fixed_iters: None,
            closure: DualClosure::Relaxed,
        }
    }
}

/// Continuous token demand `Φ(λ) = Σ (ŝ_q / √(λ L̂_q)) · L̂_q`.
pub fn token_demand(s_hats: &[f64], l_hats: &[f64], lambda: f64) -> f64 {
    s_hats
        .iter()
        .zip(l_hats)
        .map(|(s, l)| s / (lambda * l).sqrt() * l)
        .sum()
}

const BRACKET_FACTOR: f64 = 16.0;
const MAX_EXPANSIONS: u32 = 200;

/// Find `λ*` with `Φ(λ*) ≈ budget` and round to per-prompt counts.
///
/// The bracket starts at `[λ_warm/16, 16·λ_warm]` and slides by ×16 until it
/// contains the root; bisection then runs on `log λ`. Counts are
/// `max(n_min, round_half_even(ŝ_q / √(λ* L̂_q)))` with no budget repair.
/// Under [`DualClosure::Realized`] λ* is then raised to the smallest value
/// whose rounded counts fit the budget. If `n_min · Σ L̂_q` exceeds the budget the n_min plan is returned with
/// `budget_overrun` set; beyond twice the budget this is a configuration error.
pub fn solve_dual(
    prompts: &[PromptId],
    s_hats: &[f64],
    l_hats: &[f64],
    budget: f64,
    lambda_warm: f64,
    config: &AllocatorConfig,
) -> Result<AllocationPlan> {
    validate(s_hats, l_hats)?;
    require_same_len(prompts.len(), s_hats.len())?;
    require_positive("budget", budget)?;
    require_positive("lambda_warm", lambda_warm)?;
    if config.n_min == 0 {
        return Err(Error::Config("n_min must be at least 1".into()));
    }

    let n_min = config.n_min as f64;
    let floor_tokens = n_min * l_hats.iter().sum::<f64>();
    if floor_tokens > 2.0 * budget {
        return Err(Error::BudgetInfeasible {
            required: floor_tokens,
            budget,
        });
    }

    let phi = |lambda: f64| token_demand(s_hats, l_hats, lambda);
    let closed = |lambda: f64| ((phi(lambda) - budget) / budget).abs() <= config.tolerance;

    let mut lo = lambda_warm / BRACKET_FACTOR;
    let mut hi = lambda_warm * BRACKET_FACTOR;
    let mut expansions = 0;
    while phi(lo) < budget {
        hi = lo;
        lo /= BRACKET_FACTOR;
        expansions += 1;
        if expansions > MAX_EXPANSIONS || lo <= 0.0 {
            return Err(Error::InvalidInput {
                name: "lambda_warm",
                value: lambda_warm,
                reason: "bracket expansion failed",
            });
        }
    }
    while phi(hi) > budget {
        lo = hi;
        hi *= BRACKET_FACTOR;
        expansions += 1;
        if expansions > MAX_EXPANSIONS || !hi.is_finite() {
            return Err(Error::InvalidInput {
                name: "lambda_warm",
                value: lambda_warm,
                reason: "bracket expansion failed",
            });
        }
    }

    let mut iterations = 0;
    let lambda_star = match config.fixed_iters {
        Some(k) => {
            for _ in 0..k {
                let mid = (lo * hi).sqrt();
                if phi(mid) > budget {
                    lo = mid;
                } else {
                    hi = mid;
                }
                iterations += 1;
            }
            (lo * hi).sqrt()
        }
        None => {
            let mut mid = (lo * hi).sqrt();
            while !closed(mid) && iterations < config.max_iters {
                if phi(mid) > budget {
                    lo = mid;
                } else {
                    hi = mid;
                }
                mid = (lo * hi).sqrt();
                iterations += 1;
            }
            mid
        }
    };

    let budget_overrun = floor_tokens > budget;
    let counts_at = |lambda: f64| -> Vec<u32> {
        s_hats
            .iter()
            .zip(l_hats)
            .map(|(s, l)| {
                let n = (s / (lambda * l).sqrt()).round_ties_even();
                (n.min(u32::MAX as f64) as u32).max(config.n_min)
            })
            .collect()
    };
    let lambda_star = if config.closure == DualClosure::Realized && !budget_overrun {
        let (lambda, extra) = close_realized(lambda_star, budget, |lambda| {
            counts_at(lambda)
                .iter()
                .zip(l_hats)
                .map(|(&n, l)| n as f64 * l)
                .sum()
        });
        iterations += extra;
        lambda
    } else {
        lambda_star
    };
    let counts: Vec<u32> = if budget_overrun {
        vec![config.n_min; s_hats.len()]
    } else {
        counts_at(lambda_star)
    };

    let predicted_tokens = counts.iter().zip(l_hats).map(|(&n, l)| n as f64 * l).sum();
    let n_bar = counts.iter().map(|&n| n as f64).sum::<f64>() / counts.len() as f64;
    let s_pre = counts
        .iter()
        .map(|&n| stratification_weight(n, n_bar, config.eps_pre))
        .collect();

    Ok(AllocationPlan {
        prompts: prompts.to_vec(),
        counts,
        lambda_star,
        s_pre,
        predicted_tokens,
        budget_overrun,
        iterations,
    })
}

/// Smallest `λ` (to relative 1e-12) with `demand(λ) ≤ budget`, starting
/// from `start`. `demand` is non-increasing and meets the budget as `λ → ∞`.
fn close_realized(start: f64, budget: f64, demand: impl Fn(f64) -> f64) -> (f64, u32) {
    let mut iterations = 0;
    let (mut lo, mut hi) = if demand(start) <= budget {
        let mut lo = start;
        while demand(lo) <= budget && iterations < MAX_EXPANSIONS {
            lo /= 2.0;
            iterations += 1;
        }
        (lo, lo * 2.0)
    } else {
        let mut hi = start;
        while demand(hi) > budget && iterations < MAX_EXPANSIONS {
            hi *= 2.0;
            iterations += 1;
        }
        (hi / 2.0, hi)
    };
    while hi / lo - 1.0 > 1e-12 && iterations < 4 * MAX_EXPANSIONS {
        let mid = (lo * hi).sqrt();
        if demand(mid) <= budget {
            hi = mid;
        } else {
            lo = mid;
        }
        iterations += 1;
    }
    (hi, iterations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(m: usize) -> Vec<PromptId> {
        (0..m as u32).map(PromptId).collect()
    }

    #[test]
    fn symmetric_closed_form() {
        let a = continuous_neyman(&[1.0, 1.0], &[1.0, 1.0], 4.0).unwrap();
        assert_eq!(a.n_star, vec![2.0, 2.0]);
        assert!((a.lambda_star - 0.25).abs() < 1e-15);
        assert!((a.v_star - 1.0).abs() < 1e-15);
    }

    #[test]
    fn asymmetric_closed_form() {
        let a = continuous_neyman(&[1.0, 2.0], &[4.0, 1.0], 8.0).unwrap();
        assert!((a.n_star[0] - 1.0).abs() < 1e-12);
        assert!((a.n_star[1] - 4.0).abs() < 1e-12);
        assert!((a.v_star - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cold_start_is_uniform_at_four() {
        let m = 128;
        let sig = vec![0.01; m];
        let len = vec![1536.0; m];
        let a = continuous_neyman(&sig, &len, 4.0 * m as f64 * 1536.0).unwrap();
        assert!(a.n_star.iter().all(|&n| (n - 4.0).abs() < 1e-9));
    }

    #[test]
    fn neyman_rejects_bad_input() {
        assert!(continuous_neyman(&[], &[], 1.0).is_err());
        assert!(continuous_neyman(&[0.0], &[1.0], 1.0).is_err());
        assert!(continuous_neyman(&[1.0], &[-1.0], 1.0).is_err());
        assert!(continuous_neyman(&[1.0], &[1.0], 0.0).is_err());
        assert!(continuous_neyman(&[1.0, 2.0], &[1.0], 1.0).is_err());
    }

    #[test]
    fn variance_examples() {
        assert_eq!(estimator_variance(&[2.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(estimator_variance(&[1.0, 4.0], &[1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(estimator_variance(&[3.0, 7.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!(estimator_variance(&[0.0], &[1.0]).is_err());
    }

    #[test]
    fn uniform_ratio_examples() {
        assert!((uniform_ratio(&[1.0, 1.0], &[1.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((uniform_ratio(&[1.0, 2.0], &[4.0, 1.0]).unwrap() - 25.0 / 16.0).abs() < 1e-15);
        for c in [1e-3, 0.7, 42.0] {
            let r = uniform_ratio(&[c, 2.0 * c], &[4.0, 1.0]).unwrap();
            assert!((r - 25.0 / 16.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dual_single_prompt() {
        let plan = solve_dual(
            &ids(1),
            &[1.0],
            &[100.0],
            400.0,
            1.0,
            &AllocatorConfig::default(),
        )
        .unwrap();
        assert_eq!(plan.counts, vec![4]);
        assert!((plan.lambda_star - 1.0 / 1600.0).abs() / (1.0 / 1600.0) < 2.1e-6);
        assert!(!plan.budget_overrun);
    }

    #[test]
    fn dual_symmetric_integer_budget() {
        let m = 16;
        for k in 1..6u32 {
            let plan = solve_dual(
                &ids(m),
                &vec![0.3; m],
                &vec![250.0; m],
                k as f64 * m as f64 * 250.0,
                7.0,
                &AllocatorConfig::default(),
            )
            .unwrap();
            assert!(
                plan.counts.iter().all(|&n| n == k),
                "k={k}: {:?}",
                plan.counts
            );
            assert!(plan.s_pre.iter().all(|&s| s == 1.0));
        }
    }

    #[test]
    fn dual_lambda_decreases_with_budget() {
        let s = [0.5, 1.0, 2.0];
        let l = [100.0, 300.0, 50.0];
        let mut prev_lambda = f64::INFINITY;
        let mut prev_counts = vec![0u32; 3];
        for b in [1e3, 1e4, 1e5, 1e6, 1e7] {
            let plan = solve_dual(&ids(3), &s, &l, b, 1e-3, &AllocatorConfig::default()).unwrap();
            assert!(plan.lambda_star < prev_lambda);
            assert!(plan.counts.iter().zip(&prev_counts).all(|(a, b)| a >= b));
            prev_lambda = plan.lambda_star;
            prev_counts = plan.counts;
        }
    }

    #[test]
    fn dual_overrun_and_infeasible() {
        let cfg = AllocatorConfig {
            n_min: 2,
            ..Default::default()
        };
        // n_min·ΣL = 2·300 = 600 in (B, 2B] for B = 400
        let plan = solve_dual(&ids(3), &[1.0, 2.0, 3.0], &[100.0; 3], 400.0, 1.0, &cfg).unwrap();
        assert!(plan.budget_overrun);
        assert_eq!(plan.counts, vec![2, 2, 2]);
        let err = solve_dual(&ids(3), &[1.0, 2.0, 3.0], &[100.0; 3], 299.0, 1.0, &cfg);
        assert!(matches!(err, Err(Error::BudgetInfeasible { .. })));
    }

    #[test]
    fn dual_rejects_bad_warm_start() {
        let cfg = AllocatorConfig::default();
        assert!(solve_dual(&ids(1), &[1.0], &[1.0], 1.0, f64::NAN, &cfg).is_err());
        assert!(solve_dual(&ids(1), &[1.0], &[1.0], 1.0, 0.0, &cfg).is_err());
        assert!(solve_dual(&ids(1), &[1.0], &[1.0], 1.0, f64::INFINITY, &cfg).is_err());
    }

    #[test]
    fn fixed_iteration_mode_runs_exactly_k_steps() {
        let cfg = AllocatorConfig {
            fixed_iters: Some(10),
            ..Default::default()
        };
        let plan = solve_dual(&ids(2), &[1.0, 2.0], &[10.0, 20.0], 500.0, 0.01, &cfg).unwrap();
        assert_eq!(plan.iterations, 10);
        // ten halvings of a ×256 log-bracket: within a factor 256^(1/1024)
        let exact = continuous_neyman(&[1.0, 2.0], &[10.0, 20.0], 500.0)
            .unwrap()
            .lambda_star;
        assert!((plan.lambda_star / exact).ln().abs() <= (256f64).ln() / 1024.0 + 1e-12);
    }

    #[test]
    fn round_half_even_then_clip() {
        // continuous counts 2.5 and 0.5 → 2 and 0 → clipped to 1
        let s = [2.5, 0.5];
        let l = [1.0, 1.0];
        let plan = solve_dual(&ids(2), &s, &l, 3.0, 1.0, &AllocatorConfig::default()).unwrap();
        assert_eq!(plan.counts, vec![2, 1]);
    }

    proptest! {
        #[test]
        fn scaling_sigmas_leaves_argmin_unchanged(
            sig in prop::collection::vec(0.1f64..10.0, 1..5),
            c in 0.01f64..100.0,
            b in 1.0f64..1e6,
        ) {
            let len: Vec<f64> = (0..sig.len()).map(|i| 1.0 + 13.0 * i as f64).collect();
            let a = continuous_neyman(&sig, &len, b).unwrap();
            let scaled: Vec<f64> = sig.iter().map(|s| s * c).collect();
            let bsc = continuous_neyman(&scaled, &len, b).unwrap();
            for (x, y) in a.n_star.iter().zip(&bsc.n_star) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }

        #[test]
        fn budget_identity_and_variance_at_optimum(
            inst in prop::collection::vec((0.1f64..10.0, 1.0f64..100.0), 1..8),
            b in 1.0f64..1e7,
        ) {
            let (sig, len): (Vec<f64>, Vec<f64>) = inst.into_iter().unzip();
            let a = continuous_neyman(&sig, &len, b).unwrap();
            let spent: f64 = a.n_star.iter().zip(&len).map(|(n, l)| n * l).sum();
            prop_assert!(((spent - b) / b).abs() <= 1e-12);
            let v = estimator_variance(&a.n_star, &sig).unwrap();
            prop_assert!(((v - a.v_star) / a.v_star).abs() <= 1e-12);
            prop_assert!(((a.lambda_star * b - a.v_star) / a.v_star).abs() <= 1e-12);
        }

        #[test]
        fn uniform_ratio_at_least_one(
            inst in prop::collection::vec((0.01f64..100.0, 1.0f64..1000.0), 1..16),
        ) {
            let (sig, len): (Vec<f64>, Vec<f64>) = inst.into_iter().unzip();
            prop_assert!(uniform_ratio(&sig, &len).unwrap() >= 1.0 - 1e-12);
        }

        #[test]
        fn rounding_excess_is_order_m_lmax_over_b(
            inst in prop::collection::vec((0.1f64..10.0, 1.0f64..100.0), 1..6),
            mult in 100.0f64..5000.0,
        ) {
            let (sig, len): (Vec<f64>, Vec<f64>) = inst.into_iter().unzip();
            let m = sig.len() as f64;
            let l_max = len.iter().cloned().fold(0.0, f64::max);
            let b = mult * m * l_max;
            let cont = continuous_neyman(&sig, &len, b).unwrap();
            prop_assume!(cont.n_star.iter().all(|&n| n >= 2.0));
            let plan = solve_dual(&ids(sig.len()), &sig, &len, b, 1.0, &AllocatorConfig::default()).unwrap();
            let counts: Vec<f64> = plan.counts.iter().map(|&n| n as f64).collect();
            let v = estimator_variance(&counts, &sig).unwrap();
            prop_assert!(v - cont.v_star <= 10.0 * m * l_max / b * cont.v_star);
            prop_assert!((plan.predicted_tokens - b).abs() <= m * l_max);
        }

        #[test]
        fn dual_converges_from_any_warm_start(
            inst in prop::collection::vec((0.01f64..10.0, 1.0f64..3000.0), 1..32),
            b_scale in 1.0f64..64.0,
            log_warm in -6.0f64..6.0,
        ) {
            let (sig, len): (Vec<f64>, Vec<f64>) = inst.into_iter().unzip();
            let b = b_scale * len.iter().sum::<f64>();
            let exact = continuous_neyman(&sig, &len, b).unwrap().lambda_star;
            let warm = exact * 10f64.powf(log_warm);
            let plan = solve_dual(&ids(sig.len()), &sig, &len, b, warm, &AllocatorConfig::default()).unwrap();
            prop_assert!(((token_demand(&sig, &len, plan.lambda_star) - b) / b).abs() <= 1e-6);
            prop_assert!(((plan.lambda_star - exact) / exact).abs() <= 5e-7);
        }

        #[test]
        fn realized_closure_fits_budget_and_is_tight(
            inst in prop::collection::vec((0.01f64..10.0, 1.0f64..3000.0), 1..32),
            b_scale in 1.0f64..64.0,
        ) {
            let (sig, len): (Vec<f64>, Vec<f64>) = inst.into_iter().unzip();
            let b = b_scale * len.iter().sum::<f64>();
            let cfg = AllocatorConfig { closure: DualClosure::Realized, ..AllocatorConfig::default() };
            let plan = solve_dual(&ids(sig.len()), &sig, &len, b, 1.0, &cfg).unwrap();
            prop_assert!(plan.predicted_tokens <= b * (1.0 + 1e-12));
            // a slightly smaller λ must overshoot, unless every prompt is at n_min
            let below = solve_dual_counts(&sig, &len, plan.lambda_star * (1.0 - 1e-9), 1);
            let demand: f64 = below.iter().zip(&len).map(|(&n, l)| n as f64 * l).sum();
            prop_assert!(demand > b || below.iter().all(|&n| n == 1) || demand == plan.predicted_tokens);
        }
    }

    fn solve_dual_counts(s: &[f64], l: &[f64], lambda: f64, n_min: u32) -> Vec<u32> {
        s.iter()
            .zip(l)
            .map(|(s, l)| ((s / (lambda * l).sqrt()).round_ties_even() as u32).max(n_min))
            .collect()
    }

    #[test]
    fn realized_closure_trims_rounding_overshoot() {
        // continuous counts 3.5, 3.5 round to 4, 4 and overshoot; 3, 3 fits
        let s = [3.5, 3.5];
        let l = [1.0, 1.0];
        let relaxed = solve_dual(&ids(2), &s, &l, 7.0, 1.0, &AllocatorConfig::default()).unwrap();
        assert_eq!(relaxed.counts, vec![4, 4]);
        let cfg = AllocatorConfig {
            closure: DualClosure::Realized,
            ..AllocatorConfig::default()
        };
        let realized = solve_dual(&ids(2), &s, &l, 7.0, 1.0, &cfg).unwrap();
        assert!(realized.predicted_tokens <= 7.0);
        assert_eq!(realized.counts, vec![3, 3]);
    }
}
