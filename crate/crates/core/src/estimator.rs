//! Importance-corrected, stratification-weighted aggregation of kept rollouts.
//!
//! A kept rollout contributes `ĥ = (1 − I)·Z / p` where `I` is the
//! abort-and-mask indicator and `p ∈ {1, ε_abort}` the propensity with which
//! it was kept. The token-mean loss weights each kept rollout by
//! `w = (1 − I) / (s_pre · p)` and normalises by the number of kept tokens.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::mean;
use crate::types::{GateDecisionKind, PromptId, RolloutOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum AdvantageMode {
    /// `A_i = R_i − b` with `b` fixed before any rollout is drawn.
    ActionIndependent { baseline: f64 },
    /// `A_i = (R_i − mean R) / √(var R + ε²)` over the whole group,
    /// aborted rollouts included.
    GroupNormalized {
        std_regularizer: f64,
        /// Variance divisor `n` (true) or `n − 1` (false).
        population_std: bool,
    },
}

impl Default for AdvantageMode {
    fn default() -> Self {
        AdvantageMode::GroupNormalized {
            std_regularizer: 1e-6,
            population_std: true,
        }
    }
}

pub fn group_advantages(rewards: &[f64], mode: AdvantageMode) -> Vec<f64> {
    match mode {
        AdvantageMode::ActionIndependent { baseline } => {
            rewards.iter().map(|r| r - baseline).collect()
        }
        AdvantageMode::GroupNormalized {
            std_regularizer,
            population_std,
        } => {
            let n = rewards.len();
            if n == 0 {
                return Vec::new();
            }
            let m = mean(rewards);
            let ss: f64 = rewards.iter().map(|r| (r - m) * (r - m)).sum();
            let divisor = if population_std || n < 2 { n } else { n - 1 };
            let var = ss / divisor as f64;
            let denom = (var + std_regularizer * std_regularizer).sqrt();
            rewards.iter().map(|r| (r - m) / denom).collect()
        }
    }
}

/// `ĥ = (1 − I)·z / p`.
pub fn per_rollout_estimate(z: f64, aborted: bool, propensity: f64) -> Result<f64> {
    if !(propensity > 0.0 && propensity <= 1.0) {
        return Err(Error::InvalidInput {
            name: "propensity",
            value: propensity,
            reason: "must lie in (0, 1]",
        });
    }
    Ok(if aborted { 0.0 } else { z / propensity })
}

/// `clip(n_q / n̄, ε_pre, 1)`.
pub fn stratification_weight(n_q: u32, n_bar: f64, eps_pre: f64) -> f64 {
    (n_q as f64 / n_bar).clamp(eps_pre, 1.0)
}

/// One rollout as seen by the aggregators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedRollout {
    pub prompt_id: PromptId,
    /// Token-summed contribution (advantage already applied).
    pub z: f64,
    pub kept_tokens: u32,
    pub aborted: bool,
    pub propensity: f64,
    pub s_pre: f64,
}

impl WeightedRollout {
    pub fn from_outcome(o: &RolloutOutcome, s_pre: f64) -> Self {
        Self {
            prompt_id: o.prompt_id,
            z: o.z_value,
            kept_tokens: if o.aborted { 0 } else { o.stop_time },
            aborted: o.aborted,
            propensity: o.propensity,
            s_pre,
        }
    }

    pub fn weight(&self) -> f64 {
        if self.aborted {
            0.0
        } else {
            1.0 / (self.s_pre * self.propensity)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub value: f64,
    pub kept_tokens: u64,
    /// Every rollout was aborted; the update is skipped.
    pub degenerate: bool,
}

/// `−(1/N_t) Σ w·z` with `N_t` the total kept-token count.
pub fn aggregate_token_mean(rollouts: &[WeightedRollout]) -> Aggregate {
    let n_t: u64 = rollouts.iter().map(|r| r.kept_tokens as u64).sum();
    if n_t == 0 {
        return Aggregate {
            value: 0.0,
            kept_tokens: 0,
            degenerate: true,
        };
    }
    let sum: f64 = rollouts.iter().map(|r| r.weight() * r.z).sum();
    Aggregate {
        value: -sum / n_t as f64,
        kept_tokens: n_t,
        degenerate: false,
    }
}

/// Mean over prompts of the per-prompt average of `ĥ` (weights `1/n_q`).
/// Prompts are visited in id order so the reduction order is fixed.
pub fn aggregate_per_prompt_mean(rollouts: &[WeightedRollout]) -> Aggregate {
    let mut groups: BTreeMap<PromptId, (f64, u32)> = BTreeMap::new();
    for r in rollouts {
        let h = if r.aborted { 0.0 } else { r.z / r.propensity };
        let e = groups.entry(r.prompt_id).or_insert((0.0, 0));
        e.0 += h;
        e.1 += 1;
    }
    let kept_tokens = rollouts.iter().map(|r| r.kept_tokens as u64).sum();
    if groups.is_empty() || rollouts.iter().all(|r| r.aborted) {
        return Aggregate {
            value: 0.0,
            kept_tokens,
            degenerate: true,
        };
    }
    let per_prompt: Vec<f64> = groups.values().map(|(s, n)| s / *n as f64).collect();
    Aggregate {
        value: mean(&per_prompt),
        kept_tokens,
        degenerate: false,
    }
}

/// Worst-case second-moment surcharge of the ε-keep estimator:
/// `(1 − p_marker)(1 − ε)/ε · σ²_m-less`.
pub fn surcharge_bound(p_marker: f64, eps_abort: f64, sigma_mless_sq: f64) -> f64 {
    // written as 1/ε − 1 so that ε = 0.05 gives exactly 19
    (1.0 - p_marker) * (1.0 / eps_abort - 1.0) * sigma_mless_sq
}

/// Plug-in surcharge tracker for one step:
/// `Σ_q (1 − p̂_q)(1 − ε)/ε · σ̂²_m-less,q · Σ_i (L_kept/N_t)²`.
///
/// `p̂_q` is the kept-marker fraction of prompt `q`, `σ̂²_m-less,q` the mean
/// squared contribution of its ε-kept rollouts (zero if none were kept).
/// This is a heuristic diagnostic, not a bound.
pub fn surcharge_tracker(outcomes: &[RolloutOutcome], eps_abort: f64) -> f64 {
    let n_t: u64 = outcomes
        .iter()
        .filter(|o| !o.aborted)
        .map(|o| o.stop_time as u64)
        .sum();
    if n_t == 0 {
        return 0.0;
    }
    #[derive(Default)]
    struct Acc {
        n: u32,
        marker: u32,
        eps_kept: u32,
        eps_z2: f64,
        len_sq: f64,
    }
    let mut per: BTreeMap<PromptId, Acc> = BTreeMap::new();
    for o in outcomes {
        let a = per.entry(o.prompt_id).or_default();
        a.n += 1;
        match o.kind {
            GateDecisionKind::KeptMarker => a.marker += 1,
            GateDecisionKind::EpsKept => {
                a.eps_kept += 1;
                a.eps_z2 += o.z_value * o.z_value;
            }
            GateDecisionKind::Aborted => {}
        }
        if !o.aborted {
            let share = o.stop_time as f64 / n_t as f64;
            a.len_sq += share * share;
        }
    }
    per.values()
        .map(|a| {
            let p_hat = a.marker as f64 / a.n as f64;
            let s2 = if a.eps_kept > 0 {
                a.eps_z2 / a.eps_kept as f64
            } else {
                0.0
            };
            surcharge_bound(p_hat, eps_abort, s2) * a.len_sq
        })
        .sum()
}
