//! Domain types shared by all modules.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptId(pub u32);

impl fmt::Display for PromptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q{}", self.0)
    }
}

/// Running per-prompt surrogate state.
///
/// `sigma_obs` is absent exactly when `obs_count == 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptState {
    pub id: PromptId,
    pub sigma_obs: Option<f64>,
    pub obs_count: u64,
    pub length_mean: Option<f64>,
    pub length_count: u64,
}

impl PromptState {
    pub fn cold(id: PromptId) -> Self {
        Self {
            id,
            sigma_obs: None,
            obs_count: 0,
            length_mean: None,
            length_count: 0,
        }
    }
}

/// Output of the allocation phase. Vectors are aligned with `prompts`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub prompts: Vec<PromptId>,
    pub counts: Vec<u32>,
    pub lambda_star: f64,
    pub s_pre: Vec<f64>,
    /// `Σ n_q · L̂_q` for the rounded counts.
    pub predicted_tokens: f64,
    /// `n_min · Σ L̂_q` exceeded the budget and the n_min plan was emitted.
    pub budget_overrun: bool,
    /// Bisection iterations spent (bracket expansion excluded).
    pub iterations: u32,
}

impl AllocationPlan {
    pub fn count(&self, id: PromptId) -> Option<u32> {
        self.prompts
            .iter()
            .position(|&p| p == id)
            .map(|i| self.counts[i])
    }

    pub fn mean_count(&self) -> f64 {
        if self.counts.is_empty() {
            return 0.0;
        }
        self.counts.iter().map(|&n| n as f64).sum::<f64>() / self.counts.len() as f64
    }

    pub fn histogram(&self) -> BTreeMap<u32, u32> {
        let mut h = BTreeMap::new();
        for &n in &self.counts {
            *h.entry(n).or_insert(0) += 1;
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateDecisionKind {
    /// Marker detected by the abort threshold; tail trimmed after the grace window.
    KeptMarker,
    /// Marker-less, kept by the ε coin and run to natural EOS.
    EpsKept,
    /// Marker-less, stopped at the abort time and masked out.
    Aborted,
}

/// One generated rollout after gating and scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutOutcome {
    pub prompt_id: PromptId,
    pub rollout_index: u32,
    pub natural_length: u32,
    pub marker_time: Option<u32>,
    pub detect_time: Option<u32>,
    /// Realised generated length.
    pub stop_time: u32,
    pub kind: GateDecisionKind,
    pub aborted: bool,
    pub propensity: f64,
    pub reward: f64,
    /// Per-rollout gradient contribution; zero when aborted.
    pub z_value: f64,
}

impl RolloutOutcome {
    pub fn is_kept(&self) -> bool {
        !self.aborted
    }
}

/// Per-step log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub epoch: u64,
    pub lambda_star: f64,
    pub marker_rate: f64,
    pub abort_rate: f64,
    /// Mean of `1 / p_abort` over kept rollouts.
    pub is_weight_mean: f64,
    pub k1: f64,
    pub k2: f64,
    pub tokens_generated: u64,
    pub predicted_tokens: f64,
    pub budget: f64,
    pub rollouts: u64,
    pub count_histogram: BTreeMap<u32, u32>,
    pub chi_squared: Option<f64>,
    pub surcharge: f64,
    pub aggregate: f64,
    pub mean_reward: f64,
    pub skill: f64,
    pub budget_overrun: bool,
    pub degenerate: bool,
}

impl StepMetrics {
    /// Support width `max n − min n + 1` of the count histogram (0 if empty).
    pub fn histogram_width(&self) -> u32 {
        match (
            self.count_histogram.keys().next(),
            self.count_histogram.keys().next_back(),
        ) {
            (Some(lo), Some(hi)) => hi - lo + 1,
            _ => 0,
        }
    }
}
