//! Marker-gated abort schedule.
//!
//! Markers are polled every `delta_poll` tokens from `K1` on. A rollout whose
//! polled marker lands by `K2` is kept and trimmed `G` tokens later; a
//! marker-less one is either kept with probability `eps_abort` and run to its
//! natural end, or stopped at `K2 + G` and masked. `K1`/`K2` are refit from a
//! FIFO window of kept natural lengths.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::nearest_rank;
use crate::types::GateDecisionKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    pub delta_poll: u32,
    /// Carried for interface parity; markers are drawn directly here.
    pub prefix_window: u32,
    pub grace: u32,
    /// Keep probability for marker-less rollouts; 1 disables aborting.
    pub eps_abort: f64,
    pub window_capacity: usize,
    pub refit_cadence: u32,
    pub q_low: f64,
    pub q_high: f64,
    pub l_max: u32,
    /// Probability that an emitted marker is not caught by the poller.
    pub miss_prob: f64,
    pub cold_low_frac: f64,
    pub cold_high_frac: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            delta_poll: 8,
            prefix_window: 256,
            grace: 150,
            eps_abort: 0.01,
            window_capacity: 1024,
            refit_cadence: 10,
            q_low: 0.30,
            q_high: 0.80,
            l_max: 3072,
            miss_prob: 0.0,
            cold_low_frac: 0.3,
            cold_high_frac: 0.7,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("delta_poll", self.delta_poll as f64),
            ("prefix_window", self.prefix_window as f64),
            ("grace", self.grace as f64),
            ("window_capacity", self.window_capacity as f64),
            ("refit_cadence", self.refit_cadence as f64),
            ("l_max", self.l_max as f64),
        ];
        for (name, value) in positive {
            if value < 1.0 {
                return Err(Error::InvalidInput {
                    name,
                    value,
                    reason: "must be at least 1",
                });
            }
        }
        if !(self.eps_abort > 0.0 && self.eps_abort <= 1.0) {
            return Err(Error::InvalidInput {
                name: "eps_abort",
                value: self.eps_abort,
                reason: "must lie in (0, 1]",
            });
        }
        let open_unit = [
            ("q_low", self.q_low),
            ("q_high", self.q_high),
            ("cold_low_frac", self.cold_low_frac),
            ("cold_high_frac", self.cold_high_frac),
        ];
        for (name, value) in open_unit {
            if !(value > 0.0 && value < 1.0) {
                return Err(Error::InvalidInput {
                    name,
                    value,
                    reason: "must lie in (0, 1)",
                });
            }
        }
        if !(0.0..1.0).contains(&self.miss_prob) {
            return Err(Error::InvalidInput {
                name: "miss_prob",
                value: self.miss_prob,
                reason: "must lie in [0, 1)",
            });
        }
        if self.q_low >= self.q_high {
            return Err(Error::InvalidInput {
                name: "q_low",
                value: self.q_low,
                reason: "must be below q_high",
            });
        }
        if self.cold_low_frac >= self.cold_high_frac {
            return Err(Error::InvalidInput {
                name: "cold_low_frac",
                value: self.cold_low_frac,
                reason: "must be below cold_high_frac",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateState {
    pub k1: f64,
    pub k2: f64,
    window: VecDeque<u32>,
    steps_since_refit: u32,
    refits: u32,
}

impl GateState {
    /// Thresholds at `cold_low_frac·L_max` and `cold_high_frac·L_max`.
    pub fn cold(config: &GateConfig) -> Self {
        let l = config.l_max as f64;
        Self {
            k1: config.cold_low_frac * l,
            k2: config.cold_high_frac * l,
            window: VecDeque::with_capacity(config.window_capacity),
            steps_since_refit: 0,
            refits: 0,
        }
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn refits(&self) -> u32 {
        self.refits
    }

    pub fn steps_since_refit(&self) -> u32 {
        self.steps_since_refit
    }

    /// FIFO push; evicts the oldest entries beyond `capacity`.
    pub fn push_length(&mut self, natural_length: u32, capacity: usize) {
        self.window.push_back(natural_length);
        while self.window.len() > capacity {
            self.window.pop_front();
        }
    }

    /// Count one finished step towards the refit cadence.
    pub fn end_step(&mut self) {
        self.steps_since_refit += 1;
    }

    pub fn refit_due(&self, config: &GateConfig) -> bool {
        self.steps_since_refit >= config.refit_cadence && !self.window.is_empty()
    }

    /// Refit when due. Returns the outcome, or `None` when not due.
    pub fn maybe_refit(&mut self, config: &GateConfig) -> Option<RefitOutcome> {
        self.refit_due(config).then(|| self.refit(config))
    }

    /// Set `K1`/`K2` to the nearest-rank quantiles of the window and reset
    /// the cadence counter. A window that would give `K1 >= K2` leaves the
    /// thresholds unchanged.
    pub fn refit(&mut self, config: &GateConfig) -> RefitOutcome {
        self.steps_since_refit = 0;
        if self.window.is_empty() {
            return RefitOutcome::Skipped;
        }
        let mut sorted: Vec<u32> = self.window.iter().copied().collect();
        sorted.sort_unstable();
        let k1 = nearest_rank(&sorted, config.q_low) as f64;
        let k2 = nearest_rank(&sorted, config.q_high) as f64;
        if k1 >= k2 {
            return RefitOutcome::Skipped;
        }
        self.k1 = k1;
        self.k2 = k2;
        self.refits += 1;
        RefitOutcome::Updated { k1, k2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RefitOutcome {
    Updated { k1: f64, k2: f64 },
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub kind: GateDecisionKind,
    pub stop_time: u32,
    pub propensity: f64,
    pub abort_indicator: u8,
    pub detect_time: Option<u32>,
}

/// Smallest multiple of `delta_poll` that is at least `max(tau, K1)`.
pub fn detection_time(tau_marker: u32, k1: f64, delta_poll: u32) -> u32 {
    let start = (tau_marker.max(1) as f64).max(k1.ceil()) as u64;
    let d = delta_poll.max(1) as u64;
    (start.div_ceil(d) * d) as u32
}

/// `min(detect + G, K2 + G)` when a marker was detected, else `K2 + G`,
/// rounded up to a whole token.
pub fn abort_time(detect_time: Option<u32>, k2: f64, grace: u32) -> u32 {
    let cap = (k2 + grace as f64).ceil() as u32;
    match detect_time {
        Some(t) => (t + grace).min(cap),
        None => cap,
    }
}

/// The marker time as seen by the poller: `None` with probability `miss_prob`.
pub fn observed_marker(
    tau_marker: Option<u32>,
    miss_coin: f64,
    config: &GateConfig,
) -> Option<u32> {
    tau_marker.filter(|_| miss_coin >= config.miss_prob)
}

pub fn gate_decide(
    tau_marker: Option<u32>,
    natural_length: u32,
    config: &GateConfig,
    state: &GateState,
    coin: f64,
) -> GateDecision {
    let detect = tau_marker.map(|t| detection_time(t, state.k1, config.delta_poll));
    match detect {
        Some(d) if d as f64 <= state.k2 => GateDecision {
            kind: GateDecisionKind::KeptMarker,
            stop_time: (d + config.grace).min(natural_length).min(config.l_max),
            propensity: 1.0,
            abort_indicator: 0,
            detect_time: Some(d),
        },
        _ if coin < config.eps_abort => GateDecision {
            kind: GateDecisionKind::EpsKept,
            stop_time: natural_length.min(config.l_max),
            propensity: config.eps_abort,
            abort_indicator: 0,
            detect_time: None,
        },
        _ => GateDecision {
            kind: GateDecisionKind::Aborted,
            stop_time: abort_time(None, state.k2, config.grace),
            propensity: config.eps_abort,
            abort_indicator: 1,
            detect_time: None,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> GateConfig {
        GateConfig {
            eps_abort: 0.05,
            ..GateConfig::default()
        }
    }

    fn state(k1: f64, k2: f64) -> GateState {
        let mut s = GateState::cold(&cfg());
        s.k1 = k1;
        s.k2 = k2;
        s
    }

    #[test]
    fn detection_examples() {
        assert_eq!(detection_time(500, 340.0, 8), 504);
        assert_eq!(detection_time(340, 340.0, 1), 340);
        assert_eq!(detection_time(100, 340.0, 8), 344);
        assert_eq!(detection_time(900, 921.6, 8), 928);
    }

    #[test]
    fn abort_time_examples() {
        assert_eq!(abort_time(Some(500), 2150.0, 150), 650);
        assert_eq!(abort_time(None, 2150.0, 150), 2300);
        assert_eq!(abort_time(Some(2100), 2050.0, 150), 2200);
    }

    #[test]
    fn cold_thresholds() {
        let s = GateState::cold(&GateConfig::default());
        assert_eq!(s.k1, 0.3 * 3072.0);
        assert_eq!(s.k2, 0.7 * 3072.0);
        assert!((s.k1 - 921.6).abs() < 1e-9 && (s.k2 - 2150.4).abs() < 1e-9);
    }

    #[test]
    fn decide_examples() {
        let c = cfg();
        let s = state(340.0, 2150.0);
        let d = gate_decide(Some(500), 3000, &c, &s, 0.99);
        assert_eq!(d.kind, GateDecisionKind::KeptMarker);
        assert_eq!(
            (d.propensity, d.abort_indicator, d.stop_time),
            (1.0, 0, 654)
        );

        let d = gate_decide(None, 2900, &c, &s, 0.02);
        assert_eq!(d.kind, GateDecisionKind::EpsKept);
        assert_eq!(
            (d.propensity, d.abort_indicator, d.stop_time),
            (0.05, 0, 2900)
        );

        let d = gate_decide(None, 2900, &c, &s, 0.90);
        assert_eq!(d.kind, GateDecisionKind::Aborted);
        assert_eq!(
            (d.propensity, d.abort_indicator, d.stop_time),
            (0.05, 1, 2300)
        );
    }

    #[test]
    fn late_marker_goes_through_abort_branch() {
        let c = cfg();
        let s = state(340.0, 2150.0);
        // polled detection at 2152 > K2
        let d = gate_decide(Some(2145), 3000, &c, &s, 0.5);
        assert_eq!(d.kind, GateDecisionKind::Aborted);
    }

    #[test]
    fn natural_end_caps_kept_marker() {
        let s = state(340.0, 2150.0);
        let d = gate_decide(Some(400), 420, &cfg(), &s, 0.5);
        assert_eq!(d.stop_time, 420);
    }

    #[test]
    fn miss_knob() {
        let c = GateConfig {
            miss_prob: 0.1,
            ..cfg()
        };
        assert_eq!(observed_marker(Some(5), 0.05, &c), None);
        assert_eq!(observed_marker(Some(5), 0.5, &c), Some(5));
        assert_eq!(observed_marker(Some(5), 0.0, &cfg()), Some(5));
    }

    #[test]
    fn refit_nearest_rank() {
        let c = cfg();
        let mut s = GateState::cold(&c);
        for l in 1..=100 {
            s.push_length(l, c.window_capacity);
        }
        assert_eq!(s.refit(&c), RefitOutcome::Updated { k1: 30.0, k2: 80.0 });
        assert_eq!((s.k1, s.k2), (30.0, 80.0));
    }

    #[test]
    fn degenerate_window_keeps_thresholds() {
        let c = cfg();
        let mut s = GateState::cold(&c);
        for _ in 0..50 {
            s.push_length(500, c.window_capacity);
        }
        assert_eq!(s.refit(&c), RefitOutcome::Skipped);
        assert_eq!((s.k1, s.k2), (0.3 * 3072.0, 0.7 * 3072.0));
        assert_eq!(s.steps_since_refit(), 0);
    }

    #[test]
    fn fifo_bound() {
        let c = cfg();
        let mut s = GateState::cold(&c);
        for l in 0..1025 {
            s.push_length(l, c.window_capacity);
        }
        assert_eq!(s.window_len(), 1024);
        assert_eq!(s.window.front(), Some(&1));
    }

    #[test]
    fn cadence() {
        let c = cfg();
        let mut s = GateState::cold(&c);
        s.push_length(10, 1024);
        s.push_length(20, 1024);
        for _ in 0..9 {
            s.end_step();
            assert!(s.maybe_refit(&c).is_none());
        }
        s.end_step();
        assert!(matches!(
            s.maybe_refit(&c),
            Some(RefitOutcome::Updated { .. })
        ));
        assert_eq!(s.steps_since_refit(), 0);
    }

    #[test]
    fn config_validation() {
        assert!(GateConfig::default().validate().is_ok());
        let bad = GateConfig {
            q_low: 0.9,
            ..GateConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = GateConfig {
            eps_abort: 0.0,
            ..GateConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = GateConfig {
            delta_poll: 0,
            ..GateConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn detection_latency_below_poll(tau in 1u32..5000, k1 in 1.0f64..3000.0, d in 1u32..64) {
            let t = detection_time(tau, k1, d);
            let lower = (tau as f64).max(k1.ceil());
            prop_assert!(t as f64 >= lower);
            prop_assert!((t as f64) - lower < d as f64);
            prop_assert_eq!(t % d, 0);
        }

        #[test]
        fn decision_invariants(
            tau in prop::option::of(1u32..4000),
            natural in 1u32..5000,
            k1 in 1u32..1500,
            gap in 1u32..2000,
            coin in 0.0f64..1.0,
        ) {
            let c = cfg();
            let s = state(k1 as f64, (k1 + gap) as f64);
            let d = gate_decide(tau, natural, &c, &s, coin);
            match d.kind {
                GateDecisionKind::KeptMarker => {
                    prop_assert!(d.stop_time as f64 <= s.k2 + c.grace as f64);
                    prop_assert_eq!((d.propensity, d.abort_indicator), (1.0, 0));
                }
                GateDecisionKind::EpsKept => {
                    prop_assert!(d.stop_time <= c.l_max);
                    prop_assert_eq!((d.propensity, d.abort_indicator), (c.eps_abort, 0));
                }
                GateDecisionKind::Aborted => {
                    prop_assert_eq!(d.stop_time as f64, s.k2 + c.grace as f64);
                    prop_assert_eq!((d.propensity, d.abort_indicator), (c.eps_abort, 1));
                }
            }
        }
    }
}
