//! Online per-prompt informativeness and length estimates.
//!
//! `σ̂_obs_q` is the running mean of within-step sample standard deviations of
//! the kept contributions of prompt `q`; the allocator reads the floored
//! surrogate `ŝ_q = max(s_floor, σ̂_obs_q)`. `L̂_q` is the running mean of
//! kept lengths.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{require_positive, require_same_len, Error, Result};
use crate::stats::{nearest_rank, sample_std};
use crate::types::{PromptId, PromptState};

/// Additive regulariser applied to exactly-zero group spreads.
pub const ZERO_STD_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateStore {
    states: BTreeMap<PromptId, PromptState>,
    floor: f64,
    floor_frozen: bool,
}

impl SurrogateStore {
    pub fn new(floor: f64) -> Result<Self> {
        require_positive("surrogate floor", floor)?;
        Ok(Self {
            states: BTreeMap::new(),
            floor,
            floor_frozen: false,
        })
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn floor_frozen(&self) -> bool {
        self.floor_frozen
    }

    pub fn state(&self, q: PromptId) -> Option<&PromptState> {
        self.states.get(&q)
    }

    fn entry(&mut self, q: PromptId) -> &mut PromptState {
        self.states.entry(q).or_insert_with(|| PromptState::cold(q))
    }

    /// Fold one step's kept-not-aborted contributions of `q` into `σ̂_obs_q`.
    ///
    /// Groups of fewer than two contributions are ignored. Returns the
    /// within-step spread that was folded in, if any.
    pub fn observe_group(&mut self, q: PromptId, contributions: &[f64]) -> Result<Option<f64>> {
        if let Some(&bad) = contributions.iter().find(|c| !c.is_finite()) {
            return Err(Error::InvalidInput {
                name: "contribution",
                value: bad,
                reason: "must be finite",
            });
        }
        if contributions.len() < 2 {
            return Ok(None);
        }
        let mut within = sample_std(contributions);
        if within == 0.0 {
            within = ZERO_STD_EPS;
        }
        let st = self.entry(q);
        let k = st.obs_count as f64;
        let prev = st.sigma_obs.unwrap_or(0.0);
        st.sigma_obs = Some(k / (k + 1.0) * prev + within / (k + 1.0));
        st.obs_count += 1;
        Ok(Some(within))
    }

    /// `max(s_floor, σ̂_obs_q)`; the floor for never-observed prompts.
    pub fn surrogate(&self, q: PromptId) -> f64 {
        match self.states.get(&q).and_then(|s| s.sigma_obs) {
            Some(sigma) => sigma.max(self.floor),
            None => self.floor,
        }
    }

    pub fn observe_length(&mut self, q: PromptId, kept_length: u32) {
        let st = self.entry(q);
        let k = st.length_count as f64;
        let prev = st.length_mean.unwrap_or(0.0);
        st.length_mean = Some((k * prev + kept_length as f64) / (k + 1.0));
        st.length_count += 1;
    }

    pub fn length_estimate(&self, q: PromptId, default: f64) -> f64 {
        self.states
            .get(&q)
            .and_then(|s| s.length_mean)
            .unwrap_or(default)
    }

    /// Reset the floor to the nearest-rank `percentile` of observed `σ̂_obs`
    /// values and freeze it. No-op once frozen; returns whether it changed.
    pub fn refreeze_floor(&mut self, percentile: f64) -> Result<bool> {
        if !(percentile > 0.0 && percentile < 100.0) {
            return Err(Error::InvalidInput {
                name: "percentile",
                value: percentile,
                reason: "must lie in (0, 100)",
            });
        }
        if self.floor_frozen {
            return Ok(false);
        }
        let mut observed: Vec<f64> = self.states.values().filter_map(|s| s.sigma_obs).collect();
        if observed.is_empty() {
            return Err(Error::Empty("observed surrogate values"));
        }
        observed.sort_by(f64::total_cmp);
        let value = nearest_rank(&observed, percentile / 100.0);
        self.floor = value.max(f64::MIN_POSITIVE);
        self.floor_frozen = true;
        Ok(true)
    }

    pub fn observed_prompts(&self) -> usize {
        self.states.values().filter(|s| s.obs_count > 0).count()
    }
}

fn ratios(surrogates: &[f64], true_sigmas: &[f64]) -> Result<Vec<f64>> {
    require_same_len(surrogates.len(), true_sigmas.len())?;
    if surrogates.is_empty() {
        return Err(Error::Empty("batch"));
    }
    surrogates
        .iter()
        .zip(true_sigmas)
        .map(|(&s, &sigma)| {
            require_positive("true sigma", sigma)?;
            require_positive("surrogate", s)?;
            Ok(s / sigma)
        })
        .collect()
}

/// Calibration divergence `mean_q (ŝ_q/σ_q − 1)²` over the batch.
pub fn chi_squared(surrogates: &[f64], true_sigmas: &[f64]) -> Result<f64> {
    let r = ratios(surrogates, true_sigmas)?;
    Ok(r.iter().map(|x| (x - 1.0).powi(2)).sum::<f64>() / r.len() as f64)
}

/// `E_w[r]·E_w[1/r]` with `r_q = ŝ_q/σ_q` and `w_q ∝ σ_q √L_q`.
///
/// The plug-in allocation's variance is exactly `V*` times this factor.
pub fn calibration_factor(surrogates: &[f64], true_sigmas: &[f64], lengths: &[f64]) -> Result<f64> {
    let r = ratios(surrogates, true_sigmas)?;
    require_same_len(r.len(), lengths.len())?;
    let a: Vec<f64> = true_sigmas
        .iter()
        .zip(lengths)
        .map(|(s, l)| s * l.sqrt())
        .collect();
    let total: f64 = a.iter().sum();
    let e_r: f64 = a.iter().zip(&r).map(|(a, r)| a / total * r).sum();
    let e_inv: f64 = a.iter().zip(&r).map(|(a, r)| a / total / r).sum();
    Ok(e_r * e_inv)
}

/// Upper bound `K·χ²/B` on the excess variance of the plug-in allocation,
/// with `K = σ_high² M² L_max ρ / r_min²`, `ρ = σ_high√L_max / (σ_low√L_min)`
/// and `r_min = floor / σ_high`, extrema taken over the instance.
pub fn calibration_gap_bound(
    surrogates: &[f64],
    true_sigmas: &[f64],
    lengths: &[f64],
    budget: f64,
    floor: f64,
) -> Result<f64> {
    let chi2 = chi_squared(surrogates, true_sigmas)?;
    require_same_len(lengths.len(), true_sigmas.len())?;
    require_positive("budget", budget)?;
    require_positive("floor", floor)?;
    for &l in lengths {
        require_positive("length", l)?;
    }
    let fold = |xs: &[f64]| {
        xs.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            })
    };
    let (sigma_low, sigma_high) = fold(true_sigmas);
    let (l_min, l_max) = fold(lengths);
    let m = true_sigmas.len() as f64;
    let rho = sigma_high * l_max.sqrt() / (sigma_low * l_min.sqrt());
    let r_min = floor / sigma_high;
    let k = sigma_high * sigma_high * m * m * l_max * rho / (r_min * r_min);
    Ok(k * chi2 / budget)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocator::{continuous_neyman, estimator_variance};
    use proptest::prelude::*;

    const Q: PromptId = PromptId(7);

    #[test]
    fn first_group_is_sample_std() {
        let mut s = SurrogateStore::new(0.01).unwrap();
        s.observe_group(Q, &[1.0, 3.0]).unwrap();
        assert!((s.surrogate(Q) - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.state(Q).unwrap().obs_count, 1);
    }

    #[test]
    fn running_mean_update() {
        let mut s = SurrogateStore::new(0.01).unwrap();
        // within-step std 2 then 4
        s.observe_group(Q, &[0.0, 2.0 * 2f64.sqrt()]).unwrap();
        s.observe_group(Q, &[0.0, 4.0 * 2f64.sqrt()]).unwrap();
        assert!((s.state(Q).unwrap().sigma_obs.unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn equal_contributions_pull_towards_zero() {
        let mut s = SurrogateStore::new(1e-9).unwrap();
        s.observe_group(Q, &[0.0, 2.0 * 2f64.sqrt()]).unwrap();
        let within = s.observe_group(Q, &[5.0, 5.0, 5.0]).unwrap();
        assert_eq!(within, Some(ZERO_STD_EPS));
        let sigma = s.state(Q).unwrap().sigma_obs.unwrap();
        assert!((sigma - (1.0 + ZERO_STD_EPS / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn singleton_group_is_noop_and_nan_rejected() {
        let mut s = SurrogateStore::new(0.01).unwrap();
        assert_eq!(s.observe_group(Q, &[4.0]).unwrap(), None);
        assert!(s.state(Q).is_none());
        assert!(s.observe_group(Q, &[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn floor_binds_for_cold_and_small() {
        let mut s = SurrogateStore::new(0.01).unwrap();
        assert_eq!(s.surrogate(Q), 0.01);
        s.observe_group(Q, &[0.0, 0.005 * 2f64.sqrt()]).unwrap();
        assert_eq!(s.surrogate(Q), 0.01);
        let p = PromptId(8);
        s.observe_group(p, &[1.0, 3.0]).unwrap();
        assert!((s.surrogate(p) - std::f64::consts::SQRT_2).abs() < 1e-6);
    }

    #[test]
    fn length_running_mean() {
        let mut s = SurrogateStore::new(0.01).unwrap();
        assert_eq!(s.length_estimate(Q, 1536.0), 1536.0);
        s.observe_length(Q, 250);
        assert_eq!(s.length_estimate(Q, 1536.0), 250.0);
        s.observe_length(PromptId(1), 100);
        s.observe_length(PromptId(1), 300);
        assert_eq!(s.length_estimate(PromptId(1), 1536.0), 200.0);
    }

    #[test]
    fn refreeze_nearest_rank() {
        let mut s = SurrogateStore::new(0.01).unwrap();
        for i in 1..=100u32 {
            // within-step std = i
            s.observe_group(PromptId(i), &[0.0, i as f64 * 2f64.sqrt()])
                .unwrap();
        }
        assert!(s.refreeze_floor(5.0).unwrap());
        assert!((s.floor() - 5.0).abs() < 1e-12);
        assert!(s.floor_frozen());
        assert!(!s.refreeze_floor(50.0).unwrap());
        assert!((s.floor() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn refreeze_single_and_empty() {
        let mut s = SurrogateStore::new(0.01).unwrap();
        assert!(s.refreeze_floor(5.0).is_err());
        s.observe_group(Q, &[0.0, 0.7 * 2f64.sqrt()]).unwrap();
        s.refreeze_floor(5.0).unwrap();
        assert!((s.floor() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn chi_squared_examples() {
        assert_eq!(chi_squared(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(chi_squared(&[2.0, 4.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert!((chi_squared(&[1.0, 3.0], &[1.0, 2.0]).unwrap() - 0.125).abs() < 1e-15);
        assert!(chi_squared(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn bound_zero_when_calibrated_and_scales_with_budget() {
        let sig = [0.5, 1.0, 3.0];
        let len = [10.0, 200.0, 40.0];
        assert_eq!(
            calibration_gap_bound(&sig, &sig, &len, 1e4, 0.1).unwrap(),
            0.0
        );
        let s = [0.7, 0.9, 2.0];
        let b1 = calibration_gap_bound(&s, &sig, &len, 1e4, 0.1).unwrap();
        let b2 = calibration_gap_bound(&s, &sig, &len, 2e4, 0.1).unwrap();
        assert!((b1 / b2 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn consistency_of_running_mean() {
        // within-step std of pairs drawn from a fixed law converges to its mean
        use crate::stream::derive_stream;
        use rand_distr::{Distribution, Normal};
        let normal = Normal::new(0.0, 1.5).unwrap();
        let mut s = SurrogateStore::new(1e-9).unwrap();
        let mut stats = crate::stats::Welford::default();
        for k in 0..10_000u64 {
            let mut rng = derive_stream(11, k, 0, 0);
            let g: Vec<f64> = (0..4).map(|_| normal.sample(&mut rng)).collect();
            let within = s.observe_group(Q, &g).unwrap().unwrap();
            stats.push(within);
        }
        // E[sample std] for n = 4 normal draws is c4·σ, c4 = √(2/3)·Γ(2)/Γ(3/2)
        let c4 = (2.0f64 / 3.0).sqrt() / (std::f64::consts::PI.sqrt() / 2.0);
        let truth = c4 * 1.5;
        let sd = stats.variance().sqrt();
        let sigma = s.state(Q).unwrap().sigma_obs.unwrap();
        assert!(
            (sigma - truth).abs() <= 3.0 * sd / 100.0,
            "{sigma} vs {truth}"
        );
    }

    proptest! {
        #[test]
        fn gap_identity_and_bound(
            inst in prop::collection::vec((0.1f64..10.0, 1.0f64..100.0, 0.2f64..5.0), 1..12),
            b in 10.0f64..1e6,
        ) {
            let sig: Vec<f64> = inst.iter().map(|t| t.0).collect();
            let len: Vec<f64> = inst.iter().map(|t| t.1).collect();
            let floor = 0.02;
            let s_hat: Vec<f64> = inst.iter().map(|t| (t.0 * t.2).max(floor)).collect();
            let star = continuous_neyman(&sig, &len, b).unwrap();
            let plug = continuous_neyman(&s_hat, &len, b).unwrap();
            let v_plug = estimator_variance(&plug.n_star, &sig).unwrap();
            let factor = calibration_factor(&s_hat, &sig, &len).unwrap();
            prop_assert!(((v_plug - star.v_star * factor) / v_plug).abs() <= 1e-10);
            let bound = calibration_gap_bound(&s_hat, &sig, &len, b, floor).unwrap();
            prop_assert!(v_plug - star.v_star <= bound * (1.0 + 1e-12) + 1e-12 * star.v_star);
        }
    }
}
