//! Synthetic rollout environment with known ground truth.
//!
//! A rollout of prompt `q` draws a natural length `L` from a discretised law
//! on `[1, L_max]`, emits a marker with probability
//! `solve_prob·(0.2 + 0.8·skill)` at `τ = max(1, round(f·L))`, and earns reward
//! 1 iff it emitted a marker and the answer is correct. Its contribution is
//! `Z = A·(P + T)` with advantage `A`, prefix term `P ~ N(m, v)` and a
//! zero-mean tail term `T ~ N(0, t)`; trimming after the marker drops `T`.
//! `P` and `T` are independent of everything else, so every moment the
//! estimator theory refers to has a closed form.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{require_positive, Error, Result};
use crate::stream::{Domain, RolloutStream};
use crate::types::PromptId;

/// Natural-length law on `{1, …, L_max}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LengthLaw {
    /// `round(X)` with `X ~ LogNormal(mu, sigma)` conditioned on
    /// `[0.5, L_max + 0.5)`.
    LogNormal { mu: f64, sigma: f64 },
    /// Finite law on explicit values (each in `[1, L_max]`).
    Discrete { values: Vec<u32>, weights: Vec<f64> },
}

impl LengthLaw {
    pub fn validate(&self, l_max: u32) -> Result<()> {
        match self {
            LengthLaw::LogNormal { mu, sigma } => {
                require_positive("length sigma", *sigma)?;
                if !mu.is_finite() {
                    return Err(Error::InvalidInput {
                        name: "length mu",
                        value: *mu,
                        reason: "must be finite",
                    });
                }
                if self.normalizer(l_max) <= 0.0 {
                    return Err(Error::InvalidInput {
                        name: "length mu",
                        value: *mu,
                        reason: "puts no mass on [1, l_max]",
                    });
                }
                Ok(())
            }
            LengthLaw::Discrete { values, weights } => {
                crate::error::require_same_len(values.len(), weights.len())?;
                if values.is_empty() {
                    return Err(Error::Empty("discrete length values"));
                }
                for &v in values {
                    if v == 0 || v > l_max {
                        return Err(Error::InvalidInput {
                            name: "discrete length",
                            value: v as f64,
                            reason: "must lie in [1, l_max]",
                        });
                    }
                }
                for &w in weights {
                    if !(w >= 0.0 && w.is_finite()) {
                        return Err(Error::InvalidInput {
                            name: "discrete weight",
                            value: w,
                            reason: "must be finite and non-negative",
                        });
                    }
                }
                require_positive("total discrete weight", weights.iter().sum()).map(|_| ())
            }
        }
    }

    fn log_cdf_at(mu: f64, sigma: f64, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        // Normal::new only fails on non-positive sigma, excluded by validate.
        Normal::new(mu, sigma)
            .map(|n| n.cdf(x.ln()))
            .unwrap_or(f64::NAN)
    }

    fn normalizer(&self, l_max: u32) -> f64 {
        match self {
            LengthLaw::LogNormal { mu, sigma } => {
                Self::log_cdf_at(*mu, *sigma, l_max as f64 + 0.5)
                    - Self::log_cdf_at(*mu, *sigma, 0.5)
            }
            LengthLaw::Discrete { weights, .. } => weights.iter().sum(),
        }
    }

    /// Exact probability mass at `l`.
    pub fn pmf(&self, l: u32, l_max: u32) -> f64 {
        if l == 0 || l > l_max {
            return 0.0;
        }
        match self {
            LengthLaw::LogNormal { mu, sigma } => {
                let hi = Self::log_cdf_at(*mu, *sigma, l as f64 + 0.5);
                let lo = Self::log_cdf_at(*mu, *sigma, l as f64 - 0.5);
                (hi - lo) / self.normalizer(l_max)
            }
            LengthLaw::Discrete { values, weights } => {
                let total: f64 = weights.iter().sum();
                values
                    .iter()
                    .zip(weights)
                    .filter(|(v, _)| **v == l)
                    .map(|(_, w)| w / total)
                    .sum()
            }
        }
    }

    /// `(l, P(L = l))` for every `l` with positive mass, ascending.
    pub fn support(&self, l_max: u32) -> Vec<(u32, f64)> {
        match self {
            LengthLaw::LogNormal { .. } => (1..=l_max)
                .map(|l| (l, self.pmf(l, l_max)))
                .filter(|(_, p)| *p > 0.0)
                .collect(),
            LengthLaw::Discrete { values, .. } => {
                let mut vs = values.clone();
                vs.sort_unstable();
                vs.dedup();
                vs.into_iter()
                    .map(|l| (l, self.pmf(l, l_max)))
                    .filter(|(_, p)| *p > 0.0)
                    .collect()
            }
        }
    }

    pub fn mean(&self, l_max: u32) -> f64 {
        self.support(l_max).iter().map(|(l, p)| *l as f64 * p).sum()
    }

    /// Smallest `l` with `P(L ≤ l) ≥ p`.
    pub fn quantile(&self, p: f64, l_max: u32) -> u32 {
        let mut acc = 0.0;
        let support = self.support(l_max);
        for &(l, m) in &support {
            acc += m;
            if acc >= p - 1e-12 {
                return l;
            }
        }
        support.last().map(|s| s.0).unwrap_or(l_max)
    }

    pub fn cdf(&self, l: u32, l_max: u32) -> f64 {
        self.support(l_max)
            .iter()
            .take_while(|(v, _)| *v <= l)
            .map(|(_, p)| p)
            .sum()
    }

    /// Inverse-CDF draw from a uniform `u` in `[0, 1)`.
    pub fn sample(&self, u: f64, l_max: u32) -> u32 {
        match self {
            LengthLaw::LogNormal { mu, sigma } => {
                let lo = Self::log_cdf_at(*mu, *sigma, 0.5);
                let hi = Self::log_cdf_at(*mu, *sigma, l_max as f64 + 0.5);
                let target = lo + u * (hi - lo);
                let x = Normal::new(*mu, *sigma)
                    .map(|n| n.inverse_cdf(target).exp())
                    .unwrap_or(1.0);
                (x.round().max(1.0) as u32).min(l_max)
            }
            LengthLaw::Discrete { values, weights } => {
                let total: f64 = weights.iter().sum();
                let mut acc = 0.0;
                for (v, w) in values.iter().zip(weights) {
                    acc += w / total;
                    if u < acc {
                        return *v;
                    }
                }
                *values.last().unwrap_or(&1)
            }
        }
    }
}

/// Law of the marker position as a fraction of the natural length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FracLaw {
    Point { value: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl FracLaw {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = match *self {
            FracLaw::Point { value } => (value, value),
            FracLaw::Uniform { lo, hi } => (lo, hi),
        };
        if !(lo > 0.0 && hi <= 1.0 && lo <= hi) {
            return Err(Error::InvalidInput {
                name: "marker fraction",
                value: lo,
                reason: "need 0 < lo <= hi <= 1",
            });
        }
        Ok(())
    }

    fn draw(&self, u: f64) -> f64 {
        match *self {
            FracLaw::Point { value } => value,
            FracLaw::Uniform { lo, hi } => lo + u * (hi - lo),
        }
    }

    /// `P(max(1, round(f·length)) ≤ t)`.
    pub fn marker_at_most(&self, length: u32, t: u32) -> f64 {
        if t == 0 {
            return 0.0;
        }
        let l = length as f64;
        // round(f·l) ≤ t  ⇔  f·l < t + 0.5 (ties round away from zero)
        let cut = (t as f64 + 0.5) / l;
        match *self {
            FracLaw::Point { value } => {
                if marker_position(value, length) <= t {
                    1.0
                } else {
                    0.0
                }
            }
            FracLaw::Uniform { lo, hi } => {
                if hi <= lo {
                    return if marker_position(lo, length) <= t {
                        1.0
                    } else {
                        0.0
                    };
                }
                ((cut - lo) / (hi - lo)).clamp(0.0, 1.0)
            }
        }
    }
}

fn marker_position(frac: f64, length: u32) -> u32 {
    ((frac * length as f64).round() as u32).clamp(1, length.max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptProfile {
    pub id: PromptId,
    pub difficulty: f64,
    pub solve_prob: f64,
    /// Probability that an emitted answer is correct.
    #[serde(default = "one")]
    pub correct_prob: f64,
    pub length_law: LengthLaw,
    pub marker_frac: FracLaw,
    pub z_prefix_mean: f64,
    pub z_prefix_var: f64,
    #[serde(default)]
    pub z_tail_var: f64,
}

fn one() -> f64 {
    1.0
}

impl PromptProfile {
    pub fn validate(&self, l_max: u32) -> Result<()> {
        for (name, v) in [
            ("solve_prob", self.solve_prob),
            ("correct_prob", self.correct_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput {
                    name,
                    value: v,
                    reason: "must lie in [0, 1]",
                });
            }
        }
        for (name, v) in [
            ("z_prefix_var", self.z_prefix_var),
            ("z_tail_var", self.z_tail_var),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput {
                    name,
                    value: v,
                    reason: "must be finite and non-negative",
                });
            }
        }
        if !self.z_prefix_mean.is_finite() {
            return Err(Error::InvalidInput {
                name: "z_prefix_mean",
                value: self.z_prefix_mean,
                reason: "must be finite",
            });
        }
        require_positive("difficulty", self.difficulty)?;
        self.length_law.validate(l_max)?;
        self.marker_frac.validate()
    }

    pub fn emission_prob(&self, skill: f64) -> f64 {
        self.solve_prob * (0.2 + 0.8 * skill.clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySkill {
    pub skill: f64,
    pub improvement_rate: f64,
}

impl Default for PolicySkill {
    fn default() -> Self {
        Self {
            skill: 1.0,
            improvement_rate: 0.0,
        }
    }
}

/// `skill ← clip(skill + rate·max(0, signal), 0, 1)`.
pub fn update_skill(skill: PolicySkill, signal: f64) -> PolicySkill {
    let step = if signal.is_finite() {
        signal.max(0.0)
    } else {
        0.0
    };
    PolicySkill {
        skill: (skill.skill + skill.improvement_rate * step).clamp(0.0, 1.0),
        ..skill
    }
}

/// One natural rollout plus the uniforms the gate will consume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawRollout {
    pub natural_length: u32,
    pub marker_time: Option<u32>,
    pub reward: f64,
    pub z_prefix: f64,
    pub z_tail: f64,
    pub gate_coin: f64,
    pub miss_coin: f64,
}

/// Draw one rollout. Exactly eight values are consumed from `stream` in a
/// fixed order, whatever branch is taken.
pub fn sample_rollout(
    profile: &PromptProfile,
    skill: f64,
    l_max: u32,
    stream: &mut RolloutStream,
) -> RawRollout {
    let u_len = stream.uniform();
    let u_emit = stream.uniform();
    let u_frac = stream.uniform();
    let u_correct = stream.uniform();
    let n_prefix: f64 = StandardNormal.sample(stream);
    let n_tail: f64 = StandardNormal.sample(stream);
    let gate_coin = stream.uniform();
    let miss_coin = stream.uniform();

    let natural_length = profile.length_law.sample(u_len, l_max);
    let emitted = u_emit < profile.emission_prob(skill);
    let marker_time =
        emitted.then(|| marker_position(profile.marker_frac.draw(u_frac), natural_length));
    let reward = if emitted && u_correct < profile.correct_prob {
        1.0
    } else {
        0.0
    };
    RawRollout {
        natural_length,
        marker_time,
        reward,
        z_prefix: profile.z_prefix_mean + profile.z_prefix_var.sqrt() * n_prefix,
        z_tail: profile.z_tail_var.sqrt() * n_tail,
        gate_coin,
        miss_coin,
    }
}

/// How the advantage multiplying `P + T` is formed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Baseline {
    /// `A = 1`.
    Unit,
    /// `A = R − b`.
    Fixed { value: f64 },
    /// `A = R − E[R]`.
    MeanReward,
    /// `A = (R − E[R]) / √(Var R + ε²)` with the true reward moments.
    Standardized { regularizer: f64 },
}

impl Baseline {
    pub fn advantage(&self, reward: f64, profile: &PromptProfile, skill: f64) -> f64 {
        let r = profile.emission_prob(skill) * profile.correct_prob;
        match *self {
            Baseline::Unit => 1.0,
            Baseline::Fixed { value } => reward - value,
            Baseline::MeanReward => reward - r,
            Baseline::Standardized { regularizer } => {
                (reward - r) / (r * (1.0 - r) + regularizer * regularizer).sqrt()
            }
        }
    }

    /// Advantage values `(a_1, a_0)` at reward 1 and reward 0.
    fn levels(&self, profile: &PromptProfile, skill: f64) -> (f64, f64) {
        (
            self.advantage(1.0, profile, skill),
            self.advantage(0.0, profile, skill),
        )
    }
}

/// The gate parameters the marker-detection probability depends on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateContext {
    pub k1: f64,
    pub k2: f64,
    pub delta_poll: u32,
    pub l_max: u32,
    pub miss_prob: f64,
}

impl GateContext {
    pub fn from_gate(
        config: &crate::abortgate::GateConfig,
        state: &crate::abortgate::GateState,
    ) -> Self {
        Self {
            k1: state.k1,
            k2: state.k2,
            delta_poll: config.delta_poll,
            l_max: config.l_max,
            miss_prob: config.miss_prob,
        }
    }

    /// Largest poll tick not exceeding `K2`; a marker is caught iff
    /// `max(τ, ⌈K1⌉) ≤` this value.
    fn last_tick(&self) -> Option<u32> {
        let d = self.delta_poll.max(1) as f64;
        let tick = (self.k2 / d).floor() * d;
        (tick >= self.k1.ceil() && tick >= 1.0).then_some(tick as u32)
    }
}

/// Exact ground truth for one prompt at a given skill, advantage rule and gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrueMoments {
    /// Standard deviation of the natural contribution `Z`.
    pub sigma: f64,
    pub mean_length: f64,
    /// Probability the marker is emitted and caught by `K2`.
    pub p_marker: f64,
    /// `E[Z² | marker not caught]`; zero when that event has no mass.
    pub sigma_mless_sq: f64,
    pub expected_z: f64,
    pub expected_z_sq: f64,
    pub emission_prob: f64,
    /// `P(caught by K2 | emitted)` before misses.
    pub detect_given_emission: f64,
}

/// Standard deviation of the natural contribution; cheap (no length sums).
pub fn true_sigma(profile: &PromptProfile, skill: f64, baseline: Baseline) -> f64 {
    let e = profile.emission_prob(skill);
    let r = e * profile.correct_prob;
    let (a1, a0) = baseline.levels(profile, skill);
    let e_a = r * a1 + (1.0 - r) * a0;
    let e_a2 = r * a1 * a1 + (1.0 - r) * a0 * a0;
    let m = profile.z_prefix_mean;
    let pt2 = m * m + profile.z_prefix_var + profile.z_tail_var;
    (e_a2 * pt2 - (e_a * m).powi(2)).max(0.0).sqrt()
}

pub fn true_moments(
    profile: &PromptProfile,
    skill: f64,
    baseline: Baseline,
    gate: &GateContext,
) -> TrueMoments {
    let support = profile.length_law.support(gate.l_max);
    let mean_length: f64 = support.iter().map(|(l, p)| *l as f64 * p).sum();
    let d = match gate.last_tick() {
        Some(t) => support
            .iter()
            .map(|&(l, p)| p * profile.marker_frac.marker_at_most(l, t))
            .sum(),
        None => 0.0,
    };
    let e = profile.emission_prob(skill);
    let c = profile.correct_prob;
    let (a1, a0) = baseline.levels(profile, skill);
    let e_a = e * c * a1 + (1.0 - e * c) * a0;
    let e_a2 = e * c * a1 * a1 + (1.0 - e * c) * a0 * a0;
    let m = profile.z_prefix_mean;
    let pt2 = m * m + profile.z_prefix_var + profile.z_tail_var;
    let expected_z = e_a * m;
    let expected_z_sq = e_a2 * pt2;
    let caught = (1.0 - gate.miss_prob) * d;
    let p_marker = e * caught;
    // E[A² ; not caught]: no emission (reward 0) or emitted but not caught.
    let a2_uncaught =
        (1.0 - e) * a0 * a0 + e * (1.0 - caught) * (c * a1 * a1 + (1.0 - c) * a0 * a0);
    let sigma_mless_sq = if p_marker < 1.0 {
        a2_uncaught / (1.0 - p_marker) * pt2
    } else {
        0.0
    };
    TrueMoments {
        sigma: (expected_z_sq - expected_z * expected_z).max(0.0).sqrt(),
        mean_length,
        p_marker,
        sigma_mless_sq,
        expected_z,
        expected_z_sq,
        emission_prob: e,
        detect_given_emission: d,
    }
}

/// Difficulty-level shares of the math-like preset (levels 1 to 5).
pub const MATH_LEVEL_SHARES: [f64; 5] = [0.09, 0.17, 0.20, 0.22, 0.32];

/// Split `total` across `shares` by largest remainder (ties to lower index).
pub fn largest_remainder(total: usize, shares: &[f64]) -> Vec<usize> {
    let sum: f64 = shares.iter().sum();
    let exact: Vec<f64> = shares.iter().map(|s| s / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let missing = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    counts
}

/// Heterogeneous pool with difficulty levels 1–5: harder prompts solve less
/// often and run longer; prefix spread is log-uniform over a 16× range.
pub fn math_like_population(pool_size: usize, seed: u64, l_max: u32) -> Vec<PromptProfile> {
    const SOLVE: [f64; 5] = [0.95, 0.85, 0.70, 0.50, 0.30];
    const MEDIAN_LEN: [f64; 5] = [300.0, 450.0, 650.0, 900.0, 1200.0];
    let counts = largest_remainder(pool_size, &MATH_LEVEL_SHARES);
    let mut pool = Vec::with_capacity(pool_size);
    for (level, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            let id = pool.len() as u32;
            let mut s = RolloutStream::new(Domain::Population, seed, id as u64, 0, 0);
            let sd = 0.25 * 16f64.powf(s.uniform());
            pool.push(PromptProfile {
                id: PromptId(id),
                difficulty: (level + 1) as f64,
                solve_prob: SOLVE[level],
                correct_prob: 1.0,
                length_law: LengthLaw::LogNormal {
                    mu: MEDIAN_LEN[level].min(l_max as f64 / 2.0).ln(),
                    sigma: 0.45,
                },
                marker_frac: FracLaw::Uniform { lo: 0.4, hi: 0.9 },
                z_prefix_mean: 0.25 * sd,
                z_prefix_var: sd * sd,
                z_tail_var: 0.25 * sd * sd,
            });
        }
    }
    pool
}

/// Pool whose prompts are all solvable, with tight lengths and early markers,
/// so that the marker rate approaches one as skill rises.
pub fn improving_population(pool_size: usize, seed: u64, l_max: u32) -> Vec<PromptProfile> {
    (0..pool_size as u32)
        .map(|id| {
            let mut s = RolloutStream::new(Domain::Population, seed, id as u64, 1, 0);
            let sd = 0.5 * 4f64.powf(s.uniform());
            PromptProfile {
                id: PromptId(id),
                difficulty: 1.0,
                solve_prob: 1.0,
                correct_prob: 1.0,
                length_law: LengthLaw::LogNormal {
                    mu: (l_max as f64 / 6.0).ln(),
                    sigma: 0.15,
                },
                marker_frac: FracLaw::Uniform { lo: 0.3, hi: 0.6 },
                z_prefix_mean: 0.0,
                z_prefix_var: sd * sd,
                z_tail_var: 0.25 * sd * sd,
            }
        })
        .collect()
}
