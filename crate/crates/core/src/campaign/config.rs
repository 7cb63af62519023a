//! Campaign configuration and its TOML file format.
//!
//! A config file has four tables, every one optional:
//!
//! ```toml
//! [campaign]
//! master_seed = 7
//! steps = 100
//! batch_size = 32
//! budget_fraction = 0.5
//!
//! [gate]
//! eps_abort = 0.01
//!
//! [estimator]
//! advantage = { variant = "group-normalized", std_regularizer = 1e-6, population_std = true }
//!
//! [population]
//! preset = "math-like"
//! size = 512
//! ```
//!
//! Explicit profiles go in `[[population.profiles]]`. Unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::abortgate::GateConfig;
use crate::allocator::{AllocatorConfig, DualClosure};
use crate::error::{Error, Result};
use crate::estimator::AdvantageMode;
use crate::simenv::{improving_population, math_like_population, Baseline, PromptProfile};

/// How per-prompt counts are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AllocationMode {
    /// Budget-dual Neyman allocation from the online surrogates.
    Neyman,
    /// Every prompt gets `uniform_count` rollouts (control arm).
    Uniform,
}

/// Which rollouts feed the per-prompt length estimate `L̂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LengthSource {
    /// Every rollout's stop time, aborted ones included: the realised
    /// per-rollout cost under the gate.
    AllRollouts,
    /// Only rollouts whose gradient is kept.
    KeptOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    TokenMean,
    PerPromptMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignSection {
    pub master_seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub budget_fraction: f64,
    /// Full token budget per step; defaults to
    /// `reference_rollouts · batch_size · length_default`.
    pub base_budget: Option<f64>,
    pub reference_rollouts: f64,
    /// Cold `L̂`; defaults to `0.5 · L_max`.
    pub length_default: Option<f64>,
    pub length_source: LengthSource,
    pub surrogate_floor: f64,
    /// Percentile the floor is reset to after the first epoch.
    pub floor_percentile: f64,
    pub allocation: AllocationMode,
    pub uniform_count: u32,
    pub initial_lambda: f64,
    pub initial_skill: f64,
    pub improvement_rate: f64,
    pub allocator: AllocatorConfig,
}

impl Default for CampaignSection {
    fn default() -> Self {
        Self {
            master_seed: 0,
            steps: 100,
            batch_size: 128,
            budget_fraction: 1.0,
            base_budget: None,
            reference_rollouts: 8.0,
            length_default: None,
            length_source: LengthSource::AllRollouts,
            surrogate_floor: 0.01,
            floor_percentile: 5.0,
            allocation: AllocationMode::Neyman,
            uniform_count: 8,
            initial_lambda: 1.0,
            initial_skill: 1.0,
            improvement_rate: 0.0,
            allocator: AllocatorConfig {
                closure: DualClosure::Realized,
                ..AllocatorConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub advantage: AdvantageMode,
    /// With an action-independent advantage, use each prompt's true
    /// `E[R]` as its baseline instead of the fixed value.
    pub baseline_from_env: bool,
    pub aggregation: Aggregation,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            advantage: AdvantageMode::default(),
            baseline_from_env: false,
            aggregation: Aggregation::TokenMean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    MathLike,
    Improving,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationSection {
    pub preset: Option<Preset>,
    pub size: usize,
    /// Seed for preset generation; defaults to the master seed.
    pub seed: Option<u64>,
    pub profiles: Vec<PromptProfile>,
}

impl Default for PopulationSection {
    fn default() -> Self {
        Self {
            preset: Some(Preset::MathLike),
            size: 512,
            seed: None,
            profiles: Vec::new(),
        }
    }
}

/// The on-disk layout.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub campaign: CampaignSection,
    pub gate: GateConfig,
    pub estimator: EstimatorSection,
    pub population: PopulationSection,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Expand the population and fill derived defaults.
    pub fn resolve(self) -> Result<CampaignConfig> {
        let pool = match (&self.population.preset, self.population.profiles.is_empty()) {
            (_, false) => self.population.profiles.clone(),
            (Some(preset), true) => {
                let seed = self.population.seed.unwrap_or(self.campaign.master_seed);
                let l_max = self.gate.l_max;
                match preset {
                    Preset::MathLike => math_like_population(self.population.size, seed, l_max),
                    Preset::Improving => improving_population(self.population.size, seed, l_max),
                }
            }
            (None, true) => {
                return Err(Error::Config(
                    "population has neither a preset nor profiles".into(),
                ))
            }
        };
        let config = CampaignConfig {
            campaign: self.campaign,
            gate: self.gate,
            estimator: self.estimator,
            pool,
        };
        config.validate()?;
        Ok(config)
    }
}

/// A validated campaign with its prompt pool expanded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignConfig {
    pub campaign: CampaignSection,
    pub gate: GateConfig,
    pub estimator: EstimatorSection,
    pub pool: Vec<PromptProfile>,
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        let c = &self.campaign;
        self.gate.validate()?;
        if c.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if c.batch_size > self.pool.len() {
            return Err(Error::Config(format!(
                "batch_size {} exceeds pool size {}",
                c.batch_size,
                self.pool.len()
            )));
        }
        if !(c.budget_fraction > 0.0 && c.budget_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "budget_fraction {} must lie in (0, 1]",
                c.budget_fraction
            )));
        }
        let positives = [
            ("reference_rollouts", c.reference_rollouts),
            ("surrogate_floor", c.surrogate_floor),
            ("initial_lambda", c.initial_lambda),
            ("base_budget", c.base_budget.unwrap_or(1.0)),
            ("length_default", c.length_default.unwrap_or(1.0)),
        ];
        for (name, v) in positives {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(c.floor_percentile > 0.0 && c.floor_percentile < 100.0) {
            return Err(Error::Config(
                "floor_percentile must lie in (0, 100)".into(),
            ));
        }
        if !(0.0..=1.0).contains(&c.initial_skill) || c.improvement_rate.is_nan() || c.improvement_rate < 0.0 {
            return Err(Error::Config(
                "initial_skill must lie in [0, 1] and improvement_rate be non-negative".into(),
            ));
        }
        if c.allocation == AllocationMode::Uniform && c.uniform_count == 0 {
            return Err(Error::Config("uniform_count must be at least 1".into()));
        }
        if c.allocator.n_min == 0 || !(c.allocator.eps_pre > 0.0 && c.allocator.eps_pre <= 1.0) {
            return Err(Error::Config(
                "allocator needs n_min >= 1 and eps_pre in (0, 1]".into(),
            ));
        }
        if let AdvantageMode::GroupNormalized {
            std_regularizer, ..
        } = self.estimator.advantage
        {
            if std_regularizer.is_nan() || std_regularizer <= 0.0 {
                return Err(Error::Config("std_regularizer must be positive".into()));
            }
        }
        let mut ids: Vec<u32> = self.pool.iter().map(|p| p.id.0).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate prompt ids in population".into()));
        }
        for p in &self.pool {
            p.validate(self.gate.l_max)
                .map_err(|e| Error::Config(format!("profile {}: {e}", p.id)))?;
        }
        Ok(())
    }

    pub fn length_default(&self) -> f64 {
        self.campaign
            .length_default
            .unwrap_or(0.5 * self.gate.l_max as f64)
    }

    pub fn base_budget(&self) -> f64 {
        self.campaign.base_budget.unwrap_or(
            self.campaign.reference_rollouts
                * self.campaign.batch_size as f64
                * self.length_default(),
        )
    }

    /// Per-step token budget `b · B`.
    pub fn budget(&self) -> f64 {
        self.campaign.budget_fraction * self.base_budget()
    }

    /// Advantage rule used for ground-truth σ (diagnostics only).
    pub fn reference_baseline(&self) -> Baseline {
        match self.estimator.advantage {
            AdvantageMode::GroupNormalized {
                std_regularizer, ..
            } => Baseline::Standardized {
                regularizer: std_regularizer,
            },
            AdvantageMode::ActionIndependent { .. } if self.estimator.baseline_from_env => {
                Baseline::MeanReward
            }
            AdvantageMode::ActionIndependent { baseline } => Baseline::Fixed { value: baseline },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let c = ConfigFile::default().resolve().unwrap();
        assert_eq!(c.pool.len(), 512);
        assert_eq!(c.gate.l_max, 3072);
        assert_eq!(c.length_default(), 1536.0);
        assert_eq!(c.base_budget(), 8.0 * 128.0 * 1536.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ConfigFile::parse("[campaign]\nstepz = 3\n").is_err());
        assert!(ConfigFile::parse("[gate]\ngrace_window = 3\n").is_err());
        assert!(ConfigFile::parse("[extra]\n").is_err());
    }

    #[test]
    fn round_trip() {
        let mut f = ConfigFile::default();
        f.campaign.steps = 17;
        f.gate.eps_abort = 0.2;
        f.population.profiles = math_like_population(3, 1, 3072);
        let text = f.to_toml().unwrap();
        assert_eq!(ConfigFile::parse(&text).unwrap(), f);
    }

    #[test]
    fn explicit_profiles() {
        let text = r#"
[campaign]
batch_size = 1

[population]
preset = "math-like"

[[population.profiles]]
id = 4
difficulty = 2.0
solve_prob = 0.5
length_law = { law = "log-normal", mu = 6.0, sigma = 0.4 }
marker_frac = { law = "point", value = 0.5 }
z_prefix_mean = 0.0
z_prefix_var = 1.0
"#;
        let c = ConfigFile::parse(text).unwrap().resolve().unwrap();
        assert_eq!(c.pool.len(), 1);
        assert_eq!(c.pool[0].correct_prob, 1.0);
    }

    #[test]
    fn invalid_batch() {
        let mut f = ConfigFile::default();
        f.population.size = 10;
        f.campaign.batch_size = 11;
        assert!(f.resolve().is_err());
    }
}
