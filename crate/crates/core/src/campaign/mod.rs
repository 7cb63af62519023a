//! The per-step controller and multi-step campaigns.
//!
//! One step allocates counts from the surrogates, generates and gates every
//! rollout, aggregates the kept ones, then folds the observations back into
//! the surrogates and the abort thresholds. A campaign runs steps over
//! shuffled epoch passes of the prompt pool.

pub mod config;
pub mod metrics;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::abortgate::{gate_decide, observed_marker, GateState};
use crate::allocator::solve_dual;
use crate::error::{Error, Result};
use crate::estimator::{
    aggregate_per_prompt_mean, aggregate_token_mean, group_advantages, surcharge_tracker,
    AdvantageMode, WeightedRollout,
};
use crate::simenv::{sample_rollout, true_sigma, update_skill, PolicySkill, PromptProfile};
use crate::stream::{derive_stream, mix_seed, Domain, RolloutStream};
use crate::surrogate::{chi_squared, SurrogateStore};
use crate::types::{AllocationPlan, GateDecisionKind, PromptId, RolloutOutcome, StepMetrics};

pub use config::{Aggregation, AllocationMode, CampaignConfig, ConfigFile, LengthSource};
pub use metrics::{write_metrics, MetricsFormat};

/// Mutable state carried from one step to the next.
#[derive(Debug, Clone)]
pub struct Controller {
    config: CampaignConfig,
    profiles: BTreeMap<PromptId, PromptProfile>,
    pub store: SurrogateStore,
    pub gate: GateState,
    pub lambda_warm: f64,
    pub skill: PolicySkill,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub metrics: StepMetrics,
    pub plan: AllocationPlan,
    pub outcomes: Vec<RolloutOutcome>,
}

impl Controller {
    pub fn new(config: CampaignConfig) -> Result<Self> {
        config.validate()?;
        let profiles = config.pool.iter().map(|p| (p.id, p.clone())).collect();
        Ok(Self {
            store: SurrogateStore::new(config.campaign.surrogate_floor)?,
            gate: GateState::cold(&config.gate),
            lambda_warm: config.campaign.initial_lambda,
            skill: PolicySkill {
                skill: config.campaign.initial_skill,
                improvement_rate: config.campaign.improvement_rate,
            },
            profiles,
            config,
        })
    }

    pub fn config(&self) -> &CampaignConfig {
        &self.config
    }

    fn profile(&self, q: PromptId) -> Result<&PromptProfile> {
        self.profiles
            .get(&q)
            .ok_or_else(|| Error::Config(format!("prompt {q} is not in the pool")))
    }

    /// Allocation for `batch` from the current surrogates.
    pub fn plan(&self, batch: &[PromptId]) -> Result<AllocationPlan> {
        let c = &self.config;
        let s_hats: Vec<f64> = batch.iter().map(|&q| self.store.surrogate(q)).collect();
        let l_default = c.length_default();
        let l_hats: Vec<f64> = batch
            .iter()
            .map(|&q| self.store.length_estimate(q, l_default))
            .collect();
        let mut plan = solve_dual(
            batch,
            &s_hats,
            &l_hats,
            c.budget(),
            self.lambda_warm,
            &c.campaign.allocator,
        )?;
        if c.campaign.allocation == AllocationMode::Uniform {
            let n = c.campaign.uniform_count;
            plan.counts = vec![n; batch.len()];
            plan.s_pre = vec![1.0; batch.len()];
            plan.predicted_tokens = l_hats.iter().map(|l| n as f64 * l).sum();
        }
        Ok(plan)
    }

    /// Run all four phases for one batch.
    pub fn run_step(&mut self, batch: &[PromptId], step: u64, epoch: u64) -> Result<StepResult> {
        let seed = self.config.campaign.master_seed;
        let gate_cfg = self.config.gate.clone();
        let skill = self.skill.skill;
        let surrogates: Vec<f64> = batch.iter().map(|&q| self.store.surrogate(q)).collect();

        // Phase 1: allocate.
        let plan = self.plan(batch)?;

        // Phase 2: generate and gate.
        let mut raws = Vec::new();
        let mut outcomes = Vec::new();
        for (&q, &n) in batch.iter().zip(&plan.counts) {
            let profile = self.profile(q)?;
            let mut group = Vec::with_capacity(n as usize);
            for i in 0..n {
                let mut stream = derive_stream(seed, step, q.0 as u64, i as u64);
                let raw = sample_rollout(profile, skill, gate_cfg.l_max, &mut stream);
                let seen = observed_marker(raw.marker_time, raw.miss_coin, &gate_cfg);
                let d = gate_decide(
                    seen,
                    raw.natural_length,
                    &gate_cfg,
                    &self.gate,
                    raw.gate_coin,
                );
                group.push((raw, d));
            }
            raws.push(group);
        }

        // Phase 3: advantages over the whole group, aborted rollouts included.
        let mut weighted = Vec::new();
        for ((&q, group), &s_pre) in batch.iter().zip(&raws).zip(&plan.s_pre) {
            let profile = self.profile(q)?;
            let rewards: Vec<f64> = group.iter().map(|(r, _)| r.reward).collect();
            let mode = match self.config.estimator.advantage {
                AdvantageMode::ActionIndependent { .. }
                    if self.config.estimator.baseline_from_env =>
                {
                    AdvantageMode::ActionIndependent {
                        baseline: profile.emission_prob(skill) * profile.correct_prob,
                    }
                }
                other => other,
            };
            let adv = group_advantages(&rewards, mode);
            for (i, ((raw, d), a)) in group.iter().zip(adv).enumerate() {
                let z = match d.kind {
                    GateDecisionKind::KeptMarker => a * raw.z_prefix,
                    GateDecisionKind::EpsKept => a * (raw.z_prefix + raw.z_tail),
                    GateDecisionKind::Aborted => 0.0,
                };
                let o = RolloutOutcome {
                    prompt_id: q,
                    rollout_index: i as u32,
                    natural_length: raw.natural_length,
                    marker_time: raw.marker_time,
                    detect_time: d.detect_time,
                    stop_time: d.stop_time,
                    kind: d.kind,
                    aborted: d.abort_indicator == 1,
                    propensity: d.propensity,
                    reward: raw.reward,
                    z_value: z,
                };
                weighted.push(WeightedRollout::from_outcome(&o, s_pre));
                outcomes.push(o);
            }
        }
        let aggregate = match self.config.estimator.aggregation {
            Aggregation::TokenMean => aggregate_token_mean(&weighted),
            Aggregation::PerPromptMean => aggregate_per_prompt_mean(&weighted),
        };

        let metrics = self.step_metrics(
            step,
            epoch,
            &plan,
            &outcomes,
            &surrogates,
            aggregate.value,
            aggregate.degenerate,
        );

        // Phase 4: fold observations back, in prompt-id order.
        let length_source = self.config.campaign.length_source;
        let mut by_prompt: BTreeMap<PromptId, Vec<&RolloutOutcome>> = BTreeMap::new();
        for o in &outcomes {
            by_prompt.entry(o.prompt_id).or_default().push(o);
        }
        for (q, group) in &by_prompt {
            let kept: Vec<f64> = group
                .iter()
                .filter(|o| o.is_kept())
                .map(|o| o.z_value)
                .collect();
            self.store.observe_group(*q, &kept)?;
            for o in group.iter() {
                let counts = match length_source {
                    LengthSource::AllRollouts => true,
                    LengthSource::KeptOnly => o.is_kept(),
                };
                if counts {
                    self.store.observe_length(*q, o.stop_time);
                }
            }
            for o in group.iter().filter(|o| o.is_kept()) {
                self.gate.push_length(
                    o.natural_length.min(gate_cfg.l_max),
                    gate_cfg.window_capacity,
                );
            }
        }
        self.gate.end_step();
        self.gate.maybe_refit(&gate_cfg);
        self.lambda_warm = plan.lambda_star;
        self.skill = update_skill(self.skill, metrics.mean_reward);

        Ok(StepResult {
            metrics,
            plan,
            outcomes,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn step_metrics(
        &self,
        step: u64,
        epoch: u64,
        plan: &AllocationPlan,
        outcomes: &[RolloutOutcome],
        surrogates: &[f64],
        aggregate: f64,
        degenerate: bool,
    ) -> StepMetrics {
        let n = outcomes.len().max(1) as f64;
        let count = |k: GateDecisionKind| outcomes.iter().filter(|o| o.kind == k).count() as f64;
        let kept: Vec<&RolloutOutcome> = outcomes.iter().filter(|o| o.is_kept()).collect();
        let is_weight_mean = if kept.is_empty() {
            0.0
        } else {
            kept.iter().map(|o| 1.0 / o.propensity).sum::<f64>() / kept.len() as f64
        };
        let baseline = self.config.reference_baseline();
        let sigmas: Vec<f64> = plan
            .prompts
            .iter()
            .map(|q| {
                self.profiles
                    .get(q)
                    .map(|p| true_sigma(p, self.skill.skill, baseline))
                    .unwrap_or(0.0)
            })
            .collect();
        StepMetrics {
            step,
            epoch,
            lambda_star: plan.lambda_star,
            marker_rate: count(GateDecisionKind::KeptMarker) / n,
            abort_rate: count(GateDecisionKind::Aborted) / n,
            is_weight_mean,
            k1: self.gate.k1,
            k2: self.gate.k2,
            tokens_generated: outcomes.iter().map(|o| o.stop_time as u64).sum(),
            predicted_tokens: plan.predicted_tokens,
            budget: self.config.budget(),
            rollouts: outcomes.len() as u64,
            count_histogram: plan.histogram(),
            chi_squared: chi_squared(surrogates, &sigmas).ok(),
            surcharge: surcharge_tracker(outcomes, self.config.gate.eps_abort),
            aggregate,
            mean_reward: outcomes.iter().map(|o| o.reward).sum::<f64>() / n,
            skill: self.skill.skill,
            budget_overrun: plan.budget_overrun,
            degenerate,
        }
    }

    /// Reset the surrogate floor at the end of the first epoch.
    fn end_epoch(&mut self, finished_epoch: u64) -> Result<()> {
        if finished_epoch == 0 && self.store.observed_prompts() > 0 {
            self.store
                .refreeze_floor(self.config.campaign.floor_percentile)?;
        }
        Ok(())
    }
}

/// Per-step batches: each epoch is a shuffled pass over the pool in
/// batches of `batch_size`; a trailing partial batch is dropped.
pub fn epoch_batches(
    pool: &[PromptId],
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Vec<Vec<PromptId>> {
    let mut order = pool.to_vec();
    order.sort_unstable();
    let mut rng = RolloutStream::new(Domain::EpochShuffle, seed, epoch, 0, 0);
    order.shuffle(&mut rng);
    order.chunks_exact(batch_size).map(|c| c.to_vec()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub steps: u64,
    pub epochs: u64,
    pub budget: f64,
    pub final_histogram: BTreeMap<u32, u32>,
    pub initial_histogram_width: u32,
    pub final_histogram_width: u32,
    pub tokens_per_step: Vec<u64>,
    pub mean_tokens_per_step: f64,
    /// Rollout-weighted mean difficulty of each epoch's prompts.
    pub mean_difficulty_per_epoch: Vec<f64>,
    pub final_lambda: Option<f64>,
    pub final_k1: f64,
    pub final_k2: f64,
    pub final_floor: f64,
    pub gate_refits: u32,
    pub degenerate_steps: u64,
    pub overrun_steps: u64,
    pub mean_abort_rate: f64,
    pub mean_marker_rate: f64,
}

#[derive(Debug, Clone)]
pub struct CampaignReport {
    pub metrics: Vec<StepMetrics>,
    pub summary: Summary,
}

/// Run `steps` steps. `observer` sees every step result as it is produced.
pub fn run_campaign_with(
    config: &CampaignConfig,
    mut observer: impl FnMut(&StepResult),
) -> Result<CampaignReport> {
    let mut ctl = Controller::new(config.clone())?;
    let c = &config.campaign;
    let ids: Vec<PromptId> = config.pool.iter().map(|p| p.id).collect();
    let difficulty: BTreeMap<PromptId, f64> =
        config.pool.iter().map(|p| (p.id, p.difficulty)).collect();
    let mut metrics = Vec::with_capacity(c.steps as usize);
    let mut epoch = 0u64;
    let mut batches = epoch_batches(&ids, c.batch_size, c.master_seed, epoch).into_iter();
    let mut epoch_difficulty: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    let mut last_histogram = BTreeMap::new();
    for step in 0..c.steps {
        let batch = match batches.next() {
            Some(b) => b,
            None => {
                ctl.end_epoch(epoch)?;
                epoch += 1;
                epoch_difficulty.push((0.0, 0.0));
                batches = epoch_batches(&ids, c.batch_size, c.master_seed, epoch).into_iter();
                batches
                    .next()
                    .ok_or_else(|| Error::Config("batch_size exceeds pool size".into()))?
            }
        };
        let result = ctl.run_step(&batch, step, epoch)?;
        let acc = epoch_difficulty.last_mut().expect("one entry per epoch");
        for (q, &n) in result.plan.prompts.iter().zip(&result.plan.counts) {
            acc.0 += n as f64 * difficulty.get(q).copied().unwrap_or(0.0);
            acc.1 += n as f64;
        }
        observer(&result);
        last_histogram = result.metrics.count_histogram.clone();
        metrics.push(result.metrics);
    }
    let tokens: Vec<u64> = metrics.iter().map(|m| m.tokens_generated).collect();
    let steps = metrics.len() as u64;
    let mean = |f: &dyn Fn(&StepMetrics) -> f64| {
        if metrics.is_empty() {
            0.0
        } else {
            metrics.iter().map(f).sum::<f64>() / metrics.len() as f64
        }
    };
    let summary = Summary {
        steps,
        epochs: if steps == 0 { 0 } else { epoch + 1 },
        budget: config.budget(),
        final_histogram: last_histogram,
        initial_histogram_width: metrics.first().map(|m| m.histogram_width()).unwrap_or(0),
        final_histogram_width: metrics.last().map(|m| m.histogram_width()).unwrap_or(0),
        mean_tokens_per_step: mean(&|m| m.tokens_generated as f64),
        tokens_per_step: tokens,
        mean_difficulty_per_epoch: if steps == 0 {
            Vec::new()
        } else {
            epoch_difficulty
                .iter()
                .filter(|(_, w)| *w > 0.0)
                .map(|(s, w)| s / w)
                .collect()
        },
        final_lambda: metrics.last().map(|m| m.lambda_star),
        final_k1: ctl.gate.k1,
        final_k2: ctl.gate.k2,
        final_floor: ctl.store.floor(),
        gate_refits: ctl.gate.refits(),
        degenerate_steps: metrics.iter().filter(|m| m.degenerate).count() as u64,
        overrun_steps: metrics.iter().filter(|m| m.budget_overrun).count() as u64,
        mean_abort_rate: mean(&|m| m.abort_rate),
        mean_marker_rate: mean(&|m| m.marker_rate),
    };
    Ok(CampaignReport { metrics, summary })
}

pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignReport> {
    run_campaign_with(config, |_| {})
}

/// Write `metrics` to `path` and the summary next to it as
/// `<path>.summary.json`. Returns the summary path.
pub fn write_report(
    report: &CampaignReport,
    path: &Path,
    format: MetricsFormat,
) -> Result<std::path::PathBuf> {
    write_metrics(path, &report.metrics, format)?;
    let mut summary_path = path.as_os_str().to_owned();
    summary_path.push(".summary.json");
    let summary_path = std::path::PathBuf::from(summary_path);
    let text = serde_json::to_string_pretty(&report.summary)
        .map_err(|e| Error::Config(format!("summary serialisation: {e}")))?;
    std::fs::write(&summary_path, text + "\n").map_err(|e| Error::io(&summary_path, e))?;
    Ok(summary_path)
}

/// Seed of the `index`-th sweep run: the master seed itself for index 0,
/// a mixed seed otherwise.
pub fn sweep_seed(master_seed: u64, index: usize) -> u64 {
    if index == 0 {
        master_seed
    } else {
        mix_seed(master_seed, index as u64)
    }
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub fraction: f64,
    pub seed: u64,
    pub report: CampaignReport,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub runs: Vec<SweepRun>,
}

/// One campaign per budget fraction, on seeds derived from the fraction's
/// index (the pool is fixed by the base config).
pub fn sweep(base: &CampaignConfig, fractions: &[f64]) -> Result<SweepReport> {
    if fractions.is_empty() {
        return Err(Error::Empty("budget fractions"));
    }
    let mut runs = Vec::with_capacity(fractions.len());
    for (i, &fraction) in fractions.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.campaign.budget_fraction = fraction;
        cfg.campaign.master_seed = sweep_seed(base.campaign.master_seed, i);
        cfg.validate()?;
        runs.push(SweepRun {
            fraction,
            seed: cfg.campaign.master_seed,
            report: run_campaign(&cfg)?,
        });
    }
    Ok(SweepReport { runs })
}

impl fmt::Display for SweepReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = self
            .runs
            .first()
            .map(|r| r.report.summary.mean_tokens_per_step);
        writeln!(
            f,
            "{:>9} {:>20} {:>16} {:>10} {:>11} {:>12} {:>9}",
            "fraction", "seed", "tokens/step", "ratio", "abort rate", "final λ*", "n range"
        )?;
        for r in &self.runs {
            let s = &r.report.summary;
            let ratio = base
                .filter(|b| *b > 0.0)
                .map(|b| s.mean_tokens_per_step / b)
                .unwrap_or(f64::NAN);
            let range = match (
                s.final_histogram.keys().next(),
                s.final_histogram.keys().next_back(),
            ) {
                (Some(lo), Some(hi)) => format!("{lo}-{hi}"),
                _ => "-".into(),
            };
            writeln!(
                f,
                "{:>9.4} {:>20} {:>16.1} {:>10.4} {:>11.4} {:>12.4e} {:>9}",
                r.fraction,
                r.seed,
                s.mean_tokens_per_step,
                ratio,
                s.mean_abort_rate,
                s.final_lambda.unwrap_or(f64::NAN),
                range
            )?;
        }
        Ok(())
    }
}
