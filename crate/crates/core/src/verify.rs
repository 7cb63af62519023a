//! The acceptance check suite.
//!
//! Each check is a plain function returning a [`CheckResult`]; the `verify`
//! CLI subcommand and the `acceptance` integration test both run them.
//! [`Scale::Full`] uses the stated instance counts and draw sizes,
//! [`Scale::Quick`] shrinks the random-instance and Monte-Carlo counts for a
//! fast smoke run (campaign checks are unchanged).

use std::fmt;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::Serialize;
use statrs::distribution::{Beta, Binomial, ContinuousCDF, DiscreteCDF};

use crate::abortgate::{detection_time, GateConfig, GateState};
use crate::allocator::{
    continuous_neyman, estimator_variance, solve_dual, token_demand, uniform_ratio, AllocatorConfig,
};
use crate::campaign::config::Preset;
use crate::campaign::{
    metrics::render, run_campaign, sweep, CampaignConfig, ConfigFile, MetricsFormat,
};
use crate::error::{Error, Result};
use crate::estimator::{surcharge_bound, AdvantageMode};
use crate::oracle::{brute_force_allocation, grid_slack, mc_estimator_check, McSetup};
use crate::simenv::{true_moments, Baseline, FracLaw, GateContext, LengthLaw, PromptProfile};
use crate::stream::{Domain, RolloutStream};
use crate::surrogate::{calibration_factor, calibration_gap_bound};
use crate::types::PromptId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    #[default]
    Full,
    Quick,
}

impl Scale {
    fn pick(self, full: u64, quick: u64) -> u64 {
        match self {
            Scale::Full => full,
            Scale::Quick => quick,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct VerifyOptions {
    pub seed: u64,
    pub scale: Scale,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            scale: Scale::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:>2} {:<34} {:>7.2}s  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.seconds,
            self.detail
        )
    }
}

fn finish(
    id: u8,
    name: &'static str,
    start: Instant,
    outcome: Result<(bool, String)>,
) -> CheckResult {
    let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckResult {
        id,
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn rng(opts: &VerifyOptions, check: u64, instance: u64) -> RolloutStream {
    RolloutStream::new(Domain::Oracle, opts.seed, 1_000 + check, instance, 0)
}

fn log_uniform(r: &mut RolloutStream, lo: f64, hi: f64) -> f64 {
    (lo.ln() + r.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

fn ids(m: usize) -> Vec<PromptId> {
    (0..m as u32).map(PromptId).collect()
}

/// Closed-form optimum against the grid oracle, plus the budget identity.
pub fn check_neyman_optimality(opts: &VerifyOptions) -> CheckResult {
    let start = Instant::now();
    let outcome = (|| {
        let n = opts.scale.pick(500, 60);
        let (mut below, mut finite, mut worst_identity): (u64, u64, f64) = (0, 0, 0.0);
        let mut worst_gap: f64 = 0.0;
        for i in 0..n {
            let mut r = rng(opts, 1, i);
            let m = r.random_range(2..=4usize);
            let sig: Vec<f64> = (0..m).map(|_| log_uniform(&mut r, 0.2, 5.0)).collect();
            let len: Vec<f64> = (0..m).map(|_| r.random_range(50.0..3072.0)).collect();
            let b = r.random_range(1.0..64.0) * len.iter().sum::<f64>();
            let res = if m == 4 { 160 } else { 400 };
            let cont = continuous_neyman(&sig, &len, b)?;
            let spent: f64 = cont.n_star.iter().zip(&len).map(|(n, l)| n * l).sum();
            worst_identity = worst_identity.max(((spent - b) / b).abs());
            let grid = brute_force_allocation(&sig, &len, b, res)?;
            if cont.v_star > grid.min_variance * (1.0 + 1e-12) {
                return Ok((false, format!("instance {i}: V* above grid minimum")));
            }
            below += 1;
            let shares: Vec<f64> = cont
                .n_star
                .iter()
                .zip(&len)
                .map(|(n, l)| n * l / b)
                .collect();
            let slack = grid_slack(&sig, &len, b, &shares, res)?;
            if slack.is_finite() {
                finite += 1;
                if grid.min_variance > (cont.v_star + slack) * (1.0 + 1e-12) {
                    return Ok((
                        false,
                        format!("instance {i}: grid minimum beyond V* + slack"),
                    ));
                }
                worst_gap =
                    worst_gap.max((grid.min_variance - cont.v_star) / slack.max(f64::MIN_POSITIVE));
            }
        }
        let ok = worst_identity <= 1e-12;
        Ok((
            ok,
            format!(
                "{below}/{n} V* <= grid min; slack finite on {finite} (gap/slack <= {worst_gap:.3}); budget identity {worst_identity:.1e}"
            ),
        ))
    })();
    finish(1, "Neyman optimality vs grid", start, outcome)
}

/// `uniform_ratio ≥ 1`, with equality when `σ/√L` is constant.
pub fn check_uniform_ratio(opts: &VerifyOptions) -> CheckResult {
    let start = Instant::now();
    let outcome = (|| {
        let n = opts.scale.pick(10_000, 1_000);
        let mut min_ratio = f64::INFINITY;
        let mut worst_eq: f64 = 0.0;
        for i in 0..n {
            let mut r = rng(opts, 2, i);
            let m = r.random_range(1..=64usize);
            let len: Vec<f64> = (0..m).map(|_| r.random_range(1.0..3072.0)).collect();
            let sig: Vec<f64> = (0..m).map(|_| log_uniform(&mut r, 1e-3, 1e3)).collect();
            min_ratio = min_ratio.min(uniform_ratio(&sig, &len)?);
            let c = log_uniform(&mut r, 1e-3, 1e3);
            let flat: Vec<f64> = len.iter().map(|l| c * l.sqrt()).collect();
            worst_eq = worst_eq.max((uniform_ratio(&flat, &len)? - 1.0).abs());
        }
        Ok((
            min_ratio >= 1.0 - 1e-12 && worst_eq <= 1e-12,
            format!("min ratio {min_ratio:.6} over {n}; |ratio - 1| on flat instances <= {worst_eq:.1e}"),
        ))
    })();
    finish(2, "uniform-ratio corollary", start, outcome)
}

/// Dual closure from far-off warm starts and monotonicity of `λ*(B)`.
pub fn check_dual_feasibility(opts: &VerifyOptions) -> CheckResult {
    let start = Instant::now();
    let outcome = (|| {
        let n = opts.scale.pick(10_000, 1_000);
        let cfg = AllocatorConfig::default();
        let mut worst: f64 = 0.0;
        let mut monotone_fail = 0;
        for i in 0..n {
            let mut r = rng(opts, 3, i);
            let m = r.random_range(1..=64usize);
            let sig: Vec<f64> = (0..m).map(|_| log_uniform(&mut r, 1e-2, 1e2)).collect();
            let len: Vec<f64> = (0..m).map(|_| r.random_range(1.0..3072.0)).collect();
            let l_sum: f64 = len.iter().sum();
            let b = r.random_range(1.0..64.0) * l_sum;
            let exact = continuous_neyman(&sig, &len, b)?.lambda_star;
            let warm = exact * 10f64.powf(r.random_range(-6.0..6.0));
            let plan = solve_dual(&ids(m), &sig, &len, b, warm, &cfg)?;
            worst = worst.max(((token_demand(&sig, &len, plan.lambda_star) - b) / b).abs());
            if i % 10 == 0 {
                let mut prev = f64::INFINITY;
                for k in 1..=8 {
                    let bk = l_sum * 2f64.powi(k);
                    let lam = solve_dual(&ids(m), &sig, &len, bk, 1.0, &cfg)?.lambda_star;
                    if lam >= prev {
                        monotone_fail += 1;
                    }
                    prev = lam;
                }
            }
        }
        Ok((
            worst <= 1e-6 && monotone_fail == 0,
            format!(
                "max |Phi - B|/B {worst:.2e} over {n}; lambda(B) increases {monotone_fail} times"
            ),
        ))
    })();
    finish(3, "dual feasibility", start, outcome)
}

/// Profile whose marker is emitted with probability `rate` and, once
/// emitted, always caught by the cold thresholds.
pub fn mc_profile(rate: f64) -> PromptProfile {
    PromptProfile {
        id: PromptId(0),
        difficulty: 1.0,
        solve_prob: rate,
        correct_prob: 1.0,
        length_law: LengthLaw::LogNormal {
            mu: 1200f64.ln(),
            sigma: 0.3,
        },
        marker_frac: FracLaw::Point { value: 0.25 },
        z_prefix_mean: 0.5,
        z_prefix_var: 1.0,
        z_tail_var: 0.5,
    }
}

pub const MC_EPS_GRID: [f64; 3] = [0.01, 0.05, 0.2];
pub const MC_MARKER_GRID: [f64; 3] = [0.1, 0.5, 0.9];

/// One Monte-Carlo cell: returns `(mean gap / combined SE, second-moment
/// excess, bound, SE of the excess, observed marker rate)`.
fn mc_cell(
    opts: &VerifyOptions,
    eps: f64,
    rate: f64,
    cell: u64,
) -> Result<(f64, f64, f64, f64, f64)> {
    let gate = GateConfig {
        eps_abort: eps,
        ..GateConfig::default()
    };
    let cold = GateState::cold(&gate);
    let baseline = Baseline::Fixed { value: 0.5 };
    let profile = mc_profile(rate);
    let setup = McSetup {
        gate: gate.clone(),
        k1: cold.k1,
        k2: cold.k2,
        baseline,
        skill: 1.0,
        draws: opts.scale.pick(1_000_000, 100_000),
        seed: opts.seed.wrapping_add(cell),
    };
    let report = mc_estimator_check(&profile, &setup)?;
    let truth = true_moments(
        &profile,
        1.0,
        baseline,
        &GateContext::from_gate(&gate, &cold),
    );
    let bound = surcharge_bound(truth.p_marker, eps, truth.sigma_mless_sq);
    Ok((
        (report.mean_h - report.mean_z_nat).abs() / report.combined_se(),
        report.second_moment_h - report.second_moment_nat,
        bound,
        report.se_second_diff,
        report.marker_rate,
    ))
}

/// Unbiasedness of the ε-keep estimator over the ε × marker-rate grid.
pub fn check_abort_unbiasedness(opts: &VerifyOptions) -> CheckResult {
    let start = Instant::now();
    let outcome = (|| {
        let mut worst: f64 = 0.0;
        let mut cells = Vec::new();
        for (i, &eps) in MC_EPS_GRID.iter().enumerate() {
            for (j, &rate) in MC_MARKER_GRID.iter().enumerate() {
                let (z, _, _, _, seen) = mc_cell(opts, eps, rate, (3 * i + j) as u64)?;
                worst = worst.max(z);
                cells.push(format!("{eps}/{rate}:{z:.2}({seen:.3})"));
            }
        }
        Ok((
            worst <= 4.0,
            format!(
                "max |mean h - mean Z|/SE {worst:.2} (<= 4); eps/rate:z(marker) {}",
                cells.join(" ")
            ),
        ))
    })();
    finish(4, "abort unbiasedness (MC)", start, outcome)
}

/// Second-moment excess within the surcharge bound, plus the closed-form values.
pub fn check_surcharge_bound(opts: &VerifyOptions) -> CheckResult {
    let start = Instant::now();
    let outcome = (|| {
        let closed =
            surcharge_bound(0.0, 0.01, 1.0) == 99.0 && surcharge_bound(0.0, 0.05, 1.0) == 19.0;
        let mut ok = closed;
        let mut cells = Vec::new();
        for (i, &eps) in MC_EPS_GRID.iter().enumerate() {
            for (j, &rate) in MC_MARKER_GRID.iter().enumerate() {
                let (_, excess, bound, se, _) = mc_cell(opts, eps, rate, (3 * i + j) as u64)?;
                ok &= excess <= bound + 4.0 * se;
                cells.push(format!("{excess:.3}<={bound:.3}"));
            }
        }
        Ok((
            ok,
            format!(
                "bound(0,0.01,1)={} bound(0,0.05,1)={}; excess<=bound {}",
                surcharge_bound(0.0, 0.01, 1.0),
                surcharge_bound(0.0, 0.05, 1.0),
                cells.join(" ")
            ),
        ))
    })();
    finish(5, "surcharge bound", start, outcome)
}

/// Plug-in excess against `K·χ²/B`, and the exact gap identity.
pub fn check_calibration_bound(opts: &VerifyOptions) -> CheckResult {
    let start = Instant::now();
    let outcome = (|| {
        let n = opts.scale.pick(1_000, 200);
        let floor = 0.01;
        let (mut worst_ratio, mut worst_identity): (f64, f64) = (0.0, 0.0);
        for i in 0..n {
            let mut r = rng(opts, 6, i);
            let m = r.random_range(2..=64usize);
            let sig: Vec<f64> = (0..m).map(|_| log_uniform(&mut r, 0.05, 5.0)).collect();
            let len: Vec<f64> = (0..m).map(|_| r.random_range(50.0..3072.0)).collect();
            let s_hat: Vec<f64> = sig
                .iter()
                .map(|s| (s * log_uniform(&mut r, 0.5, 2.0)).max(floor))
                .collect();
            let b = r.random_range(1.0..64.0) * len.iter().sum::<f64>();
            let v_star = continuous_neyman(&sig, &len, b)?.v_star;
            let plug = continuous_neyman(&s_hat, &len, b)?;
            let v_s = estimator_variance(&plug.n_star, &sig)?;
            let factor = calibration_factor(&s_hat, &sig, &len)?;
            worst_identity = worst_identity.max(((v_s - v_star * factor) / v_s).abs());
            let bound = calibration_gap_bound(&s_hat, &sig, &len, b, floor)?;
            worst_ratio = worst_ratio.max((v_s - v_star) / bound);
        }
        Ok((
            worst_ratio <= 1.0 && worst_identity <= 1e-10,
            format!(
                "max excess/bound {worst_ratio:.2e} over {n}; gap identity {worst_identity:.1e}"
            ),
        ))
    })();
    finish(6, "calibration bound", start, outcome)
}

/// Detection latency, quantile refit convergence, and cold thresholds.
pub fn check_gate_schedule(opts: &VerifyOptions) -> CheckResult {
    let start = Instant::now();
    let outcome = (|| {
        // latency
        let mut worst_latency = 0;
        for i in 0..opts.scale.pick(100_000, 10_000) {
            let mut r = rng(opts, 7, i);
            let tau = r.random_range(1..=3072u32);
            let k1 = r.random_range(0.0..3072.0);
            let delta = r.random_range(1..=16u32);
            let d = detection_time(tau, k1, delta);
            let earliest = tau.max(k1.ceil() as u32);
            if d < earliest || !d.is_multiple_of(delta) || d - earliest >= delta {
                return Ok((
                    false,
                    format!("latency violated at tau {tau}, K1 {k1}, delta {delta}"),
                ));
            }
            worst_latency = worst_latency.max(d - earliest);
        }

        // cold start
        let cfg = GateConfig::default();
        let cold = GateState::cold(&cfg);
        let cold_ok = (cold.k1 - 921.6).abs() <= 1e-9 && (cold.k2 - 2150.4).abs() <= 1e-9;

        // refits on fresh i.i.d. windows of a stationary law
        let law = LengthLaw::LogNormal {
            mu: 1000f64.ln(),
            sigma: 0.5,
        };
        let w = cfg.window_capacity;
        let refits = 100u64;
        let band = |p: f64| -> Result<(f64, f64)> {
            let rank = crate::stats::nearest_rank_index(w, p) + 1;
            let beta = Beta::new(rank as f64, (w - rank + 1) as f64)
                .map_err(|e| Error::Config(e.to_string()))?;
            Ok((beta.inverse_cdf(0.0025), beta.inverse_cdf(0.9975)))
        };
        let (lo1, hi1) = band(cfg.q_low)?;
        let (lo2, hi2) = band(cfg.q_high)?;
        let inside = |k: f64, lo: f64, hi: f64| {
            let k = k as u32;
            law.cdf(k, cfg.l_max) >= lo && law.cdf(k.saturating_sub(1), cfg.l_max) <= hi
        };
        let mut misses = 0;
        let mut state = GateState::cold(&cfg);
        for j in 0..refits {
            for t in 0..w as u64 {
                let u = RolloutStream::new(Domain::Oracle, opts.seed, 7_777, j, t).uniform();
                state.push_length(law.sample(u, cfg.l_max), w);
            }
            state.refit(&cfg);
            if !(inside(state.k1, lo1, hi1) && inside(state.k2, lo2, hi2)) {
                misses += 1;
            }
        }
        let allowed = Binomial::new(0.01, refits)
            .map_err(|e| Error::Config(e.to_string()))?
            .inverse_cdf(0.99);
        let p30 = law.quantile(cfg.q_low, cfg.l_max);
        let p80 = law.quantile(cfg.q_high, cfg.l_max);
        Ok((
            cold_ok && misses <= allowed,
            format!(
                "latency <= {worst_latency} < delta; cold K1/K2 {}/{}; {misses}/{refits} refits outside band (allowed {allowed}); true p30/p80 {p30}/{p80}, last K1/K2 {}/{}",
                cold.k1, cold.k2, state.k1, state.k2
            ),
        ))
    })();
    finish(7, "gate schedule", start, outcome)
}

pub fn token_sweep_config(seed: u64) -> Result<CampaignConfig> {
    let mut f = ConfigFile::default();
    f.campaign.master_seed = seed;
    f.campaign.steps = 100;
    f.campaign.batch_size = 32;
    f.population.size = 512;
    f.resolve()
}

/// Mean tokens per step across a {1, 0.5, 0.25} budget sweep.
pub fn check_token_linearity(opts: &VerifyOptions) -> CheckResult {
    let start = Instant::now();
    let outcome = (|| {
        let report = sweep(&token_sweep_config(opts.seed)?, &[1.0, 0.5, 0.25])?;
        let t: Vec<f64> = report
            .runs
            .iter()
            .map(|r| r.report.summary.mean_tokens_per_step)
            .collect();
        let r2 = 2.0 * t[1] / t[0];
        let r4 = 4.0 * t[2] / t[0];
        Ok((
            (r2 - 1.0).abs() <= 0.05 && (r4 - 1.0).abs() <= 0.05,
            format!(
                "tokens/step {:.0} : {:.0} : {:.0} = 4 : {:.3} : {:.3}",
                t[0],
                t[1],
                t[2],
                4.0 * t[1] / t[0],
                4.0 * t[2] / t[0]
            ),
        ))
    })();
    finish(8, "token-budget linearity", start, outcome)
}

/// Every step sees the whole heterogeneous pool, so `λ*` moves only with
/// the surrogates.
pub fn fan_out_config(seed: u64) -> Result<CampaignConfig> {
    let mut f = ConfigFile::default();
    f.campaign.master_seed = seed;
    f.campaign.steps = 100;
    f.campaign.batch_size = 128;
    f.campaign.budget_fraction = 0.5;
    f.population.size = 128;
    f.resolve()
}

pub fn check_fan_out(opts: &VerifyOptions) -> CheckResult {
    let start = Instant::now();
    let outcome = (|| {
        let report = run_campaign(&fan_out_config(opts.seed)?)?;
        let m = &report.metrics;
        let first = &m[0];
        let uniform = first.count_histogram.len() == 1;
        let last = &m[m.len() - 1];
        let q = 3 * m.len() / 4;
        let change = (last.lambda_star - m[q].lambda_star).abs() / m[q].lambda_star;
        let (lo, hi) = m[q..].iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), x| {
            (lo.min(x.lambda_star), hi.max(x.lambda_star))
        });
        Ok((
            uniform && last.histogram_width() > 1 && change < 0.05,
            format!(
                "step 0 counts {:?}; final width {}; lambda change over final quarter {:.2}% (range {:.2}%)",
                first.count_histogram,
                last.histogram_width(),
                100.0 * change,
                100.0 * (hi - lo) / lo
            ),
        ))
    })();
    finish(9, "fan-out and stabilisation", start, outcome)
}

pub fn improving_config(seed: u64) -> Result<CampaignConfig> {
    let mut f = ConfigFile::default();
    f.campaign.master_seed = seed;
    f.campaign.steps = 200;
    f.campaign.batch_size = 64;
    f.campaign.budget_fraction = 0.5;
    f.campaign.initial_skill = 0.0;
    f.campaign.improvement_rate = 0.02;
    f.gate.eps_abort = 0.1;
    f.estimator.advantage = AdvantageMode::ActionIndependent { baseline: 1.0 };
    f.population.preset = Some(Preset::Improving);
    f.population.size = 256;
    f.resolve()
}

/// Block length of the smoothed surcharge series; the first block is warmup.
pub const SURCHARGE_BLOCK: usize = 20;

pub fn check_surcharge_decay(opts: &VerifyOptions) -> CheckResult {
    let start = Instant::now();
    let outcome = (|| {
        let report = run_campaign(&improving_config(opts.seed)?)?;
        let blocks: Vec<f64> = report
            .metrics
            .chunks(SURCHARGE_BLOCK)
            .map(|c| c.iter().map(|m| m.surcharge).sum::<f64>() / c.len() as f64)
            .collect();
        let after = &blocks[1..];
        let monotone = after.windows(2).all(|w| w[1] <= w[0]);
        let peak = blocks.iter().cloned().fold(0.0, f64::max);
        let last = *blocks.last().unwrap_or(&0.0);
        Ok((
            monotone && peak > 0.0 && last < 0.1 * peak,
            format!(
                "block means {}; final/peak {:.3}",
                blocks
                    .iter()
                    .map(|b| format!("{b:.4}"))
                    .collect::<Vec<_>>()
                    .join(" "),
                if peak > 0.0 { last / peak } else { f64::NAN }
            ),
        ))
    })();
    finish(10, "self-extinguishing surcharge", start, outcome)
}

/// Two runs of one config written to disk must match byte for byte.
pub fn check_replay(opts: &VerifyOptions) -> CheckResult {
    let start = Instant::now();
    let outcome = (|| {
        let cfg = token_sweep_config(opts.seed)?;
        let dir = std::env::temp_dir();
        let mut files = Vec::new();
        for run in 0..2 {
            let path = dir.join(format!(
                "rollout-budget-replay-{}-{}-{run}.jsonl",
                std::process::id(),
                opts.seed
            ));
            let report = run_campaign(&cfg)?;
            crate::campaign::write_metrics(&path, &report.metrics, MetricsFormat::Jsonl)?;
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let _ = std::fs::remove_file(&path);
            files.push(bytes);
        }
        let csv_equal = render(&run_campaign(&cfg)?.metrics, MetricsFormat::Csv)
            == render(&run_campaign(&cfg)?.metrics, MetricsFormat::Csv);
        Ok((
            files[0] == files[1] && csv_equal && !files[0].is_empty(),
            format!(
                "{} bytes per metrics file, identical: {}",
                files[0].len(),
                files[0] == files[1]
            ),
        ))
    })();
    finish(11, "replay determinism", start, outcome)
}

/// All checks in order.
pub fn run_suite(opts: &VerifyOptions) -> Vec<CheckResult> {
    run_suite_with(opts, |_| {})
}

/// As [`run_suite`], calling `each` as every check finishes.
pub fn run_suite_with(
    opts: &VerifyOptions,
    mut each: impl FnMut(&CheckResult),
) -> Vec<CheckResult> {
    let checks: [fn(&VerifyOptions) -> CheckResult; 11] = [
        check_neyman_optimality,
        check_uniform_ratio,
        check_dual_feasibility,
        check_abort_unbiasedness,
        check_surcharge_bound,
        check_calibration_bound,
        check_gate_schedule,
        check_token_linearity,
        check_fan_out,
        check_surcharge_decay,
        check_replay,
    ];
    checks
        .iter()
        .map(|check| {
            let r = check(opts);
            each(&r);
            r
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport<'a> {
    pub options: VerifyOptions,
    pub passed: usize,
    pub total: usize,
    pub checks: &'a [CheckResult],
}

/// Write the results as pretty JSON.
pub fn write_results(path: &Path, opts: &VerifyOptions, results: &[CheckResult]) -> Result<()> {
    let report = SuiteReport {
        options: *opts,
        passed: results.iter().filter(|r| r.passed).count(),
        total: results.len(),
        checks: results,
    };
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
