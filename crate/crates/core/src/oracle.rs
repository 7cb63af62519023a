//! Brute-force and Monte-Carlo reference computations.
//!
//! Nothing here calls into `allocator` or `estimator`: the variance formula,
//! the gate branches and the importance weights are written out again so the
//! checks are independent of the code they check.

use serde::Serialize;

use crate::abortgate::GateConfig;
use crate::error::{require_positive, require_same_len, Error, Result};
use crate::simenv::{sample_rollout, Baseline, PromptProfile};
use crate::stats::Welford;
use crate::stream::{Domain, RolloutStream};

pub const MAX_GRID_PROMPTS: usize = 4;
pub const MAX_GRID_RESOLUTION: u32 = 400;
pub const MAX_INTEGER_PROMPTS: usize = 3;
pub const MAX_INTEGER_COUNT: u32 = 64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridOptimum {
    pub min_variance: f64,
    pub allocation: Vec<f64>,
}

fn check_instance(sigmas: &[f64], lengths: &[f64], budget: f64) -> Result<()> {
    require_same_len(sigmas.len(), lengths.len())?;
    if sigmas.is_empty() {
        return Err(Error::Empty("instance"));
    }
    for &s in sigmas {
        require_positive("sigma", s)?;
    }
    for &l in lengths {
        require_positive("length", l)?;
    }
    require_positive("budget", budget).map(|_| ())
}

/// Grid minimum of `Σ σ²/n` over allocations spending exactly `budget`.
///
/// The grid is on budget shares: prompt `q` gets `k_q/resolution` of the
/// budget with every `k_q ≥ 1`, so `n_q = k_q·B / (resolution·L_q)`.
pub fn brute_force_allocation(
    sigmas: &[f64],
    lengths: &[f64],
    budget: f64,
    resolution: u32,
) -> Result<GridOptimum> {
    check_instance(sigmas, lengths, budget)?;
    let m = sigmas.len();
    if m > MAX_GRID_PROMPTS || resolution > MAX_GRID_RESOLUTION {
        return Err(Error::TooLarge(format!(
            "grid search limited to {MAX_GRID_PROMPTS} prompts and resolution {MAX_GRID_RESOLUTION}, got {m} and {resolution}"
        )));
    }
    if (resolution as usize) < m {
        return Err(Error::InvalidInput {
            name: "resolution",
            value: resolution as f64,
            reason: "must be at least the number of prompts",
        });
    }
    // variance contributed by prompt q at share k/res is c_q·res/k
    let c: Vec<f64> = sigmas
        .iter()
        .zip(lengths)
        .map(|(s, l)| s * s * l / budget)
        .collect();
    let res = resolution as usize;
    let mut best = (f64::INFINITY, vec![0usize; m]);
    let mut k = vec![1usize; m];
    search(&c, res, 0, res, &mut k, &mut best);
    let allocation = best
        .1
        .iter()
        .zip(lengths)
        .map(|(&k, l)| k as f64 / res as f64 * budget / l)
        .collect();
    Ok(GridOptimum {
        min_variance: best.0,
        allocation,
    })
}

fn search(
    c: &[f64],
    res: usize,
    idx: usize,
    remaining: usize,
    k: &mut Vec<usize>,
    best: &mut (f64, Vec<usize>),
) {
    let m = c.len();
    if idx == m - 1 {
        k[idx] = remaining;
        let v: f64 = c
            .iter()
            .zip(k.iter())
            .map(|(c, &k)| c * res as f64 / k as f64)
            .sum();
        if v < best.0 {
            *best = (v, k.clone());
        }
        return;
    }
    let others = m - idx - 1;
    for ki in 1..=remaining - others {
        k[idx] = ki;
        search(c, res, idx + 1, remaining - ki, k, best);
    }
}

/// Worst-case excess of the grid minimum over the continuous optimum.
///
/// `shares` are the optimum's budget shares `n*_q L_q / B`. Rounding all but
/// the last share to the grid moves each coordinate by at most
/// `δ = (M − 1)·0.5/resolution`, and along the budget hyperplane
/// `c/(u + h) − c/u + c·h/u² = c·h²/(u²(u + h))`, so the excess is at most
/// `Σ c_q δ² / (u_q² (u_q − δ))`. Infinite when some `u_q ≤ δ`.
pub fn grid_slack(
    sigmas: &[f64],
    lengths: &[f64],
    budget: f64,
    shares: &[f64],
    resolution: u32,
) -> Result<f64> {
    check_instance(sigmas, lengths, budget)?;
    require_same_len(sigmas.len(), shares.len())?;
    let m = sigmas.len();
    let delta = (m.max(2) - 1) as f64 * 0.5 / resolution as f64;
    let mut total = 0.0;
    for ((s, l), &u) in sigmas.iter().zip(lengths).zip(shares) {
        if u <= delta {
            return Ok(f64::INFINITY);
        }
        let c = s * s * l / budget;
        total += c * delta * delta / (u * u * (u - delta));
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegerOptimum {
    pub variance: f64,
    pub counts: Vec<u32>,
}

/// Exhaustive search over integer counts in `[n_min, n_max]` with
/// `Σ n_q L_q ≤ budget`. `None` when no vector is feasible.
pub fn integer_brute_force(
    sigmas: &[f64],
    lengths: &[f64],
    budget: f64,
    n_min: u32,
    n_max: u32,
) -> Result<Option<IntegerOptimum>> {
    check_instance(sigmas, lengths, budget)?;
    let m = sigmas.len();
    if m > MAX_INTEGER_PROMPTS || n_max > MAX_INTEGER_COUNT {
        return Err(Error::TooLarge(format!(
            "integer search limited to {MAX_INTEGER_PROMPTS} prompts and n_max {MAX_INTEGER_COUNT}, got {m} and {n_max}"
        )));
    }
    let lo = n_min.max(1);
    if lo > n_max {
        return Ok(None);
    }
    let span = (n_max - lo + 1) as usize;
    let mut best: Option<IntegerOptimum> = None;
    let mut counts = vec![lo; m];
    for code in 0..span.pow(m as u32) {
        let mut rest = code;
        for c in counts.iter_mut() {
            *c = lo + (rest % span) as u32;
            rest /= span;
        }
        let cost: f64 = counts.iter().zip(lengths).map(|(&n, l)| n as f64 * l).sum();
        if cost > budget {
            continue;
        }
        let v: f64 = counts
            .iter()
            .zip(sigmas)
            .map(|(&n, s)| s * s / n as f64)
            .sum();
        if best.as_ref().is_none_or(|b| v < b.variance) {
            best = Some(IntegerOptimum {
                variance: v,
                counts: counts.clone(),
            });
        }
    }
    Ok(best)
}

/// Thresholds and knobs for the Monte-Carlo estimator check.
#[derive(Debug, Clone, PartialEq)]
pub struct McSetup {
    pub gate: GateConfig,
    pub k1: f64,
    pub k2: f64,
    pub baseline: Baseline,
    pub skill: f64,
    pub draws: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McReport {
    pub draws: u64,
    pub mean_h: f64,
    pub se_h: f64,
    pub mean_z_nat: f64,
    pub se_z_nat: f64,
    pub second_moment_h: f64,
    pub se_second_h: f64,
    pub second_moment_nat: f64,
    pub se_second_nat: f64,
    /// Standard error of the paired difference `h² − Z_nat²`.
    pub se_second_diff: f64,
    pub marker_rate: f64,
    /// Largest `|h − Z_nat|` over ε-kept draws with `ε = 1`.
    pub max_eps_kept_gap: f64,
}

impl McReport {
    /// `√(se_h² + se_z²)`.
    pub fn combined_se(&self) -> f64 {
        self.se_h.hypot(self.se_z_nat)
    }
}

/// Paired simulation of the natural contribution and the gated estimate.
pub fn mc_estimator_check(profile: &PromptProfile, setup: &McSetup) -> Result<McReport> {
    if setup.draws < 10_000 {
        return Err(Error::InvalidInput {
            name: "draws",
            value: setup.draws as f64,
            reason: "need at least 10^4 draws",
        });
    }
    setup.gate.validate()?;
    let g = &setup.gate;
    let eps = g.eps_abort;
    let (mut h, mut z, mut h2, mut z2, mut d2, mut marker) = (
        Welford::default(),
        Welford::default(),
        Welford::default(),
        Welford::default(),
        Welford::default(),
        Welford::default(),
    );
    let mut max_gap: f64 = 0.0;
    let poll = g.delta_poll as u64;
    let first_poll = setup.k1.ceil().max(1.0) as u64;
    for i in 0..setup.draws {
        let mut stream = RolloutStream::new(Domain::Oracle, setup.seed, i, 0, 0);
        let r = sample_rollout(profile, setup.skill, g.l_max, &mut stream);
        let a = setup.baseline.advantage(r.reward, profile, setup.skill);
        let z_nat = a * (r.z_prefix + r.z_tail);
        let seen = if r.miss_coin < g.miss_prob {
            None
        } else {
            r.marker_time
        };
        let caught = seen.is_some_and(|tau| {
            let start = (tau as u64).max(first_poll);
            let tick = start.div_ceil(poll) * poll;
            tick as f64 <= setup.k2
        });
        let estimate = if caught {
            a * r.z_prefix
        } else if r.gate_coin < eps {
            let v = z_nat / eps;
            if eps == 1.0 {
                max_gap = max_gap.max((v - z_nat).abs());
            }
            v
        } else {
            0.0
        };
        marker.push(if caught { 1.0 } else { 0.0 });
        h.push(estimate);
        z.push(z_nat);
        h2.push(estimate * estimate);
        z2.push(z_nat * z_nat);
        d2.push(estimate * estimate - z_nat * z_nat);
    }
    Ok(McReport {
        draws: setup.draws,
        mean_h: h.mean(),
        se_h: h.std_error(),
        mean_z_nat: z.mean(),
        se_z_nat: z.std_error(),
        second_moment_h: h2.mean(),
        se_second_h: h2.std_error(),
        second_moment_nat: z2.mean(),
        se_second_nat: z2.std_error(),
        se_second_diff: d2.std_error(),
        marker_rate: marker.mean(),
        max_eps_kept_gap: max_gap,
    })
}
