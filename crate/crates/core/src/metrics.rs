//! Figures of merit per trial and their aggregation over many trials.
//!
//! Everything here is recomputed from the raw records of a
//! [`TrialResult`]; the flags the engine stores on the trial are only used
//! as a cross-check.

use alloc::vec::Vec;

use crate::engine::{Algo, CandidateBranch, TrialResult, WindowStats};
use crate::error::{Error, Result};
use crate::model::NodeId;

/// Mean and sample standard deviation (n - 1 denominator, 0 for a single
/// sample). Values are summed in sorted order so the result does not depend
/// on input order.
pub fn mean_sd(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() == 1 {
        return Some((mean, 0.0));
    }
    let mut sq: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    sq.sort_by(f64::total_cmp);
    let var = sq.iter().sum::<f64>() / (n - 1.0);
    Some((mean, libm::sqrt(var)))
}

/// Mean and deviation of delivered probe delays, `None` when no probe was
/// delivered.
pub fn delay_stats(trial: &TrialResult) -> Option<(f64, f64)> {
    let delays: Vec<f64> = trial.probes.iter().filter_map(|p| p.delay_ms()).collect();
    mean_sd(&delays)
}

/// Delivered over sent probes, `None` when nothing was sent.
pub fn pdr(trial: &TrialResult) -> Option<f64> {
    let c = trial.probe_counts;
    (c.sent > 0).then(|| c.delivered as f64 / c.sent as f64)
}

fn window_saturated(w: &WindowStats, b_max: u32, theta_sat: f64) -> bool {
    w.overflow_drops > 0 || w.avg_occupancy() >= theta_sat * f64::from(b_max)
}

fn branch_saturated(
    trial: &TrialResult,
    branch: &[NodeId],
    theta_sat: f64,
    window: impl Fn(&crate::engine::NodeBufferStats) -> &WindowStats,
) -> bool {
    branch.iter().any(|id| {
        trial
            .buffer(*id)
            .is_some_and(|b| window_saturated(window(b), b.b_max, theta_sat))
    })
}

fn chosen_branch(trial: &TrialResult) -> Vec<NodeId> {
    trial
        .path_to_sink
        .iter()
        .copied()
        .filter(|id| *id != NodeId::SINK)
        .collect()
}

/// Whether the new node ended up behind a node that was near-full or
/// overflowing during the measurement. `None` for failed joins.
pub fn is_saturated_branch(trial: &TrialResult, theta_sat: f64) -> Option<bool> {
    trial
        .joined()
        .then(|| branch_saturated(trial, &chosen_branch(trial), theta_sat, |b| &b.measurement))
}

/// Saturation of a candidate's branch just before the join decision.
pub fn candidate_saturated(trial: &TrialResult, cand: &CandidateBranch, theta_sat: f64) -> bool {
    branch_saturated(trial, &cand.branch, theta_sat, |b| &b.pre_join)
}

/// Whether the trial offered both a saturated and an unsaturated candidate
/// branch at decision time, and if so whether the chosen one was clean.
pub fn saturation_choice(trial: &TrialResult, theta_sat: f64) -> Option<bool> {
    if !trial.joined() {
        return None;
    }
    let flags: Vec<bool> = trial
        .heard_candidates
        .iter()
        .map(|c| candidate_saturated(trial, c, theta_sat))
        .collect();
    if !(flags.contains(&true) && flags.contains(&false)) {
        return None;
    }
    let chosen = chosen_branch(trial);
    Some(!branch_saturated(trial, &chosen, theta_sat, |b| {
        &b.pre_join
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    pub algo: Algo,
    pub n_trials: usize,
    pub n_joined: usize,
    pub n_failed: usize,
    /// Joined trials without any delivered probe; left out of the delay
    /// statistics.
    pub n_undefined_delay: usize,
    pub mu_d_ms: Option<f64>,
    pub sigma_d_ms: Option<f64>,
    pub mu_pdr: f64,
    pub sigma_pdr: f64,
    pub pct_sat: f64,
    pub avoid_sat: Option<f64>,
    pub mean_hops: f64,
    pub n_eligible_sat_trials: usize,
}

/// Summary over the trials of one algorithm.
///
/// Delay and PDR are the mean and deviation of per-trial values. Failed
/// joins are counted but excluded from every ratio.
pub fn aggregate(trials: &[TrialResult], theta_sat: f64) -> Result<AggregateReport> {
    let joined: Vec<&TrialResult> = trials.iter().filter(|t| t.joined()).collect();
    if joined.is_empty() {
        return Err(Error::NoJoinedTrials);
    }
    let algo = joined[0].algo;
    let delays: Vec<f64> = joined
        .iter()
        .filter_map(|t| delay_stats(t))
        .map(|d| d.0)
        .collect();
    let pdrs: Vec<f64> = joined.iter().filter_map(|t| pdr(t)).collect();
    let hops: Vec<f64> = joined
        .iter()
        .filter_map(|t| t.hops_at_join)
        .map(f64::from)
        .collect();
    let sat = joined
        .iter()
        .filter(|t| is_saturated_branch(t, theta_sat) == Some(true))
        .count();
    let choices: Vec<bool> = joined
        .iter()
        .filter_map(|t| saturation_choice(t, theta_sat))
        .collect();

    let delay = mean_sd(&delays);
    let (mu_pdr, sigma_pdr) = mean_sd(&pdrs).unwrap_or((0.0, 0.0));
    let n_eligible = choices.len();
    Ok(AggregateReport {
        algo,
        n_trials: trials.len(),
        n_joined: joined.len(),
        n_failed: trials.len() - joined.len(),
        n_undefined_delay: joined.len() - delays.len(),
        mu_d_ms: delay.map(|d| d.0),
        sigma_d_ms: delay.map(|d| d.1),
        mu_pdr,
        sigma_pdr,
        pct_sat: sat as f64 / joined.len() as f64,
        avoid_sat: (n_eligible > 0)
            .then(|| choices.iter().filter(|c| **c).count() as f64 / n_eligible as f64),
        mean_hops: mean_sd(&hops).map_or(0.0, |h| h.0),
        n_eligible_sat_trials: n_eligible,
    })
}

/// Relative gains of `prop` over `base`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Improvement {
    /// Fractional delay reduction.
    pub delay_gain: Option<f64>,
    /// Fractional PDR increase.
    pub pdr_gain: f64,
    /// Saturated-branch probability reduction in percentage points.
    pub sat_reduction_pp: f64,
}

pub fn compare(base: &AggregateReport, prop: &AggregateReport) -> Improvement {
    let delay_gain = match (base.mu_d_ms, prop.mu_d_ms) {
        (Some(b), Some(p)) if b > 0.0 => Some((b - p) / b),
        _ => None,
    };
    let pdr_gain = if base.mu_pdr > 0.0 {
        (prop.mu_pdr - base.mu_pdr) / base.mu_pdr
    } else {
        0.0
    };
    Improvement {
        delay_gain,
        pdr_gain,
        sat_reduction_pp: (base.pct_sat - prop.pct_sat) * 100.0,
    }
}
