use rayon::prelude::*;
use serde::Serialize;

use scatternet_core::metrics::{delay_stats, pdr};
use scatternet_core::{
    aggregate, compare, gen_random_scenario, run_trial, AggregateReport, Algo, GenParams,
    Improvement, Scenario, ScoreWeights, TrialResult,
};

use crate::Result;

/// Where the scenario of each trial comes from.
#[derive(Debug, Clone)]
pub enum ScenarioSource {
    /// The same scenario for every trial.
    Fixed(Scenario),
    /// A fresh random topology per trial, generated from the trial seed.
    Random {
        nodes: usize,
        area_m: f64,
        params: GenParams,
    },
}

impl ScenarioSource {
    pub fn scenario(&self, seed: u64) -> Result<Scenario> {
        match self {
            ScenarioSource::Fixed(s) => Ok(s.clone()),
            ScenarioSource::Random {
                nodes,
                area_m,
                params,
            } => Ok(gen_random_scenario(*nodes, seed, *area_m, params)?),
        }
    }

    pub fn with_weights(self, weights: ScoreWeights) -> Self {
        match self {
            ScenarioSource::Fixed(mut s) => {
                s.weights = weights;
                ScenarioSource::Fixed(s)
            }
            ScenarioSource::Random {
                nodes,
                area_m,
                params,
            } => ScenarioSource::Random {
                nodes,
                area_m,
                params: GenParams { weights, ..params },
            },
        }
    }

    pub fn label(&self) -> String {
        match self {
            ScenarioSource::Fixed(s) => s.name.clone(),
            ScenarioSource::Random { nodes, .. } => format!("random{nodes}"),
        }
    }
}

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRow {
    pub trial: usize,
    pub algo: Algo,
    pub seed: u64,
    pub joined: bool,
    pub parent_id: Option<u32>,
    pub hops: Option<u32>,
    pub mu_d_ms: Option<f64>,
    pub sigma_d_ms: Option<f64>,
    pub pdr: Option<f64>,
    pub sat_branch: Option<bool>,
    pub eligible_sat: bool,
    pub avoided_sat: Option<bool>,
}

impl TrialRow {
    pub fn new(trial: usize, t: &TrialResult) -> Self {
        let delay = delay_stats(t);
        TrialRow {
            trial,
            algo: t.algo,
            seed: t.trial_seed,
            joined: t.joined(),
            parent_id: t.chosen_parent.map(|p| p.0),
            hops: t.hops_at_join,
            mu_d_ms: delay.map(|d| d.0),
            sigma_d_ms: delay.map(|d| d.1),
            pdr: pdr(t),
            sat_branch: t.sat_branch,
            eligible_sat: t.eligible_sat,
            avoided_sat: t.avoided_sat,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompareOutcome {
    pub label: String,
    pub baseline: AggregateReport,
    pub scored: AggregateReport,
    pub improvement: Improvement,
    /// Sorted by trial, then algorithm.
    pub rows: Vec<TrialRow>,
    pub trials: Vec<TrialResult>,
}

/// Runs `algos` on trials `seed_base .. seed_base + trials`, sorted by
/// (trial, algo).
fn run_paired(
    source: &ScenarioSource,
    algos: &[Algo],
    trials: usize,
    seed_base: u64,
) -> Result<Vec<(usize, TrialResult)>> {
    let jobs: Vec<(usize, Algo)> = (0..trials)
        .flat_map(|i| algos.iter().map(move |a| (i, *a)))
        .collect();
    let mut out = jobs
        .into_par_iter()
        .map(|(i, algo)| {
            let seed = seed_base + i as u64;
            let scenario = source.scenario(seed)?;
            Ok((i, run_trial(&scenario, algo, seed)?))
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by_key(|(i, t)| (*i, t.algo));
    Ok(out)
}

fn theta_sat(source: &ScenarioSource) -> f64 {
    match source {
        ScenarioSource::Fixed(s) => s.thresholds.theta_sat,
        ScenarioSource::Random { params, .. } => params.thresholds.theta_sat,
    }
}

/// Paired comparison: trial `i` runs both algorithms on the same scenario
/// with seed `seed_base + i`.
pub fn compare_trials(
    source: &ScenarioSource,
    trials: usize,
    seed_base: u64,
) -> Result<CompareOutcome> {
    if trials == 0 {
        return Err(crate::Error::Usage("need at least one trial".into()));
    }
    let results = run_paired(source, &Algo::ALL, trials, seed_base)?;
    let rows = results.iter().map(|(i, t)| TrialRow::new(*i, t)).collect();
    let theta = theta_sat(source);
    let (base, prop): (Vec<TrialResult>, Vec<TrialResult>) = results
        .into_iter()
        .map(|(_, t)| t)
        .partition(|t| t.algo == Algo::Baseline);
    let baseline = aggregate(&base, theta)?;
    let scored = aggregate(&prop, theta)?;
    let improvement = compare(&baseline, &scored);
    let mut trials = base;
    trials.extend(prop);
    trials.sort_by_key(|t| (t.trial_seed, t.algo));
    Ok(CompareOutcome {
        label: source.label(),
        baseline,
        scored,
        improvement,
        rows,
        trials,
    })
}

/// A single trial and its CSV row.
pub fn run_one(scenario: &Scenario, algo: Algo, seed: u64) -> Result<(TrialResult, TrialRow)> {
    let t = run_trial(scenario, algo, seed)?;
    let row = TrialRow::new(0, &t);
    Ok((t, row))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub w_m: f64,
    pub w_h: f64,
    pub w_b: f64,
    pub w_ci: f64,
    pub w_rl: f64,
    pub w_rn: f64,
    pub mu_d_ms: Option<f64>,
    pub sigma_d_ms: Option<f64>,
    pub mu_pdr: f64,
    pub pct_sat: f64,
    pub delay_gain: Option<f64>,
    pub pdr_gain: f64,
}

/// Scored runs for every weight vector, each against the same baseline
/// trials.
pub fn sweep(
    source: &ScenarioSource,
    grid: &[ScoreWeights],
    trials: usize,
    seed_base: u64,
) -> Result<(AggregateReport, Vec<SweepRow>)> {
    if trials == 0 {
        return Err(crate::Error::Usage("need at least one trial".into()));
    }
    let theta = theta_sat(source);
    let base: Vec<TrialResult> = run_paired(source, &[Algo::Baseline], trials, seed_base)?
        .into_iter()
        .map(|(_, t)| t)
        .collect();
    let baseline = aggregate(&base, theta)?;
    let mut rows = Vec::with_capacity(grid.len());
    for w in grid {
        let src = source.clone().with_weights(*w);
        let prop: Vec<TrialResult> = run_paired(&src, &[Algo::Scored], trials, seed_base)?
            .into_iter()
            .map(|(_, t)| t)
            .collect();
        let report = aggregate(&prop, theta)?;
        let gain = compare(&baseline, &report);
        rows.push(SweepRow {
            w_m: w.w_m,
            w_h: w.w_h,
            w_b: w.w_b,
            w_ci: w.w_ci,
            w_rl: w.w_rl,
            w_rn: w.w_rn,
            mu_d_ms: report.mu_d_ms,
            sigma_d_ms: report.sigma_d_ms,
            mu_pdr: report.mu_pdr,
            pct_sat: report.pct_sat,
            delay_gain: gain.delay_gain,
            pdr_gain: gain.pdr_gain,
        });
    }
    Ok((baseline, rows))
}
