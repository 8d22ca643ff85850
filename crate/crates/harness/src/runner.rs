//! Campaign execution.
//!
//! Every (cell, trajectory, run) triple is an independent trial with its own
//! random streams, so results do not depend on how trials are scheduled.
//! Truth and measurements are simulated once per trajectory and the filter
//! prior once per (trajectory, run); all cells see the same data.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use anyhow::Context;
use pfgspf_core::filters::Filter;
use pfgspf_core::metrics::{aggregate, omat_joint, squared_error, TrialScore};
use pfgspf_core::rng::stream;
use pfgspf_core::scenarios::{Scenario, Trajectory};
use pfgspf_core::{Gaussian, TrialRecord};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Campaign, Cell};

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub cell: usize,
    pub traj: usize,
    pub run: usize,
    /// Seed of the filter stream.
    pub seed: u64,
    /// The trial record, or the reason the filter failed.
    pub result: Result<TrialRecord<f64>, String>,
    /// Particles discarded over the trial because their flow diverged.
    pub dropped_particles: usize,
}

/// Aggregate of one cell over all of its trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellReport {
    pub cell_id: usize,
    pub algorithm: String,
    #[serde(rename = "G")]
    pub g: usize,
    #[serde(rename = "Np_star")]
    pub np_star: usize,
    #[serde(rename = "Np")]
    pub np: usize,
    pub mean: f64,
    pub sd: f64,
    pub lost_tracks: usize,
    pub failed: usize,
    pub included: usize,
    /// Lost tracks over completed trials.
    pub lost_rate: f64,
    #[serde(skip)]
    pub geff: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CampaignResults {
    pub campaign: Campaign,
    /// Sorted by (cell, trajectory, run).
    pub outcomes: Vec<TrialOutcome>,
    pub cells: Vec<CellReport>,
}

/// Simulates the ground truth of trajectory `traj`.
pub fn simulate_truth(campaign: &Campaign, model: &Scenario<f64>, traj: usize) -> Trajectory<f64> {
    model.simulate(campaign.horizon(), &mut stream(campaign.truth_seed(traj), &[]))
}

pub fn run_campaign(campaign: &Campaign) -> anyhow::Result<CampaignResults> {
    campaign.validate()?;
    let threads = campaign.thread_count()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("cannot start the worker pool")?;
    let outcomes = pool.install(|| execute(campaign))?;
    let cells = summarize(campaign, &outcomes)?;
    Ok(CampaignResults { campaign: campaign.clone(), outcomes, cells })
}

fn execute(campaign: &Campaign) -> anyhow::Result<Vec<TrialOutcome>> {
    let model = campaign.scenario.build::<f64>()?;
    let truths: Vec<Trajectory<f64>> =
        (0..campaign.trajectories).into_par_iter().map(|i| simulate_truth(campaign, &model, i)).collect();

    let mut priors = Vec::with_capacity(campaign.trajectories * campaign.runs);
    for (traj, truth) in truths.iter().enumerate() {
        for run in 0..campaign.runs {
            let mut rng = stream(campaign.prior_seed(traj, run), &[]);
            let prior = model
                .filter_prior(&truth.initial, &mut rng)
                .with_context(|| format!("prior of trajectory {traj}, run {run}"))?;
            priors.push(prior);
        }
    }

    let mut tasks = Vec::with_capacity(campaign.n_trials());
    for cell in 0..campaign.cells.len() {
        for traj in 0..campaign.trajectories {
            for run in 0..campaign.runs {
                tasks.push((cell, traj, run));
            }
        }
    }
    let mut outcomes: Vec<TrialOutcome> = tasks
        .into_par_iter()
        .map(|(cell, traj, run)| {
            let prior = &priors[traj * campaign.runs + run];
            run_trial(campaign, &model, cell, traj, run, &truths[traj], prior)
        })
        .collect();
    outcomes.sort_by_key(|o| (o.cell, o.traj, o.run));
    Ok(outcomes)
}

/// Runs one cell's filter over a trajectory. Filter errors and panics are
/// reported in the outcome rather than aborting the campaign.
pub fn run_trial(
    campaign: &Campaign,
    model: &Scenario<f64>,
    cell: usize,
    traj: usize,
    run: usize,
    truth: &Trajectory<f64>,
    prior: &Gaussian<f64>,
) -> TrialOutcome {
    let seed = campaign.filter_seed(traj, run, cell);
    let spec = &campaign.cells[cell];
    let mut dropped_particles = 0;
    let trial = || track(campaign, model, spec, seed, truth, prior, &mut dropped_particles);
    let result = catch_unwind(AssertUnwindSafe(trial)).unwrap_or_else(|panic| {
        let msg = panic
            .downcast_ref::<String>()
            .map(String::as_str)
            .or_else(|| panic.downcast_ref::<&str>().copied())
            .unwrap_or("unknown panic");
        Err(format!("panic: {msg}"))
    });
    TrialOutcome { cell, traj, run, seed, result, dropped_particles }
}

fn track(
    campaign: &Campaign,
    model: &Scenario<f64>,
    cell: &Cell,
    seed: u64,
    truth: &Trajectory<f64>,
    prior: &Gaussian<f64>,
    dropped: &mut usize,
) -> Result<TrialRecord<f64>, String> {
    let order = campaign.scoring.omat_order.unwrap_or(1.0);
    let mut filter = Filter::new(model, prior, cell.filter_config(seed)).map_err(|e| e.to_string())?;
    let horizon = truth.horizon();
    let mut record = TrialRecord {
        estimates: Vec::with_capacity(horizon),
        truths: Vec::with_capacity(horizon),
        errors: Vec::with_capacity(horizon),
        geff: Vec::with_capacity(horizon),
        wall_time: None,
        seed,
        config_fingerprint: cell.fingerprint(),
    };
    let mut seconds = 0.0;
    for (t, (x, z)) in truth.states.iter().zip(&truth.observations).enumerate() {
        let start = Instant::now();
        let state = filter.step(z).map_err(|e| format!("step {}: {e}", t + 1))?;
        seconds += start.elapsed().as_secs_f64();
        *dropped += state.diagnostics.diverged_particles;
        let est = state.estimate();
        if est.iter().any(|v| !v.is_finite()) {
            return Err(format!("step {}: non-finite state estimate", t + 1));
        }
        let err = match model.n_targets() {
            Some(m) => omat_joint(&est, x, m, order).map_err(|e| e.to_string())?,
            None => squared_error(&est, x),
        };
        record.geff.push(state.geff());
        record.errors.push(err);
        record.estimates.push(est);
        record.truths.push(x.clone());
    }
    record.wall_time = Some(seconds);
    Ok(record)
}

/// Per-cell aggregates; failed trials are counted and left out.
pub fn summarize(campaign: &Campaign, outcomes: &[TrialOutcome]) -> anyhow::Result<Vec<CellReport>> {
    let score = campaign.scoring.score.unwrap_or(TrialScore::MeanError);
    let mut reports = Vec::with_capacity(campaign.cells.len());
    for (id, cell) in campaign.cells.iter().enumerate() {
        let mine: Vec<&TrialOutcome> = outcomes.iter().filter(|o| o.cell == id).collect();
        let ok: Vec<TrialRecord<f64>> = mine.iter().filter_map(|o| o.result.as_ref().ok().cloned()).collect();
        let failed = mine.len() - ok.len();
        let mut report = CellReport {
            cell_id: id,
            algorithm: cell.kind.label().to_string(),
            g: cell.n_components,
            np_star: cell.particles_per_component,
            np: cell.total_particles(),
            mean: f64::NAN,
            sd: f64::NAN,
            lost_tracks: 0,
            failed,
            included: 0,
            lost_rate: 0.0,
            geff: Vec::new(),
        };
        if !ok.is_empty() {
            let s = aggregate(&ok, score, campaign.scoring.lost_threshold)?;
            report.mean = s.mean;
            report.sd = s.sd;
            report.lost_tracks = s.lost_tracks;
            report.included = s.included;
            report.lost_rate = s.lost_rate();
            report.geff = s.geff;
        }
        reports.push(report);
    }
    Ok(reports)
}

impl CampaignResults {
    pub fn report(&self, cell: usize) -> &CellReport {
        &self.cells[cell]
    }

    /// Completed trial records of one cell, in (trajectory, run) order.
    pub fn records(&self, cell: usize) -> impl Iterator<Item = &TrialRecord<f64>> {
        self.outcomes.iter().filter(move |o| o.cell == cell).filter_map(|o| o.result.as_ref().ok())
    }
}
