//! Plain-text summary tables.
//!
//! Tracking campaigns (OMAT scores) get one row per cell with
//! `mean ± sd` and the lost-track count. MSE campaigns list each algorithm's
//! rows by total particle budget, annotated with `N*_p x G`.

use std::fmt::Write;

use pfgspf_core::metrics::TrialScore;

use crate::config::Campaign;
use crate::runner::CellReport;

pub fn render_table(campaign: &Campaign, cells: &[CellReport]) -> String {
    let mut out = String::new();
    let title = if campaign.name.is_empty() { campaign.scenario.name() } else { campaign.name.as_str() };
    let _ = writeln!(
        out,
        "{title}: {} trajectories x {} runs, horizon {}, seed {}",
        campaign.trajectories,
        campaign.runs,
        campaign.horizon(),
        campaign.seed
    );
    match campaign.scoring.score {
        Some(TrialScore::Mse) => mse_table(&mut out, campaign, cells),
        _ => tracking_table(&mut out, campaign, cells),
    }
    out
}

fn pm(mean: f64, sd: f64) -> String {
    format!("{mean:.3} ± {sd:.3}")
}

fn tracking_table(out: &mut String, campaign: &Campaign, cells: &[CellReport]) {
    let p = campaign.scoring.omat_order.unwrap_or(1.0);
    match campaign.scoring.lost_threshold {
        Some(th) => {
            let _ = writeln!(out, "OMAT (p = {p}), lost tracks have average error > {th}, excluded from mean ± sd");
        }
        None => {
            let _ = writeln!(out, "OMAT (p = {p})");
        }
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<12} {:>3} {:>6} {:>7}  {:<17} {:>5} {:>8} {:>6}",
        "algorithm", "G", "N*_p", "N_p", "mean ± sd", "#LT", "LT rate", "failed"
    );
    for c in cells {
        let _ = writeln!(
            out,
            "{:<12} {:>3} {:>6} {:>7}  {:<17} {:>5} {:>7.1}% {:>6}",
            c.algorithm,
            c.g,
            c.np_star,
            c.np,
            pm(c.mean, c.sd),
            c.lost_tracks,
            100.0 * c.lost_rate,
            c.failed
        );
    }
}

fn mse_table(out: &mut String, campaign: &Campaign, cells: &[CellReport]) {
    let _ = writeln!(out, "average MSE, avg ± sd (N*_p x G)");
    if let Some(th) = campaign.scoring.lost_threshold {
        let _ = writeln!(out, "trials with MSE > {th} are counted as lost and excluded");
    }
    let mut algorithms: Vec<&str> = Vec::new();
    for c in cells {
        if !algorithms.contains(&c.algorithm.as_str()) {
            algorithms.push(&c.algorithm);
        }
    }
    for alg in algorithms {
        let _ = writeln!(out);
        let _ = writeln!(out, "{alg}");
        let _ = writeln!(out, "  {:>7}  {:<30} {:>5} {:>6}", "N_p", "avg ± sd (N*_p x G)", "#LT", "failed");
        for c in cells.iter().filter(|c| c.algorithm == alg) {
            let cell = format!("{} ({}x{})", pm(c.mean, c.sd), c.np_star, c.g);
            let _ = writeln!(out, "  {:>7}  {:<30} {:>5} {:>6}", c.np, cell, c.lost_tracks, c.failed);
        }
    }
}
