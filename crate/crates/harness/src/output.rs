//! Result files of a campaign directory.
//!
//! | file               | contents                                                    |
//! |--------------------|-------------------------------------------------------------|
//! | `campaign.json`    | the resolved campaign                                       |
//! | `trials.csv`       | `cell_id,traj,run,t,error,geff,est_*,truth_*` per step      |
//! | `trial_status.csv` | `cell_id,traj,run,seed,status,message,dropped_particles`   |
//! | `aggregate.csv`    | `cell_id,algorithm,G,Np_star,Np,mean,sd,lost_tracks,failed,included,lost_rate` |
//! | `geff.csv`         | `cell_id,algorithm,G,t,geff`, the average G_eff per step    |
//! | `table.txt`        | human-readable summary                                      |
//! | `timing.csv`       | `cell_id,traj,run,seconds,seconds_per_step`, only on request |
//!
//! Numbers are written with Rust's shortest round-trip formatting, so the
//! aggregates can be recomputed exactly from `trials.csv`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context};
use nalgebra::DVector;
use pfgspf_core::{StateSpaceModel, TrialRecord};

use crate::config::Campaign;
use crate::runner::{summarize, CampaignResults, CellReport, TrialOutcome};
use crate::table::render_table;

pub const CAMPAIGN_FILE: &str = "campaign.json";
pub const TRIALS_FILE: &str = "trials.csv";
pub const STATUS_FILE: &str = "trial_status.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const GEFF_FILE: &str = "geff.csv";
pub const TABLE_FILE: &str = "table.txt";
pub const TIMING_FILE: &str = "timing.csv";

/// Writes every result file into `dir`, creating it if needed. Wall-clock
/// timings vary between runs, so they are only written when asked for.
pub fn write_results(dir: &Path, results: &CampaignResults, timing: bool) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let put = |name: &str, body: String| {
        let path = dir.join(name);
        fs::write(&path, body).with_context(|| format!("cannot write {}", path.display()))
    };
    put(CAMPAIGN_FILE, serde_json::to_string_pretty(&results.campaign)? + "\n")?;
    put(TRIALS_FILE, trials_csv(results)?)?;
    put(STATUS_FILE, status_csv(&results.outcomes)?)?;
    put(AGGREGATE_FILE, aggregate_csv(&results.cells)?)?;
    put(GEFF_FILE, geff_csv(&results.cells)?)?;
    put(TABLE_FILE, render_table(&results.campaign, &results.cells))?;
    if timing {
        put(TIMING_FILE, timing_csv(&results.outcomes)?)?;
    }
    Ok(())
}

fn finish(w: csv::Writer<Vec<u8>>) -> anyhow::Result<String> {
    let bytes = w.into_inner().map_err(|e| anyhow!("csv buffer: {e}"))?;
    Ok(String::from_utf8(bytes)?)
}

fn trials_csv(results: &CampaignResults) -> anyhow::Result<String> {
    let dim = results.campaign.scenario.build::<f64>()?.dim_x();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["cell_id", "traj", "run", "t", "error", "geff"].map(String::from).to_vec();
    header.extend((0..dim).map(|i| format!("est_{i}")));
    header.extend((0..dim).map(|i| format!("truth_{i}")));
    w.write_record(&header)?;
    for o in &results.outcomes {
        let Ok(rec) = &o.result else { continue };
        for t in 0..rec.horizon() {
            let mut row = vec![
                o.cell.to_string(),
                o.traj.to_string(),
                o.run.to_string(),
                (t + 1).to_string(),
                rec.errors[t].to_string(),
                rec.geff[t].to_string(),
            ];
            row.extend(rec.estimates[t].iter().map(f64::to_string));
            row.extend(rec.truths[t].iter().map(f64::to_string));
            w.write_record(&row)?;
        }
    }
    finish(w)
}

fn status_csv(outcomes: &[TrialOutcome]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["cell_id", "traj", "run", "seed", "status", "message", "dropped_particles"])?;
    for o in outcomes {
        let (status, msg) = match &o.result {
            Ok(_) => ("ok", ""),
            Err(m) => ("failed", m.as_str()),
        };
        w.write_record([
            o.cell.to_string(),
            o.traj.to_string(),
            o.run.to_string(),
            o.seed.to_string(),
            status.to_string(),
            msg.to_string(),
            o.dropped_particles.to_string(),
        ])?;
    }
    finish(w)
}

pub fn aggregate_csv(cells: &[CellReport]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "cell_id",
        "algorithm",
        "G",
        "Np_star",
        "Np",
        "mean",
        "sd",
        "lost_tracks",
        "failed",
        "included",
        "lost_rate",
    ])?;
    for c in cells {
        w.write_record([
            c.cell_id.to_string(),
            c.algorithm.clone(),
            c.g.to_string(),
            c.np_star.to_string(),
            c.np.to_string(),
            c.mean.to_string(),
            c.sd.to_string(),
            c.lost_tracks.to_string(),
            c.failed.to_string(),
            c.included.to_string(),
            c.lost_rate.to_string(),
        ])?;
    }
    finish(w)
}

pub fn geff_csv(cells: &[CellReport]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["cell_id", "algorithm", "G", "t", "geff"])?;
    for c in cells {
        for (t, g) in c.geff.iter().enumerate() {
            w.write_record([
                c.cell_id.to_string(),
                c.algorithm.clone(),
                c.g.to_string(),
                (t + 1).to_string(),
                g.to_string(),
            ])?;
        }
    }
    finish(w)
}

fn timing_csv(outcomes: &[TrialOutcome]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["cell_id", "traj", "run", "seconds", "seconds_per_step"])?;
    for o in outcomes {
        let Ok(rec) = &o.result else { continue };
        let secs = rec.wall_time.unwrap_or(f64::NAN);
        w.write_record([
            o.cell.to_string(),
            o.traj.to_string(),
            o.run.to_string(),
            secs.to_string(),
            (secs / rec.horizon().max(1) as f64).to_string(),
        ])?;
    }
    finish(w)
}

fn read_csv(path: &Path) -> anyhow::Result<(csv::StringRecord, Vec<csv::StringRecord>)> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot open {}", path.display()))?;
    let header = r.headers()?.clone();
    let rows = r.records().collect::<Result<Vec<_>, _>>().with_context(|| format!("reading {}", path.display()))?;
    Ok((header, rows))
}

fn field<T: std::str::FromStr>(row: &csv::StringRecord, i: usize, file: &str) -> anyhow::Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = row.get(i).ok_or_else(|| anyhow!("{file}: row {row:?} is missing column {i}"))?;
    raw.parse().map_err(|e| anyhow!("{file}: cannot parse {raw:?} in column {i}: {e}"))
}

/// Reloads a campaign directory and recomputes the per-cell aggregates from
/// the raw trial rows.
pub fn load_results(dir: &Path) -> anyhow::Result<CampaignResults> {
    let cpath = dir.join(CAMPAIGN_FILE);
    let text = fs::read_to_string(&cpath).with_context(|| format!("cannot read {}", cpath.display()))?;
    let campaign = Campaign::from_json(&text).with_context(|| format!("invalid {}", cpath.display()))?;

    let (_, status_rows) = read_csv(&dir.join(STATUS_FILE))?;
    let (header, trial_rows) = read_csv(&dir.join(TRIALS_FILE))?;
    if header.len() < 6 || (header.len() - 6) % 2 != 0 {
        bail!("{TRIALS_FILE}: unexpected header {header:?}");
    }
    let dim = (header.len() - 6) / 2;

    let mut series: BTreeMap<(usize, usize, usize), TrialRecord<f64>> = BTreeMap::new();
    for row in &trial_rows {
        let key = (field(row, 0, TRIALS_FILE)?, field(row, 1, TRIALS_FILE)?, field(row, 2, TRIALS_FILE)?);
        let rec = series.entry(key).or_insert_with(|| TrialRecord {
            estimates: Vec::new(),
            truths: Vec::new(),
            errors: Vec::new(),
            geff: Vec::new(),
            wall_time: None,
            seed: 0,
            config_fingerprint: String::new(),
        });
        let vals: Vec<f64> = (4..row.len()).map(|i| field(row, i, TRIALS_FILE)).collect::<anyhow::Result<_>>()?;
        rec.errors.push(vals[0]);
        rec.geff.push(vals[1]);
        rec.estimates.push(DVector::from_column_slice(&vals[2..2 + dim]));
        rec.truths.push(DVector::from_column_slice(&vals[2 + dim..2 + 2 * dim]));
    }

    let mut outcomes = Vec::with_capacity(status_rows.len());
    for row in &status_rows {
        let (cell, traj, run): (usize, usize, usize) =
            (field(row, 0, STATUS_FILE)?, field(row, 1, STATUS_FILE)?, field(row, 2, STATUS_FILE)?);
        let seed: u64 = field(row, 3, STATUS_FILE)?;
        let spec = campaign
            .cells
            .get(cell)
            .ok_or_else(|| anyhow!("{STATUS_FILE}: cell {cell} is not in the campaign"))?;
        let result = match row.get(4) {
            Some("ok") => {
                let mut rec = series
                    .remove(&(cell, traj, run))
                    .ok_or_else(|| anyhow!("{TRIALS_FILE}: no rows for cell {cell}, traj {traj}, run {run}"))?;
                rec.seed = seed;
                rec.config_fingerprint = spec.fingerprint();
                Ok(rec)
            }
            Some("failed") => Err(row.get(5).unwrap_or_default().to_string()),
            other => bail!("{STATUS_FILE}: unknown status {other:?}"),
        };
        let dropped_particles = match row.get(6) {
            Some(_) => field(row, 6, STATUS_FILE)?,
            None => 0,
        };
        outcomes.push(TrialOutcome { cell, traj, run, seed, result, dropped_particles });
    }
    if let Some(key) = series.keys().next() {
        bail!("{TRIALS_FILE}: rows for {key:?} have no status entry");
    }
    outcomes.sort_by_key(|o| (o.cell, o.traj, o.run));
    let cells = summarize(&campaign, &outcomes)?;
    Ok(CampaignResults { campaign, outcomes, cells })
}
