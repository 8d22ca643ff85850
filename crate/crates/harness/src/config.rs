//! Campaign configuration files.
//!
//! A campaign is a single TOML (or JSON) document:
//!
//! ```toml
//! name = "acoustic-desk"
//! trajectories = 20
//! runs = 2
//! seed = 2024
//!
//! [scenario]
//! kind = "acoustic"
//! horizon = 40
//!
//! [[cells]]
//! kind = "pfgspf"
//! g = 5
//! np_star = 500
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use pfgspf_core::filters::DEFAULT_RESAMPLE_THRESHOLD;
use pfgspf_core::flow::ScheduleConfig;
use pfgspf_core::metrics::{TrialScore, DEFAULT_LOST_THRESHOLD};
use pfgspf_core::rng::derive_seed;
use pfgspf_core::scenarios::ScenarioConfig;
use pfgspf_core::{FilterConfig, FilterKind};
use serde::{Deserialize, Serialize};

/// Environment variable holding the default worker count.
pub const THREADS_ENV: &str = "PFGSPF_THREADS";

const TRUTH_STREAM: u64 = 0;
const PRIOR_STREAM: u64 = 1;
const FILTER_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Campaign {
    #[serde(default)]
    pub name: String,
    pub scenario: ScenarioConfig,
    pub cells: Vec<Cell>,
    #[serde(default = "one")]
    pub trajectories: usize,
    /// Filter runs per trajectory, each from a different prior draw.
    #[serde(default = "one")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scoring: Scoring,
    /// Output directory; execution setting, not part of the recorded campaign.
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 or absent: the environment or all cores).
    #[serde(default, skip_serializing)]
    pub threads: Option<usize>,
}

/// One filter configuration of the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub kind: FilterKind,
    /// Number of mixture components `G`.
    #[serde(default = "one", alias = "g")]
    pub n_components: usize,
    /// Particles per component `N*_p`.
    #[serde(default, alias = "np_star")]
    pub particles_per_component: usize,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default = "default_threshold")]
    pub resample_threshold: f64,
    #[serde(default)]
    pub init_spread: f64,
}

/// How trials are scored; unset fields follow the scenario.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scoring {
    /// `mean_error` (trajectory-average OMAT) or `mse`.
    pub score: Option<TrialScore>,
    /// OMAT order `p`.
    pub omat_order: Option<f64>,
    /// Trajectory-average error above which a trial is a lost track.
    pub lost_threshold: Option<f64>,
}

fn one() -> usize {
    1
}

fn default_threshold() -> f64 {
    DEFAULT_RESAMPLE_THRESHOLD
}

impl Cell {
    pub fn new(kind: FilterKind, g: usize, np_star: usize) -> Self {
        let c = FilterConfig::new(kind, g, np_star);
        Self {
            kind,
            n_components: g,
            particles_per_component: np_star,
            schedule: c.schedule,
            resample_threshold: c.resample_threshold,
            init_spread: c.init_spread,
        }
    }

    pub fn total_particles(&self) -> usize {
        self.n_components * self.particles_per_component
    }

    pub fn filter_config(&self, seed: u64) -> FilterConfig {
        FilterConfig {
            kind: self.kind,
            n_components: self.n_components,
            particles_per_component: self.particles_per_component,
            schedule: self.schedule,
            resample_threshold: self.resample_threshold,
            init_spread: self.init_spread,
            seed,
        }
    }

    /// Short identity string stored with each trial.
    pub fn fingerprint(&self) -> String {
        format!(
            "{:?}/G{}/N{}/L{}x{}/r{}/s{}",
            self.kind,
            self.n_components,
            self.particles_per_component,
            self.schedule.n_steps,
            self.schedule.ratio,
            self.resample_threshold,
            self.init_spread
        )
    }
}

impl Scoring {
    /// Fills unset fields with the scenario defaults: OMAT with lost tracks
    /// for multi-target tracking, MSE without lost tracks otherwise.
    pub fn resolve(&self, scenario: &ScenarioConfig) -> Scoring {
        let tracking = matches!(scenario, ScenarioConfig::Acoustic(_));
        Scoring {
            score: Some(self.score.unwrap_or(if tracking { TrialScore::MeanError } else { TrialScore::Mse })),
            omat_order: Some(self.omat_order.unwrap_or(1.0)),
            lost_threshold: self.lost_threshold.or(tracking.then_some(DEFAULT_LOST_THRESHOLD)),
        }
    }
}

impl Campaign {
    pub fn load(path: &Path) -> anyhow::Result<Campaign> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let campaign = if is_json { Self::from_json(&text) } else { Self::from_toml(&text) };
        campaign.with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn from_toml(text: &str) -> anyhow::Result<Campaign> {
        let c: Campaign = toml::from_str(text)?;
        c.validate()?;
        Ok(c.resolved())
    }

    pub fn from_json(text: &str) -> anyhow::Result<Campaign> {
        let c: Campaign = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c.resolved())
    }

    fn resolved(mut self) -> Campaign {
        self.scoring = self.scoring.resolve(&self.scenario);
        self
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.cells.is_empty() {
            bail!("campaign needs at least one cell");
        }
        if self.trajectories == 0 || self.runs == 0 {
            bail!("trajectories and runs must be at least 1");
        }
        self.scenario.build::<f64>().context("scenario")?;
        for (i, cell) in self.cells.iter().enumerate() {
            cell.filter_config(0).validate().with_context(|| format!("cells[{i}] ({})", cell.kind))?;
            if cell.kind == FilterKind::Kalman && !matches!(self.scenario, ScenarioConfig::Linear(_)) {
                bail!("cells[{i}]: the Kalman filter needs a linear scenario");
            }
        }
        let s = self.scoring.resolve(&self.scenario);
        if s.omat_order.is_some_and(|p| !(p.is_finite() && p >= 1.0)) {
            bail!("scoring.omat_order must be a finite number >= 1");
        }
        if s.lost_threshold.is_some_and(|t| !(t.is_finite() && t >= 0.0)) {
            bail!("scoring.lost_threshold must be finite and non-negative");
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.scenario.horizon()
    }

    pub fn n_trials(&self) -> usize {
        self.cells.len() * self.trajectories * self.runs
    }

    pub fn truth_seed(&self, traj: usize) -> u64 {
        derive_seed(self.seed, &[TRUTH_STREAM, traj as u64])
    }

    pub fn prior_seed(&self, traj: usize, run: usize) -> u64 {
        derive_seed(self.seed, &[PRIOR_STREAM, traj as u64, run as u64])
    }

    pub fn filter_seed(&self, traj: usize, run: usize, cell: usize) -> u64 {
        derive_seed(self.seed, &[FILTER_STREAM, traj as u64, run as u64, cell as u64])
    }

    /// Worker count: explicit setting, then the environment, then all cores (0).
    pub fn thread_count(&self) -> anyhow::Result<usize> {
        if let Some(n) = self.threads {
            return Ok(n);
        }
        match std::env::var(THREADS_ENV) {
            Ok(v) => v.trim().parse().with_context(|| format!("{THREADS_ENV}={v:?} is not a thread count")),
            Err(_) => Ok(0),
        }
    }
}
