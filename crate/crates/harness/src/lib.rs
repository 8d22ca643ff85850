//! Seeded Monte Carlo campaigns for the `pfgspf-core` filter family.
//!
//! A [`Campaign`] sweeps a set of filter cells over simulated trajectories of
//! one scenario; [`run_campaign`] executes it in parallel and
//! [`write_results`] persists trial series, aggregates and tables. Output is
//! identical for a given configuration and seed whatever the thread count.

pub mod config;
pub mod output;
pub mod runner;
pub mod table;

pub use config::{Campaign, Cell, Scoring};
pub use output::{load_results, write_results};
pub use runner::{run_campaign, CampaignResults, CellReport, TrialOutcome};
