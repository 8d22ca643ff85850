use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use pfgspf_harness::output::{aggregate_csv, geff_csv};
use pfgspf_harness::runner::simulate_truth;
use pfgspf_harness::table::render_table;
use pfgspf_harness::{load_results, run_campaign, write_results, Campaign, CampaignResults};

#[derive(Parser)]
#[command(name = "pfgspf", version, about = "Particle flow Gaussian sum particle filter experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a campaign and write its results directory.
    Run {
        config: PathBuf,
        /// Master seed, overriding the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: config, then $PFGSPF_THREADS, then all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Results directory (default: config `out`, then results/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Summary printed on stdout.
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Also write per-trial wall-clock times (not reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Recompute the summary table from a results directory.
    Table {
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Per-step average G_eff of every cell.
    Geff {
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Check a campaign config without running it.
    Validate { config: PathBuf },
    /// Export the simulated truth and measurements of one trajectory as CSV.
    Truth {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        traj: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Run { config, seed, threads, out, format, timing } => {
            let mut campaign = Campaign::load(&config)?;
            if let Some(s) = seed {
                campaign.seed = s;
            }
            if threads.is_some() {
                campaign.threads = threads;
            }
            let dir = out.or_else(|| campaign.out.clone()).unwrap_or_else(|| default_dir(&campaign));
            let results = run_campaign(&campaign)?;
            write_results(&dir, &results, timing)?;
            eprintln!("wrote {} trials to {}", results.outcomes.len(), dir.display());
            summary(&results, format)
        }
        Command::Table { dir, format } => {
            let results = load_results(&dir)?;
            summary(&results, format)
        }
        Command::Geff { dir, format } => {
            let results = load_results(&dir)?;
            match format {
                Format::Json => {
                    let series: Vec<_> = results
                        .cells
                        .iter()
                        .map(|c| {
                            serde_json::json!({
                                "cell_id": c.cell_id, "algorithm": c.algorithm, "G": c.g, "geff": c.geff,
                            })
                        })
                        .collect();
                    println!("{}", serde_json::to_string_pretty(&series)?);
                }
                _ => print!("{}", geff_csv(&results.cells)?),
            }
            Ok(())
        }
        Command::Validate { config } => {
            let c = Campaign::load(&config)?;
            println!(
                "{}: {} scenario, {} cells, {} trials of {} steps",
                config.display(),
                c.scenario.name(),
                c.cells.len(),
                c.n_trials(),
                c.horizon()
            );
            Ok(())
        }
        Command::Truth { config, traj, seed, out } => {
            let mut campaign = Campaign::load(&config)?;
            if let Some(s) = seed {
                campaign.seed = s;
            }
            if traj >= campaign.trajectories {
                anyhow::bail!("trajectory {traj} is out of range (campaign has {})", campaign.trajectories);
            }
            let model = campaign.scenario.build::<f64>()?;
            let truth = simulate_truth(&campaign, &model, traj);
            match out {
                Some(path) => {
                    let file = std::fs::File::create(&path)
                        .with_context(|| format!("cannot create {}", path.display()))?;
                    truth.write_csv(std::io::BufWriter::new(file))?;
                }
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    truth.write_csv(&mut lock)?;
                    lock.flush()?;
                }
            }
            Ok(())
        }
    }
}

fn default_dir(c: &Campaign) -> PathBuf {
    let name = if c.name.is_empty() { c.scenario.name() } else { c.name.as_str() };
    Path::new("results").join(name)
}

fn summary(results: &CampaignResults, format: Format) -> anyhow::Result<()> {
    match format {
        Format::Text => print!("{}", render_table(&results.campaign, &results.cells)),
        Format::Csv => print!("{}", aggregate_csv(&results.cells)?),
        Format::Json => println!("{}", serde_json::to_string_pretty(&results.cells)?),
    }
    Ok(())
}
