use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use scatternet::table::{improvement_line, report_table, sweep_table};
use scatternet::{
    compare_trials, load_scenario, parse_weights_grid, run_one, sweep, write_rows, write_scenario,
    ScenarioSource,
};
use scatternet_core::{gen_random_scenario, Algo, GenParams, ScoreWeights};

#[derive(Parser)]
#[command(
    name = "scatternet",
    version,
    about = "BLE mesh scatternet joining simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trial.
    Run {
        /// Scenario JSON file or built-in name (training11).
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        algo: Algo,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Paired comparison of both algorithms.
    Compare {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed_base: u64,
        /// Override the scoring weights: w_m,w_h,w_b,w_ci,w_rl,w_rn
        #[arg(long)]
        weights: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a random scenario file.
    Gen {
        #[arg(long, default_value_t = 16)]
        nodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 30.0)]
        area: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scored results for a grid of weight vectors.
    Sweep {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed_base: u64,
        /// Weight vectors separated by ';', each w_m,w_h,w_b,w_ci,w_rl,w_rn
        #[arg(long)]
        weights_grid: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SourceArgs {
    /// Scenario JSON file or built-in name (training11).
    #[arg(long, required_unless_present = "random", conflicts_with = "random")]
    scenario: Option<PathBuf>,
    /// Generate a random topology per trial.
    #[arg(long)]
    random: bool,
    /// Nodes per random topology, sink and new node included.
    #[arg(long, default_value_t = 16, requires = "random")]
    nodes: usize,
    /// Side of the square random nodes are placed in (m).
    #[arg(long, default_value_t = 30.0, requires = "random")]
    area: f64,
}

impl SourceArgs {
    fn resolve(&self) -> Result<ScenarioSource> {
        if let Some(path) = &self.scenario {
            let s = load_scenario(path)
                .with_context(|| format!("loading scenario {}", path.display()))?;
            return Ok(ScenarioSource::Fixed(s));
        }
        Ok(ScenarioSource::Random {
            nodes: self.nodes,
            area_m: self.area,
            params: GenParams::default(),
        })
    }
}

fn create(path: &Path) -> Result<File> {
    File::create(path).with_context(|| format!("writing results to {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Run {
            scenario,
            algo,
            seed,
            out: csv,
        } => {
            let sc = load_scenario(&scenario)
                .with_context(|| format!("loading scenario {}", scenario.display()))?;
            let (trial, row) = run_one(&sc, algo, seed).context("running trial")?;
            match trial.chosen_parent {
                Some(p) => writeln!(
                    out,
                    "{} {algo} seed {seed}: joined {p} at {} hops, PDR {}, mean delay {} ms, saturated branch {}",
                    sc.name,
                    trial.hops_at_join.unwrap_or_default(),
                    row.pdr.map_or("-".into(), |v| format!("{v:.3}")),
                    row.mu_d_ms.map_or("-".into(), |v| format!("{v:.1}")),
                    row.sat_branch.unwrap_or(false),
                )?,
                None => writeln!(out, "{} {algo} seed {seed}: join failed", sc.name)?,
            }
            if let Some(path) = csv {
                write_rows(&[row], create(&path)?).context("writing CSV")?;
            }
        }
        Command::Compare {
            source,
            trials,
            seed_base,
            weights,
            out: csv,
        } => {
            let mut src = source.resolve()?;
            if let Some(w) = weights {
                let grid =
                    parse_weights_grid(&w, ScoreWeights::default()).context("parsing --weights")?;
                src = src.with_weights(grid[0]);
            }
            let res = compare_trials(&src, trials, seed_base).context("running comparison")?;
            write!(
                out,
                "{}",
                report_table(
                    &format!("{} ({trials} paired trials)", res.label),
                    &[&res.baseline, &res.scored]
                )
            )?;
            writeln!(out, "{}", improvement_line(&res.improvement))?;
            if let Some(path) = csv {
                write_rows(&res.rows, create(&path)?).context("writing CSV")?;
            }
        }
        Command::Gen {
            nodes,
            seed,
            area,
            out: path,
        } => {
            let sc = gen_random_scenario(nodes, seed, area, &GenParams::default())
                .context("generating scenario")?;
            write_scenario(&sc, &path).context("writing scenario")?;
            writeln!(
                out,
                "wrote {} ({} nodes) to {}",
                sc.name,
                sc.nodes.len(),
                path.display()
            )?;
        }
        Command::Sweep {
            source,
            trials,
            seed_base,
            weights_grid,
            out: csv,
        } => {
            let src = source.resolve()?;
            let grid = parse_weights_grid(&weights_grid, ScoreWeights::default())
                .context("parsing --weights-grid")?;
            let (baseline, rows) =
                sweep(&src, &grid, trials, seed_base).context("running sweep")?;
            write!(out, "{}", sweep_table(&baseline, &rows))?;
            if let Some(path) = csv {
                let mut w = csv::Writer::from_writer(create(&path)?);
                for r in &rows {
                    w.serialize(r).context("writing CSV")?;
                }
                w.flush().context("writing CSV")?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
