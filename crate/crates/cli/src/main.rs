use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use intravol::pipeline::{
    cmd_backtest_vwap, cmd_featurize, cmd_ingest, cmd_simulate_fills, cmd_synth, cmd_train_eval, RunConfig, Workspace,
};

#[derive(Parser)]
#[command(name = "intravol", version, about = "Intraday volume forecasting, VWAP replication and fill simulation")]
struct Cli {
    /// JSON run config; without it, defaults are used and --seed is required.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: the config's `out_dir`, else `./out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bin LOB message files into 15-minute records.
    Ingest,
    /// Generate a synthetic universe with known ground truth.
    Synth,
    /// Build feature panels (plus component and OFI columns if configured).
    Featurize,
    /// Fit and evaluate the scheme x model x recipe matrix.
    TrainEval,
    /// Replicate VWAP with every forecast and report tracking errors.
    BacktestVwap,
    /// Execute schedules against replayed order flow and compare fill ratios.
    SimulateFills,
    /// Print the effective config as JSON.
    ShowConfig,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => match cli.seed {
            Some(seed) => RunConfig::new(seed),
            None => bail!("a seed is required: pass --seed or a --config file with `seed`"),
        },
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .context("setting up the worker pool")?;
    }
    let cfg = load_config(&cli)?;
    let ws = Workspace::new(cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out")));
    match cli.command {
        Command::ShowConfig => println!("{}", cfg.echo()),
        Command::Synth => {
            let s = cmd_synth(&cfg, &ws)?;
            println!(
                "synth: {} stocks x {} days, {} message files, {} events -> {}",
                s.stocks,
                s.days,
                s.message_files,
                s.events,
                ws.synth_messages().display()
            );
        }
        Command::Ingest => {
            let s = cmd_ingest(&cfg, &ws)?;
            println!(
                "ingest: {} files, {} bin records, {} events outside the session -> {}",
                s.files,
                s.records,
                s.dropped_events,
                ws.bins().display()
            );
        }
        Command::Featurize => {
            for s in cmd_featurize(&cfg, &ws)? {
                println!(
                    "featurize {}: {} rows x {} columns ({} rows dropped) -> {}",
                    s.mode.as_str(),
                    s.rows,
                    s.columns,
                    s.dropped_rows,
                    ws.features(s.mode).display()
                );
            }
        }
        Command::TrainEval => {
            let reports = cmd_train_eval(&cfg, &ws)?;
            println!("{:<40} {:>9} {:>9} {:>6} {:>9}", "run", "R2 mean", "R2 std", "days", "seconds");
            for r in &reports {
                println!(
                    "{:<40} {:>9.4} {:>9.4} {:>6} {:>9.2}",
                    r.label,
                    r.r2_mean,
                    r.r2_std,
                    r.r2_by_day.len(),
                    r.runtime_secs
                );
            }
            println!("comparison -> {}", ws.reports().join("comparison.csv").display());
        }
        Command::BacktestVwap => {
            println!("{:<40} {:>6} {:>12}", "source", "days", "TE (bp)");
            for r in cmd_backtest_vwap(&cfg, &ws)? {
                println!("{:<40} {:>6} {:>12.4}", r.source, r.days.len(), r.tracking_error_bp);
            }
            println!("bar data -> {}", ws.vwap().join("tracking_error.csv").display());
        }
        Command::SimulateFills => {
            let out = cmd_simulate_fills(&cfg, &ws)?;
            println!("{:<40} {:>9} {:>14} {:>14}", "source", "sessions", "median (bp)", "mean (bp)");
            for s in &out.summary {
                println!(
                    "{:<40} {:>9} {:>14.2} {:>14.2}",
                    s.source, s.sessions, s.median_advantage_bp, s.mean_advantage_bp
                );
            }
            println!("advantage data -> {}", ws.fills().join("fill_advantage.csv").display());
        }
    }
    Ok(())
}
