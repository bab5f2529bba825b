use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use segsel::eval::SweepKind;
use segsel_cli::{cmd_ablate, cmd_evaluate, cmd_ingest, cmd_synth, cmd_train, RunConfig};

/// Learned road-segment selection for bus arrival-time prediction.
#[derive(Parser)]
#[command(name = "segsel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed` in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (ingest) or directory (other commands).
    #[arg(long)]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), self.seed)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Interpolate a trajectory CSV (trip_id,lat,lon,timestamp) onto a route grid.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Trajectory CSV.
        #[arg(long)]
        data: PathBuf,
        /// Route description TOML.
        #[arg(long)]
        route: PathBuf,
    },
    /// Generate a synthetic route with training and test trips.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train the selection policy on a data directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory holding route.toml, train.csv and optionally test.csv.
        #[arg(long)]
        data: PathBuf,
    },
    /// Score a checkpoint on a data directory's test trips.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run ablation sweeps over consecutive seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Data directory shared by all seeds; without it each seed generates
        /// its own synthetic route.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Sweeps to run, comma separated; all when omitted.
        #[arg(long, value_delimiter = ',', value_parser = parse_sweep)]
        sweep: Vec<SweepKind>,
    },
}

fn parse_sweep(s: &str) -> Result<SweepKind, String> {
    s.parse().map_err(|e: segsel::Error| e.to_string())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SEGSEL_LOG", "info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { common, data, route } => {
            let m = cmd_ingest(&data, &route, &common.out, &common.load()?)?;
            println!("wrote {} trips to {}", m.n_trips(), common.out.display());
        }
        Command::Synth { common } => {
            let d = cmd_synth(&common.load()?, &common.out)?;
            println!(
                "wrote {} training and {} test trips to {}",
                d.train.n_trips(),
                d.test.n_trips(),
                common.out.display()
            );
        }
        Command::Train { common, data } => {
            let s = cmd_train(&data, &common.load()?, &common.out)?;
            match s.test_mae {
                Some(m) => println!("test MAE {m:.4} min"),
                None => println!("final training MAE {:.4} min", s.final_train_mae),
            }
        }
        Command::Evaluate {
            common,
            data,
            checkpoint,
        } => {
            let s = cmd_evaluate(&data, &checkpoint, &common.load()?, &common.out)?;
            println!("MAE {:.4} min (every segment {:.4} min)", s.mae, s.all_mae);
        }
        Command::Ablate { common, data, sweep } => {
            let sweeps = if sweep.is_empty() { SweepKind::ALL.to_vec() } else { sweep };
            for report in cmd_ablate(data.as_deref(), &sweeps, &common.load()?, &common.out)? {
                for r in &report.reports {
                    println!("{:<11} {:<13} median MAE {:.4} min", report.sweep, r.variant, r.median_mae);
                }
            }
        }
    }
    Ok(())
}
