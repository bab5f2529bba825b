//! Commands behind the `segsel` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use segsel::eval::{
    config_digest, generate_synthetic_route, plot_convergence, plot_sweep, Ablation, Dataset, EvaluationPlan,
    PlanPredictor, SweepKind, SyntheticRouteConfig, Trial,
};
use segsel::ingest::{parse_trajectories, RouteDescription, SegmentGrid, DEFAULT_TAU_S};
use segsel::interp::{build_arrival_matrix, ArrivalMatrix};
use segsel::lrm::estimate_moments;
use segsel::training::{
    dprl_train, write_convergence_log, BenchmarkTable, PolicyCheckpoint, RewardStrategy, TrainConfig,
};

pub const ROUTE_FILE: &str = "route.toml";
pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_FILE: &str = "test.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const CONVERGENCE_PLOT: &str = "convergence.svg";
pub const SUMMARY_FILE: &str = "summary.json";
pub const EVALUATION_FILE: &str = "evaluation.json";

/// Parameters of one command, read from TOML. Command-line flags override the
/// file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for training and sweeps. For `synth` it replaces `synth.seed`.
    pub seed: Option<u64>,
    /// Number of consecutive seeds a sweep runs, starting at `seed`.
    pub n_seeds: usize,
    /// Journey split threshold for ingestion, seconds.
    pub tau: f64,
    /// Benchmark error table for the BCR reward. Without it, BCR runs use
    /// cross-fitted errors of the every-segment model.
    pub benchmark: Option<PathBuf>,
    pub synth: SyntheticRouteConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            n_seeds: 5,
            tau: DEFAULT_TAU_S,
            benchmark: None,
            synth: SyntheticRouteConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Defaults when `path` is `None`; `seed` overrides the file.
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if seed.is_some() {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            bail!("tau must be positive, got {}", self.tau);
        }
        if self.n_seeds == 0 {
            bail!("n_seeds must be at least 1");
        }
        if let Some(b) = &self.benchmark {
            if !b.is_file() {
                bail!("benchmark file {} does not exist", b.display());
            }
        }
        Ok(())
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .context("a seed is required: set `seed` in the config or pass --seed")
    }

    /// Training settings with the run seed and any benchmark table attached.
    fn train_config(&self, trips: &ArrivalMatrix<f64>, grid: &SegmentGrid) -> Result<TrainConfig> {
        let mut train = self.train.clone();
        train.seed = self.require_seed()?;
        if train.reward.strategy == RewardStrategy::Bcr {
            train.reward.benchmark = Some(match &self.benchmark {
                Some(path) => BenchmarkTable::read_csv(open(path)?)?,
                None => BenchmarkTable::all_segments(trips, grid, train.folds)?,
            });
        }
        Ok(train)
    }
}

#[derive(Serialize)]
struct DigestKey<'a> {
    command: &'a str,
    config: &'a RunConfig,
    inputs: Vec<String>,
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Digest of the command, its configuration and the contents of its inputs.
pub fn run_digest(command: &str, config: &RunConfig, inputs: &[&Path]) -> Result<String> {
    let inputs = inputs.iter().map(|p| file_digest(p)).collect::<Result<Vec<_>>>()?;
    Ok(config_digest(&DigestKey {
        command,
        config,
        inputs,
    })?)
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).with_context(|| format!("opening {}", path.display()))
}

fn write(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn digest_line(digest: &str) -> String {
    format!("# config_digest: {digest}\n")
}

fn write_matrix(path: &Path, m: &ArrivalMatrix<f64>, digest: &str) -> Result<()> {
    let mut buf = digest_line(digest).into_bytes();
    m.write_csv(&mut buf)?;
    write(path, &buf)
}

fn read_matrix(path: &Path) -> Result<ArrivalMatrix<f64>> {
    ArrivalMatrix::read_csv(open(path)?).with_context(|| format!("reading {}", path.display()))
}

/// Adds the digest as an XML comment after the declaration.
fn embed_svg_digest(path: &Path, digest: &str) -> Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let comment = format!("<!-- config_digest: {digest} -->\n");
    let out = match text.find("?>") {
        Some(i) if text.starts_with("<?xml") => format!("{}\n{comment}{}", &text[..i + 2], text[i + 2..].trim_start()),
        _ => format!("{comment}{text}"),
    };
    write(path, out.as_bytes())
}

fn load_grid(dir: &Path) -> Result<SegmentGrid> {
    Ok(RouteDescription::load(&dir.join(ROUTE_FILE))?.grid()?)
}

fn load_split(dir: &Path, file: &str, grid: &SegmentGrid) -> Result<ArrivalMatrix<f64>> {
    let path = dir.join(file);
    let m = read_matrix(&path)?;
    if m.n_segments() != grid.len() {
        bail!("{} has {} columns but the route grid has {} points", path.display(), m.n_segments(), grid.len());
    }
    Ok(m)
}

/// Route with its training and test trips from a data directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let grid = load_grid(dir)?;
    let train = load_split(dir, TRAIN_FILE, &grid)?;
    let test = load_split(dir, TEST_FILE, &grid)?;
    Ok(Dataset { grid, train, test })
}

/// Trajectory CSV onto the route grid, written as an arrival matrix.
pub fn cmd_ingest(trajectories: &Path, route: &Path, out: &Path, config: &RunConfig) -> Result<ArrivalMatrix<f64>> {
    let digest = run_digest("ingest", config, &[trajectories, route])?;
    let grid = RouteDescription::load(route)?.grid()?;
    let journeys = parse_trajectories(open(trajectories)?, config.tau)
        .with_context(|| format!("parsing {}", trajectories.display()))?;
    let matrix = build_arrival_matrix::<f64>(&journeys, &grid)?;
    log::info!("{} of {} journeys interpolated", matrix.n_trips(), journeys.len());
    write_matrix(out, &matrix, &digest)?;
    Ok(matrix)
}

/// Synthetic route and trips written as a data directory.
pub fn cmd_synth(config: &RunConfig, out: &Path) -> Result<Dataset> {
    let mut synth = config.synth.clone();
    if let Some(seed) = config.seed {
        synth.seed = seed;
    }
    let data = generate_synthetic_route(&synth)?;
    let digest = run_digest("synth", config, &[])?;
    create_dir(out)?;
    let route = format!("{}{}", digest_line(&digest), synth.route().to_toml());
    write(&out.join(ROUTE_FILE), route.as_bytes())?;
    write_matrix(&out.join(TRAIN_FILE), &data.train, &digest)?;
    write_matrix(&out.join(TEST_FILE), &data.test, &digest)?;
    Ok(data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config_digest: String,
    pub seed: u64,
    pub selection: Vec<usize>,
    pub final_train_mae: f64,
    /// Held-out MAE of the trained model, minutes; absent without test trips.
    pub test_mae: Option<f64>,
}

fn held_out_mae(grid: &SegmentGrid, test: &ArrivalMatrix<f64>, model: &segsel::EtaModel) -> Result<f64> {
    let plan = EvaluationPlan::stop_to_stop(grid)?;
    Ok(PlanPredictor::new(model, &plan)?.mae(test)?)
}

/// Trains on a data directory and writes the checkpoint, convergence log and
/// plot, and a summary.
pub fn cmd_train(data_dir: &Path, config: &RunConfig, out: &Path) -> Result<TrainSummary> {
    let seed = config.require_seed()?;
    let grid = load_grid(data_dir)?;
    let train_trips = load_split(data_dir, TRAIN_FILE, &grid)?;
    let mut inputs = vec![data_dir.join(ROUTE_FILE), data_dir.join(TRAIN_FILE)];
    if let Some(b) = &config.benchmark {
        inputs.push(b.clone());
    }
    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let digest = run_digest("train", config, &input_refs)?;
    let train = config.train_config(&train_trips, &grid)?;
    let outcome = dprl_train(&train_trips, &grid, &train)?;

    create_dir(out)?;
    let checkpoint = PolicyCheckpoint::from_outcome(&outcome, &digest);
    write(&out.join(CHECKPOINT_FILE), checkpoint.to_json()?.as_bytes())?;
    let mut log_buf = digest_line(&digest).into_bytes();
    write_convergence_log(&outcome.log, &mut log_buf)?;
    write(&out.join(CONVERGENCE_FILE), &log_buf)?;
    if !outcome.log.is_empty() {
        let plot = out.join(CONVERGENCE_PLOT);
        plot_convergence(&[(format!("seed {seed}"), outcome.log.clone())], &plot)?;
        embed_svg_digest(&plot, &digest)?;
    }
    let summary = TrainSummary {
        config_digest: digest,
        seed,
        selection: outcome.selection.clone(),
        final_train_mae: outcome.log.last().map_or(f64::NAN, |r| r.train_mae),
        test_mae: match data_dir.join(TEST_FILE).exists() {
            true => Some(held_out_mae(&grid, &load_split(data_dir, TEST_FILE, &grid)?, &outcome.model)?),
            false => None,
        },
    };
    write(&out.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub config_digest: String,
    pub checkpoint_digest: String,
    pub n_trips: usize,
    pub n_triples: usize,
    /// Test MAE of the checkpoint's model, minutes.
    pub mae: f64,
    /// Test MAE with every grid point, minutes.
    pub all_mae: f64,
}

/// Scores a checkpoint and the every-segment model on the test trips.
pub fn cmd_evaluate(data_dir: &Path, checkpoint: &Path, config: &RunConfig, out: &Path) -> Result<EvaluationSummary> {
    let data = load_dataset(data_dir)?;
    let text = fs::read_to_string(checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
    let ckpt = PolicyCheckpoint::from_json(&text).with_context(|| format!("parsing {}", checkpoint.display()))?;
    let model = ckpt.model()?;
    if let Some(&bad) = model.indices.iter().find(|&&i| i >= data.grid.len()) {
        bail!("checkpoint model uses grid point {bad} beyond the route's {} points", data.grid.len());
    }
    let plan = EvaluationPlan::stop_to_stop(&data.grid)?;
    let mae = held_out_mae(&data.grid, &data.test, &model)?;
    let all: Vec<usize> = (0..data.grid.len()).collect();
    let full = estimate_moments(&data.train, &all)?;
    let all_mae = PlanPredictor::new(&full, &plan)?.mae(&data.test)?;
    let digest = run_digest(
        "evaluate",
        config,
        &[&data_dir.join(ROUTE_FILE), &data_dir.join(TRAIN_FILE), &data_dir.join(TEST_FILE), checkpoint],
    )?;
    let summary = EvaluationSummary {
        config_digest: digest,
        checkpoint_digest: ckpt.config_digest,
        n_trips: data.test.n_trips(),
        n_triples: plan.len() * data.test.n_trips(),
        mae,
        all_mae,
    };
    create_dir(out)?;
    write(&out.join(EVALUATION_FILE), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    Ok(summary)
}

/// Runs the requested sweeps and writes one report and one plot per sweep,
/// plus the convergence logs of the base configuration. Without a data
/// directory each seed trains on its own synthetic route generated with that
/// seed; with one, every seed shares the data.
pub fn cmd_ablate(
    data_dir: Option<&Path>,
    sweeps: &[SweepKind],
    config: &RunConfig,
    out: &Path,
) -> Result<Vec<segsel::eval::SweepReport>> {
    let first = config.require_seed()?;
    let seeds: Vec<u64> = (0..config.n_seeds as u64).map(|k| first + k).collect();
    let mut inputs = Vec::new();
    let trials: Vec<Trial> = match data_dir {
        Some(dir) => {
            let data = Arc::new(load_dataset(dir)?);
            inputs.extend([dir.join(ROUTE_FILE), dir.join(TRAIN_FILE), dir.join(TEST_FILE)]);
            seeds.iter().map(|&seed| Trial { seed, data: data.clone() }).collect()
        }
        None => seeds
            .iter()
            .map(|&seed| {
                let synth = SyntheticRouteConfig {
                    seed,
                    ..config.synth.clone()
                };
                Ok(Trial {
                    seed,
                    data: Arc::new(generate_synthetic_route(&synth)?),
                })
            })
            .collect::<Result<_>>()?,
    };
    let mut base = config.train.clone();
    if base.reward.strategy == RewardStrategy::Bcr {
        if let Some(path) = &config.benchmark {
            base.reward.benchmark = Some(BenchmarkTable::read_csv(open(path)?)?);
            inputs.push(path.clone());
        }
    }
    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let digest = run_digest("ablate", config, &input_refs)?;
    let ablation = Ablation::new(trials, base)?;
    create_dir(out)?;

    let mut reports = Vec::new();
    for &kind in sweeps {
        let mut report = ablation.run(kind)?;
        report.config_digest = config_digest(&(&digest, &report.config_digest))?;
        write(&out.join(format!("{}.json", kind.name())), report.to_json()?.as_bytes())?;
        let plot = out.join(format!("{}.svg", kind.name()));
        plot_sweep(&report, &plot)?;
        embed_svg_digest(&plot, &report.config_digest)?;
        reports.push(report);
    }

    let logs = (0..seeds.len())
        .map(|i| Ok((format!("seed {}", seeds[i]), ablation.train(i, ablation.base())?.log.clone())))
        .collect::<Result<Vec<_>>>()?;
    for (seed, (_, log)) in seeds.iter().zip(&logs) {
        let mut buf = digest_line(&digest).into_bytes();
        write_convergence_log(log, &mut buf)?;
        write(&out.join(format!("convergence-seed{seed}.csv")), &buf)?;
    }
    if logs.iter().any(|(_, l)| !l.is_empty()) {
        let plot = out.join(CONVERGENCE_PLOT);
        plot_convergence(&logs, &plot)?;
        embed_svg_digest(&plot, &digest)?;
    }
    Ok(reports)
}
