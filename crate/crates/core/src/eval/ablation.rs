use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{Dataset, EvaluationPlan, PlanPredictor};
use crate::error::{Error, Result};
use crate::lrm::{estimate_moments, GaussianEtaModel};
use crate::rng;
use crate::training::{dprl_train, random_selection, BenchmarkTable, RewardStrategy, TrainConfig, TrainOutcome};

/// Hex SHA-256 of the compact JSON form of `value`.
pub fn config_digest<S: Serialize + ?Sized>(value: &S) -> Result<String> {
    let json = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&json)))
}

/// Median, averaging the middle pair for even lengths.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("median needs finite non-empty input".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// One seed of an experiment together with the data it runs on.
#[derive(Debug, Clone)]
pub struct Trial {
    pub seed: u64,
    pub data: Arc<Dataset>,
}

/// How a model chooses its interpolation points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SelectionStrategy {
    /// Every grid point.
    All,
    /// A seeded random subset.
    Rs,
    /// The subset a trained policy settles on.
    Rl,
}

impl SelectionStrategy {
    pub fn label(self) -> &'static str {
        match self {
            SelectionStrategy::All => "ALL",
            SelectionStrategy::Rs => "RS",
            SelectionStrategy::Rl => "RL",
        }
    }
}

/// Test MAE of one variant across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sweep: String,
    pub variant: String,
    pub strategy: SelectionStrategy,
    pub seeds: Vec<u64>,
    pub per_seed_mae: Vec<f64>,
    pub median_mae: f64,
    pub config_digest: String,
}

/// All variants of one sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub sweep: String,
    pub config_digest: String,
    pub reports: Vec<EvalReport>,
}

impl SweepReport {
    pub fn get(&self, variant: &str) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.variant == variant)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Selection,
    Proportion,
    Reward,
    Mask,
    Iterations,
}

impl SweepKind {
    pub const ALL: [SweepKind; 5] = [
        SweepKind::Selection,
        SweepKind::Proportion,
        SweepKind::Reward,
        SweepKind::Mask,
        SweepKind::Iterations,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Selection => "selection",
            SweepKind::Proportion => "proportion",
            SweepKind::Reward => "reward",
            SweepKind::Mask => "mask",
            SweepKind::Iterations => "iterations",
        }
    }
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown sweep {s:?}")))
    }
}

pub const PROPORTIONS: [(&str, f64); 3] = [("1/3", 1.0 / 3.0), ("2/3", 2.0 / 3.0), ("1", 1.0)];
pub const ACTION_ITERATIONS: [usize; 4] = [2, 4, 6, 8];

#[derive(Serialize)]
struct VariantKey<'a> {
    sweep: &'a str,
    variant: &'a str,
    strategy: SelectionStrategy,
    train: &'a TrainConfig,
    seeds: &'a [u64],
}

type RunKey = (usize, String);

/// Runs ALL, RS and trained variants over a fixed set of trials. Training runs
/// are cached by trial and configuration, so variants shared between sweeps
/// train once.
pub struct Ablation {
    trials: Vec<Trial>,
    base: TrainConfig,
    runs: Mutex<BTreeMap<RunKey, Arc<TrainOutcome>>>,
    benchmarks: Mutex<BTreeMap<(usize, usize), Arc<BenchmarkTable>>>,
}

impl Ablation {
    pub fn new(trials: Vec<Trial>, base: TrainConfig) -> Result<Self> {
        if trials.is_empty() {
            return Err(Error::Config("an ablation needs at least one seed".into()));
        }
        Ok(Self {
            trials,
            base,
            runs: Mutex::new(BTreeMap::new()),
            benchmarks: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn base(&self) -> &TrainConfig {
        &self.base
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.trials.iter().map(|t| t.seed).collect()
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    fn full_model(data: &Dataset) -> Result<GaussianEtaModel<f64>> {
        let all: Vec<usize> = (0..data.grid.len()).collect();
        estimate_moments(&data.train, &all)
    }

    fn test_mae(data: &Dataset, model: &GaussianEtaModel<f64>) -> Result<f64> {
        let plan = EvaluationPlan::stop_to_stop(&data.grid)?;
        PlanPredictor::new(model, &plan)?.mae(&data.test)
    }

    /// Test MAE with every grid point.
    pub fn all_mae(&self, trial: &Trial) -> Result<f64> {
        Self::test_mae(&trial.data, &Self::full_model(&trial.data)?)
    }

    /// Test MAE of a random subset of `cfg`'s size drawn from the trial's
    /// random-subset stream, independent of any training run.
    pub fn random_mae(&self, trial: &Trial, cfg: &TrainConfig) -> Result<f64> {
        let data = &trial.data;
        let interp = data.grid.interp_indices();
        let m = cfg.selection_size(interp.len())?;
        let selection = random_selection(&interp, m, &mut rng::stream(trial.seed, rng::RANDOM_SUBSET));
        let mut keep = data.grid.landmark_indices();
        keep.extend(selection);
        keep.sort_unstable();
        Self::test_mae(data, &Self::full_model(data)?.restrict(&keep)?)
    }

    fn benchmark(&self, index: usize, folds: usize) -> Result<Arc<BenchmarkTable>> {
        if let Some(b) = self.benchmarks.lock().expect("benchmark cache").get(&(index, folds)) {
            return Ok(b.clone());
        }
        let data = &self.trials[index].data;
        let table = Arc::new(BenchmarkTable::all_segments(&data.train, &data.grid, folds)?);
        self.benchmarks
            .lock()
            .expect("benchmark cache")
            .insert((index, folds), table.clone());
        Ok(table)
    }

    /// Trains `cfg` on trial `index` with the trial's seed. A BCR reward
    /// without a table gets the cross-fitted every-segment errors.
    pub fn train(&self, index: usize, cfg: &TrainConfig) -> Result<Arc<TrainOutcome>> {
        let trial = &self.trials[index];
        let mut cfg = cfg.clone();
        cfg.seed = trial.seed;
        let key = (index, serde_json::to_string(&cfg)?);
        if let Some(out) = self.runs.lock().expect("run cache").get(&key) {
            return Ok(out.clone());
        }
        if cfg.reward.strategy == RewardStrategy::Bcr && cfg.reward.benchmark.is_none() {
            cfg.reward.benchmark = Some(self.benchmark(index, cfg.folds)?.as_ref().clone());
        }
        let out = Arc::new(dprl_train(&trial.data.train, &trial.data.grid, &cfg)?);
        self.runs.lock().expect("run cache").insert(key, out.clone());
        Ok(out)
    }

    /// Test MAE of the selection `cfg` trains to on trial `index`.
    pub fn trained_mae(&self, index: usize, cfg: &TrainConfig) -> Result<f64> {
        let out = self.train(index, cfg)?;
        Self::test_mae(&self.trials[index].data, &out.model)
    }

    /// Evaluates one variant on every trial.
    pub fn evaluate(&self, sweep: &str, variant: &str, strategy: SelectionStrategy, cfg: &TrainConfig) -> Result<EvalReport> {
        let seeds = self.seeds();
        let per_seed_mae = (0..self.trials.len())
            .into_par_iter()
            .map(|i| match strategy {
                SelectionStrategy::All => self.all_mae(&self.trials[i]),
                SelectionStrategy::Rs => self.random_mae(&self.trials[i], cfg),
                SelectionStrategy::Rl => self.trained_mae(i, cfg),
            })
            .collect::<Result<Vec<f64>>>()?;
        let config_digest = config_digest(&VariantKey {
            sweep,
            variant,
            strategy,
            train: cfg,
            seeds: &seeds,
        })?;
        let median_mae = median(&per_seed_mae)?;
        log::info!("{sweep}/{variant}: median MAE {median_mae:.4} min over {} seeds", seeds.len());
        Ok(EvalReport {
            sweep: sweep.to_string(),
            variant: variant.to_string(),
            strategy,
            seeds,
            per_seed_mae,
            median_mae,
            config_digest,
        })
    }

    /// ALL, RS and RL at the base configuration.
    pub fn run_selection_ablation(&self) -> Result<Vec<EvalReport>> {
        [SelectionStrategy::All, SelectionStrategy::Rs, SelectionStrategy::Rl]
            .into_iter()
            .map(|s| self.evaluate("selection", s.label(), s, &self.base))
            .collect()
    }

    /// RL at each labelled selection fraction.
    pub fn sweep_proportion(&self, fractions: &[(&str, f64)]) -> Result<Vec<EvalReport>> {
        fractions
            .iter()
            .map(|&(label, f)| {
                let cfg = TrainConfig {
                    selection_fraction: f,
                    ..self.base.clone()
                };
                self.evaluate("proportion", label, SelectionStrategy::Rl, &cfg)
            })
            .collect()
    }

    /// RL at each inner iteration count.
    pub fn sweep_action_iterations(&self, counts: &[usize]) -> Result<Vec<EvalReport>> {
        counts
            .iter()
            .map(|&b| {
                let cfg = TrainConfig {
                    action_iterations: b,
                    ..self.base.clone()
                };
                self.evaluate("iterations", &format!("B={b}"), SelectionStrategy::Rl, &cfg)
            })
            .collect()
    }

    /// RL under each reward.
    pub fn sweep_reward_strategy(&self, strategies: &[RewardStrategy]) -> Result<Vec<EvalReport>> {
        strategies
            .iter()
            .map(|&s| {
                let mut cfg = self.base.clone();
                cfg.reward.strategy = s;
                self.evaluate("reward", s.label(), SelectionStrategy::Rl, &cfg)
            })
            .collect()
    }

    /// RL with and without the position mask.
    pub fn sweep_mask(&self) -> Result<Vec<EvalReport>> {
        [("with-mask", true), ("without-mask", false)]
            .into_iter()
            .map(|(label, use_mask)| {
                let cfg = TrainConfig {
                    use_mask,
                    ..self.base.clone()
                };
                self.evaluate("mask", label, SelectionStrategy::Rl, &cfg)
            })
            .collect()
    }

    /// One sweep at its default variants.
    pub fn run(&self, kind: SweepKind) -> Result<SweepReport> {
        let reports = match kind {
            SweepKind::Selection => self.run_selection_ablation()?,
            SweepKind::Proportion => self.sweep_proportion(&PROPORTIONS)?,
            SweepKind::Reward => self.sweep_reward_strategy(&RewardStrategy::ALL)?,
            SweepKind::Mask => self.sweep_mask()?,
            SweepKind::Iterations => self.sweep_action_iterations(&ACTION_ITERATIONS)?,
        };
        let digests: Vec<&str> = reports.iter().map(|r| r.config_digest.as_str()).collect();
        Ok(SweepReport {
            sweep: kind.name().to_string(),
            config_digest: config_digest(&digests)?,
            reports,
        })
    }
}
