use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{EvaluationPlan, PlanPredictor};
use crate::ingest::SegmentGrid;
use crate::interp::ArrivalMatrix;
use crate::lrm::estimate_moments;

/// IER floor in minutes.
pub const DEFAULT_EPSILON: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RewardStrategy {
    Bcr,
    Ier,
    Atr,
}

impl RewardStrategy {
    pub const ALL: [RewardStrategy; 3] = [RewardStrategy::Bcr, RewardStrategy::Ier, RewardStrategy::Atr];

    pub fn label(self) -> &'static str {
        match self {
            RewardStrategy::Bcr => "BCR",
            RewardStrategy::Ier => "IER",
            RewardStrategy::Atr => "ATR",
        }
    }
}

/// Fraction of positions where the error beats the benchmark.
pub fn reward_bcr(errors: &[f64], benchmark: &[f64]) -> Result<f64> {
    if errors.len() != benchmark.len() || errors.is_empty() {
        return Err(Error::Precondition(format!(
            "bcr needs equal non-empty lengths, got {} errors and {} benchmarks",
            errors.len(),
            benchmark.len()
        )));
    }
    let wins = errors.iter().zip(benchmark).filter(|(e, b)| e < b).count();
    Ok(wins as f64 / errors.len() as f64)
}

/// Mean inverse error, floored by `epsilon`.
pub fn reward_ier(errors: &[f64], epsilon: f64) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    errors.iter().map(|e| 1.0 / (e + epsilon)).sum::<f64>() / errors.len() as f64
}

/// Negated mean absolute error.
pub fn reward_atr(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    -errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len() as f64
}

/// Reference errors in minutes keyed by (trip, origin index, horizon), where
/// the horizon is the target index minus the origin index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchmarkTable {
    pub errors: BTreeMap<(String, usize, usize), f64>,
}

#[derive(Serialize, Deserialize)]
struct BenchmarkRecord {
    trip_id: String,
    origin_index: usize,
    horizon: usize,
    error_minutes: f64,
}

impl BenchmarkTable {
    /// Errors of `predictor` on every trip of `data`.
    pub fn from_predictor(predictor: &PlanPredictor, plan: &EvaluationPlan, data: &ArrivalMatrix<f64>) -> Self {
        let mut errors = BTreeMap::new();
        for (v, row) in data.rows().enumerate() {
            for ((o, t), e) in plan.triples().zip(predictor.errors_minutes(row)) {
                errors.insert((data.trip_ids[v].clone(), o, t - o), e);
            }
        }
        Self { errors }
    }

    /// Errors of the every-segment model, each trip scored by moments fitted
    /// without its fold (`v % folds`); in-sample when `folds < 2`.
    pub fn all_segments(train: &ArrivalMatrix<f64>, grid: &SegmentGrid, folds: usize) -> Result<Self> {
        let plan = EvaluationPlan::stop_to_stop(grid)?;
        let all: Vec<usize> = (0..grid.len()).collect();
        let v = train.n_trips();
        let k = if folds >= 2 && v >= 4 { folds.min(v / 2) } else { 1 };
        let mut errors = BTreeMap::new();
        for f in 0..k {
            let members: Vec<usize> = (0..v).filter(|i| i % k == f).collect();
            let fit_on: Vec<usize> = (0..v).filter(|i| k == 1 || i % k != f).collect();
            let model = estimate_moments(&train.select_trips(&fit_on)?, &all)?;
            let predictor = PlanPredictor::new(&model, &plan)?;
            let part = Self::from_predictor(&predictor, &plan, &train.select_trips(&members)?);
            errors.extend(part.errors);
        }
        Ok(Self { errors })
    }

    /// Benchmark errors for one trip in triple order.
    pub fn for_trip(&self, trip_id: &str, plan: &EvaluationPlan) -> Result<Vec<f64>> {
        plan.triples()
            .map(|(o, t)| {
                self.errors
                    .get(&(trip_id.to_string(), o, t - o))
                    .copied()
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "benchmark has no entry for trip {trip_id}, origin {o}, horizon {}",
                            t - o
                        ))
                    })
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for ((trip_id, origin_index, horizon), &error_minutes) in &self.errors {
            w.serialize(BenchmarkRecord {
                trip_id: trip_id.clone(),
                origin_index: *origin_index,
                horizon: *horizon,
                error_minutes,
            })?;
        }
        w.flush().map_err(|e| Error::io("<benchmark>", e))?;
        Ok(())
    }

    /// Lines starting with `#` are skipped.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let mut errors = BTreeMap::new();
        for rec in r.deserialize() {
            let rec: BenchmarkRecord = rec?;
            if !rec.error_minutes.is_finite() || rec.error_minutes < 0.0 {
                return Err(Error::Config(format!(
                    "benchmark error for trip {} must be finite and non-negative",
                    rec.trip_id
                )));
            }
            errors.insert((rec.trip_id, rec.origin_index, rec.horizon), rec.error_minutes);
        }
        Ok(Self { errors })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub strategy: RewardStrategy,
    /// IER floor, minutes.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(skip)]
    pub benchmark: Option<BenchmarkTable>,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            strategy: RewardStrategy::Atr,
            epsilon: DEFAULT_EPSILON,
            benchmark: None,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.strategy == RewardStrategy::Bcr && self.benchmark.is_none() {
            return Err(Error::Config("BCR reward requires a benchmark error table".into()));
        }
        Ok(())
    }

    /// Reward of one trip's error vector.
    pub fn reward(&self, trip_id: &str, plan: &EvaluationPlan, errors: &[f64]) -> Result<f64> {
        match self.strategy {
            RewardStrategy::Atr => Ok(reward_atr(errors)),
            RewardStrategy::Ier => Ok(reward_ier(errors, self.epsilon)),
            RewardStrategy::Bcr => {
                let table = self
                    .benchmark
                    .as_ref()
                    .ok_or_else(|| Error::Config("BCR reward requires a benchmark error table".into()))?;
                reward_bcr(errors, &table.for_trip(trip_id, plan)?)
            }
        }
    }
}
