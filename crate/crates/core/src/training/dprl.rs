use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::reward::RewardConfig;
use super::sgd::{sgd_step, SgdConfig, SgdState};
use crate::error::{Error, Result};
use crate::eval::{EvaluationPlan, PlanPredictor};
use crate::features::{
    assemble_state, feature_matrix, FeatureNormalizer, FeatureRow, RlState, SelectionState, FEATURE_DIM,
};
use crate::ingest::SegmentGrid;
use crate::interp::ArrivalMatrix;
use crate::lrm::{estimate_moments, GaussianEtaModel, LrmCheckpoint, CHECKPOINT_VERSION};
use crate::policy::{apply_actions, backward, compute_bounds, sample_actions, EpisodeStep, PolicyParams, LAYER_NAMES};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(flatten)]
    pub sgd: SgdConfig,
    /// Inner action iterations per trip, B.
    pub action_iterations: usize,
    /// M as a fraction of the interpolation points.
    pub selection_fraction: f64,
    pub use_mask: bool,
    /// Folds for the cross-fitted training MAE in the convergence log; 0 or 1
    /// scores in-sample.
    pub folds: usize,
    pub seed: u64,
    pub reward: RewardConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 16,
            sgd: SgdConfig::default(),
            action_iterations: 2,
            selection_fraction: 2.0 / 3.0,
            use_mask: true,
            folds: 5,
            seed: 0,
            reward: RewardConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.action_iterations == 0 {
            return Err(Error::Config("batch_size and action_iterations must be positive".into()));
        }
        if !(self.selection_fraction > 0.0 && self.selection_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "selection_fraction must lie in (0, 1], got {}",
                self.selection_fraction
            )));
        }
        let s = &self.sgd;
        if !(s.lr > 0.0 && s.momentum >= 0.0 && s.weight_decay >= 0.0 && s.decay_factor > 0.0) {
            return Err(Error::Config("optimizer settings must be positive".into()));
        }
        self.reward.validate()
    }

    /// Number of selected points for `n_interp` candidates.
    pub fn selection_size(&self, n_interp: usize) -> Result<usize> {
        let m = (self.selection_fraction * n_interp as f64 + 1e-9).floor() as usize;
        if m == 0 {
            return Err(Error::Precondition(format!(
                "selection fraction {} of {n_interp} interpolation points selects nothing",
                self.selection_fraction
            )));
        }
        Ok(m.min(n_interp))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub reward_mean: f64,
    pub train_mae: f64,
    pub selected_indices_digest: String,
}

pub fn write_convergence_log<W: Write>(records: &[EpochRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record(["epoch", "reward_mean", "train_mae", "selected_indices_digest"])?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<convergence log>", e))?;
    Ok(())
}

/// Lines starting with `#` are skipped.
pub fn read_convergence_log<R: std::io::Read>(input: R) -> Result<Vec<EpochRecord>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Short stable fingerprint of a selection.
pub fn selection_digest(indices: &[usize]) -> String {
    let text = indices.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",");
    hex::encode(&Sha256::digest(text.as_bytes())[..8])
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams<f64>,
    /// Moments over landmarks plus the final selection, fitted on all
    /// training trips.
    pub model: GaussianEtaModel<f64>,
    pub selection: Vec<usize>,
    pub normalizer: FeatureNormalizer<f64>,
    pub log: Vec<EpochRecord>,
}

/// Everything the loop needs that does not change between epochs.
struct Setup<'a> {
    grid: &'a SegmentGrid,
    train: &'a ArrivalMatrix<f64>,
    plan: EvaluationPlan,
    landmarks: Vec<usize>,
    interp: Vec<usize>,
    full: GaussianEtaModel<f64>,
    /// Rows centered on the full-sample mean.
    centered: Vec<Vec<f64>>,
    /// `Σ_v x_v x_vᵀ` of the centered rows.
    scatter: Vec<f64>,
    /// Models fitted without each fold, for the logged training MAE.
    fold_of: Vec<usize>,
    fold_models: Vec<GaussianEtaModel<f64>>,
    features: Vec<Vec<FeatureRow<f64>>>,
    mean_features: Vec<FeatureRow<f64>>,
    reward: &'a RewardConfig,
}

impl Setup<'_> {
    /// Full-grid moments of the training trips minus `excluded`. Falls back
    /// to all trips when fewer than two would remain.
    fn held_out(&self, excluded: &[usize]) -> Result<GaussianEtaModel<f64>> {
        let g = self.grid.len();
        let v = self.train.n_trips() - excluded.len();
        if v < 2 || excluded.is_empty() {
            return Ok(self.full.clone());
        }
        let mut shift = vec![0.0; g];
        let mut scatter = self.scatter.clone();
        for &e in excluded {
            let x = &self.centered[e];
            for a in 0..g {
                shift[a] -= x[a];
                for b in a..g {
                    scatter[a * g + b] -= x[a] * x[b];
                }
            }
        }
        let inv = 1.0 / v as f64;
        shift.iter_mut().for_each(|s| *s *= inv);
        let mut sigma = vec![0.0; g * g];
        for a in 0..g {
            for b in a..g {
                let s = scatter[a * g + b] * inv - shift[a] * shift[b];
                sigma[a * g + b] = s;
                sigma[b * g + a] = s;
            }
        }
        let mu = self.full.mu.iter().zip(&shift).map(|(m, s)| m + s).collect();
        GaussianEtaModel::from_moments(self.full.indices.clone(), mu, sigma)
    }

    fn model_over(&self, base: &GaussianEtaModel<f64>, selection: &[usize]) -> Result<GaussianEtaModel<f64>> {
        let mut keep = self.landmarks.clone();
        keep.extend_from_slice(selection);
        keep.sort_unstable();
        base.restrict(&keep)
    }

    fn predictor(&self, base: &GaussianEtaModel<f64>, selection: &[usize]) -> Result<PlanPredictor> {
        PlanPredictor::new(&self.model_over(base, selection)?, &self.plan)
    }

    fn trip_errors(&self, v: usize, predictor: &PlanPredictor) -> Vec<f64> {
        predictor.errors_minutes(self.train.row(v))
    }

    /// Mean per-trip reward over `trips`.
    fn reward_on(&self, trips: &[usize], predictor: &PlanPredictor) -> Result<f64> {
        let mut total = 0.0;
        for &v in trips {
            total += self
                .reward
                .reward(&self.train.trip_ids[v], &self.plan, &self.trip_errors(v, predictor))?;
        }
        Ok(total / trips.len().max(1) as f64)
    }

    /// Cross-fitted MAE of `selection` over all training trips.
    fn selection_mae(&self, selection: &[usize]) -> Result<f64> {
        let predictors = self
            .fold_models
            .iter()
            .map(|m| self.predictor(m, selection))
            .collect::<Result<Vec<_>>>()?;
        let mut total = 0.0;
        let mut count = 0usize;
        for v in 0..self.train.n_trips() {
            let e = self.trip_errors(v, &predictors[self.fold_of[v]]);
            count += e.len();
            total += e.iter().sum::<f64>();
        }
        Ok(total / count.max(1) as f64)
    }

    fn state(&self, rows: &[FeatureRow<f64>], selection: &[usize]) -> Result<RlState<f64>> {
        assemble_state(rows, &SelectionState::from_indices(&self.interp, selection.to_vec())?)
    }

    fn step(&self, selection: &[usize], actions: &[usize]) -> Vec<usize> {
        let bounds = compute_bounds(selection, self.grid.last_index());
        apply_actions(selection, actions, &bounds, &self.landmarks)
    }
}

fn fold_assignment(v: usize, folds: usize) -> (usize, Vec<usize>) {
    // Too few trips to hold any out: score in-sample.
    let k = if folds >= 2 && v >= 4 { folds.min(v / 2) } else { 1 };
    (k, (0..v).map(|i| i % k).collect())
}

fn build_setup<'a>(
    train: &'a ArrivalMatrix<f64>,
    grid: &'a SegmentGrid,
    cfg: &'a TrainConfig,
) -> Result<(Setup<'a>, FeatureNormalizer<f64>)> {
    if train.n_trips() < 2 {
        return Err(Error::InsufficientData(format!(
            "training needs at least 2 trips, got {}",
            train.n_trips()
        )));
    }
    if train.n_segments() != grid.len() {
        return Err(Error::Shape(format!(
            "arrival matrix has {} columns, grid has {} points",
            train.n_segments(),
            grid.len()
        )));
    }
    let plan = EvaluationPlan::stop_to_stop(grid)?;
    let g = grid.len();
    let all: Vec<usize> = (0..g).collect();
    let full = estimate_moments(train, &all)?;
    let centered: Vec<Vec<f64>> = train
        .rows()
        .map(|row| row.iter().zip(&full.mu).map(|(x, m)| x - m).collect())
        .collect();
    let mut scatter = vec![0.0; g * g];
    for x in &centered {
        for a in 0..g {
            for b in a..g {
                scatter[a * g + b] += x[a] * x[b];
            }
        }
    }

    let raw: Vec<Vec<FeatureRow<f64>>> = (0..train.n_trips())
        .map(|v| feature_matrix(grid, train.depart_times[v], train.row(v)))
        .collect::<Result<_>>()?;
    let normalizer = FeatureNormalizer::fit(raw.iter().flatten());
    let features: Vec<Vec<FeatureRow<f64>>> = raw.iter().map(|r| normalizer.apply_all(r)).collect();
    let inv = 1.0 / features.len() as f64;
    let mut mean_features = vec![[0.0; FEATURE_DIM]; g];
    for rows in &features {
        for (acc, row) in mean_features.iter_mut().zip(rows) {
            for d in 0..FEATURE_DIM {
                acc[d] += row[d] * inv;
            }
        }
    }
    let (k, fold_of) = fold_assignment(train.n_trips(), cfg.folds);
    let mut setup = Setup {
        grid,
        train,
        plan,
        landmarks: grid.landmark_indices(),
        interp: grid.interp_indices(),
        full,
        centered,
        scatter,
        fold_of,
        fold_models: Vec::new(),
        features,
        mean_features,
        reward: &cfg.reward,
    };
    setup.fold_models = (0..k)
        .map(|f| {
            let members: Vec<usize> = (0..train.n_trips()).filter(|&v| k > 1 && setup.fold_of[v] == f).collect();
            setup.held_out(&members)
        })
        .collect::<Result<_>>()?;
    Ok((setup, normalizer))
}

/// Random M-subset of the interpolation points, sorted.
pub fn random_selection<R: rand::Rng + ?Sized>(interp: &[usize], m: usize, rng: &mut R) -> Vec<usize> {
    let mut sel: Vec<usize> = interp.choose_multiple(rng, m).copied().collect();
    sel.sort_unstable();
    sel
}

/// Standardize credits within one update so the step size does not depend on
/// the reward's scale.
fn standardize(steps: &mut [EpisodeStep<f64>]) -> bool {
    let n = steps.len() as f64;
    let mean = steps.iter().map(|s| s.reward).sum::<f64>() / n;
    let var = steps.iter().map(|s| (s.reward - mean).powi(2)).sum::<f64>() / n;
    if var <= 1e-24 {
        return false;
    }
    let sd = var.sqrt();
    for s in steps.iter_mut() {
        s.reward = (s.reward - mean) / sd;
    }
    true
}

/// Alternate policy-gradient updates of the selection network with refits of
/// the arrival-time model on the selected points.
pub fn dprl_train(train: &ArrivalMatrix<f64>, grid: &SegmentGrid, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (setup, normalizer) = build_setup(train, grid, cfg)?;
    let n_interp = setup.interp.len();
    let m = cfg.selection_size(n_interp)?;

    let mut init_rng = rng::stream(cfg.seed, rng::SELECTION_INIT);
    let mut selection = random_selection(&setup.interp, m, &mut init_rng);
    let mut params = PolicyParams::init(n_interp, m, &mut rng::stream(cfg.seed, rng::POLICY_INIT));
    params.use_mask = cfg.use_mask;
    let mut opt = SgdState::new(&params);
    let mut sampling = rng::stream(cfg.seed, rng::SAMPLING);
    let mut batching = rng::stream(cfg.seed, rng::BATCHING);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.n_trips()).collect();
        order.shuffle(&mut batching);
        let mut reward_total = 0.0;
        let mut reward_count = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            // Candidates are scored on the batch with moments that never saw it.
            let held = setup.held_out(batch)?;
            let mut scores: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
            let mut score = |sel: &[usize]| -> Result<f64> {
                if let Some(&r) = scores.get(sel) {
                    return Ok(r);
                }
                let r = setup.reward_on(batch, &setup.predictor(&held, sel)?)?;
                scores.insert(sel.to_vec(), r);
                Ok(r)
            };
            let start = score(&selection)?;
            let mut episode = Vec::with_capacity(batch.len() * cfg.action_iterations);
            for &v in batch {
                let mut prev = start;
                let mut current = selection.clone();
                for _ in 0..cfg.action_iterations {
                    let state = setup.state(&setup.features[v], &current)?;
                    let probs = params.forward(&state)?;
                    let actions = sample_actions(&probs, &mut sampling);
                    let next = setup.step(&current, &actions);
                    let r = score(&next)?;
                    reward_total += r;
                    reward_count += 1;
                    episode.push(EpisodeStep {
                        state,
                        actions,
                        reward: r - prev,
                    });
                    prev = r;
                    current = next;
                }
            }
            if !standardize(&mut episode) {
                continue;
            }
            let grad = backward(&params, &episode).map_err(|e| Error::Diverged {
                epoch,
                message: e.to_string(),
            })?;
            sgd_step(&mut params, &grad, &mut opt, &cfg.sgd, epoch)?;
        }

        for _ in 0..cfg.action_iterations {
            let state = setup.state(&setup.mean_features, &selection)?;
            let actions = params.forward(&state)?.greedy();
            selection = setup.step(&selection, &actions);
        }
        let train_mae = setup.selection_mae(&selection)?;
        if !train_mae.is_finite() {
            return Err(Error::Diverged {
                epoch,
                message: "training MAE is not finite".into(),
            });
        }
        let reward_mean = reward_total / reward_count.max(1) as f64;
        log::debug!("epoch {epoch}: reward {reward_mean:.5}, train MAE {train_mae:.4} min");
        log.push(EpochRecord {
            epoch,
            reward_mean,
            train_mae,
            selected_indices_digest: selection_digest(&selection),
        });
    }

    let model = setup.model_over(&setup.full, &selection)?;
    Ok(TrainOutcome {
        params,
        model,
        selection,
        normalizer,
        log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Serialized network, normalization statistics, selection and arrival-time
/// model of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub version: u32,
    pub config_digest: String,
    pub n_interp: usize,
    pub m: usize,
    pub use_mask: bool,
    pub layers: Vec<LayerWeights>,
    pub normalizer: FeatureNormalizer<f64>,
    pub selection: Vec<usize>,
    pub lrm: LrmCheckpoint,
}

impl PolicyCheckpoint {
    pub fn from_outcome(outcome: &TrainOutcome, config_digest: &str) -> Self {
        let p = &outcome.params;
        let layers = LAYER_NAMES
            .iter()
            .zip(p.shapes())
            .zip(p.tensors())
            .map(|((name, shape), values)| LayerWeights {
                name: name.to_string(),
                shape,
                values: values.clone(),
            })
            .collect();
        Self {
            version: CHECKPOINT_VERSION,
            config_digest: config_digest.to_string(),
            n_interp: p.n_interp,
            m: p.m,
            use_mask: p.use_mask,
            layers,
            normalizer: outcome.normalizer.clone(),
            selection: outcome.selection.clone(),
            lrm: LrmCheckpoint::from(&outcome.model),
        }
    }

    pub fn params(&self) -> Result<PolicyParams<f64>> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let mut p = PolicyParams::zeros(self.n_interp, self.m);
        p.use_mask = self.use_mask;
        let shapes = p.shapes();
        if self.layers.len() != LAYER_NAMES.len() {
            return Err(Error::Shape(format!("checkpoint has {} layers", self.layers.len())));
        }
        for ((layer, dst), (name, shape)) in self
            .layers
            .iter()
            .zip(p.tensors_mut())
            .zip(LAYER_NAMES.iter().zip(shapes))
        {
            if layer.name != *name || layer.shape != shape || layer.values.len() != dst.len() {
                return Err(Error::Shape(format!("checkpoint layer {} does not match {name}", layer.name)));
            }
            dst.copy_from_slice(&layer.values);
        }
        Ok(p)
    }

    pub fn model(&self) -> Result<GaussianEtaModel<f64>> {
        GaussianEtaModel::try_from(self.lrm.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
