//! Gaussian conditional-mean arrival-time predictor.
//!
//! Arrival times at the grid points of a route are modelled as jointly
//! Gaussian. Given the times observed up to some point, the prediction at a
//! later point is the conditional mean
//! `μ_t + σ_{o,t}ᵀ Σ_oo⁻¹ (t_o − μ_o)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::ArrivalMatrix;
use crate::linalg::Cholesky;
use crate::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Relative diagonal regularization, scaled by the mean variance.
const JITTER_SCALE: f64 = 1e-6;
/// Absolute floor (s²) when every variance is zero.
const JITTER_FLOOR: f64 = 1e-6;
const JITTER_ESCALATIONS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianEtaModel<T> {
    /// Grid indices covered by the model, strictly increasing.
    pub indices: Vec<usize>,
    /// Mean arrival time per index, seconds.
    pub mu: Vec<T>,
    /// Population covariance, row-major `indices.len()²`, seconds².
    pub sigma: Vec<T>,
    /// Diagonal regularization actually applied, seconds².
    pub jitter: T,
}

/// Sum after sorting so that the result does not depend on input order.
fn order_free_sum<T: Scalar>(values: &mut [T]) -> T {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    values.iter().copied().sum()
}

fn base_jitter<T: Scalar>(sigma: &[T], n: usize) -> T {
    let trace: T = (0..n).map(|i| sigma[i * n + i]).sum();
    let base = T::of(JITTER_SCALE) * trace / T::of_usize(n.max(1));
    if base > T::zero() && base.is_finite() {
        base
    } else {
        T::of(JITTER_FLOOR)
    }
}

fn jittered<T: Scalar>(sigma: &[T], n: usize, jitter: T) -> Vec<T> {
    let mut a = sigma.to_vec();
    for i in 0..n {
        a[i * n + i] += jitter;
    }
    a
}

/// Smallest jitter in the escalation ladder under which `sigma` factors.
fn settle_jitter<T: Scalar>(sigma: &[T], n: usize) -> Result<T> {
    let mut jitter = base_jitter(sigma, n);
    for _ in 0..=JITTER_ESCALATIONS {
        if Cholesky::factor(&jittered(sigma, n, jitter), n).is_some() {
            return Ok(jitter);
        }
        jitter *= T::of(10.0);
    }
    Err(Error::SingularModel {
        jitter: (jitter / T::of(10.0)).to_f64_lossy(),
    })
}

/// Sample moments over the given grid indices, with population (1/V)
/// normalization.
pub fn estimate_moments<T: Scalar>(
    arrivals: &ArrivalMatrix<T>,
    indices: &[usize],
) -> Result<GaussianEtaModel<T>> {
    let v = arrivals.n_trips();
    if v < 2 {
        return Err(Error::InsufficientData(format!(
            "moment estimation needs at least 2 trips, got {v}"
        )));
    }
    if indices.is_empty() || !indices.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Precondition("indices must be non-empty and strictly increasing".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= arrivals.n_segments()) {
        return Err(Error::Precondition(format!(
            "index {bad} out of range for {} segments",
            arrivals.n_segments()
        )));
    }
    for (row, trip) in arrivals.rows().zip(&arrivals.trip_ids) {
        if let Some(&seg) = indices.iter().find(|&&i| !row[i].is_finite()) {
            return Err(Error::NonFiniteData {
                trip: trip.clone(),
                segment: seg,
            });
        }
    }

    let n = indices.len();
    let v_t = T::of_usize(v);
    let mut column = vec![T::zero(); v];
    let mu: Vec<T> = indices
        .iter()
        .map(|&i| {
            for (slot, row) in column.iter_mut().zip(arrivals.rows()) {
                *slot = row[i];
            }
            order_free_sum(&mut column) / v_t
        })
        .collect();
    let centered: Vec<Vec<T>> = arrivals
        .rows()
        .map(|row| indices.iter().zip(&mu).map(|(&i, &m)| row[i] - m).collect())
        .collect();
    let mut sigma = vec![T::zero(); n * n];
    for a in 0..n {
        for b in a..n {
            for (slot, c) in column.iter_mut().zip(&centered) {
                *slot = c[a] * c[b];
            }
            let s = order_free_sum(&mut column) / v_t;
            sigma[a * n + b] = s;
            sigma[b * n + a] = s;
        }
    }
    let jitter = settle_jitter(&sigma, n)?;
    Ok(GaussianEtaModel {
        indices: indices.to_vec(),
        mu,
        sigma,
        jitter,
    })
}

/// Precomputed conditional-mean weights for a fixed observed prefix and target.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalWeights<T> {
    pub target: usize,
    pub mu_target: T,
    /// Means of the observed prefix.
    pub mu_observed: Vec<T>,
    /// `Σ_oo⁻¹ σ_{o,t}`.
    pub weights: Vec<T>,
}

impl<T: Scalar> ConditionalWeights<T> {
    pub fn predict(&self, observed: &[T]) -> T {
        debug_assert_eq!(observed.len(), self.weights.len());
        let mut out = self.mu_target;
        for ((w, o), m) in self.weights.iter().zip(observed).zip(&self.mu_observed) {
            out += *w * (*o - *m);
        }
        out
    }
}

impl<T: Scalar> GaussianEtaModel<T> {
    /// Model from externally computed moments; the jitter is settled the same
    /// way as in [`estimate_moments`].
    pub fn from_moments(indices: Vec<usize>, mu: Vec<T>, sigma: Vec<T>) -> Result<Self> {
        let n = indices.len();
        if n == 0 || mu.len() != n || sigma.len() != n * n {
            return Err(Error::Shape(format!(
                "{n} indices, {} means, {} covariance entries",
                mu.len(),
                sigma.len()
            )));
        }
        if !indices.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Precondition("indices must be strictly increasing".into()));
        }
        let jitter = settle_jitter(&sigma, n)?;
        Ok(Self {
            indices,
            mu,
            sigma,
            jitter,
        })
    }

    pub fn dim(&self) -> usize {
        self.indices.len()
    }

    pub fn sigma_at(&self, a: usize, b: usize) -> T {
        self.sigma[a * self.dim() + b]
    }

    pub fn position_of(&self, index: usize) -> Option<usize> {
        self.indices.binary_search(&index).ok()
    }

    /// Number of model indices at or before grid index `last`.
    pub fn prefix_len(&self, last: usize) -> usize {
        self.indices.partition_point(|&i| i <= last)
    }

    fn observed_factor(&self, k: usize) -> Result<Cholesky<T>> {
        let n = self.dim();
        let mut block = vec![T::zero(); k * k];
        for a in 0..k {
            for b in 0..k {
                block[a * k + b] = self.sigma[a * n + b];
            }
        }
        let mut jitter = self.jitter;
        for _ in 0..=JITTER_ESCALATIONS {
            if let Some(ch) = Cholesky::factor(&jittered(&block, k, jitter), k) {
                return Ok(ch);
            }
            jitter *= T::of(10.0);
        }
        Err(Error::SingularModel {
            jitter: (jitter / T::of(10.0)).to_f64_lossy(),
        })
    }

    /// Weights for predicting each of `targets` (grid indices) from the first
    /// `k` model indices.
    pub fn conditional_weights(
        &self,
        k: usize,
        targets: &[usize],
    ) -> Result<Vec<ConditionalWeights<T>>> {
        if k > self.dim() {
            return Err(Error::Precondition(format!(
                "observed prefix of {k} exceeds model dimension {}",
                self.dim()
            )));
        }
        let positions = targets
            .iter()
            .map(|&t| match self.position_of(t) {
                Some(p) if p >= k => Ok(p),
                Some(_) => Err(Error::Precondition(format!(
                    "target {t} is not after the observed prefix"
                ))),
                None => Err(Error::Precondition(format!("target {t} not covered by model"))),
            })
            .collect::<Result<Vec<usize>>>()?;
        let factor = if k > 0 { Some(self.observed_factor(k)?) } else { None };
        let mu_observed = self.mu[..k].to_vec();
        Ok(targets
            .iter()
            .zip(positions)
            .map(|(&target, p)| {
                let cross: Vec<T> = (0..k).map(|a| self.sigma_at(a, p)).collect();
                let weights = factor.as_ref().map(|f| f.solve(&cross)).unwrap_or_default();
                ConditionalWeights {
                    target,
                    mu_target: self.mu[p],
                    mu_observed: mu_observed.clone(),
                    weights,
                }
            })
            .collect())
    }

    /// [`conditional_weights`](Self::conditional_weights) for several
    /// `(k, targets)` legs at once. One factorization of the longest prefix
    /// serves every leg when it succeeds at the model's jitter; the leading
    /// blocks of that factor are exactly the shorter prefixes' factors.
    pub fn prefix_weights(&self, legs: &[(usize, Vec<usize>)]) -> Result<Vec<Vec<ConditionalWeights<T>>>> {
        let k_max = legs.iter().map(|(k, _)| *k).max().unwrap_or(0);
        if k_max > self.dim() {
            return Err(Error::Precondition(format!(
                "observed prefix of {k_max} exceeds model dimension {}",
                self.dim()
            )));
        }
        let n = self.dim();
        let mut block = vec![T::zero(); k_max * k_max];
        for a in 0..k_max {
            for b in 0..k_max {
                block[a * k_max + b] = self.sigma[a * n + b];
            }
        }
        let Some(factor) = Cholesky::factor(&jittered(&block, k_max, self.jitter), k_max) else {
            return legs.iter().map(|(k, t)| self.conditional_weights(*k, t)).collect();
        };
        legs.iter()
            .map(|(k, targets)| {
                let k = *k;
                targets
                    .iter()
                    .map(|&target| {
                        let p = match self.position_of(target) {
                            Some(p) if p >= k => p,
                            Some(_) => {
                                return Err(Error::Precondition(format!(
                                    "target {target} is not after the observed prefix"
                                )))
                            }
                            None => return Err(Error::Precondition(format!("target {target} not covered by model"))),
                        };
                        let cross: Vec<T> = (0..k).map(|a| self.sigma_at(a, p)).collect();
                        Ok(ConditionalWeights {
                            target,
                            mu_target: self.mu[p],
                            mu_observed: self.mu[..k].to_vec(),
                            weights: if k > 0 { factor.solve_leading(k, &cross) } else { Vec::new() },
                        })
                    })
                    .collect()
            })
            .collect()
    }

    /// Conditional-mean arrival time at grid index `target`, given the times
    /// observed at the first `observed.len()` model indices.
    pub fn predict_eta(&self, observed: &[T], target: usize) -> Result<T> {
        let w = self.conditional_weights(observed.len(), &[target])?;
        Ok(w[0].predict(observed))
    }

    /// Marginal over `keep`, which must be a subset of `indices`.
    pub fn restrict(&self, keep: &[usize]) -> Result<Self> {
        if keep.is_empty() {
            return Err(Error::Precondition("restriction to an empty index set".into()));
        }
        let mut keep = keep.to_vec();
        keep.sort_unstable();
        keep.dedup();
        let pos = keep
            .iter()
            .map(|&i| {
                self.position_of(i)
                    .ok_or_else(|| Error::Precondition(format!("index {i} not in model")))
            })
            .collect::<Result<Vec<usize>>>()?;
        let n = pos.len();
        let mut sigma = vec![T::zero(); n * n];
        for (a, &pa) in pos.iter().enumerate() {
            for (b, &pb) in pos.iter().enumerate() {
                sigma[a * n + b] = self.sigma_at(pa, pb);
            }
        }
        let jitter = settle_jitter(&sigma, n)?;
        Ok(Self {
            indices: keep,
            mu: pos.iter().map(|&p| self.mu[p]).collect(),
            sigma,
            jitter,
        })
    }
}

pub fn restrict_model<T: Scalar>(
    model: &GaussianEtaModel<T>,
    keep: &[usize],
) -> Result<GaussianEtaModel<T>> {
    model.restrict(keep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrmCheckpoint {
    pub version: u32,
    pub indices: Vec<usize>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub jitter: f64,
}

impl From<&GaussianEtaModel<f64>> for LrmCheckpoint {
    fn from(m: &GaussianEtaModel<f64>) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            indices: m.indices.clone(),
            mu: m.mu.clone(),
            sigma: m.sigma.clone(),
            jitter: m.jitter,
        }
    }
}

impl TryFrom<LrmCheckpoint> for GaussianEtaModel<f64> {
    type Error = Error;

    fn try_from(c: LrmCheckpoint) -> Result<Self> {
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported LRM checkpoint version {}", c.version)));
        }
        let n = c.indices.len();
        if c.mu.len() != n || c.sigma.len() != n * n {
            return Err(Error::Shape("LRM checkpoint dimensions disagree".into()));
        }
        Ok(Self {
            indices: c.indices,
            mu: c.mu,
            sigma: c.sigma,
            jitter: c.jitter,
        })
    }
}
