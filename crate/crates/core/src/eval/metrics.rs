use crate::error::{Error, Result};
use crate::ingest::SegmentGrid;
use crate::interp::ArrivalMatrix;
use crate::lrm::{ConditionalWeights, GaussianEtaModel};

/// A route with its training and test trips.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub grid: SegmentGrid,
    pub train: ArrivalMatrix<f64>,
    pub test: ArrivalMatrix<f64>,
}

/// Every (origin stop, later target stop) pair evaluated for each trip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvaluationPlan {
    /// `(origin, targets)` with targets strictly after the origin.
    pub legs: Vec<(usize, Vec<usize>)>,
}

impl EvaluationPlan {
    /// Origins are all stops with at least one stop after them; targets are
    /// every later stop up to the terminal.
    pub fn stop_to_stop(grid: &SegmentGrid) -> Result<Self> {
        let stops = grid.stop_indices();
        if stops.len() < 2 {
            return Err(Error::Precondition(format!(
                "evaluation needs at least two stops, route has {}",
                stops.len()
            )));
        }
        let legs = (0..stops.len() - 1)
            .map(|k| (stops[k], stops[k + 1..].to_vec()))
            .collect();
        Ok(Self { legs })
    }

    /// `(origin, target)` in evaluation order.
    pub fn triples(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.legs
            .iter()
            .flat_map(|(o, ts)| ts.iter().map(move |&t| (*o, t)))
    }

    /// Triples per trip.
    pub fn len(&self) -> usize {
        self.legs.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Conditional-mean weights for every leg of a plan under one model.
#[derive(Debug, Clone)]
pub struct PlanPredictor {
    indices: Vec<usize>,
    legs: Vec<(usize, Vec<ConditionalWeights<f64>>)>,
}

impl PlanPredictor {
    /// The model must cover every origin and target of `plan`.
    pub fn new(model: &GaussianEtaModel<f64>, plan: &EvaluationPlan) -> Result<Self> {
        let mut prefixes = Vec::with_capacity(plan.legs.len());
        for (origin, targets) in &plan.legs {
            if model.position_of(*origin).is_none() {
                return Err(Error::Precondition(format!("origin {origin} not covered by model")));
            }
            prefixes.push((model.prefix_len(*origin), targets.clone()));
        }
        let weights = model.prefix_weights(&prefixes)?;
        Ok(Self {
            indices: model.indices.clone(),
            legs: prefixes.into_iter().map(|(k, _)| k).zip(weights).collect(),
        })
    }

    /// Predicted arrival times (seconds) for one trip row, in triple order.
    pub fn predict_row(&self, row: &[f64]) -> Vec<f64> {
        let observed: Vec<f64> = self.indices.iter().map(|&i| row[i]).collect();
        self.legs
            .iter()
            .flat_map(|(k, ws)| {
                let obs = &observed[..*k];
                ws.iter().map(move |w| w.predict(obs))
            })
            .collect()
    }

    /// Absolute errors in minutes for one trip, in triple order. Arrival
    /// times are relative to the trip start, so the origin offset cancels.
    pub fn errors_minutes(&self, row: &[f64]) -> Vec<f64> {
        let predictions = self.predict_row(row);
        self.legs
            .iter()
            .flat_map(|(_, ws)| ws.iter().map(|w| row[w.target]))
            .zip(predictions)
            .map(|(truth, pred)| (pred - truth).abs() / 60.0)
            .collect()
    }

    /// MAE in minutes over every trip and triple of `data`.
    pub fn mae(&self, data: &ArrivalMatrix<f64>) -> Result<f64> {
        let mut predicted = Vec::new();
        let mut truth = Vec::new();
        for row in data.rows() {
            predicted.extend(self.predict_row(row).into_iter().map(|p| p / 60.0));
            truth.extend(
                self.legs
                    .iter()
                    .flat_map(|(_, ws)| ws.iter().map(|w| row[w.target] / 60.0)),
            );
        }
        mae(&predicted, &truth)
    }
}

/// Mean absolute difference.
pub fn mae(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(Error::Precondition(format!(
            "mae needs equal non-empty lengths, got {} and {}",
            predicted.len(),
            truth.len()
        )));
    }
    let total: f64 = predicted.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum();
    Ok(total / predicted.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[10.0, 12.0], &[11.0, 15.0]).unwrap(), 2.0);
        assert_eq!(mae(&[11.0, 15.0], &[10.0, 12.0]).unwrap(), 2.0);
        assert_eq!(mae(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mae(&[], &[]).is_err());
    }
}
