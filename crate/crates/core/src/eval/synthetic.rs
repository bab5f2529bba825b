//! Seeded heterogeneous route: uniform free-flow segments plus a few
//! high-variance hotspots whose delay follows the time of day.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as StdNormal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::ingest::{GeoPoint, GpsFix, Journey, LandmarkSpec, RouteDescription, SegmentGrid, EARTH_RADIUS_M};
use crate::interp::ArrivalMatrix;
use crate::rng;

const DAY_S: f64 = 86_400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticRouteConfig {
    pub n_segments: usize,
    pub spacing: f64,
    /// A stop every this many segments, plus one at each end.
    pub stop_every: usize,
    /// Grid indices whose incoming segment is a hotspot.
    pub hotspot_indices: Vec<usize>,
    pub hotspot_delay_mean: f64,
    pub hotspot_delay_std: f64,
    /// m/s
    pub base_speed: f64,
    /// Traversal noise of ordinary segments, seconds.
    pub base_noise_std: f64,
    /// Amplitude of the daily sinusoid added at hotspots, seconds.
    pub time_of_day_effect: f64,
    /// Phase offset between consecutive hotspots' daily cycles, radians.
    pub phase_step: f64,
    /// Lower clamp on any single traversal, seconds.
    pub min_traversal: f64,
    pub trips_train: usize,
    pub trips_test: usize,
    pub seed: u64,
}

impl Default for SyntheticRouteConfig {
    fn default() -> Self {
        Self {
            n_segments: 50,
            spacing: 100.0,
            stop_every: 10,
            hotspot_indices: vec![7, 16, 24, 33, 42],
            hotspot_delay_mean: 60.0,
            hotspot_delay_std: 5.0,
            base_speed: 4.0,
            base_noise_std: 15.0,
            time_of_day_effect: 50.0,
            phase_step: 1.0,
            min_traversal: 1.0,
            trips_train: 300,
            trips_test: 50,
            seed: 1,
        }
    }
}

impl SyntheticRouteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_segments == 0 || self.stop_every == 0 {
            return Err(Error::Config("n_segments and stop_every must be positive".into()));
        }
        if let Some(h) = self.hotspot_indices.iter().find(|&&h| h == 0 || h > self.n_segments) {
            return Err(Error::Config(format!(
                "hotspot index {h} outside 1..={}",
                self.n_segments
            )));
        }
        if !(self.spacing > 0.0 && self.base_speed > 0.0) {
            return Err(Error::Config("spacing and base_speed must be positive".into()));
        }
        if self.hotspot_delay_std < 0.0 || self.base_noise_std < 0.0 || self.min_traversal < 0.0 {
            return Err(Error::Config("standard deviations and min_traversal must be non-negative".into()));
        }
        if self.trips_train < 2 || self.trips_test < 2 {
            return Err(Error::Config(format!(
                "need at least 2 train and 2 test trips, got {} and {}",
                self.trips_train, self.trips_test
            )));
        }
        Ok(())
    }

    pub fn free_flow(&self) -> f64 {
        self.spacing / self.base_speed
    }

    fn is_hotspot(&self, k: usize) -> bool {
        self.hotspot_indices.contains(&k)
    }

    /// Expected traversal time into each grid point `1..=n_segments`, with the
    /// `min_traversal` clamp assumed inactive.
    pub fn expected_increments(&self) -> Vec<f64> {
        let rectified = rectified_normal_mean(self.hotspot_delay_mean, self.hotspot_delay_std);
        (1..=self.n_segments)
            .map(|k| self.free_flow() + if self.is_hotspot(k) { rectified } else { 0.0 })
            .collect()
    }

    pub fn route(&self) -> RouteDescription {
        let length = self.n_segments as f64 * self.spacing;
        let mut at: Vec<usize> = (0..=self.n_segments).step_by(self.stop_every).collect();
        if at.last() != Some(&self.n_segments) {
            at.push(self.n_segments);
        }
        let stops = at
            .into_iter()
            .map(|k| {
                let d = k as f64 * self.spacing;
                let p = point_at(d);
                LandmarkSpec {
                    cum_distance: d,
                    lat: p.lat,
                    lon: p.lon,
                    line_count: Some(1 + (k / self.stop_every) as u32 % 3),
                }
            })
            .collect();
        RouteDescription {
            route_id: "synthetic".into(),
            route_length: length,
            spacing: self.spacing,
            default_line_count: 1,
            stops,
            intersections: vec![],
        }
    }
}

/// `E[max(0, X)]` for `X ~ N(mean, std)`.
pub fn rectified_normal_mean(mean: f64, std: f64) -> f64 {
    if std == 0.0 {
        return mean.max(0.0);
    }
    let z = mean / std;
    let n = StdNormal::standard();
    mean * n.cdf(z) + std * n.pdf(z)
}

/// Position `d` meters east of the origin along the equator.
fn point_at(d: f64) -> GeoPoint {
    GeoPoint::new(0.0, (d / EARTH_RADIUS_M).to_degrees())
}

fn sample_trips<R: Rng>(cfg: &SyntheticRouteConfig, count: usize, prefix: &str, rng: &mut R) -> Result<ArrivalMatrix<f64>> {
    let base = Normal::new(0.0, cfg.base_noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let delay = Normal::new(cfg.hotspot_delay_mean, cfg.hotspot_delay_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut ids = Vec::with_capacity(count);
    let mut departs = Vec::with_capacity(count);
    let mut rows = Vec::with_capacity(count);
    for v in 0..count {
        let depart: f64 = rng.random_range(0.0..DAY_S);
        let mut t = 0.0;
        let mut row = Vec::with_capacity(cfg.n_segments + 1);
        row.push(0.0);
        let mut hotspot = 0;
        for k in 1..=cfg.n_segments {
            let mut step = cfg.free_flow();
            if cfg.is_hotspot(k) {
                let cycle = 2.0 * PI * depart / DAY_S + cfg.phase_step * hotspot as f64;
                step += delay.sample(rng).max(0.0) + cfg.time_of_day_effect * cycle.sin();
                hotspot += 1;
            } else {
                step += base.sample(rng);
            }
            t += step.max(cfg.min_traversal);
            row.push(t);
        }
        ids.push(format!("{prefix}{v:04}"));
        departs.push(depart);
        rows.push(row);
    }
    let distances = (0..=cfg.n_segments).map(|k| k as f64 * cfg.spacing).collect();
    ArrivalMatrix::new(ids, departs, distances, rows)
}

pub fn generate_synthetic_route(cfg: &SyntheticRouteConfig) -> Result<Dataset> {
    cfg.validate()?;
    let grid = cfg.route().grid()?;
    if grid.len() != cfg.n_segments + 1 {
        return Err(Error::Config(format!(
            "route grid has {} points, expected {}",
            grid.len(),
            cfg.n_segments + 1
        )));
    }
    let mut rng = rng::stream(cfg.seed, rng::GENERATOR);
    let train = sample_trips(cfg, cfg.trips_train, "train-", &mut rng)?;
    let test = sample_trips(cfg, cfg.trips_test, "test-", &mut rng)?;
    Ok(Dataset { grid, train, test })
}

/// GPS journeys whose fixes trace each row of `data` along `grid`, sampled
/// every `interval` seconds (jittered by up to half an interval) with the
/// final fix at the route end.
pub fn journeys_from_arrivals<R: Rng>(
    grid: &SegmentGrid,
    data: &ArrivalMatrix<f64>,
    interval: f64,
    rng: &mut R,
) -> Vec<Journey> {
    let distances = grid.cum_distances();
    (0..data.n_trips())
        .map(|v| {
            let row = data.row(v);
            let start = data.depart_times[v];
            let end = *row.last().unwrap_or(&0.0);
            let mut times = vec![0.0];
            let mut t = interval;
            while t < end {
                let jitter = rng.random_range(-0.5..0.5) * interval;
                times.push((t + jitter).clamp(times[times.len() - 1] + 1e-3, end));
                t += interval;
            }
            if *times.last().unwrap() < end {
                times.push(end);
            }
            let fixes = times
                .into_iter()
                .map(|rel| GpsFix {
                    point: point_at(distance_at(row, &distances, rel)),
                    timestamp: start + rel,
                })
                .collect();
            Journey {
                trip_id: data.trip_ids[v].clone(),
                fixes,
                tau: f64::INFINITY,
            }
        })
        .collect()
}

/// Invert a monotone arrival row: distance reached at relative time `t`.
fn distance_at(row: &[f64], distances: &[f64], t: f64) -> f64 {
    let k = row.partition_point(|&x| x <= t);
    if k == 0 {
        return distances[0];
    }
    if k >= row.len() {
        return distances[distances.len() - 1];
    }
    let (t0, t1) = (row[k - 1], row[k]);
    let w = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
    distances[k - 1] + w * (distances[k] - distances[k - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_route_shape() {
        let cfg = SyntheticRouteConfig {
            trips_train: 5,
            trips_test: 3,
            ..Default::default()
        };
        let r = generate_synthetic_route(&cfg).unwrap();
        assert_eq!(r.grid.len(), 51);
        assert_eq!(r.grid.stop_indices(), vec![0, 10, 20, 30, 40, 50]);
        assert_eq!(r.train.n_trips(), 5);
        assert_eq!(r.test.n_trips(), 3);
        assert!(r.train.rows().all(|row| row.windows(2).all(|w| w[1] > w[0])));
    }

    #[test]
    fn noiseless_rows_equal_free_flow() {
        let cfg = SyntheticRouteConfig {
            hotspot_indices: vec![],
            base_noise_std: 0.0,
            time_of_day_effect: 0.0,
            trips_train: 3,
            trips_test: 2,
            ..Default::default()
        };
        let r = generate_synthetic_route(&cfg).unwrap();
        for row in r.train.rows().chain(r.test.rows()) {
            for (k, &t) in row.iter().enumerate() {
                assert!((t - 25.0 * k as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rectified_mean_limits() {
        assert_eq!(rectified_normal_mean(3.0, 0.0), 3.0);
        assert!((rectified_normal_mean(0.0, 1.0) - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-12);
        assert!((rectified_normal_mean(60.0, 5.0) - 60.0).abs() < 1e-9);
    }

    #[test]
    fn bad_configs_rejected() {
        let one_trip = SyntheticRouteConfig {
            trips_train: 1,
            ..Default::default()
        };
        assert!(one_trip.validate().is_err());
        let outside = SyntheticRouteConfig {
            hotspot_indices: vec![51],
            ..Default::default()
        };
        assert!(outside.validate().is_err());
    }
}
