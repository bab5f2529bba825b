//! Densify sparse distance–time pairs onto the segment grid.

mod isotonic;
mod kriging;
mod matrix;

pub use isotonic::{enforce_monotone, is_non_decreasing};
pub use kriging::{
    fit_variogram, krige_arrival_times, linear_arrival_times, linear_interpolate, VariogramFamily,
    VariogramModel,
};
pub use matrix::ArrivalMatrix;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::{cumulative_distance, Journey, SegmentGrid};
use crate::Scalar;

/// Drop repeated distances (a stationary bus), keeping the earliest time.
pub fn collapse_repeated_distances<T: Scalar>(pairs: &[(T, T)]) -> Vec<(T, T)> {
    let mut out: Vec<(T, T)> = Vec::with_capacity(pairs.len());
    for &p in pairs {
        match out.last() {
            Some(last) if p.0 <= last.0 => {}
            _ => out.push(p),
        }
    }
    out
}

/// Kriging-interpolated, monotone arrival-time row for one journey.
pub fn interpolate_journey<T: Scalar>(journey: &Journey, grid: &SegmentGrid) -> Result<Vec<T>> {
    let raw: Vec<(T, T)> = cumulative_distance(journey)
        .into_iter()
        .map(|(d, t)| (T::of(d), T::of(t)))
        .collect();
    let pairs = collapse_repeated_distances(&raw);
    let at: Vec<T> = grid.segments.iter().map(|s| T::of(s.cum_distance)).collect();
    let spacing = T::of(grid.spacing);
    let row = match fit_variogram(&pairs, spacing) {
        Ok(model) => krige_arrival_times(&pairs, &model, &at, spacing)?,
        Err(Error::Precondition(_)) if pairs.len() >= 2 => {
            linear_arrival_times(&pairs, &at, spacing)?
        }
        Err(e) => return Err(e),
    };
    Ok(enforce_monotone(&row))
}

/// Interpolate every journey onto the grid. Journeys that do not span the
/// route are skipped with a warning.
pub fn build_arrival_matrix<T: Scalar>(
    journeys: &[Journey],
    grid: &SegmentGrid,
) -> Result<ArrivalMatrix<T>> {
    let rows: Vec<(usize, Result<Vec<T>>)> = journeys
        .par_iter()
        .enumerate()
        .map(|(k, j)| (k, interpolate_journey(j, grid)))
        .collect();
    let (mut ids, mut departs, mut kept) = (Vec::new(), Vec::new(), Vec::new());
    let mut skipped = 0usize;
    for (k, row) in rows {
        match row {
            Ok(r) => {
                ids.push(journeys[k].trip_id.clone());
                departs.push(T::of(journeys[k].depart_seconds_of_day()));
                kept.push(r);
            }
            Err(e) => {
                skipped += 1;
                log::warn!("skipping journey {}: {e}", journeys[k].trip_id);
            }
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} of {} journeys skipped", journeys.len());
    }
    let distances = grid.segments.iter().map(|s| T::of(s.cum_distance)).collect();
    ArrivalMatrix::new(ids, departs, distances, kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{GeoPoint, GpsFix, LandmarkSpec, RouteDescription};

    #[test]
    fn repeated_distances_keep_first_time() {
        let p = collapse_repeated_distances(&[(0.0, 0.0), (10.0, 5.0), (10.0, 9.0), (20.0, 12.0)]);
        assert_eq!(p, vec![(0.0, 0.0), (10.0, 5.0), (20.0, 12.0)]);
    }

    #[test]
    fn journey_row_is_monotone_and_full_width() {
        let route = RouteDescription {
            route_id: "r".into(),
            route_length: 1000.0,
            spacing: 100.0,
            default_line_count: 1,
            stops: vec![
                LandmarkSpec { cum_distance: 0.0, lat: 0.0, lon: 0.0, line_count: None },
                LandmarkSpec { cum_distance: 1000.0, lat: 0.0, lon: 0.0089932, line_count: None },
            ],
            intersections: vec![],
        };
        let grid = route.grid().unwrap();
        let fixes = (0..12)
            .map(|i| GpsFix {
                point: GeoPoint::new(0.0, 0.0089932 * i as f64 / 11.0),
                timestamp: 1_000.0 + 13.0 * i as f64 + (i % 3) as f64,
            })
            .collect();
        let j = Journey { trip_id: "x".into(), fixes, tau: 300.0 };
        let row: Vec<f64> = interpolate_journey(&j, &grid).unwrap();
        assert_eq!(row.len(), grid.len());
        assert!(is_non_decreasing(&row));
        assert_eq!(row[0], 0.0);
    }
}
