//! Per-segment feature coding and the selector's state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{SegmentGrid, SegmentKind};
use crate::Scalar;

pub const FEATURE_DIM: usize = 8;
/// Leading dimensions that get z-scored; the one-hot tail is left alone.
pub const NUMERIC_DIM: usize = 5;

pub type FeatureRow<T> = [T; FEATURE_DIM];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentFeature<T> {
    /// Trip departure, seconds since local midnight.
    pub depart_time: T,
    /// Seconds from departure to this segment.
    pub travel_time: T,
    pub dist_from_start: T,
    pub dist_next: T,
    pub line_count: T,
    pub kind: SegmentKind,
}

impl<T: Scalar> SegmentFeature<T> {
    pub fn to_row(&self) -> FeatureRow<T> {
        let ohc = self.kind.one_hot();
        [
            self.depart_time,
            self.travel_time,
            self.dist_from_start,
            self.dist_next,
            self.line_count,
            T::of(ohc[0]),
            T::of(ohc[1]),
            T::of(ohc[2]),
        ]
    }
}

/// Encode grid point `i` for a trip that departed at `depart_time` and whose
/// arrival times along the grid are `arrivals`.
pub fn encode_segment<T: Scalar>(
    grid: &SegmentGrid,
    i: usize,
    depart_time: T,
    arrivals: &[T],
) -> Result<SegmentFeature<T>> {
    let seg = grid
        .segments
        .get(i)
        .ok_or_else(|| Error::Precondition(format!("segment {i} outside grid of {}", grid.len())))?;
    let travel_time = *arrivals
        .get(i)
        .ok_or_else(|| Error::Precondition(format!("no arrival time for segment {i}")))?;
    let next = grid
        .segments
        .get(i + 1)
        .map(|s| s.cum_distance)
        .unwrap_or(grid.route_length());
    Ok(SegmentFeature {
        depart_time,
        travel_time,
        dist_from_start: T::of(seg.cum_distance),
        dist_next: T::of(next),
        line_count: T::of(seg.line_count as f64),
        kind: seg.kind,
    })
}

/// Feature rows of every grid point for one trip.
pub fn feature_matrix<T: Scalar>(
    grid: &SegmentGrid,
    depart_time: T,
    arrivals: &[T],
) -> Result<Vec<FeatureRow<T>>> {
    (0..grid.len())
        .map(|i| encode_segment(grid, i, depart_time, arrivals).map(|f| f.to_row()))
        .collect()
}

/// Per-feature z-score statistics, fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer<T> {
    pub mean: [T; NUMERIC_DIM],
    pub std: [T; NUMERIC_DIM],
}

impl<T: Scalar> FeatureNormalizer<T> {
    pub fn identity() -> Self {
        Self {
            mean: [T::zero(); NUMERIC_DIM],
            std: [T::one(); NUMERIC_DIM],
        }
    }

    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a FeatureRow<T>>) -> Self {
        let mut count = 0usize;
        let mut sum = [T::zero(); NUMERIC_DIM];
        let mut sq = [T::zero(); NUMERIC_DIM];
        for row in rows {
            count += 1;
            for d in 0..NUMERIC_DIM {
                sum[d] += row[d];
                sq[d] += row[d] * row[d];
            }
        }
        if count == 0 {
            return Self::identity();
        }
        let n = T::of_usize(count);
        let mut out = Self::identity();
        for d in 0..NUMERIC_DIM {
            let mean = sum[d] / n;
            let var = (sq[d] / n - mean * mean).max(T::zero());
            out.mean[d] = mean;
            // Constant features pass through centered but unscaled.
            out.std[d] = if var > T::of(1e-12) { var.sqrt() } else { T::one() };
        }
        out
    }

    pub fn apply(&self, row: &FeatureRow<T>) -> FeatureRow<T> {
        let mut out = *row;
        for d in 0..NUMERIC_DIM {
            out[d] = (row[d] - self.mean[d]) / self.std[d];
        }
        out
    }

    pub fn apply_all(&self, rows: &[FeatureRow<T>]) -> Vec<FeatureRow<T>> {
        rows.iter().map(|r| self.apply(r)).collect()
    }
}

/// Which interpolation points are currently selected.
///
/// `mask[k]` refers to the k-th interpolation point of the grid; `indices`
/// holds the grid indices of the selected ones in increasing order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SelectionState {
    pub mask: Vec<bool>,
    pub indices: Vec<usize>,
}

impl SelectionState {
    /// `interp` lists the grid indices of all interpolation points, sorted.
    pub fn from_indices(interp: &[usize], indices: Vec<usize>) -> Result<Self> {
        if !indices.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Precondition("selected indices must be strictly increasing".into()));
        }
        let mut mask = vec![false; interp.len()];
        for &i in &indices {
            let slot = interp.binary_search(&i).map_err(|_| {
                Error::Precondition(format!("grid index {i} is not an interpolation point"))
            })?;
            mask[slot] = true;
        }
        Ok(Self { mask, indices })
    }

    /// Number of selected points, M.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn mask_values<T: Scalar>(&self) -> Vec<T> {
        self.mask.iter().map(|&b| if b { T::one() } else { T::zero() }).collect()
    }
}

/// Policy input: all segment features stacked over the selected ones, plus the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RlState<T> {
    pub sa: Vec<FeatureRow<T>>,
    pub sb: Vec<T>,
}

impl<T: Scalar> RlState<T> {
    /// Rows belonging to the selected block.
    pub fn selected_rows(&self) -> usize {
        self.sb.iter().filter(|&&b| b != T::zero()).count()
    }
}

pub fn assemble_state<T: Scalar>(features: &[FeatureRow<T>], sel: &SelectionState) -> Result<RlState<T>> {
    if sel.is_empty() {
        return Err(Error::Precondition("selection must contain at least one point".into()));
    }
    if sel.mask.iter().filter(|&&b| b).count() != sel.len() {
        return Err(Error::Precondition("mask popcount disagrees with selected indices".into()));
    }
    let mut sa = Vec::with_capacity(features.len() + sel.len());
    sa.extend_from_slice(features);
    for &i in &sel.indices {
        let row = features.get(i).ok_or_else(|| {
            Error::Precondition(format!("selected index {i} beyond {} feature rows", features.len()))
        })?;
        sa.push(*row);
    }
    Ok(RlState {
        sa,
        sb: sel.mask_values(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{LandmarkSpec, RouteDescription};

    fn grid_0_100_200() -> SegmentGrid {
        RouteDescription {
            route_id: "g".into(),
            route_length: 200.0,
            spacing: 100.0,
            default_line_count: 3,
            stops: vec![LandmarkSpec { cum_distance: 0.0, lat: 0.0, lon: 0.0, line_count: Some(2) }],
            intersections: vec![],
        }
        .grid()
        .unwrap()
    }

    #[test]
    fn interpolated_point_row() {
        let g = grid_0_100_200();
        let f = encode_segment(&g, 1, 28_800.0, &[0.0, 120.0, 250.0]).unwrap();
        assert_eq!(f.to_row(), [28_800.0, 120.0, 100.0, 200.0, 3.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn stop_and_last_segment() {
        let g = grid_0_100_200();
        let stop = encode_segment(&g, 0, 0.0, &[0.0, 1.0, 2.0]).unwrap().to_row();
        assert_eq!(&stop[5..], &[1.0, 0.0, 0.0]);
        let last = encode_segment(&g, 2, 0.0, &[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(last.dist_next, 200.0);
        assert!(encode_segment(&g, 2, 0.0, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn state_appends_selected_rows() {
        let f: Vec<FeatureRow<f64>> = (0..4).map(|i| [i as f64; 8]).collect();
        let sel = SelectionState::from_indices(&[0, 1, 2, 3], vec![1, 3]).unwrap();
        assert_eq!(sel.mask, vec![false, true, false, true]);
        let s = assemble_state(&f, &sel).unwrap();
        assert_eq!(s.sa.len(), 6);
        assert_eq!(s.sa[4], f[1]);
        assert_eq!(s.sa[5], f[3]);

        let mut shuffled = f.clone();
        shuffled.swap(0, 2);
        assert_eq!(assemble_state(&shuffled, &sel).unwrap().sa[4..], s.sa[4..]);
    }

    #[test]
    fn empty_selection_rejected() {
        let f: Vec<FeatureRow<f64>> = vec![[0.0; 8]; 4];
        let sel = SelectionState::from_indices(&[0, 1, 2, 3], vec![]).unwrap();
        assert!(assemble_state(&f, &sel).is_err());
    }

    #[test]
    fn normalizer_leaves_one_hot_alone() {
        let rows = vec![[1.0, 2.0, 3.0, 4.0, 5.0, 1.0, 0.0, 0.0], [3.0, 2.0, 5.0, 8.0, 5.0, 0.0, 0.0, 1.0]];
        let norm = FeatureNormalizer::fit(&rows);
        let z = norm.apply(&rows[0]);
        assert_eq!(z[0], -1.0);
        assert_eq!(z[1], 0.0);
        assert_eq!(&z[5..], &[1.0, 0.0, 0.0]);
    }
}
