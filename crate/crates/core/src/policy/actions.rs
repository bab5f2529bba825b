use rand::Rng;

use crate::Scalar;

pub const MOVE_LEFT: usize = 0;
pub const MOVE_RIGHT: usize = 1;

/// Row-wise action probabilities, one `[left, right]` pair per selected point.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionMatrix<T> {
    pub probs: Vec<[T; 2]>,
}

impl<T: Scalar> ActionMatrix<T> {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Most probable action per row; ties go left.
    pub fn greedy(&self) -> Vec<usize> {
        self.probs
            .iter()
            .map(|p| if p[1] > p[0] { MOVE_RIGHT } else { MOVE_LEFT })
            .collect()
    }
}

/// Allowed movement window of each selected point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionBounds {
    pub lower: Vec<usize>,
    pub upper: Vec<usize>,
}

fn ceil_half(a: usize, b: usize) -> usize {
    (a + b).div_ceil(2)
}

/// Bounds from the midpoints between neighbouring selected points; the first
/// point is bounded below by 0 and the last above by `last_index`.
pub fn compute_bounds(indices: &[usize], last_index: usize) -> ActionBounds {
    let m = indices.len();
    let upper = (0..m)
        .map(|i| {
            if i + 1 < m {
                ceil_half(indices[i], indices[i + 1])
            } else {
                last_index
            }
        })
        .collect();
    let lower = (0..m)
        .map(|i| if i == 0 { 0 } else { ceil_half(indices[i - 1], indices[i]) })
        .collect();
    ActionBounds { lower, upper }
}

/// Shift each point by at most one grid step within its bounds. A move onto a
/// pinned landmark (`blocked`, sorted) becomes a null move.
pub fn apply_actions(
    indices: &[usize],
    actions: &[usize],
    bounds: &ActionBounds,
    blocked: &[usize],
) -> Vec<usize> {
    debug_assert_eq!(indices.len(), actions.len());
    indices
        .iter()
        .zip(actions)
        .enumerate()
        .map(|(i, (&cur, &action))| {
            let cur_i = cur as i64;
            let shift = if action == MOVE_LEFT {
                -(1i64.min(cur_i - bounds.lower[i] as i64)).max(0)
            } else {
                1i64.min(bounds.upper[i] as i64 - cur_i - 1).max(0)
            };
            let dest = (cur_i + shift) as usize;
            if shift != 0 && blocked.binary_search(&dest).is_ok() {
                cur
            } else {
                dest
            }
        })
        .collect()
}

/// Independent categorical draw per row.
pub fn sample_actions<T: Scalar, R: Rng + ?Sized>(a: &ActionMatrix<T>, rng: &mut R) -> Vec<usize> {
    a.probs
        .iter()
        .map(|p| {
            let u: f64 = rng.random();
            if u < p[1].to_f64_lossy() {
                MOVE_RIGHT
            } else {
                MOVE_LEFT
            }
        })
        .collect()
}
