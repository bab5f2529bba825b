use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::lu_solve;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VariogramFamily {
    Exponential,
}

/// Semivariogram `γ(h) = nugget + (sill - nugget) (1 - exp(-h / range))` for `h > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramModel<T> {
    pub nugget: T,
    pub sill: T,
    pub range_param: T,
    pub family: VariogramFamily,
}

impl<T: Scalar> VariogramModel<T> {
    pub fn nugget_only(nugget: T, spacing: T) -> Self {
        Self {
            nugget,
            sill: nugget,
            range_param: spacing,
            family: VariogramFamily::Exponential,
        }
    }

    pub fn partial_sill(&self) -> T {
        self.sill - self.nugget
    }

    pub fn semivariance(&self, h: T) -> T {
        if h == T::zero() {
            return T::zero();
        }
        match self.family {
            VariogramFamily::Exponential => {
                self.nugget + self.partial_sill() * (T::one() - (-h / self.range_param).exp())
            }
        }
    }

    /// Covariance implied by the variogram: `sill - γ(h)`.
    pub fn covariance(&self, h: T) -> T {
        self.sill - self.semivariance(h)
    }
}

const RANGE_CANDIDATES: usize = 96;

/// Least-squares exponential fit to the empirical semivariogram, binned at
/// `spacing` lag resolution and weighted by pair counts per bin.
pub fn fit_variogram<T: Scalar>(pairs: &[(T, T)], spacing: T) -> Result<VariogramModel<T>> {
    let mut distinct: Vec<T> = pairs.iter().map(|p| p.0).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    distinct.dedup();
    if pairs.len() < 4 || distinct.len() < 3 {
        return Err(Error::Precondition(format!(
            "variogram fit needs >= 4 pairs over >= 3 distinct distances, got {} pairs / {} distances",
            pairs.len(),
            distinct.len()
        )));
    }
    let first = pairs[0].1;
    if pairs.iter().all(|p| p.1 == first) {
        return Ok(VariogramModel::nugget_only(T::zero(), spacing));
    }

    // Bin index -> (sum of lags, sum of semivariances, count).
    let mut bins: Vec<(T, T, usize)> = Vec::new();
    for i in 0..pairs.len() {
        for j in i + 1..pairs.len() {
            let h = (pairs[i].0 - pairs[j].0).abs();
            if h == T::zero() {
                continue;
            }
            let gamma = T::of(0.5) * (pairs[i].1 - pairs[j].1).powi(2);
            let b = (h / spacing).floor().to_usize().unwrap_or(0);
            if bins.len() <= b {
                bins.resize(b + 1, (T::zero(), T::zero(), 0));
            }
            bins[b].0 += h;
            bins[b].1 += gamma;
            bins[b].2 += 1;
        }
    }
    let points: Vec<(T, T, T)> = bins
        .iter()
        .filter(|b| b.2 > 0)
        .map(|&(hs, gs, n)| {
            let n_t = T::of_usize(n);
            (hs / n_t, gs / n_t, n_t)
        })
        .collect();
    let max_lag = points.iter().fold(T::zero(), |m, p| m.max(p.0));

    let lo = (spacing * T::of(0.25)).ln();
    let hi = (max_lag * T::of(10.0)).max(spacing).ln();
    let mut best: Option<(T, T, T, T)> = None;
    for k in 0..RANGE_CANDIDATES {
        let frac = T::of_usize(k) / T::of_usize(RANGE_CANDIDATES - 1);
        let range = (lo + (hi - lo) * frac).exp();
        let (nugget, psill, sse) = fit_linear_part(&points, range);
        if best.is_none_or(|b| sse < b.3) {
            best = Some((nugget, psill, range, sse));
        }
    }
    let (nugget, psill, range, _) = best.expect("at least one candidate");
    Ok(VariogramModel {
        nugget,
        sill: nugget + psill,
        range_param: range,
        family: VariogramFamily::Exponential,
    })
}

/// For a fixed range, weighted non-negative least squares for `(nugget, partial sill)`.
fn fit_linear_part<T: Scalar>(points: &[(T, T, T)], range: T) -> (T, T, T) {
    let basis = |h: T| T::one() - (-h / range).exp();
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) =
        (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
    for &(h, g, w) in points {
        let x = basis(h);
        sw += w;
        sx += w * x;
        sy += w * g;
        sxx += w * x * x;
        sxy += w * x * g;
    }
    let sse = |a: T, b: T| -> T {
        points
            .iter()
            .map(|&(h, g, w)| w * (g - a - b * basis(h)).powi(2))
            .sum()
    };
    let det = sw * sxx - sx * sx;
    let mut candidates: Vec<(T, T)> = Vec::with_capacity(3);
    if det > T::zero() {
        let a = (sxx * sy - sx * sxy) / det;
        let b = (sw * sxy - sx * sy) / det;
        if a >= T::zero() && b >= T::zero() {
            candidates.push((a, b));
        }
    }
    if sxx > T::zero() {
        candidates.push((T::zero(), (sxy / sxx).max(T::zero())));
    }
    candidates.push(((sy / sw).max(T::zero()), T::zero()));
    candidates
        .into_iter()
        .map(|(a, b)| (a, b, sse(a, b)))
        .fold(None, |best: Option<(T, T, T)>, c| match best {
            Some(b) if b.2 <= c.2 => Some(b),
            _ => Some(c),
        })
        .expect("non-empty candidate set")
}

/// Piecewise-linear interpolation through `pairs` (sorted by distance),
/// extending the end slopes beyond the observed span.
pub fn linear_interpolate<T: Scalar>(pairs: &[(T, T)], x: T) -> T {
    match pairs.len() {
        0 => T::nan(),
        1 => pairs[0].1,
        n => {
            let k = pairs.partition_point(|p| p.0 <= x).clamp(1, n - 1);
            let (d0, t0) = pairs[k - 1];
            let (d1, t1) = pairs[k];
            t0 + (t1 - t0) * (x - d0) / (d1 - d0)
        }
    }
}

fn check_pairs<T: Scalar>(pairs: &[(T, T)]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Precondition("no distance-time pairs".into()));
    }
    if !pairs.windows(2).all(|w| w[0].0 < w[1].0) {
        return Err(Error::Precondition("pair distances must be strictly increasing".into()));
    }
    Ok(())
}

fn check_span<T: Scalar>(pairs: &[(T, T)], at: &[T], spacing: T) -> Result<()> {
    let lo = pairs[0].0;
    let hi = pairs[pairs.len() - 1].0;
    for &x in at {
        if x < lo - spacing || x > hi + spacing {
            return Err(Error::Extrapolation {
                at: x.to_f64_lossy(),
                lo: lo.to_f64_lossy(),
                hi: hi.to_f64_lossy(),
            });
        }
    }
    Ok(())
}

/// Linear interpolation onto `at`, with the same span rules as Kriging.
pub fn linear_arrival_times<T: Scalar>(pairs: &[(T, T)], at: &[T], spacing: T) -> Result<Vec<T>> {
    check_pairs(pairs)?;
    check_span(pairs, at, spacing)?;
    Ok(at.iter().map(|&x| linear_interpolate(pairs, x)).collect())
}

/// Ordinary Kriging of arrival time at each distance in `at`.
///
/// Solved once in dual form; a diagonal jitter of `1e-8 * sill` stabilizes the
/// system and grid points that coincide with an observation return it
/// verbatim. A singular system falls back to piecewise-linear interpolation.
pub fn krige_arrival_times<T: Scalar>(
    pairs: &[(T, T)],
    model: &VariogramModel<T>,
    at: &[T],
    spacing: T,
) -> Result<Vec<T>> {
    check_pairs(pairs)?;
    check_span(pairs, at, spacing)?;
    if pairs.len() < 2 {
        return Ok(vec![pairs[0].1; at.len()]);
    }
    match krige_dual(pairs, model) {
        Some((alpha, beta)) => {
            let out: Vec<T> = at
                .iter()
                .map(|&x| {
                    if let Some(hit) = pairs.iter().find(|p| p.0 == x) {
                        return hit.1;
                    }
                    let mut v = beta;
                    for (p, a) in pairs.iter().zip(&alpha) {
                        v += *a * model.covariance((x - p.0).abs());
                    }
                    v
                })
                .collect();
            if out.iter().all(|v| v.is_finite()) {
                return Ok(out);
            }
            log::debug!("kriging produced non-finite output; using linear fallback");
            Ok(at.iter().map(|&x| linear_interpolate(pairs, x)).collect())
        }
        None => {
            log::debug!("kriging system singular; using linear fallback");
            Ok(at.iter().map(|&x| linear_interpolate(pairs, x)).collect())
        }
    }
}

/// Solve `[C 1; 1ᵀ 0] [α; β] = [t; 0]`.
fn krige_dual<T: Scalar>(pairs: &[(T, T)], model: &VariogramModel<T>) -> Option<(Vec<T>, T)> {
    if !(model.partial_sill() > T::zero()) {
        return None;
    }
    let n = pairs.len();
    let dim = n + 1;
    let jitter = T::of(1e-8) * model.sill;
    let mut a = vec![T::zero(); dim * dim];
    for i in 0..n {
        for j in 0..n {
            a[i * dim + j] = model.covariance((pairs[i].0 - pairs[j].0).abs());
        }
        a[i * dim + i] += jitter;
        a[i * dim + n] = T::one();
        a[n * dim + i] = T::one();
    }
    let mut rhs: Vec<T> = pairs.iter().map(|p| p.1).collect();
    rhs.push(T::zero());
    let sol = lu_solve(&a, &rhs, dim, T::of(1e-13))?;
    let beta = sol[n];
    let mut alpha = sol;
    alpha.truncate(n);
    Some((alpha, beta))
}
