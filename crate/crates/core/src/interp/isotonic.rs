use crate::Scalar;

/// Least-squares projection onto non-decreasing sequences (pool adjacent
/// violators). Each pooled block takes the mean of the values it absorbed.
pub fn enforce_monotone<T: Scalar>(times: &[T]) -> Vec<T> {
    // (block sum, block length)
    let mut blocks: Vec<(T, usize)> = Vec::with_capacity(times.len());
    for &t in times {
        blocks.push((t, 1));
        while blocks.len() >= 2 {
            let (s1, n1) = blocks[blocks.len() - 1];
            let (s0, n0) = blocks[blocks.len() - 2];
            if s0 * T::of_usize(n1) > s1 * T::of_usize(n0) {
                blocks.pop();
                let last = blocks.last_mut().unwrap();
                *last = (s0 + s1, n0 + n1);
            } else {
                break;
            }
        }
    }
    let mut out = Vec::with_capacity(times.len());
    for (sum, n) in blocks {
        let mean = sum / T::of_usize(n);
        out.extend(std::iter::repeat_n(mean, n));
    }
    out
}

pub fn is_non_decreasing<T: Scalar>(xs: &[T]) -> bool {
    xs.windows(2).all(|w| w[0] <= w[1])
}
