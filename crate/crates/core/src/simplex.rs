//! Small helpers for probability vectors.

use alloc::vec::Vec;

/// `max_i |a_i − b_i|`.
pub fn sup_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Scales a nonnegative vector to sum to one.
pub fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x /= s;
    }
}

/// Cumulative sums, used to draw indices by inversion.
pub fn cumulative(pi: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    pi.iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect()
}

/// Index drawn by inverting a cumulative vector at `u ∈ [0, 1)`. Never
/// returns an index whose own mass is zero.
pub fn sample_index(cdf: &[f64], u: f64) -> usize {
    let total = *cdf.last().unwrap_or(&1.0);
    let target = u * total;
    let mut prev = 0.0;
    let mut last_positive = 0;
    for (i, &c) in cdf.iter().enumerate() {
        if c > prev {
            last_positive = i;
            if target < c {
                return i;
            }
        }
        prev = c;
    }
    last_positive
}

/// Euclidean projection of `v` onto the probability simplex restricted to
/// the coordinates where `mask` is true; masked-out coordinates become 0.
pub fn project(v: &[f64], mask: &[bool]) -> Vec<f64> {
    let mut active: Vec<f64> = v
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&x, _)| x)
        .collect();
    active.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &x) in active.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter()
        .zip(mask)
        .map(|(&x, &m)| if m { (x - theta).max(0.0) } else { 0.0 })
        .collect()
}
