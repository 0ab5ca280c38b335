//! Scalar kernels shared by the rest of the crate.

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity computed as `dot / sqrt(|a|² |b|²)`.
///
/// Taking a single square root keeps integer-valued inputs exact: for
/// indicator vectors the result is the correctly rounded `overlap / n`.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d = dot(a, b);
    let denom = (dot(a, a) * dot(b, b)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        (d / denom).clamp(-1.0, 1.0)
    }
}

/// Row-wise softmax, numerically stabilised by the row maximum.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Euclidean projection of `z` onto the probability simplex
/// (sort-and-threshold algorithm).
pub fn sparsemax(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(Error::EmptyVector);
    }
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::Invalid("sparsemax input must be finite".into()));
    }
    // Working relative to the maximum keeps shifts of exactly representable
    // inputs bit-for-bit invariant.
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rel: Vec<f64> = z.iter().map(|x| x - m).collect();
    let tau = sparsemax_threshold(&rel);
    Ok(rel.iter().map(|x| (x - tau).max(0.0)).collect())
}

/// The threshold `tau` such that `sum(max(z - tau, 0)) == 1`.
pub fn sparsemax_threshold(z: &[f64]) -> f64 {
    let mut sorted = z.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut support = 0usize;
    let mut support_sum = 0.0;
    for (k, &zk) in sorted.iter().enumerate() {
        cumsum += zk;
        let k1 = (k + 1) as f64;
        if 1.0 + k1 * zk > cumsum {
            support = k + 1;
            support_sum = cumsum;
        }
    }
    (support_sum - 1.0) / support as f64
}

/// Row-normalised similarity matrix between the rows of `a` (n×d) and `b` (m×d).
pub fn cosine_matrix(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let d = a.first().or(b.first()).map_or(0, Vec::len);
    for (which, m) in [("A", a), ("B", b)] {
        for (i, row) in m.iter().enumerate() {
            if row.len() != d {
                return Err(Error::Shape(format!("row {i} of {which} has dim {} (expected {d})", row.len())));
            }
            if row.iter().all(|x| *x == 0.0) {
                return Err(Error::ZeroNorm { which, row: i });
            }
        }
    }
    Ok(a.iter().map(|x| b.iter().map(|y| cosine(x, y)).collect()).collect())
}

/// L2-normalise a vector in place; returns the original norm.
pub fn normalize(v: &mut [f64]) -> f64 {
    let n = l2_norm(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}
