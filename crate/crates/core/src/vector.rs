//! Small dense-vector helpers shared by the scoring modules.

use crate::error::{check_dim, Error, Result};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Cosine similarity clamped to [-1, 1]. Zero-norm inputs are rejected.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm("cosine similarity undefined".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Returns a unit-length copy, or an error for zero or non-finite input.
pub fn normalized(a: &[f64]) -> Result<Vec<f64>> {
    let n = norm(a);
    if !n.is_finite() {
        return Err(Error::invalid("non-finite vector"));
    }
    if n == 0.0 {
        return Err(Error::ZeroNorm("cannot normalize".into()));
    }
    Ok(a.iter().map(|x| x / n).collect())
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Mean of the `k` largest values (k clamped to `values.len()`).
pub(crate) fn top_k_mean(values: &mut [f64], k: usize) -> f64 {
    let k = k.min(values.len());
    debug_assert!(k > 0);
    if k < values.len() {
        values.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    }
    values[..k].iter().sum::<f64>() / k as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine(&[1.0, 0.0], &[2.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(cosine(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn top_k_mean_picks_largest() {
        let mut v = vec![0.1, 0.9, 0.5, 0.7];
        assert!((top_k_mean(&mut v, 2) - 0.8).abs() < 1e-15);
        let mut v = vec![0.1, 0.9];
        assert!((top_k_mean(&mut v, 10) - 0.5).abs() < 1e-15);
    }
}
