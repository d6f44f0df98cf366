//! Small dense-vector helpers. Vectors are plain `f64` slices; dimensions are
//! tiny (d ≤ a few dozen), so nothing here is worth a linear-algebra crate.

use serde::{Deserialize, Serialize};

/// The two Lebesgue norms the order-error machinery uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[serde(alias = "2")]
    L2,
    #[serde(alias = "infinity")]
    Inf,
}

impl Norm {
    pub fn of(self, v: &[f64]) -> f64 {
        match self {
            Norm::L2 => norm2(v),
            Norm::Inf => norm_inf(v),
        }
    }
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Norm::L2 => write!(f, "2"),
            Norm::Inf => write!(f, "inf"),
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    norm2_sq(v).sqrt()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `y += alpha * x`
pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn dist(a: &[f64], b: &[f64], norm: Norm) -> f64 {
    match norm {
        Norm::L2 => dist2(a, b),
        Norm::Inf => a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs())),
    }
}

pub fn mean(vectors: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    for v in vectors {
        axpy(&mut m, 1.0, v);
    }
    let n = vectors.len().max(1) as f64;
    m.iter_mut().for_each(|x| *x /= n);
    m
}

pub fn is_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Largest prefix-sum norm `max_{n=1..N} ‖Σ_{i<n} v_i‖` of a vector stream.
///
/// Returns 0 for an empty stream.
pub fn max_prefix_norm<'a, I>(stream: I, dim: usize, norm: Norm) -> f64
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut acc = vec![0.0; dim];
    let mut best = 0.0_f64;
    for v in stream {
        axpy(&mut acc, 1.0, v);
        best = best.max(norm.of(&acc));
    }
    best
}

/// Like [`max_prefix_norm`] but only prefixes whose length is a multiple of
/// `block` are inspected (the empty prefix contributes 0).
pub fn max_block_prefix_norm<'a, I>(stream: I, dim: usize, block: usize, norm: Norm) -> f64
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut acc = vec![0.0; dim];
    let mut best = 0.0_f64;
    for (i, v) in stream.into_iter().enumerate() {
        axpy(&mut acc, 1.0, v);
        if (i + 1) % block == 0 {
            best = best.max(norm.of(&acc));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norms() {
        let v = [3.0, -4.0];
        assert_eq!(norm2(&v), 5.0);
        assert_eq!(norm_inf(&v), 4.0);
        assert_eq!(Norm::Inf.of(&v), 4.0);
        assert_eq!(dist(&[1.0, 1.0], &[4.0, -3.0], Norm::L2), 5.0);
    }

    #[test]
    fn prefix_scan() {
        let vs: Vec<Vec<f64>> = vec![vec![1.0], vec![-1.0], vec![1.0], vec![-1.0]];
        let m = max_prefix_norm(vs.iter().map(|v| v.as_slice()), 1, Norm::L2);
        assert_eq!(m, 1.0);
        let b = max_block_prefix_norm(vs.iter().map(|v| v.as_slice()), 1, 2, Norm::L2);
        assert_eq!(b, 0.0);
    }
}
