//! Truncated path signatures for piecewise-linear paths.
//!
//! Level 1 holds the total increment per channel; level 2 the iterated
//! integrals S^{ij} = ∫ dx_i dx_j, accumulated segment by segment through
//! Chen's relation. The level-0 term (always 1) is omitted.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignatureVector {
    pub dim: usize,
    pub level: u8,
    /// Total increments, length `dim`.
    pub level1: Vec<f64>,
    /// Iterated integrals, row-major `dim x dim`; empty at level 1.
    pub level2: Vec<f64>,
}

impl SignatureVector {
    pub fn zeros(dim: usize, level: u8) -> Self {
        SignatureVector {
            dim,
            level,
            level1: vec![0.0; dim],
            level2: if level >= 2 {
                vec![0.0; dim * dim]
            } else {
                Vec::new()
            },
        }
    }

    /// Flat feature vector: level-1 terms then level-2 terms.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.level1.clone();
        out.extend_from_slice(&self.level2);
        out
    }

    pub fn flat_len(dim: usize, level: u8) -> usize {
        match level {
            1 => dim,
            _ => dim + dim * dim,
        }
    }

    pub fn euclidean_distance(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        let a = self.flat();
        let b = other.flat();
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }
}

/// Truncated signature of a piecewise-linear path, exact at both levels.
///
/// Appending a linear segment with increment `d` updates the running terms
/// through Chen's relation: `S1 += d`, `S2_{ij} += S1_i d_j + d_i d_j / 2`.
pub fn path_signature(points: &[Vec<f64>], level: u8) -> Result<SignatureVector> {
    if !(level == 1 || level == 2) {
        return Err(Error::invalid("signature level must be 1 or 2"));
    }
    if points.len() < 2 {
        return Err(Error::invalid("path signature requires at least 2 points"));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::invalid("inconsistent path point dimensions"));
    }
    let mut sig = SignatureVector::zeros(dim, level);
    for w in points.windows(2) {
        let delta: Vec<f64> = w[1].iter().zip(w[0].iter()).map(|(b, a)| b - a).collect();
        if level >= 2 {
            for i in 0..dim {
                for j in 0..dim {
                    sig.level2[i * dim + j] += sig.level1[i] * delta[j] + delta[i] * delta[j] / 2.0;
                }
            }
        }
        for i in 0..dim {
            sig.level1[i] += delta[i];
        }
    }
    Ok(sig)
}

/// Chen concatenation of two signatures over paths joined end to start.
pub fn chen_concat(a: &SignatureVector, b: &SignatureVector) -> SignatureVector {
    debug_assert_eq!(a.dim, b.dim);
    debug_assert_eq!(a.level, b.level);
    let dim = a.dim;
    let mut out = SignatureVector::zeros(dim, a.level);
    for i in 0..dim {
        out.level1[i] = a.level1[i] + b.level1[i];
    }
    if a.level >= 2 {
        for i in 0..dim {
            for j in 0..dim {
                out.level2[i * dim + j] =
                    a.level2[i * dim + j] + b.level2[i * dim + j] + a.level1[i] * b.level1[j];
            }
        }
    }
    out
}
