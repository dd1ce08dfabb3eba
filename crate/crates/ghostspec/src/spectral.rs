//! Spectral primitives: singular values, effective rank, truncation and
//! min-max normalization.
//!
//! Singular values are computed with one-sided Jacobi (Hestenes) rotations,
//! orthogonalizing the columns of the side whose Gram matrix is smaller.
//! Values-only, no singular vectors are formed.

use crate::error::{Error, Result};
use crate::matrix::WeightMatrix;

/// Iteration cap for Jacobi sweeps.
const MAX_SWEEPS: usize = 60;
/// A column pair counts as orthogonal when |a_p . a_q| <= REL_TOL * |a_p| |a_q|.
const REL_TOL: f64 = 1e-12;

/// Singular values of a matrix, sorted descending.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularSpectrum {
    values: Vec<f64>,
    source_shape: (usize, usize),
}

impl SingularSpectrum {
    /// Wrap raw values. Enforces the descending non-negative invariant and
    /// `len == min(rows, cols)`.
    pub fn new(values: Vec<f64>, source_shape: (usize, usize)) -> Result<Self> {
        let (rows, cols) = source_shape;
        if values.len() != rows.min(cols) {
            return Err(Error::DimensionMismatch(format!(
                "spectrum length {} must equal min{:?}",
                values.len(),
                source_shape
            )));
        }
        for w in values.windows(2) {
            if w[1] > w[0] {
                return Err(Error::DimensionMismatch(
                    "singular values not sorted descending".into(),
                ));
            }
        }
        if values.last().is_some_and(|v| *v < 0.0) {
            return Err(Error::DimensionMismatch("negative singular value".into()));
        }
        Ok(Self {
            values,
            source_shape,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn source_shape(&self) -> (usize, usize) {
        self.source_shape
    }
}

/// A spectrum after top-r truncation and min-max normalization into [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedSpectrum {
    values: Vec<f64>,
    rank_used: usize,
}

impl ProcessedSpectrum {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rank_used(&self) -> usize {
        self.rank_used
    }
}

/// Singular values of `m`, descending, to ~1e-10 relative accuracy.
///
/// Works on the transpose when `rows < cols` so the orthogonalized side is
/// always the smaller one; singular values are transpose-invariant.
pub fn singular_values(m: &WeightMatrix) -> Result<SingularSpectrum> {
    let work = if m.rows() < m.cols() {
        m.transpose()
    } else {
        m.clone()
    };
    let nrows = work.rows();
    let ncols = work.cols();

    // Column-major copy: Jacobi rotates column pairs in place.
    let mut cols: Vec<f64> = vec![0.0; nrows * ncols];
    for r in 0..nrows {
        let row = work.row(r);
        for c in 0..ncols {
            cols[c * nrows + r] = row[c];
        }
    }
    // Squared column norms, kept in sync with the rotations.
    let mut sq_norms: Vec<f64> = (0..ncols)
        .map(|c| cols[c * nrows..(c + 1) * nrows].iter().map(|v| v * v).sum())
        .collect();

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..ncols.saturating_sub(1) {
            for q in p + 1..ncols {
                let gamma = dot_cols(&cols, nrows, p, q);
                let alpha = sq_norms[p];
                let beta = sq_norms[q];
                if gamma.abs() <= REL_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + (1.0 + zeta * zeta).sqrt())
                } else {
                    -1.0 / (-zeta + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (new_alpha, new_beta) = rotate_cols(&mut cols, nrows, p, q, c, s);
                sq_norms[p] = new_alpha;
                sq_norms[q] = new_beta;
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }

    if !converged {
        let mut residual = 0.0_f64;
        for p in 0..ncols.saturating_sub(1) {
            for q in p + 1..ncols {
                let denom = (sq_norms[p] * sq_norms[q]).sqrt();
                if denom > 0.0 {
                    residual = residual.max(dot_cols(&cols, nrows, p, q).abs() / denom);
                }
            }
        }
        return Err(Error::SvdNonConvergence {
            sweeps: MAX_SWEEPS,
            residual,
        });
    }

    let mut values: Vec<f64> = sq_norms.iter().map(|v| v.sqrt()).collect();
    values.sort_by(|a, b| b.partial_cmp(a).expect("singular values are finite"));
    SingularSpectrum::new(values, m.shape())
}

#[inline]
fn dot_cols(cols: &[f64], nrows: usize, p: usize, q: usize) -> f64 {
    let a = &cols[p * nrows..(p + 1) * nrows];
    let b = &cols[q * nrows..(q + 1) * nrows];
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Apply the rotation to columns p and q, returning their fresh squared norms.
#[inline]
fn rotate_cols(cols: &mut [f64], nrows: usize, p: usize, q: usize, c: f64, s: f64) -> (f64, f64) {
    debug_assert!(p < q);
    let (left, right) = cols.split_at_mut(q * nrows);
    let col_p = &mut left[p * nrows..(p + 1) * nrows];
    let col_q = &mut right[..nrows];
    let mut alpha = 0.0;
    let mut beta = 0.0;
    for (x, y) in col_p.iter_mut().zip(col_q.iter_mut()) {
        let xp = c * *x - s * *y;
        let yq = s * *x + c * *y;
        *x = xp;
        *y = yq;
        alpha += xp * xp;
        beta += yq * yq;
    }
    (alpha, beta)
}

/// Effective rank: exp of the Shannon entropy of the sum-normalized spectrum.
///
/// Zero entries contribute nothing to the entropy sum. Scale-invariant, and
/// always in `[1, len]`.
pub fn effective_rank(s: &SingularSpectrum) -> Result<f64> {
    let total: f64 = s.values().iter().sum();
    if total <= 0.0 {
        return Err(Error::NullSpectrum);
    }
    let mut entropy = 0.0;
    for &v in s.values() {
        if v > 0.0 {
            let p = v / total;
            entropy -= p * p.ln();
        }
    }
    Ok(entropy.exp())
}

/// Keep the top `r` values, then map linearly so max -> 1 and min -> 0.
/// A constant truncated vector maps to all zeros.
pub fn truncate_normalize(s: &SingularSpectrum, r: usize) -> Result<ProcessedSpectrum> {
    if r == 0 || r > s.len() {
        return Err(Error::RankOutOfRange {
            rank: r,
            len: s.len(),
        });
    }
    // Sorted descending, so the extrema are the ends of the window.
    let top = &s.values()[..r];
    let max = top[0];
    let min = top[r - 1];
    let values = if max == min {
        vec![0.0; r]
    } else {
        let span = max - min;
        top.iter().map(|v| (v - min) / span).collect()
    };
    Ok(ProcessedSpectrum {
        values,
        rank_used: r,
    })
}

/// Mean squared difference between two equal-rank processed spectra.
pub fn spectral_mse(a: &ProcessedSpectrum, b: &ProcessedSpectrum) -> Result<f64> {
    if a.rank_used != b.rank_used {
        return Err(Error::RankMismatch {
            a: a.rank_used,
            b: b.rank_used,
        });
    }
    let sum: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.rank_used as f64)
}

/// The truncation rank consumers derive from an effective rank:
/// floor, clamped below at 1.
pub fn truncation_rank(eff_rank: f64) -> usize {
    (eff_rank.floor() as usize).max(1)
}
