//! Dense row-major matrices of double-precision weights.
//!
//! Everything spectral in this crate runs on [`WeightMatrix`]: tensors decoded
//! from checkpoints, invariant products, and transformed weights alike.

use crate::error::{Error, Result};

/// A dense 2-D real matrix with source-tensor metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    source: String,
}

impl WeightMatrix {
    /// Build from row-major data. Fails when `data.len() != rows * cols`.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>, source: impl Into<String>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::DimensionMismatch(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            data,
            source: source.into(),
        })
    }

    pub fn zeros(rows: usize, cols: usize, source: impl Into<String>) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
            source: source.into(),
        }
    }

    pub fn identity(n: usize, source: impl Into<String>) -> Self {
        let mut m = Self::zeros(n, n, source);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Name of the tensor (or derived product) this matrix came from.
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> WeightMatrix {
        let mut out = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        WeightMatrix {
            rows: self.cols,
            cols: self.rows,
            data: out,
            source: self.source.clone(),
        }
    }

    /// `self * other`, standard dense product (ikj order).
    pub fn matmul(&self, other: &WeightMatrix, source: impl Into<String>) -> Result<WeightMatrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{} ({} vs {})",
                self.rows, self.cols, other.rows, other.cols, self.source, other.source
            )));
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * m..(i + 1) * m];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        WeightMatrix::new(n, m, out, source)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// Flat index of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    /// Rename the source tag, keeping the data.
    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = WeightMatrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], "a").unwrap();
        let b = WeightMatrix::new(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0], "b").unwrap();
        let c = a.matmul(&b, "c").unwrap();
        assert_eq!(c.shape(), (2, 2));
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transpose_round_trip() {
        let a = WeightMatrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], "a").unwrap();
        let t = a.transpose();
        assert_eq!(t.shape(), (3, 2));
        assert_eq!(t.get(0, 1), 4.0);
        assert_eq!(t.transpose().data(), a.data());
    }

    #[test]
    fn length_checked() {
        assert!(WeightMatrix::new(2, 2, vec![0.0; 3], "bad").is_err());
        assert!(WeightMatrix::new(0, 2, vec![], "bad").is_err());
    }

    #[test]
    fn identity_multiplies_neutrally() {
        let a = WeightMatrix::new(3, 3, (0..9).map(f64::from).collect(), "a").unwrap();
        let i = WeightMatrix::identity(3, "i");
        assert_eq!(a.matmul(&i, "ai").unwrap().data(), a.data());
        assert_eq!(i.matmul(&a, "ia").unwrap().data(), a.data());
    }
}
