//! Dense row-major matrices. This is the whole tensor layer: the model above
//! it is a fixed architecture, so a minimal container plus a handful of
//! kernels in [`crate::nn`] is all we need.

use crate::error::{Error, Result};
use crate::num::Scalar;

/// A dense row-major matrix. Entries are required to be finite; constructors
/// that accept external data enforce it.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    values: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            values: vec![S::zero(); rows * cols],
        }
    }

    /// Builds a matrix from row-major values, rejecting bad lengths and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, values: Vec<S>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Dim(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        let m = Matrix { rows, cols, values };
        m.check_finite("matrix literal")?;
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        let mut values = Vec::with_capacity(nrows * ncols);
        for r in rows {
            if r.len() != ncols {
                return Err(Error::Dim("ragged row lengths".into()));
            }
            values.extend_from_slice(r);
        }
        Self::from_vec(nrows, ncols, values)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = S::one();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> S {
        debug_assert!(r < self.rows && c < self.cols);
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: S) {
        debug_assert!(r < self.rows && c < self.cols);
        self.values[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[S] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn fill(&mut self, v: S) {
        self.values.iter_mut().for_each(|x| *x = v);
    }

    /// Errors (with `what` as context) if any entry is NaN or infinite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        for (i, v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "{what}: entry {i} of {}x{} matrix is {v}",
                    self.rows, self.cols
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length_and_finiteness() {
        assert!(Matrix::<f64>::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::<f64>::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        let m = Matrix::<f64>::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.get(1, 0), 3.0);
    }

    #[test]
    fn identity_layout() {
        let m = Matrix::<f64>::identity(3);
        assert_eq!(m.row(1), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn works_at_f32() {
        let m = Matrix::<f32>::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m.get(0, 1), 2.0f32);
    }
}
