//! Matrix operators used through products only: dense, compressed-column,
//! and a counting wrapper that audits every product taken through `A`.

use std::cell::Cell;

use nalgebra::{DMatrix, DVector};

use crate::error::{shape_err, Error, Result};

/// A real m×n operator that supports `Av` and `Aᵀu`.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;
    fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64>;

    /// Exact Frobenius norm when the entries are available.
    fn frobenius_norm(&self) -> Option<f64> {
        None
    }

    /// Dense copy when the operator is explicitly stored.
    fn to_dense(&self) -> Option<DMatrix<f64>> {
        None
    }
}

impl LinearOperator for DMatrix<f64> {
    fn nrows(&self) -> usize {
        self.nrows()
    }
    fn ncols(&self) -> usize {
        self.ncols()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self * x
    }
    fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        self.tr_mul(y)
    }
    fn frobenius_norm(&self) -> Option<f64> {
        Some(self.norm())
    }
    fn to_dense(&self) -> Option<DMatrix<f64>> {
        Some(self.clone())
    }
}

/// Compressed sparse column storage.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CscMatrix {
    /// Builds from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut entries = triplets.to_vec();
        for &(i, j, v) in &entries {
            if i >= nrows || j >= ncols {
                return Err(shape_err(format!("index within {nrows}x{ncols}"), format!("({i}, {j})")));
            }
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite entry at ({i}, {j})")));
            }
        }
        entries.sort_by_key(|&(i, j, _)| (j, i));
        let mut col_ptr = vec![0usize; ncols + 1];
        let mut row_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in entries {
            if last == Some((i, j)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            row_idx.push(i);
            values.push(v);
            col_ptr[j + 1] += 1;
            last = Some((i, j));
        }
        for j in 0..ncols {
            col_ptr[j + 1] += col_ptr[j];
        }
        Ok(Self { nrows, ncols, col_ptr, row_idx, values })
    }

    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let mut trip = Vec::new();
        for j in 0..a.ncols() {
            for i in 0..a.nrows() {
                if a[(i, j)] != 0.0 {
                    trip.push((i, j, a[(i, j)]));
                }
            }
        }
        Self::from_triplets(a.nrows(), a.ncols(), &trip).expect("dense entries are in range")
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates stored entries column by column as (row, col, value).
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols).flat_map(move |j| {
            (self.col_ptr[j]..self.col_ptr[j + 1]).map(move |k| (self.row_idx[k], j, self.values[k]))
        })
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            a[(i, j)] += v;
        }
        a
    }
}

impl LinearOperator for CscMatrix {
    fn nrows(&self) -> usize {
        self.nrows
    }
    fn ncols(&self) -> usize {
        self.ncols
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = DVector::zeros(self.nrows);
        for j in 0..self.ncols {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                y[self.row_idx[k]] += self.values[k] * xj;
            }
        }
        y
    }
    fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        assert_eq!(y.len(), self.nrows);
        DVector::from_fn(self.ncols, |j, _| {
            (self.col_ptr[j]..self.col_ptr[j + 1]).map(|k| self.values[k] * y[self.row_idx[k]]).sum()
        })
    }
    fn frobenius_norm(&self) -> Option<f64> {
        Some(self.values.iter().map(|v| v * v).sum::<f64>().sqrt())
    }
    fn to_dense(&self) -> Option<DMatrix<f64>> {
        Some(self.dense())
    }
}

/// Dense or sparse storage for the problem matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Matrix {
    Dense(DMatrix<f64>),
    Sparse(CscMatrix),
}

impl Matrix {
    pub fn dense(&self) -> DMatrix<f64> {
        match self {
            Matrix::Dense(a) => a.clone(),
            Matrix::Sparse(a) => a.dense(),
        }
    }

    fn inner(&self) -> &dyn LinearOperator {
        match self {
            Matrix::Dense(a) => a,
            Matrix::Sparse(a) => a,
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Matrix::Dense(a) => a.iter().all(|v| v.is_finite()),
            Matrix::Sparse(a) => a.values.iter().all(|v| v.is_finite()),
        }
    }
}

impl LinearOperator for Matrix {
    fn nrows(&self) -> usize {
        self.inner().nrows()
    }
    fn ncols(&self) -> usize {
        self.inner().ncols()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.inner().apply(x)
    }
    fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        self.inner().apply_transpose(y)
    }
    fn frobenius_norm(&self) -> Option<f64> {
        self.inner().frobenius_norm()
    }
    fn to_dense(&self) -> Option<DMatrix<f64>> {
        Some(self.dense())
    }
}

/// Wraps an operator and counts every product taken through it.
///
/// Single-owner: counters use `Cell`, so a counting wrapper belongs to one
/// solver run.
pub struct CountingOperator<'a> {
    inner: &'a dyn LinearOperator,
    matvecs: Cell<usize>,
    rmatvecs: Cell<usize>,
}

impl<'a> CountingOperator<'a> {
    pub fn new(inner: &'a dyn LinearOperator) -> Self {
        Self { inner, matvecs: Cell::new(0), rmatvecs: Cell::new(0) }
    }

    pub fn matvecs(&self) -> usize {
        self.matvecs.get()
    }

    pub fn rmatvecs(&self) -> usize {
        self.rmatvecs.get()
    }

    /// The wrapped operator, for uncounted oracle access.
    pub fn uncounted(&self) -> &'a dyn LinearOperator {
        self.inner
    }
}

impl LinearOperator for CountingOperator<'_> {
    fn nrows(&self) -> usize {
        self.inner.nrows()
    }
    fn ncols(&self) -> usize {
        self.inner.ncols()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.matvecs.set(self.matvecs.get() + 1);
        self.inner.apply(x)
    }
    fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        self.rmatvecs.set(self.rmatvecs.get() + 1);
        self.inner.apply_transpose(y)
    }
    fn frobenius_norm(&self) -> Option<f64> {
        self.inner.frobenius_norm()
    }
    fn to_dense(&self) -> Option<DMatrix<f64>> {
        self.inner.to_dense()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csc_products_match_dense() {
        let trip = [(0, 0, 1.0), (2, 0, -2.0), (1, 1, 3.0), (2, 2, 4.0), (0, 2, 0.5), (0, 2, 0.5)];
        let a = CscMatrix::from_triplets(3, 3, &trip).unwrap();
        assert_eq!(a.nnz(), 5);
        let d = a.dense();
        assert_eq!(d[(0, 2)], 1.0);
        let x = DVector::from_vec(vec![1.0, -1.0, 2.0]);
        assert_eq!(a.apply(&x), &d * &x);
        assert_eq!(a.apply_transpose(&x), d.tr_mul(&x));
        assert!((a.frobenius_norm().unwrap() - d.norm()).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_triplet_is_rejected() {
        assert!(CscMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn counting_operator_counts() {
        let a = DMatrix::<f64>::identity(2, 2);
        let op = CountingOperator::new(&a);
        let v = DVector::from_vec(vec![1.0, 2.0]);
        op.apply(&v);
        op.apply(&v);
        op.apply_transpose(&v);
        assert_eq!((op.matvecs(), op.rmatvecs()), (2, 1));
        op.uncounted().apply(&v);
        assert_eq!(op.matvecs(), 2);
    }
}
