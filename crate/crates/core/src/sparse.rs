//! Compressed sparse row storage, norms, and test-matrix generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::operator::LinearOperator;
use crate::vector;

#[derive(Debug, Error, PartialEq)]
pub enum SparseError {
    #[error("row_offsets must have length nrows + 1 = {expected}, got {got}")]
    OffsetsLength { expected: usize, got: usize },
    #[error("row_offsets must start at 0, be non-decreasing and end at nnz")]
    BadOffsets,
    #[error("col_indices and values differ in length ({cols} vs {vals})")]
    LengthMismatch { cols: usize, vals: usize },
    #[error("column index {col} out of bounds in row {row} (ncols = {ncols})")]
    ColumnOutOfBounds { row: usize, col: usize, ncols: usize },
    #[error("column indices in row {row} are not strictly increasing")]
    UnsortedRow { row: usize },
    #[error("non-finite value {value} at ({row}, {col})")]
    NonFinite { row: usize, col: usize, value: f64 },
    #[error("entry ({row}, {col}) outside a {nrows}x{ncols} matrix")]
    EntryOutOfBounds { row: usize, col: usize, nrows: usize, ncols: usize },
    #[error("dimension mismatch: expected length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("grid size must be at least 1")]
    EmptyGrid,
}

/// Real sparse matrix in CSR form. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

/// Summary of a matrix used to configure the fault detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixInfo {
    pub nrows: usize,
    pub ncols: usize,
    pub nnz: usize,
    pub frobenius_norm: f64,
    pub two_norm_estimate: f64,
    pub two_norm_converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl SparseMatrix {
    /// Builds a matrix from raw CSR arrays, validating every structural invariant.
    pub fn new(
        nrows: usize,
        ncols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, SparseError> {
        if row_offsets.len() != nrows + 1 {
            return Err(SparseError::OffsetsLength { expected: nrows + 1, got: row_offsets.len() });
        }
        if col_indices.len() != values.len() {
            return Err(SparseError::LengthMismatch { cols: col_indices.len(), vals: values.len() });
        }
        if row_offsets[0] != 0
            || row_offsets[nrows] != values.len()
            || row_offsets.windows(2).any(|w| w[0] > w[1])
        {
            return Err(SparseError::BadOffsets);
        }
        for row in 0..nrows {
            let range = row_offsets[row]..row_offsets[row + 1];
            let cols = &col_indices[range.clone()];
            for (k, &col) in cols.iter().enumerate() {
                if col >= ncols {
                    return Err(SparseError::ColumnOutOfBounds { row, col, ncols });
                }
                if k > 0 && cols[k - 1] >= col {
                    return Err(SparseError::UnsortedRow { row });
                }
            }
            for (&col, &value) in cols.iter().zip(&values[range]) {
                if !value.is_finite() {
                    return Err(SparseError::NonFinite { row, col, value });
                }
            }
        }
        Ok(Self { nrows, ncols, row_offsets, col_indices, values })
    }

    /// Builds a matrix from 0-based (row, col, value) triplets. Duplicates are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, SparseError> {
        let mut counts = vec![0usize; nrows + 1];
        for &(row, col, value) in triplets {
            if row >= nrows || col >= ncols {
                return Err(SparseError::EntryOutOfBounds { row, col, nrows, ncols });
            }
            if !value.is_finite() {
                return Err(SparseError::NonFinite { row, col, value });
            }
            counts[row + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        // bucket by row, then sort and merge each row
        let mut next = counts.clone();
        let mut bucket = vec![(0usize, 0.0f64); triplets.len()];
        for &(row, col, value) in triplets {
            bucket[next[row]] = (col, value);
            next[row] += 1;
        }
        let mut row_offsets = Vec::with_capacity(nrows + 1);
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_offsets.push(0);
        for row in 0..nrows {
            let entries = &mut bucket[counts[row]..counts[row + 1]];
            entries.sort_by_key(|&(c, _)| c);
            for &(col, value) in entries.iter() {
                if col_indices.len() > row_offsets[row] && *col_indices.last().unwrap() == col {
                    *values.last_mut().unwrap() += value;
                } else {
                    col_indices.push(col);
                    values.push(value);
                }
            }
            row_offsets.push(values.len());
        }
        Self::new(nrows, ncols, row_offsets, col_indices, values)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Stores every entry of a row-major dense matrix, zeros included.
    pub fn from_dense(nrows: usize, ncols: usize, data: &[f64]) -> Result<Self, SparseError> {
        if data.len() != nrows * ncols {
            return Err(SparseError::DimensionMismatch { expected: nrows * ncols, got: data.len() });
        }
        let row_offsets = (0..=nrows).map(|i| i * ncols).collect();
        let col_indices = (0..nrows).flat_map(|_| 0..ncols).collect();
        Self::new(nrows, ncols, row_offsets, col_indices, data.to_vec())
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iterates over (col, value) pairs of one row.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        match self.col_indices[range.clone()].binary_search(&j) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn transpose(&self) -> Self {
        let trip: Vec<_> = self.triplets().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, &trip).expect("transpose of a valid matrix")
    }

    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>, SparseError> {
        if x.len() != self.ncols {
            return Err(SparseError::DimensionMismatch { expected: self.ncols, got: x.len() });
        }
        let mut y = vec![0.0; self.nrows];
        self.spmv_into(x, &mut y);
        Ok(y)
    }

    /// y := A x. Panics on dimension mismatch.
    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let range = self.row_offsets[i]..self.row_offsets[i + 1];
            *yi = self.col_indices[range.clone()]
                .iter()
                .zip(&self.values[range])
                .map(|(&j, &a)| a * x[j])
                .sum();
        }
    }

    /// y := Aᵀ x. Panics on dimension mismatch.
    pub fn spmv_transpose_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.nrows);
        assert_eq!(y.len(), self.ncols);
        y.fill(0.0);
        for (i, &xi) in x.iter().enumerate() {
            for (j, a) in self.row(i) {
                y[j] += a * xi;
            }
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Power iteration on AᵀA seeded with the all-ones vector.
    ///
    /// Returns the square root of the Rayleigh quotient of the final iterate. Stops once the
    /// relative change of the estimate drops below `tol`.
    pub fn two_norm_estimate(&self, max_iters: usize, tol: f64) -> NormEstimate {
        let mut x = vec![1.0 / (self.ncols as f64).sqrt(); self.ncols];
        let mut ax = vec![0.0; self.nrows];
        let mut atax = vec![0.0; self.ncols];
        let mut estimate = 0.0;
        for it in 1..=max_iters {
            self.spmv_into(&x, &mut ax);
            self.spmv_transpose_into(&ax, &mut atax);
            // x has unit norm, so xᵀAᵀAx = ‖Ax‖²
            let next = vector::norm2(&ax);
            let nrm = vector::norm2(&atax);
            if nrm == 0.0 {
                return NormEstimate { value: next, iterations: it, converged: true };
            }
            let change = (next - estimate).abs();
            estimate = next;
            if it > 1 && change <= tol * estimate {
                return NormEstimate { value: estimate, iterations: it, converged: true };
            }
            for (xi, v) in x.iter_mut().zip(&atax) {
                *xi = v / nrm;
            }
        }
        NormEstimate { value: estimate, iterations: max_iters, converged: false }
    }

    /// Norms with the default power-iteration settings (100 iterations, tol 1e-6).
    pub fn info(&self) -> MatrixInfo {
        let est = self.two_norm_estimate(100, 1e-6);
        MatrixInfo {
            nrows: self.nrows,
            ncols: self.ncols,
            nnz: self.nnz(),
            frobenius_norm: self.frobenius_norm(),
            two_norm_estimate: est.value,
            two_norm_converged: est.converged,
        }
    }
}

impl LinearOperator for SparseMatrix {
    fn dim(&self) -> usize {
        debug_assert_eq!(self.nrows, self.ncols);
        self.nrows
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.spmv_into(x, y);
    }
}

/// The n²×n² five-point Laplacian on an n×n grid (Dirichlet boundary), natural ordering.
pub fn gen_poisson(n: usize) -> Result<SparseMatrix, SparseError> {
    if n == 0 {
        return Err(SparseError::EmptyGrid);
    }
    let dim = n * n;
    let nnz = 5 * dim - 4 * n;
    let mut row_offsets = Vec::with_capacity(dim + 1);
    let mut col_indices = Vec::with_capacity(nnz);
    let mut values = Vec::with_capacity(nnz);
    row_offsets.push(0);
    for gi in 0..n {
        for gj in 0..n {
            let row = gi * n + gj;
            if gi > 0 {
                col_indices.push(row - n);
                values.push(-1.0);
            }
            if gj > 0 {
                col_indices.push(row - 1);
                values.push(-1.0);
            }
            col_indices.push(row);
            values.push(4.0);
            if gj + 1 < n {
                col_indices.push(row + 1);
                values.push(-1.0);
            }
            if gi + 1 < n {
                col_indices.push(row + n);
                values.push(-1.0);
            }
            row_offsets.push(values.len());
        }
    }
    Ok(SparseMatrix { nrows: dim, ncols: dim, row_offsets, col_indices, values })
}

/// Random nonsymmetric, strictly diagonally dominant sparse matrix.
///
/// Each row gets up to `per_row` off-diagonal entries drawn from U(-1, 1); the diagonal is the
/// row's absolute off-diagonal sum plus U(0.5, 1.5) with a random sign.
pub fn gen_random_sparse(n: usize, per_row: usize, seed: u64) -> Result<SparseMatrix, SparseError> {
    if n == 0 {
        return Err(SparseError::EmptyGrid);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trip = Vec::with_capacity(n * (per_row + 1));
    for i in 0..n {
        let mut offsum = 0.0;
        for _ in 0..per_row.min(n - 1) {
            let j = rng.gen_range(0..n);
            if j == i {
                continue;
            }
            let v: f64 = rng.gen_range(-1.0..1.0);
            offsum += v.abs();
            trip.push((i, j, v));
        }
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        trip.push((i, i, sign * (offsum + rng.gen_range(0.5..1.5))));
    }
    SparseMatrix::from_triplets(n, n, &trip)
}

/// Dense random matrix stored in CSR: U(-1, 1) entries plus 1.5·√n on the diagonal.
pub fn gen_random_dense(n: usize, seed: u64) -> Result<SparseMatrix, SparseError> {
    if n == 0 {
        return Err(SparseError::EmptyGrid);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift = 1.5 * (n as f64).sqrt();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            data[i * n + j] = rng.gen_range(-1.0..1.0) + if i == j { shift } else { 0.0 };
        }
    }
    SparseMatrix::from_dense(n, n, &data)
}
