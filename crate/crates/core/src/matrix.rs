//! Dense row-major matrices.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense `rows × cols` matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    /// Builds a matrix from user-supplied data; rejects wrong lengths and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Validation(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite entry at row {}, column {}",
                i / cols.max(1),
                i % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Internal constructor for data produced by our own kernels.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::Validation(format!(
                "ragged rows: row {i} has {} entries, expected {cols}",
                rows[i].len()
            )));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::zero())
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self::from_raw(rows, cols, vec![value; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    /// `1 × n` matrix.
    pub fn row_vector(values: Vec<T>) -> Self {
        Self::from_raw(1, values.len(), values)
    }

    /// `n × 1` matrix.
    pub fn column_vector(values: Vec<T>) -> Self {
        Self::from_raw(values.len(), 1, values)
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: T) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[T]> {
        (0..self.rows).map(move |r| self.row(r))
    }

    pub fn column(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                out.push(self.get(r, c));
            }
        }
        Self::from_raw(self.cols, self.rows, out)
    }

    fn product(m: usize, k: usize, n: usize, a: (&[T], (isize, isize)), b: (&[T], (isize, isize))) -> Self {
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, a.0, a.1, b.0, b.1, &mut out, (n as isize, 1), false);
        Self::from_raw(m, n, out)
    }

    fn strides(&self) -> (isize, isize) {
        (self.cols as isize, 1)
    }

    fn strides_t(&self) -> (isize, isize) {
        (1, self.cols as isize)
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::dims("matmul", self.shape(), other.shape()));
        }
        Ok(Self::product(
            self.rows,
            self.cols,
            other.cols,
            (&self.data, self.strides()),
            (&other.data, other.strides()),
        ))
    }

    /// `self · otherᵀ`, the layout of a batch times a `(out × in)` weight matrix.
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::dims("matmul_nt", self.shape(), other.shape()));
        }
        Ok(Self::product(
            self.rows,
            self.cols,
            other.rows,
            (&self.data, self.strides()),
            (&other.data, other.strides_t()),
        ))
    }

    /// `selfᵀ · other`.
    pub fn matmul_tn(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::dims("matmul_tn", self.shape(), other.shape()));
        }
        Ok(Self::product(
            self.cols,
            self.rows,
            other.cols,
            (&self.data, self.strides_t()),
            (&other.data, other.strides()),
        ))
    }

    /// Adds the row vector `v` to every row.
    pub fn add_row_broadcast(&self, v: &[T]) -> Result<Self> {
        if v.len() != self.cols {
            return Err(Error::dims("add_row_broadcast", self.shape(), (1, v.len())));
        }
        let mut out = self.data.clone();
        for row in out.chunks_mut(self.cols.max(1)) {
            for (x, b) in row.iter_mut().zip(v) {
                *x = *x + *b;
            }
        }
        Ok(Self::from_raw(self.rows, self.cols, out))
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::dims(op, self.shape(), other.shape()));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self::from_raw(self.rows, self.cols, data))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_raw(self.rows, self.cols, self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|x| x * k)
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    /// Per-column maximum together with the row that attains it (lowest index on ties).
    pub fn column_max_over_rows(&self) -> Result<(Vec<T>, Vec<usize>)> {
        if self.rows == 0 {
            return Err(Error::dims("column_max_over_rows", self.shape(), (1, self.cols)));
        }
        let mut best = self.row(0).to_vec();
        let mut arg = vec![0; self.cols];
        for r in 1..self.rows {
            for (c, &x) in self.row(r).iter().enumerate() {
                if x > best[c] {
                    best[c] = x;
                    arg[c] = r;
                }
            }
        }
        Ok((best, arg))
    }

    /// Multiplies column `k` by `signs[k]`; every sign must be exactly ±1.
    pub fn scale_columns(&self, signs: &[T]) -> Result<Self> {
        if signs.len() != self.cols {
            return Err(Error::dims("scale_columns", self.shape(), (1, signs.len())));
        }
        if let Some(k) = signs.iter().position(|&s| s != T::one() && s != -T::one()) {
            return Err(Error::Config(format!("sign vector entry {k} is {}, expected +1 or -1", signs[k])));
        }
        let mut out = self.data.clone();
        for row in out.chunks_mut(self.cols.max(1)) {
            for (x, &s) in row.iter_mut().zip(signs) {
                *x = *x * s;
            }
        }
        Ok(Self::from_raw(self.rows, self.cols, out))
    }

    pub fn column_sums(&self) -> Vec<T> {
        let mut sums = vec![T::zero(); self.cols];
        for row in self.row_iter() {
            for (s, &x) in sums.iter_mut().zip(row) {
                *s = *s + x;
            }
        }
        sums
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self::from_raw(indices.len(), self.cols, data)
    }

    pub fn vstack(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::dims("vstack", self.shape(), other.shape()));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self::from_raw(self.rows + other.rows, self.cols, data))
    }

    /// Largest absolute entrywise difference; `None` when shapes differ.
    pub fn max_abs_diff(&self, other: &Self) -> Option<T> {
        (self.shape() == other.shape()).then(|| {
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| (a - b).abs())
                .fold(T::zero(), T::max)
        })
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().map(|x| x.abs()).fold(T::zero(), T::max)
    }

    pub fn sum_squares(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }
}

impl<T: fmt::Debug> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} ", self.rows, self.cols)?;
        f.debug_list()
            .entries(self.data.chunks(self.cols.max(1)).take(self.rows))
            .finish()
    }
}
