//! Small dense row-major matrix and a symmetric positive-definite solver.

use std::ops::{Index, IndexMut};

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `xᵀ A x` for square `A`.
    pub fn quadratic_form(&self, x: &[T]) -> T {
        dot(x, &self.mul_vec(x))
    }

    pub fn add_to_diagonal(&mut self, ridge: &[T]) {
        assert_eq!(self.rows, self.cols);
        for (i, &v) in ridge.iter().enumerate() {
            self[(i, i)] = self[(i, i)] + v;
        }
    }

    /// Lower-triangular Cholesky factor. On failure returns the pivot index and
    /// the pivot-ratio condition estimate accumulated so far.
    pub fn cholesky(&self) -> Result<Cholesky<T>, CholeskyFailure> {
        assert_eq!(self.rows, self.cols, "Cholesky needs a square matrix");
        let n = self.rows;
        let mut l = Matrix::zeros(n, n);
        let mut min_pivot = f64::INFINITY;
        let mut max_pivot = 0.0f64;
        for j in 0..n {
            let row_j = &mut l.data[j * n..(j + 1) * n];
            let sq = dot(&row_j[..j], &row_j[..j]);
            let pivot = self[(j, j)] - sq;
            let p = pivot.as_f64();
            if !(p > 0.0) || !p.is_finite() {
                return Err(CholeskyFailure {
                    pivot: j,
                    condition: condition_from(max_pivot, min_pivot.min(p.abs())),
                });
            }
            min_pivot = min_pivot.min(p);
            max_pivot = max_pivot.max(p);
            let d = pivot.sqrt();
            row_j[j] = d;
            // Column j below the diagonal, computed from rows i > j.
            for i in (j + 1)..n {
                let (upper, lower) = l.data.split_at_mut(i * n);
                let rj = &upper[j * n..j * n + j];
                let ri = &mut lower[..n];
                let v = (self[(i, j)] - dot(&ri[..j], rj)) / d;
                ri[j] = v;
            }
        }
        Ok(Cholesky {
            l,
            condition: condition_from(max_pivot, min_pivot),
        })
    }
}

fn condition_from(max_pivot: f64, min_pivot: f64) -> f64 {
    if min_pivot > 0.0 {
        max_pivot / min_pivot
    } else {
        f64::INFINITY
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CholeskyFailure {
    pub pivot: usize,
    pub condition: f64,
}

#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: Matrix<T>,
    condition: f64,
}

impl<T: Scalar> Cholesky<T> {
    pub fn dim(&self) -> usize {
        self.l.rows
    }

    /// Ratio of the largest to smallest squared pivot, a cheap lower bound
    /// proxy for the condition number.
    pub fn condition_estimate(&self) -> f64 {
        self.condition
    }

    pub fn factor(&self) -> &Matrix<T> {
        &self.l
    }

    pub fn solve_in_place(&self, b: &mut [T]) {
        self.forward_in_place(b);
        self.backward_in_place(b);
    }

    /// Solves `Lᵀ x = b`.
    pub fn backward_in_place(&self, b: &mut [T]) {
        let n = self.dim();
        assert_eq!(b.len(), n);
        for i in (0..n).rev() {
            b[i] = b[i] / self.l[(i, i)];
            let bi = b[i];
            let row = self.l.row(i);
            for k in 0..i {
                b[k] = b[k] - row[k] * bi;
            }
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Solves `L y = b`.
    pub fn forward_in_place(&self, b: &mut [T]) {
        let n = self.dim();
        assert_eq!(b.len(), n);
        for i in 0..n {
            let row = self.l.row(i);
            b[i] = (b[i] - dot(&row[..i], &b[..i])) / row[i];
        }
    }

    /// Diagonal of `A⁻¹` from the columns of `L⁻¹`.
    pub fn inverse_diagonal(&self) -> Vec<T> {
        let n = self.dim();
        let mut out = vec![T::zero(); n];
        let mut v = vec![T::zero(); n];
        for i in 0..n {
            // L⁻¹ e_i is zero above row i.
            for x in v.iter_mut() {
                *x = T::zero();
            }
            v[i] = T::one() / self.l[(i, i)];
            for k in (i + 1)..n {
                let row = self.l.row(k);
                v[k] = -dot(&row[i..k], &v[i..k]) / row[k];
            }
            out[i] = dot(&v[i..], &v[i..]);
        }
        out
    }
}

/// Dot product with eight independent accumulators. The summation order is
/// fixed, so results are reproducible run to run.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] = acc[k] + x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail = tail + *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}
