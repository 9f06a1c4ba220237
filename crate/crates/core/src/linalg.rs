//! Small dense linear algebra: a row-major matrix, Cholesky factorisation
//! and a column-dependency probe. Sizes here are a handful of columns by
//! tens of thousands of rows, so nothing fancier is needed.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = F::one();
        }
        m
    }

    /// Builds a matrix from a flat row-major buffer.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), rows * cols, "buffer length does not match shape");
        Self { rows, cols, data }
    }

    /// Builds a matrix from row vectors. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<F>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<F> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[F]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    /// Selects rows by index (with repetition allowed).
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn mat_vec(&self, v: &[F]) -> Vec<F> {
        assert_eq!(v.len(), self.cols);
        self.rows_iter().map(|r| dot(r, v)).collect()
    }

    /// `vᵀ A v` for a square matrix.
    pub fn quad_form(&self, v: &[F]) -> F {
        assert_eq!(self.rows, self.cols);
        let av = self.mat_vec(v);
        dot(&av, v)
    }

    pub fn is_symmetric(&self, tol: F) -> bool {
        if self.rows != self.cols {
            return false;
        }
        for i in 0..self.rows {
            for j in 0..i {
                let (a, b) = (self[(i, j)], self[(j, i)]);
                if (a - b).abs() > tol * F::one().max(a.abs().max(b.abs())) {
                    return false;
                }
            }
        }
        true
    }

    pub fn scale(&mut self, s: F) {
        for x in &mut self.data {
            *x *= s;
        }
    }
}

impl<F> std::ops::Index<(usize, usize)> for Matrix<F> {
    type Output = F;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &F {
        &self.data[i * self.cols + j]
    }
}

impl<F> std::ops::IndexMut<(usize, usize)> for Matrix<F> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut F {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    let mut acc = F::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky<F> {
    l: Matrix<F>,
}

impl<F: Scalar> Cholesky<F> {
    /// Factorises a symmetric positive definite matrix. Returns `None` when a
    /// pivot is not strictly positive.
    pub fn new(a: &Matrix<F>) -> Option<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "Cholesky needs a square matrix");
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > F::zero()) || !d.is_finite() {
                return None;
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Some(Self { l })
    }

    pub fn solve(&self, b: &[F]) -> Vec<F> {
        let n = self.l.nrows();
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l[(k, i)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    /// `A⁻¹`, symmetrised.
    pub fn inverse(&self) -> Matrix<F> {
        let n = self.l.nrows();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![F::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = F::zero());
            e[j] = F::one();
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        let half = F::of(0.5);
        for i in 0..n {
            for j in 0..i {
                let v = (inv[(i, j)] + inv[(j, i)]) * half;
                inv[(i, j)] = v;
                inv[(j, i)] = v;
            }
        }
        inv
    }
}

/// Indices of columns that are (numerically) linear combinations of the
/// columns before them. Uses modified Gram-Schmidt with one
/// reorthogonalisation pass on unit-normalised columns.
pub fn dependent_columns<F: Scalar>(x: &Matrix<F>, rel_tol: F) -> Vec<usize> {
    let (n, k) = (x.nrows(), x.ncols());
    let mut basis: Vec<Vec<F>> = Vec::with_capacity(k);
    let mut dependent = Vec::new();
    for j in 0..k {
        let mut v = x.column(j);
        let norm0 = dot(&v, &v).sqrt();
        if norm0 == F::zero() {
            dependent.push(j);
            continue;
        }
        v.iter_mut().for_each(|e| *e /= norm0);
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &v);
                for i in 0..n {
                    v[i] -= c * q[i];
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm <= rel_tol {
            dependent.push(j);
        } else {
            v.iter_mut().for_each(|e| *e /= norm);
            basis.push(v);
        }
    }
    dependent
}
