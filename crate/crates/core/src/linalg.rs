//! Dense row-major matrices and the few kernels the model needs.
//!
//! Products go through `matrixmultiply`; everything else is plain loops.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Index, IndexMut};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("shape mismatch: {op} got {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("matrix is singular to working precision (pivot {pivot:e} at column {column})")]
    Singular { column: usize, pivot: f64 },
}

/// Row-major `rows x cols` matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Wraps a row-major buffer. Returns `None` if the length does not match.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == rows * cols).then_some(Self { rows, cols, data })
    }

    pub fn from_rows<const N: usize>(rows: &[[f64; N]]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * N);
        for r in rows {
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols: N,
            data,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `self * rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != rhs.rows {
            return Err(LinalgError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        gemm(1.0, self, Trans::No, rhs, Trans::No, 0.0, &mut out);
        Ok(out)
    }

    /// Adds `bias` to every row.
    pub fn add_row_vector(&mut self, bias: &[f64]) {
        debug_assert_eq!(bias.len(), self.cols);
        for row in self.data.chunks_exact_mut(self.cols.max(1)) {
            for (x, b) in row.iter_mut().zip(bias) {
                *x += b;
            }
        }
    }

    /// Column sums, i.e. the gradient of a broadcast row bias.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.data.chunks_exact(self.cols.max(1)) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trans {
    No,
    Yes,
}

/// `c <- alpha * op(a) * op(b) + beta * c`.
///
/// Panics on inconsistent shapes; callers validate user-facing inputs.
pub fn gemm(alpha: f64, a: &Matrix, ta: Trans, b: &Matrix, tb: Trans, beta: f64, c: &mut Matrix) {
    let (m, k, rsa, csa) = match ta {
        Trans::No => (a.rows, a.cols, a.cols as isize, 1),
        Trans::Yes => (a.cols, a.rows, 1, a.cols as isize),
    };
    let (kb, n, rsb, csb) = match tb {
        Trans::No => (b.rows, b.cols, b.cols as isize, 1),
        Trans::Yes => (b.cols, b.rows, 1, b.cols as isize),
    };
    assert_eq!(k, kb, "gemm inner dimension");
    assert_eq!((m, n), c.shape(), "gemm output shape");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for x in c.data.iter_mut() {
            *x *= beta;
        }
        return;
    }
    // SAFETY: strides and extents describe the live buffers of `a`, `b` and
    // `c`, whose lengths were checked against their shapes above; `c` does
    // not alias the inputs because it is borrowed mutably.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

/// Solves `a * x = b` by Gaussian elimination with partial pivoting.
pub fn solve(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    let n = a.rows;
    if a.cols != n || b.rows != n {
        return Err(LinalgError::ShapeMismatch {
            op: "solve",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let mut lu = a.clone();
    let mut x = b.clone();
    let scale = a.data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, lu[(r, col)]))
            .max_by(|p, q| p.1.abs().total_cmp(&q.1.abs()))
            .expect("non-empty pivot range");
        if pivot.abs() <= 1e-13 * scale {
            return Err(LinalgError::Singular { column: col, pivot });
        }
        if pivot_row != col {
            swap_rows(&mut lu, col, pivot_row);
            swap_rows(&mut x, col, pivot_row);
        }
        for r in col + 1..n {
            let factor = lu[(r, col)] / lu[(col, col)];
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                lu[(r, c)] -= factor * lu[(col, c)];
            }
            for c in 0..x.cols {
                x[(r, c)] -= factor * x[(col, c)];
            }
        }
    }
    for col in (0..n).rev() {
        let d = lu[(col, col)];
        for c in 0..x.cols {
            let mut acc = x[(col, c)];
            for k in col + 1..n {
                acc -= lu[(col, k)] * x[(k, c)];
            }
            x[(col, c)] = acc / d;
        }
    }
    Ok(x)
}

fn swap_rows(m: &mut Matrix, a: usize, b: usize) {
    let cols = m.cols;
    for c in 0..cols {
        m.data.swap(a * cols + c, b * cols + c);
    }
}
