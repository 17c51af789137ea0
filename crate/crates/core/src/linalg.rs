//! Dense row-major matrices over f32/f64 with gemm-backed products.
//!
//! Training and benchmark paths run in f32; gradient-check tests run the
//! same code in f64. All reductions use a fixed accumulation order so a
//! run is reproducible bit-for-bit for a given seed and thread count.

use num_traits::Float;

/// Floating-point element type usable by the kernels.
pub trait Scalar:
    Float + Send + Sync + std::fmt::Debug + std::fmt::Display + std::iter::Sum + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    /// C[m x n] += alpha * A[m x k] * B[k x n] with explicit strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Matrix { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }

    pub fn fill(&mut self, v: S) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Rows [start, end) as a new matrix.
    pub fn rows_slice(&self, start: usize, end: usize) -> Matrix<S> {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Horizontal concatenation [self | other].
    pub fn hcat(&self, other: &Matrix<S>) -> Matrix<S> {
        assert_eq!(self.rows, other.rows);
        let cols = self.cols + other.cols;
        let mut out = Matrix::zeros(self.rows, cols);
        for r in 0..self.rows {
            out.row_mut(r)[..self.cols].copy_from_slice(self.row(r));
            out.row_mut(r)[self.cols..].copy_from_slice(other.row(r));
        }
        out
    }

    /// C = A * B.
    pub fn matmul_nn(&self, b: &Matrix<S>) -> Matrix<S> {
        assert_eq!(self.cols, b.rows);
        let mut c = Matrix::zeros(self.rows, b.cols);
        unsafe {
            S::gemm(
                self.rows,
                self.cols,
                b.cols,
                S::one(),
                self.data.as_ptr(),
                self.cols as isize,
                1,
                b.data.as_ptr(),
                b.cols as isize,
                1,
                S::zero(),
                c.data.as_mut_ptr(),
                c.cols as isize,
                1,
            );
        }
        c
    }

    /// C = A * B^T. Used for x[B x in] * W[out x in]^T.
    pub fn matmul_nt(&self, b: &Matrix<S>) -> Matrix<S> {
        assert_eq!(self.cols, b.cols);
        let mut c = Matrix::zeros(self.rows, b.rows);
        unsafe {
            S::gemm(
                self.rows,
                self.cols,
                b.rows,
                S::one(),
                self.data.as_ptr(),
                self.cols as isize,
                1,
                b.data.as_ptr(),
                1,
                b.cols as isize,
                S::zero(),
                c.data.as_mut_ptr(),
                c.cols as isize,
                1,
            );
        }
        c
    }

    /// C += A^T * B. Used for weight gradients dW += dpre^T * x.
    pub fn matmul_tn_acc(&self, b: &Matrix<S>, c: &mut Matrix<S>) {
        assert_eq!(self.rows, b.rows);
        assert_eq!(c.rows, self.cols);
        assert_eq!(c.cols, b.cols);
        unsafe {
            S::gemm(
                self.cols,
                self.rows,
                b.cols,
                S::one(),
                self.data.as_ptr(),
                1,
                self.cols as isize,
                b.data.as_ptr(),
                b.cols as isize,
                1,
                S::one(),
                c.data.as_mut_ptr(),
                c.cols as isize,
                1,
            );
        }
    }
}
