//! Small dense linear-algebra helpers shared by the simulator and the estimators.
//!
//! Complex matrices are nalgebra `DMatrix<Complex<f64>>`. Hot real products go
//! straight to `matrixmultiply` so both the column-major nalgebra storage and
//! the row-major network buffers can be fed without copies.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex;

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type RMatrix = DMatrix<f64>;

/// Strided read-only view over a real matrix buffer.
#[derive(Clone, Copy)]
pub struct View<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a> View<'a> {
    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        Self {
            data,
            rows,
            cols,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    pub fn col_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        Self {
            data,
            rows,
            cols,
            row_stride: 1,
            col_stride: rows as isize,
        }
    }

    pub fn of(m: &'a RMatrix) -> Self {
        Self::col_major(m.as_slice(), m.nrows(), m.ncols())
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }
}

/// `c = alpha * a * b + beta * c` with `c` stored row-major (`rows x cols`).
pub fn gemm_into(alpha: f64, a: View<'_>, b: View<'_>, beta: f64, c: &mut [f64], c_cols: usize) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    assert_eq!(b.cols, c_cols);
    assert!(c.len() >= a.rows * c_cols);
    if a.rows == 0 || c_cols == 0 {
        return;
    }
    // SAFETY: the asserts above bound every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr(),
            c_cols as isize,
            1,
        );
    }
}

/// Real product of two nalgebra matrices through the packed kernel.
pub fn matmul(a: &RMatrix, b: &RMatrix) -> RMatrix {
    matmul_views(View::of(a), View::of(b))
}

pub fn matmul_views(a: View<'_>, b: View<'_>) -> RMatrix {
    let mut out = vec![0.0; a.rows * b.cols];
    gemm_into(1.0, a, b, 0.0, &mut out, b.cols);
    RMatrix::from_row_slice(a.rows, b.cols, &out)
}

/// Split a complex matrix into (real, imaginary) parts.
pub fn split(m: &CMatrix) -> (RMatrix, RMatrix) {
    (m.map(|z| z.re), m.map(|z| z.im))
}

pub fn join(re: &RMatrix, im: &RMatrix) -> CMatrix {
    re.zip_map(im, C64::new)
}

/// Complex product through four real products.
pub fn cmatmul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ai) = split(a);
    let (br, bi) = split(b);
    let re = matmul(&ar, &br) - matmul(&ai, &bi);
    let im = matmul(&ar, &bi) + matmul(&ai, &br);
    join(&re, &im)
}

/// `A A^H` for `A = re + j im`, symmetrized so the result is exactly Hermitian.
pub fn hermitian_gram(re: &RMatrix, im: &RMatrix) -> CMatrix {
    let (vr, vi) = (View::of(re), View::of(im));
    let gr = matmul_views(vr, vr.t()) + matmul_views(vi, vi.t());
    let gi = matmul_views(vi, vr.t()) - matmul_views(vr, vi.t());
    hermitize(&join(&gr, &gi))
}

/// `(M + M^H) / 2`.
pub fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).map(|z| z * 0.5)
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Max `|M(n,m) - conj(M(m,n))|`.
pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn relative_frobenius(a: &CMatrix, reference: &CMatrix) -> f64 {
    frobenius(&(a - reference)) / frobenius(reference)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues sorted descending.
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Columns are eigenvectors, in the order of `values`.
    pub vectors: CMatrix,
}

pub fn hermitian_eigen(m: &CMatrix) -> HermitianEigen {
    let eig = SymmetricEigen::new(hermitize(m));
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    HermitianEigen { values, vectors }
}

/// Eigenvalues only, descending.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut v: Vec<f64> = hermitize(m).symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Eigenvalues of a real symmetric matrix, descending.
pub fn symmetric_eigenvalues(m: &RMatrix) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut v: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Standard complex-to-real map `[[Re, -Im], [Im, Re]]`.
pub fn complex_to_real(m: &CMatrix) -> RMatrix {
    let (r, c) = m.shape();
    RMatrix::from_fn(2 * r, 2 * c, |i, j| {
        let z = m[(i % r, j % c)];
        match (i < r, j < c) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

/// `[Re v; Im v]`.
pub fn stack_real(v: &[C64]) -> Vec<f64> {
    v.iter().map(|z| z.re).chain(v.iter().map(|z| z.im)).collect()
}

/// Inverse of [`stack_real`].
pub fn unstack_real(v: &[f64]) -> Vec<C64> {
    let n = v.len() / 2;
    (0..n).map(|i| C64::new(v[i], v[n + i])).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn to_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
