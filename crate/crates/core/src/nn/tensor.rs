//! Dense row-major tensors and a strided GEMM wrapper.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

/// Floating-point element type. `f32` is used for training, `f64` for
/// numerical verification.
pub trait Scalar:
    Float + FromPrimitive + Default + Debug + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    /// `C = alpha * A B + beta * C` over raw strided storage.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-aliasing (for C)
    /// matrices of the stated sizes.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
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

    fn to_f32(self) -> f32;

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn to_f32(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn to_f32(self) -> f32 {
        self as f32
    }
}

/// Row-major 2D tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("ragged rows"));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn view(&self) -> MatView<'_, T> {
        MatView {
            data: &self.data,
            offset: 0,
            rows: self.rows,
            cols: self.cols,
            rs: self.cols as isize,
            cs: 1,
        }
    }

    /// Column block `[start, start + width)` as a strided view.
    pub fn col_block(&self, start: usize, width: usize) -> MatView<'_, T> {
        assert!(start + width <= self.cols);
        MatView {
            data: &self.data,
            offset: start,
            rows: self.rows,
            cols: width,
            rs: self.cols as isize,
            cs: 1,
        }
    }

    /// Rows `[r0, r0 + rows)` and columns `[c0, c0 + cols)` as a view.
    pub fn block(&self, r0: usize, rows: usize, c0: usize, cols: usize) -> MatView<'_, T> {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols);
        MatView {
            data: &self.data,
            offset: r0 * self.cols + c0,
            rows,
            cols,
            rs: self.cols as isize,
            cs: 1,
        }
    }

    pub fn block_mut(&mut self, r0: usize, rows: usize, c0: usize, cols: usize) -> MatViewMut<'_, T> {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols);
        let stride = self.cols;
        MatViewMut {
            data: &mut self.data,
            offset: r0 * stride + c0,
            rows,
            cols,
            rs: stride as isize,
            cs: 1,
        }
    }

    pub fn view_mut(&mut self) -> MatViewMut<'_, T> {
        let (rows, cols) = (self.rows, self.cols);
        MatViewMut {
            data: &mut self.data,
            offset: 0,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    pub fn col_block_mut(&mut self, start: usize, width: usize) -> MatViewMut<'_, T> {
        assert!(start + width <= self.cols);
        let (rows, cols) = (self.rows, self.cols);
        MatViewMut {
            data: &mut self.data,
            offset: start,
            rows,
            cols: width,
            rs: cols as isize,
            cs: 1,
        }
    }

    pub fn add_assign(&mut self, other: &Matrix<T>) {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in add_assign");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&mut self, s: T) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix<T> {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix<T> {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }
}

/// Read-only strided matrix view.
#[derive(Debug, Clone, Copy)]
pub struct MatView<'a, T> {
    pub data: &'a [T],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a, T> MatView<'a, T> {
    pub fn t(self) -> Self {
        MatView {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    fn max_index(&self) -> Option<usize> {
        if self.rows == 0 || self.cols == 0 {
            return None;
        }
        let last = self.offset as isize + (self.rows as isize - 1) * self.rs + (self.cols as isize - 1) * self.cs;
        Some(last as usize)
    }
}

/// Mutable strided matrix view.
#[derive(Debug)]
pub struct MatViewMut<'a, T> {
    pub data: &'a mut [T],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

/// `C = alpha * A B + beta * C` on views. Panics on shape mismatch.
pub fn gemm<T: Scalar>(alpha: T, a: MatView<'_, T>, b: MatView<'_, T>, beta: T, c: MatViewMut<'_, T>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!(a.rows, c.rows, "gemm output rows");
    assert_eq!(b.cols, c.cols, "gemm output cols");
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    if let Some(i) = a.max_index() {
        assert!(i < a.data.len());
    }
    if let Some(i) = b.max_index() {
        assert!(i < b.data.len());
    }
    let c_last = c.offset as isize + (c.rows as isize - 1) * c.rs + (c.cols as isize - 1) * c.cs;
    assert!((c_last as usize) < c.data.len());
    if a.cols == 0 {
        // Empty inner dimension: C = beta * C.
        for r in 0..c.rows {
            for col in 0..c.cols {
                let i = (c.offset as isize + r as isize * c.rs + col as isize * c.cs) as usize;
                c.data[i] = if beta == T::zero() { T::zero() } else { beta * c.data[i] };
            }
        }
        return;
    }
    // SAFETY: all three views were bounds-checked above and `c` is a unique
    // borrow, so it cannot alias `a` or `b`.
    unsafe {
        T::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs,
            a.cs,
            b.data.as_ptr().add(b.offset),
            b.rs,
            b.cs,
            beta,
            c.data.as_mut_ptr().add(c.offset),
            c.rs,
            c.cs,
        );
    }
}

/// `A B`
pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let mut c = Matrix::zeros(a.rows, b.cols);
    gemm(T::one(), a.view(), b.view(), T::zero(), c.view_mut());
    c
}

/// `Aᵀ B`
pub fn matmul_tn<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let mut c = Matrix::zeros(a.cols, b.cols);
    gemm(T::one(), a.view().t(), b.view(), T::zero(), c.view_mut());
    c
}

/// `A Bᵀ`
pub fn matmul_nt<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let mut c = Matrix::zeros(a.rows, b.rows);
    gemm(T::one(), a.view(), b.view().t(), T::zero(), c.view_mut());
    c
}

/// Row-major 3D tensor, dims `[d0, d1, d2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    pub dims: [usize; 3],
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor3<T> {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Tensor3 {
            dims,
            data: vec![T::zero(); dims[0] * dims[1] * dims[2]],
        }
    }

    /// Stacks equally shaped matrices along a new leading axis.
    pub fn stack(items: &[Matrix<T>]) -> Result<Self> {
        let (r, c) = items.first().map_or((0, 0), Matrix::shape);
        if items.iter().any(|m| m.shape() != (r, c)) {
            return Err(Error::dim("cannot stack matrices of different shapes"));
        }
        let mut data = Vec::with_capacity(items.len() * r * c);
        for m in items {
            data.extend_from_slice(&m.data);
        }
        Ok(Tensor3 {
            dims: [items.len(), r, c],
            data,
        })
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.data[(i * self.dims[1] + j) * self.dims[2] + k]
    }

    pub fn slice(&self, i: usize) -> Matrix<T> {
        let n = self.dims[1] * self.dims[2];
        Matrix {
            rows: self.dims[1],
            cols: self.dims[2],
            data: self.data[i * n..(i + 1) * n].to_vec(),
        }
    }
}
