//! Row-major `f32` matrices backed by `matrixmultiply` kernels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl TryFrom<RawMatrix> for DenseMatrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        let m = DenseMatrix::from_vec(raw.rows, raw.cols, raw.data)?;
        if !m.is_finite() {
            return Err(Error::config("matrix.data", "non-finite entry"));
        }
        Ok(m)
    }
}

/// Whether an operand enters a product as stored or transposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                context: "matrix data",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
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
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f32) {
        self.data.fill(v);
    }

    /// Reshape in place to `rows x cols`, reusing the allocation. Contents are
    /// unspecified afterwards.
    pub fn resize(&mut self, rows: usize, cols: usize) {
        self.rows = rows;
        self.cols = cols;
        self.data.resize(rows * cols, 0.0);
    }

    fn shape_of(&self, op: Op) -> (usize, usize) {
        match op {
            Op::N => (self.rows, self.cols),
            Op::T => (self.cols, self.rows),
        }
    }

    fn strides_of(&self, op: Op) -> (isize, isize) {
        match op {
            Op::N => (self.cols as isize, 1),
            Op::T => (1, self.cols as isize),
        }
    }
}

/// `out = alpha * op(a) * op(b) + beta * out`.
///
/// `out` must already have the product's shape. With `beta == 0` the previous
/// contents of `out` are ignored (NaNs included).
pub fn gemm(
    alpha: f32,
    a: &DenseMatrix,
    op_a: Op,
    b: &DenseMatrix,
    op_b: Op,
    beta: f32,
    out: &mut DenseMatrix,
) -> Result<()> {
    let (m, k) = a.shape_of(op_a);
    let (k2, n) = b.shape_of(op_b);
    if k != k2 {
        return Err(Error::Shape {
            context: "gemm inner dimension",
            expected: k,
            actual: k2,
        });
    }
    if out.rows != m || out.cols != n {
        return Err(Error::Shape {
            context: "gemm output",
            expected: m * n,
            actual: out.rows * out.cols,
        });
    }
    if m == 0 || n == 0 {
        return Ok(());
    }
    if k == 0 {
        if beta == 0.0 {
            out.fill(0.0);
        } else {
            out.data.iter_mut().for_each(|v| *v *= beta);
        }
        return Ok(());
    }
    let (rsa, csa) = a.strides_of(op_a);
    let (rsb, csb) = b.strides_of(op_b);
    // SAFETY: shapes and strides were validated above, so every index the
    // kernel touches lies inside the three buffers; `out` does not alias
    // `a` or `b` because it is borrowed mutably.
    unsafe {
        matrixmultiply::sgemm(
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
            out.data.as_mut_ptr(),
            out.cols as isize,
            1,
        );
    }
    Ok(())
}

/// `out = a · b[:, ..a.cols()]ᵀ`: multiplies by the transpose of the
/// leading column block of `b`, without copying that block out.
pub fn gemm_leading_block_t(a: &DenseMatrix, b: &DenseMatrix, out: &mut DenseMatrix) -> Result<()> {
    let (m, k, n) = (a.rows, a.cols, b.rows);
    if k > b.cols {
        return Err(Error::Shape {
            context: "gemm leading block",
            expected: b.cols,
            actual: k,
        });
    }
    if out.rows != m || out.cols != n {
        return Err(Error::Shape {
            context: "gemm output",
            expected: m * n,
            actual: out.rows * out.cols,
        });
    }
    if m == 0 || n == 0 {
        return Ok(());
    }
    if k == 0 {
        out.fill(0.0);
        return Ok(());
    }
    // SAFETY: `b` is read at `i + j * b.cols` for `i < k <= b.cols` and
    // `j < n = b.rows`, all inside its buffer; `a` and `out` are dense with
    // the shapes checked above.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            k as isize,
            1,
            b.data.as_ptr(),
            1,
            b.cols as isize,
            0.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(())
}

/// Adds `bias` to every row of `m`.
pub fn add_row_bias(m: &mut DenseMatrix, bias: &[f32]) {
    debug_assert_eq!(m.cols, bias.len());
    for row in m.data.chunks_exact_mut(m.cols.max(1)) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
