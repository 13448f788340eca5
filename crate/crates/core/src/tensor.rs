//! Dense row-major tensors and the small set of numeric primitives the
//! model is built from: affine maps, their gradients, and GELU.
//!
//! Everything is 64-bit. There is no broadcasting and no view machinery;
//! shapes are explicit and checked at the API boundary, and the hot paths
//! work on plain slices.

use crate::error::{Error, Result};

/// A dense tensor of `f64` stored contiguously in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    /// Builds a tensor from existing data, checking `product(shape) == data.len()`.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "Tensor::from_vec",
                format!("{} elements for shape {:?}", expected, shape),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Number of rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[0]
    }

    /// Number of columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    /// Row `r` of a rank-2 tensor as a slice.
    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.shape[0] && j < self.shape[1]);
        self.data[i * self.shape[1] + j]
    }

    #[inline]
    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.shape[0] && j < self.shape[1]);
        self.data[i * self.shape[1] + j] = v;
    }

    #[inline]
    pub fn at3(&self, i: usize, j: usize, k: usize) -> f64 {
        debug_assert!(i < self.shape[0] && j < self.shape[1] && k < self.shape[2]);
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    #[inline]
    pub fn set3(&mut self, i: usize, j: usize, k: usize, v: f64) {
        debug_assert!(i < self.shape[0] && j < self.shape[1] && k < self.shape[2]);
        self.data[(i * self.shape[1] + j) * self.shape[2] + k] = v;
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    /// Elementwise map into a new tensor of the same shape.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Index of the first non-finite element, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|x| !x.is_finite())
    }
}

/// Dot product with four accumulator lanes. A single-chain `zip().sum()`
/// cannot be vectorized (float addition is not reassociable), so the lanes
/// are split explicitly and iterated via `chunks_exact`, which removes the
/// bounds checks that would otherwise block SIMD. The summation order is
/// fixed, keeping results bit-deterministic run to run.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for (x, y) in (&mut ca).zip(&mut cb) {
        s0 += x[0] * y[0];
        s1 += x[1] * y[1];
        s2 += x[2] * y[2];
        s3 += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (s0 + s2) + (s1 + s3) + tail
}

/// `out = W·x + b` for a rank-2 `W` of shape `[out, in]`. Hot path; shapes
/// are asserted, not reported.
#[inline]
pub(crate) fn affine_into(w: &Tensor, b: &[f64], x: &[f64], out: &mut [f64]) {
    let (rows, cols) = (w.rows(), w.cols());
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(b.len(), rows);
    debug_assert_eq!(out.len(), rows);
    for r in 0..rows {
        out[r] = dot(w.row(r), x) + b[r];
    }
}

/// `out += Wᵀ·g` for a rank-2 `W` of shape `[out, in]` and `g` of length `out`.
#[inline]
pub(crate) fn matvec_t_acc(w: &Tensor, g: &[f64], out: &mut [f64]) {
    let (rows, cols) = (w.rows(), w.cols());
    debug_assert_eq!(g.len(), rows);
    debug_assert_eq!(out.len(), cols);
    for r in 0..rows {
        let gr = g[r];
        if gr != 0.0 {
            let row = w.row(r);
            for c in 0..cols {
                out[c] += row[c] * gr;
            }
        }
    }
}

/// `gw += g ⊗ x` (outer product accumulation) into a rank-2 `gw` of shape
/// `[g.len(), x.len()]`.
#[inline]
pub(crate) fn outer_acc(gw: &mut Tensor, g: &[f64], x: &[f64]) {
    debug_assert_eq!(gw.rows(), g.len());
    debug_assert_eq!(gw.cols(), x.len());
    for (r, &gr) in g.iter().enumerate() {
        if gr != 0.0 {
            for (dst, &xv) in gw.row_mut(r).iter_mut().zip(x) {
                *dst += gr * xv;
            }
        }
    }
}

#[inline]
pub(crate) fn add_assign(dst: &mut [f64], src: &[f64]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Computes `W·x + b` with full shape checking.
pub fn affine_forward(w: &Tensor, b: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if w.shape().len() != 2 {
        return Err(Error::shape(
            "affine_forward",
            "rank-2 weight",
            format!("rank-{} shape {:?}", w.shape().len(), w.shape()),
        ));
    }
    if x.len() != w.cols() || b.len() != w.rows() {
        return Err(Error::shape(
            "affine_forward",
            format!("x[{}], b[{}] for W{:?}", w.cols(), w.rows(), w.shape()),
            format!("x[{}], b[{}]", x.len(), b.len()),
        ));
    }
    let mut out = vec![0.0; w.rows()];
    affine_into(w, b, x, &mut out);
    Ok(out)
}

/// Gradients of `y = W·x + b` for an upstream gradient `grad_out = ∂L/∂y`.
///
/// Returns `(∂L/∂W, ∂L/∂b, ∂L/∂x) = (grad_out ⊗ x, grad_out, Wᵀ·grad_out)`.
pub fn affine_backward(
    w: &Tensor,
    x: &[f64],
    grad_out: &[f64],
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    if w.shape().len() != 2 || x.len() != w.cols() || grad_out.len() != w.rows() {
        return Err(Error::shape(
            "affine_backward",
            format!("x[{}], grad_out[{}] for W{:?}", w.cols(), w.rows(), w.shape()),
            format!("x[{}], grad_out[{}]", x.len(), grad_out.len()),
        ));
    }
    let mut grad_w = Tensor::zeros(w.shape());
    outer_acc(&mut grad_w, grad_out, x);
    let grad_b = grad_out.to_vec();
    let mut grad_x = vec![0.0; x.len()];
    matvec_t_acc(w, grad_out, &mut grad_x);
    Ok((grad_w, grad_b, grad_x))
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.3989422804014326779399460599344;

/// Standard normal CDF via `erf`.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

/// Exact GELU, `x·Φ(x)` with Φ the standard normal CDF.
#[inline]
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

/// Derivative of [`gelu`]: `Φ(x) + x·φ(x)`.
#[inline]
pub fn gelu_deriv(x: f64) -> f64 {
    normal_cdf(x) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Elementwise GELU over a tensor.
pub fn gelu_tensor(x: &Tensor) -> Tensor {
    x.map(gelu)
}
