//! Row-major dense arrays and the handful of kernels the models need.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: alloc::vec![F::ZERO; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, v: F) -> Self {
        Self { rows, cols, data: alloc::vec![v; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.rows, self.cols)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A model's learnable arrays, visited in a fixed order.
pub trait ParamSet<F: Real>: Clone {
    fn tensors(&self) -> Vec<(String, &Tensor<F>)>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor<F>>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = F::ZERO);
        }
        z
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.data.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.all_finite())
    }
}

#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    const LANES: usize = 8;
    let mut acc = [F::ZERO; LANES];
    let chunks = a.len() / LANES;
    for c in 0..chunks {
        let (x, y) = (&a[c * LANES..c * LANES + LANES], &b[c * LANES..c * LANES + LANES]);
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = F::ZERO;
    for i in chunks * LANES..a.len() {
        tail += a[i] * b[i];
    }
    let mut s = F::ZERO;
    for v in acc {
        s += v;
    }
    s + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<F: Real>(alpha: F, x: &[F], y: &mut [F]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out (n×m) += x (n×k) · w (k×m)`
pub fn matmul_acc<F: Real>(x: &[F], w: &[F], out: &mut [F], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let xi = &x[i * k..(i + 1) * k];
        let oi = &mut out[i * m..(i + 1) * m];
        for (p, &xv) in xi.iter().enumerate() {
            if xv != F::ZERO {
                axpy(xv, &w[p * m..(p + 1) * m], oi);
            }
        }
    }
}

/// `dw (k×m) += xᵀ (k×n) · dy (n×m)`
pub fn matmul_tn_acc<F: Real>(x: &[F], dy: &[F], dw: &mut [F], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let dyi = &dy[i * m..(i + 1) * m];
        for p in 0..k {
            let xv = x[i * k + p];
            if xv != F::ZERO {
                axpy(xv, dyi, &mut dw[p * m..(p + 1) * m]);
            }
        }
    }
}

/// `dx (n×k) += dy (n×m) · wᵀ (m×k)`
pub fn matmul_nt_acc<F: Real>(dy: &[F], w: &[F], dx: &mut [F], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let dyi = &dy[i * m..(i + 1) * m];
        for p in 0..k {
            dx[i * k + p] += dot(dyi, &w[p * m..(p + 1) * m]);
        }
    }
}

/// Adds `bias` to each of the `n` rows of `out`.
pub fn add_bias<F: Real>(out: &mut [F], bias: &[F]) {
    for row in out.chunks_mut(bias.len()) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

/// Column sums of `dy` accumulated into `db`.
pub fn bias_grad_acc<F: Real>(dy: &[F], db: &mut [F]) {
    for row in dy.chunks(db.len()) {
        for (g, &d) in db.iter_mut().zip(row) {
            *g += d;
        }
    }
}

/// Numerically stable in-place softmax.
pub fn softmax_in_place<F: Real>(v: &mut [F]) {
    let mut max = F::neg_infinity();
    for &x in v.iter() {
        max = max.max(x);
    }
    let mut sum = F::ZERO;
    for x in v.iter_mut() {
        *x = if *x == F::neg_infinity() { F::ZERO } else { (*x - max).exp() };
        sum += *x;
    }
    let inv = F::ONE / sum;
    for x in v.iter_mut() {
        *x *= inv;
    }
}

/// `log Σ exp(v)`
pub fn log_sum_exp<F: Real>(v: &[F]) -> F {
    let mut max = F::neg_infinity();
    for &x in v {
        max = max.max(x);
    }
    let mut sum = F::ZERO;
    for &x in v {
        sum += (x - max).exp();
    }
    max + sum.ln()
}
