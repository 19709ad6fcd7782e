//! Dense N-mode tensors and the multilinear primitives built on them.
//!
//! Storage is row-major with the last listed mode varying fastest. A mode-`n`
//! unfolding places mode `n` on the rows; the columns enumerate the remaining
//! modes in ascending order, row-major (the earliest remaining mode varies
//! slowest). Viewing the tensor as `(before, n, after)` blocks, element
//! `t[a, k, b]` lands at row `k`, column `a * after + b`.

mod matrix;
pub(crate) mod svd;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

pub use matrix::Matrix;
pub use svd::{svd, SvdResult};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::ShapeMismatch("a tensor needs at least one mode".into()));
    }
    if let Some(pos) = shape.iter().position(|&d| d == 0) {
        return Err(Error::ShapeMismatch(format!(
            "mode {pos} has size 0 in shape {shape:?}"
        )));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::ShapeMismatch(format!("shape {shape:?} overflows usize")))
}

/// Splits `shape` around `mode` into (product before, size, product after).
fn split_around(shape: &[usize], mode: usize) -> (usize, usize, usize) {
    let before = shape[..mode].iter().product();
    let after = shape[mode + 1..].iter().product();
    (before, shape[mode], after)
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = check_shape(&shape)?;
        if len != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len = check_shape(&shape)?;
        Ok(Self {
            shape,
            data: vec![0.0; len],
        })
    }

    /// Builds a tensor by evaluating `f` at every multi-index in storage order.
    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len = check_shape(&shape)?;
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..len {
            data.push(f(&idx));
            for m in (0..shape.len()).rev() {
                idx[m] += 1;
                if idx[m] < shape[m] {
                    break;
                }
                idx[m] = 0;
            }
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
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

    /// Linear storage offset of a multi-index. Panics when out of bounds.
    pub fn offset(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.shape.len(), "index arity");
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &d)| {
            assert!(i < d, "index {i} out of bounds for mode of size {d}");
            acc * d + i
        })
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let o = self.offset(idx);
        self.data[o] = value;
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.ndim() {
            return Err(Error::ModeOutOfRange {
                mode,
                ndim: self.ndim(),
            });
        }
        Ok(())
    }

    /// Mode-`mode` unfolding (see the module docs for the column order).
    pub fn unfold(&self, mode: usize) -> Result<Matrix> {
        self.check_mode(mode)?;
        let (before, n, after) = split_around(&self.shape, mode);
        let cols = before * after;
        let mut out = vec![0.0; n * cols];
        for a in 0..before {
            for k in 0..n {
                let src = &self.data[(a * n + k) * after..][..after];
                out[k * cols + a * after..][..after].copy_from_slice(src);
            }
        }
        Matrix::new(n, cols, out)
    }

    /// Inverse of [`DenseTensor::unfold`].
    pub fn fold(m: &Matrix, mode: usize, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if mode >= shape.len() {
            return Err(Error::ModeOutOfRange {
                mode,
                ndim: shape.len(),
            });
        }
        let (before, n, after) = split_around(shape, mode);
        if m.rows() != n || m.cols() != before * after {
            return Err(Error::ShapeMismatch(format!(
                "cannot fold a {}x{} matrix into shape {shape:?} along mode {mode}",
                m.rows(),
                m.cols()
            )));
        }
        let cols = m.cols();
        let src = m.data();
        let mut data = vec![0.0; len];
        for a in 0..before {
            for k in 0..n {
                data[(a * n + k) * after..][..after]
                    .copy_from_slice(&src[k * cols + a * after..][..after]);
            }
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Mode-`mode` product `t ×ₙ m`: contracts `m`'s columns with mode `mode`.
    pub fn mode_multiply(&self, m: &Matrix, mode: usize) -> Result<Self> {
        self.check_mode(mode)?;
        if m.cols() != self.shape[mode] {
            return Err(Error::ShapeMismatch(format!(
                "mode {mode} has size {}, matrix is {}x{}",
                self.shape[mode],
                m.rows(),
                m.cols()
            )));
        }
        let (before, n, after) = split_around(&self.shape, mode);
        let r = m.rows();
        let mut out = vec![0.0; before * r * after];
        for a in 0..before {
            let src = &self.data[a * n * after..][..n * after];
            let dst = &mut out[a * r * after..][..r * after];
            for (row, dst_row) in dst.chunks_exact_mut(after).enumerate() {
                let coeffs = m.row(row);
                for (k, &c) in coeffs.iter().enumerate() {
                    if c == 0.0 {
                        continue;
                    }
                    let s = &src[k * after..][..after];
                    for (d, &x) in dst_row.iter_mut().zip(s) {
                        *d += c * x;
                    }
                }
            }
        }
        let mut shape = self.shape.clone();
        shape[mode] = r;
        Ok(Self { shape, data: out })
    }

    /// `t ×ₙ mᵀ` without materialising the transpose.
    pub fn mode_multiply_transposed(&self, m: &Matrix, mode: usize) -> Result<Self> {
        self.mode_multiply(&m.transpose(), mode)
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    /// Frobenius norm of `self - other`. Shapes must agree.
    pub fn distance(&self, other: &DenseTensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(libm::sqrt(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b) * (a - b))
                .sum(),
        ))
    }
}

impl From<Matrix> for DenseTensor {
    fn from(m: Matrix) -> Self {
        let (rows, cols) = (m.rows(), m.cols());
        Self {
            shape: vec![rows, cols],
            data: m.into_data(),
        }
    }
}

impl TryFrom<DenseTensor> for Matrix {
    type Error = Error;

    fn try_from(t: DenseTensor) -> Result<Matrix> {
        if t.ndim() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "expected 2 modes, got shape {:?}",
                t.shape
            )));
        }
        Matrix::new(t.shape[0], t.shape[1], t.data)
    }
}
