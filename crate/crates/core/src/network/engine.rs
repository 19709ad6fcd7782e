//! Reference kernels for the layer kinds of the IR.

use alloc::borrow::Cow;
use alloc::format;
use alloc::vec;

use super::{ActShape, Affine, ConvKernel, PoolSpec, VolumeShape};
use crate::tensor::{DenseTensor, Matrix};
use crate::{Error, Result};

/// Multiplications and bias additions actually executed by the engine.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCount {
    pub mults: u64,
    pub bias_adds: u64,
}

trait Tally {
    fn mults(&mut self, n: usize);
    fn bias_adds(&mut self, n: usize);
}

impl Tally for () {
    #[inline(always)]
    fn mults(&mut self, _: usize) {}
    #[inline(always)]
    fn bias_adds(&mut self, _: usize) {}
}

impl Tally for OpCount {
    fn mults(&mut self, n: usize) {
        self.mults += n as u64;
    }
    fn bias_adds(&mut self, n: usize) {
        self.bias_adds += n as u64;
    }
}

/// Source coordinate read by output position `out` through kernel tap `tap`.
///
/// The one-based form is `f_i = (f' − 1)·Δ + i − P`; shifting all three of
/// `f_i`, `f'` and `i` down by one gives `out·Δ + tap − P`. Negative values and
/// values past the input end address the zero padding.
pub fn source_index(out: usize, tap: usize, stride: usize, pad: usize) -> isize {
    (out * stride + tap) as isize - pad as isize
}

fn volume_of(x: &DenseTensor) -> Result<VolumeShape> {
    match ActShape::of(x)? {
        ActShape::Volume(v) => Ok(v),
        ActShape::Vector(_) => Err(Error::ShapeMismatch(
            "expected an F×H×W×S volume, got a vector".into(),
        )),
    }
}

/// Copies `x` into a zero-padded buffer (borrowing it when there is no padding).
fn padded<'a>(x: &'a DenseTensor, v: &VolumeShape, pad: [usize; 3]) -> (Cow<'a, [f64]>, [usize; 3]) {
    let dims = [
        v.frames + 2 * pad[0],
        v.height + 2 * pad[1],
        v.width + 2 * pad[2],
    ];
    if pad == [0, 0, 0] {
        return (Cow::Borrowed(x.data()), dims);
    }
    let s = v.channels;
    let mut buf = vec![0.0; dims[0] * dims[1] * dims[2] * s];
    let row = v.width * s;
    for f in 0..v.frames {
        for h in 0..v.height {
            let src = &x.data()[(f * v.height + h) * row..][..row];
            let dst = (((f + pad[0]) * dims[1] + h + pad[1]) * dims[2] + pad[2]) * s;
            buf[dst..dst + row].copy_from_slice(src);
        }
    }
    (Cow::Owned(buf), dims)
}

/// `acc[t] += Σ_n xs[n] · kb[n·T + t]`.
#[inline(always)]
fn accumulate(acc: &mut [f64], xs: &[f64], kb: &[f64], t: usize) {
    for (&xv, krow) in xs.iter().zip(kb.chunks_exact(t)) {
        for (a, &w) in acc.iter_mut().zip(krow) {
            *a += w * xv;
        }
    }
}

fn conv_impl(x: &DenseTensor, k: &ConvKernel, tally: &mut impl Tally) -> Result<DenseTensor> {
    k.validate()?;
    let v = volume_of(x)?;
    let o = k.output_shape(&v)?;
    let [df, dh, dw] = k.extent();
    let (s, t) = (k.in_channels(), k.out_channels());
    let (xp, pdims) = padded(x, &v, k.padding);
    let kd = k.weights.data();
    let mut y = vec![0.0; o.len()];
    let st = s * t;

    for fo in 0..o.frames {
        for ho in 0..o.height {
            for wo in 0..o.width {
                let acc = &mut y[((fo * o.height + ho) * o.width + wo) * t..][..t];
                for i in 0..df {
                    let fi = (source_index(fo, i, k.stride[0], k.padding[0]) + k.padding[0] as isize) as usize;
                    for j in 0..dh {
                        let hj = (source_index(ho, j, k.stride[1], k.padding[1]) + k.padding[1] as isize) as usize;
                        let row = (fi * pdims[1] + hj) * pdims[2];
                        let kb = &kd[(i * dh + j) * dw * st..][..dw * st];
                        if k.stride[2] == 1 {
                            // the dw·s input values under this kernel row are contiguous
                            let w0 = (source_index(wo, 0, 1, k.padding[2]) + k.padding[2] as isize) as usize;
                            let xs = &xp[(row + w0) * s..][..dw * s];
                            accumulate(acc, xs, kb, t);
                            tally.mults(dw * st);
                        } else {
                            for l in 0..dw {
                                let wl = (source_index(wo, l, k.stride[2], k.padding[2]) + k.padding[2] as isize)
                                    as usize;
                                let xs = &xp[(row + wl) * s..][..s];
                                accumulate(acc, xs, &kb[l * st..][..st], t);
                                tally.mults(st);
                            }
                        }
                    }
                }
                if let Some(b) = &k.bias {
                    for (a, &bv) in acc.iter_mut().zip(b) {
                        *a += bv;
                    }
                    tally.bias_adds(t);
                }
            }
        }
    }
    DenseTensor::new(o.dims().to_vec(), y)
}

/// Video convolution of an `F × H × W × S` input with zero padding:
/// `Y(f',h',w',t) = Σ_{i,j,l,s} K(i,j,l,s,t) · X(f_i, h_j, w_l, s) + b(t)`.
pub fn conv3d_forward(x: &DenseTensor, k: &ConvKernel) -> Result<DenseTensor> {
    conv_impl(x, k, &mut ())
}

pub fn conv3d_forward_counted(x: &DenseTensor, k: &ConvKernel, count: &mut OpCount) -> Result<DenseTensor> {
    conv_impl(x, k, count)
}

fn pointwise_impl(x: &DenseTensor, u: &Matrix, bias: Option<&[f64]>, tally: &mut impl Tally) -> Result<DenseTensor> {
    let v = volume_of(x)?;
    if u.cols() != v.channels {
        return Err(Error::ShapeMismatch(format!(
            "input has {} channels, mixing matrix is {}x{}",
            v.channels,
            u.rows(),
            u.cols()
        )));
    }
    if let Some(b) = bias {
        if b.len() != u.rows() {
            return Err(Error::ShapeMismatch("bias length differs from output channels".into()));
        }
    }
    let (s, r) = (v.channels, u.rows());
    let mut y = vec![0.0; v.voxels() * r];
    for (xs, ys) in x.data().chunks_exact(s).zip(y.chunks_exact_mut(r)) {
        for (row, out) in ys.iter_mut().enumerate() {
            *out = u.row(row).iter().zip(xs).map(|(a, b)| a * b).sum();
        }
        tally.mults(r * s);
        if let Some(b) = bias {
            for (out, &bv) in ys.iter_mut().zip(b) {
                *out += bv;
            }
            tally.bias_adds(r);
        }
    }
    DenseTensor::new(vec![v.frames, v.height, v.width, r], y)
}

/// 1×1×1 convolution: `y(f,h,w,r) = Σ_s u(r,s) · x(f,h,w,s) (+ b(r))`.
pub fn pointwise_forward(x: &DenseTensor, u: &Matrix, bias: Option<&[f64]>) -> Result<DenseTensor> {
    pointwise_impl(x, u, bias, &mut ())
}

pub fn pointwise_forward_counted(
    x: &DenseTensor,
    u: &Matrix,
    bias: Option<&[f64]>,
    count: &mut OpCount,
) -> Result<DenseTensor> {
    pointwise_impl(x, u, bias, count)
}

fn linear_impl(x: &DenseTensor, a: &Affine, tally: &mut impl Tally) -> Result<DenseTensor> {
    if x.ndim() != 1 || x.len() != a.inputs() {
        return Err(Error::ShapeMismatch(format!(
            "linear layer expects a vector of {} features, got shape {:?}",
            a.inputs(),
            x.shape()
        )));
    }
    let w = &a.weights;
    let mut y: alloc::vec::Vec<f64> = (0..w.rows())
        .map(|r| w.row(r).iter().zip(x.data()).map(|(p, q)| p * q).sum())
        .collect();
    tally.mults(w.rows() * w.cols());
    if let Some(b) = &a.bias {
        for (out, &bv) in y.iter_mut().zip(b) {
            *out += bv;
        }
        tally.bias_adds(b.len());
    }
    DenseTensor::new(vec![w.rows()], y)
}

pub fn linear_forward(x: &DenseTensor, a: &Affine) -> Result<DenseTensor> {
    linear_impl(x, a, &mut ())
}

pub fn linear_forward_counted(x: &DenseTensor, a: &Affine, count: &mut OpCount) -> Result<DenseTensor> {
    linear_impl(x, a, count)
}

pub fn maxpool3d_forward(x: &DenseTensor, p: &PoolSpec) -> Result<DenseTensor> {
    let v = volume_of(x)?;
    let o = p.output_shape(&v)?;
    let s = v.channels;
    let mut y = vec![f64::NEG_INFINITY; o.len()];
    let dims = [v.frames, v.height, v.width];
    for fo in 0..o.frames {
        for ho in 0..o.height {
            for wo in 0..o.width {
                let start = [fo * p.stride[0], ho * p.stride[1], wo * p.stride[2]];
                let end = [
                    (start[0] + p.window[0]).min(dims[0]),
                    (start[1] + p.window[1]).min(dims[1]),
                    (start[2] + p.window[2]).min(dims[2]),
                ];
                let out = &mut y[((fo * o.height + ho) * o.width + wo) * s..][..s];
                for f in start[0]..end[0] {
                    for h in start[1]..end[1] {
                        for w in start[2]..end[2] {
                            let src = &x.data()[((f * v.height + h) * v.width + w) * s..][..s];
                            for (m, &val) in out.iter_mut().zip(src) {
                                if val > *m {
                                    *m = val;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    DenseTensor::new(o.dims().to_vec(), y)
}

pub fn relu_forward(x: &DenseTensor) -> DenseTensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    y
}

/// `F × H × W × S` to a vector indexed `s·FHW + (f·H + h)·W + w`.
pub fn flatten_forward(x: &DenseTensor) -> Result<DenseTensor> {
    let v = volume_of(x)?;
    let g = v.voxels();
    let s = v.channels;
    let mut y = vec![0.0; v.len()];
    for (vox, chans) in x.data().chunks_exact(s).enumerate() {
        for (c, &val) in chans.iter().enumerate() {
            y[c * g + vox] = val;
        }
    }
    DenseTensor::new(vec![v.len()], y)
}
