#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tuckervid_core::network::ConvKernel;
use tuckervid_core::{DenseTensor, Matrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> DenseTensor {
    DenseTensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0)).unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| normal(rng))
}

/// Modified Gram–Schmidt on the columns of a Gaussian matrix.
pub fn random_orthonormal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let mut m = gaussian_matrix(rng, rows, cols);
    for j in 0..cols {
        for k in 0..j {
            let d: f64 = (0..rows).map(|i| m.get(i, j) * m.get(i, k)).sum();
            for i in 0..rows {
                let v = m.get(i, j) - d * m.get(i, k);
                m.set(i, j, v);
            }
        }
        let n: f64 = (0..rows).map(|i| m.get(i, j).powi(2)).sum::<f64>().sqrt();
        for i in 0..rows {
            let v = m.get(i, j) / n;
            m.set(i, j, v);
        }
    }
    m
}

pub fn rel_err(reference: &DenseTensor, other: &DenseTensor) -> f64 {
    assert_eq!(reference.shape(), other.shape());
    let norm = reference.frobenius_norm();
    let d = reference.distance(other).unwrap();
    if norm == 0.0 {
        d
    } else {
        d / norm
    }
}

/// Direct evaluation of the video convolution, one output element at a time,
/// written with one-based indices exactly as `f_i = (f' − 1)Δ + i − P`.
pub fn brute_force_conv(x: &DenseTensor, k: &ConvKernel) -> DenseTensor {
    let [f, h, w, s] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let kw = k.weights.shape();
    let (df, dh, dw, t) = (kw[0], kw[1], kw[2], kw[4]);
    let out = |n: usize, d: usize, p: usize, st: usize| (n + 2 * p - d) / st + 1;
    let fo = out(f, df, k.padding[0], k.stride[0]);
    let ho = out(h, dh, k.padding[1], k.stride[1]);
    let wo = out(w, dw, k.padding[2], k.stride[2]);
    let mut y = DenseTensor::zeros(vec![fo, ho, wo, t]).unwrap();
    for f1 in 1..=fo {
        for h1 in 1..=ho {
            for w1 in 1..=wo {
                for t1 in 1..=t {
                    let mut acc = k.bias.as_ref().map_or(0.0, |b| b[t1 - 1]);
                    for i in 1..=df {
                        for j in 1..=dh {
                            for l in 1..=dw {
                                for s1 in 1..=s {
                                    let fi = (f1 as isize - 1) * k.stride[0] as isize + i as isize - k.padding[0] as isize;
                                    let hj = (h1 as isize - 1) * k.stride[1] as isize + j as isize - k.padding[1] as isize;
                                    let wl = (w1 as isize - 1) * k.stride[2] as isize + l as isize - k.padding[2] as isize;
                                    if fi < 1 || hj < 1 || wl < 1 || fi > f as isize || hj > h as isize || wl > w as isize {
                                        continue;
                                    }
                                    acc += k.weights.get(&[i - 1, j - 1, l - 1, s1 - 1, t1 - 1])
                                        * x.get(&[fi as usize - 1, hj as usize - 1, wl as usize - 1, s1 - 1]);
                                }
                            }
                        }
                    }
                    y.set(&[f1 - 1, h1 - 1, w1 - 1, t1 - 1], acc);
                }
            }
        }
    }
    y
}
