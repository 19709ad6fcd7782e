mod common;

use common::{gaussian_matrix, normal, random_orthonormal, random_tensor, rng};
use tuckervid_core::network::ConvKernel;
use tuckervid_core::vbmf::{estimate_rank, estimate_ranks_for_conv};
use tuckervid_core::{DenseTensor, Matrix};

fn add(a: &Matrix, b: &Matrix, scale: f64) -> Matrix {
    Matrix::new(
        a.rows(),
        a.cols(),
        a.data().iter().zip(b.data()).map(|(x, y)| x + scale * y).collect(),
    )
    .unwrap()
}

fn planted_signal(seed: u64, rows: usize, cols: usize, values: &[f64]) -> Matrix {
    let mut r = rng(seed);
    let u = random_orthonormal(&mut r, rows, values.len());
    let v = random_orthonormal(&mut r, cols, values.len());
    let mut us = u.clone();
    for i in 0..rows {
        for (j, &s) in values.iter().enumerate() {
            us.set(i, j, u.get(i, j) * s);
        }
    }
    us.matmul(&v.transpose()).unwrap()
}

#[test]
fn zero_matrix_is_rank_zero() {
    assert_eq!(estimate_rank(&Matrix::zeros(100, 200)).unwrap().rank, 0);
}

#[test]
fn planted_rank_three_recovered_on_every_seed() {
    for seed in 0..20 {
        let signal = planted_signal(seed, 100, 200, &[50.0, 40.0, 30.0]);
        let mut r = rng(1000 + seed);
        let noise = gaussian_matrix(&mut r, 100, 200);
        let est = estimate_rank(&add(&signal, &noise, 0.1)).unwrap();
        assert_eq!(est.rank, 3, "seed {seed}");
        assert!(est.retained_singular_values.iter().all(|&s| s > est.threshold));
    }
}

#[test]
fn pure_noise_is_rank_zero() {
    let zeros = (0..20)
        .filter(|&seed| {
            let mut r = rng(2000 + seed);
            estimate_rank(&gaussian_matrix(&mut r, 100, 200)).unwrap().rank == 0
        })
        .count();
    assert!(zeros >= 18, "{zeros}/20");
}

#[test]
fn rank_is_scale_invariant_and_transpose_invariant() {
    for seed in 0..30 {
        let mut r = rng(3000 + seed);
        let rows = 5 + (seed as usize % 20);
        let cols = 8 + (seed as usize * 7 % 30);
        let k = 1 + seed as usize % 4;
        let m = add(
            &gaussian_matrix(&mut r, rows, k).matmul(&gaussian_matrix(&mut r, k, cols)).unwrap(),
            &gaussian_matrix(&mut r, rows, cols),
            0.3,
        );
        let base = estimate_rank(&m).unwrap().rank;
        for scale in [1e-3, 0.5, 7.0, 1e4] {
            let scaled = Matrix::new(rows, cols, m.data().iter().map(|v| v * scale).collect()).unwrap();
            assert_eq!(estimate_rank(&scaled).unwrap().rank, base, "seed {seed} scale {scale}");
        }
        assert_eq!(estimate_rank(&m.transpose()).unwrap().rank, base, "seed {seed}");
    }
}

#[test]
fn rank_does_not_grow_with_noise() {
    for seed in 0..10 {
        let signal = planted_signal(4000 + seed, 60, 90, &[20.0, 15.0, 10.0, 6.0]);
        let sigma_signal = signal.frobenius_norm() / ((60 * 90) as f64).sqrt();
        let mut r = rng(5000 + seed);
        let noise = gaussian_matrix(&mut r, 60, 90);
        let ranks: Vec<usize> = [0.01, 0.1, 1.0, 10.0]
            .iter()
            .map(|&lvl| estimate_rank(&add(&signal, &noise, lvl * sigma_signal)).unwrap().rank)
            .collect();
        assert!(ranks.windows(2).all(|w| w[1] <= w[0]), "seed {seed}: {ranks:?}");
    }
}

#[test]
fn conv_kernel_with_planted_channel_ranks() {
    let mut r = rng(6);
    let core = random_tensor(&mut r, &[3, 3, 3, 2, 3]);
    let u = random_orthonormal(&mut r, 8, 2);
    let v = random_orthonormal(&mut r, 10, 3);
    let mut w = core.mode_multiply(&u, 3).unwrap().mode_multiply(&v, 4).unwrap();
    let scale = 1e-3 * w.frobenius_norm() / (w.len() as f64).sqrt();
    for x in w.data_mut() {
        *x += scale * normal(&mut r);
    }
    let k = ConvKernel::new(w, [1, 1, 1], [0, 0, 0], None).unwrap();
    let est = estimate_ranks_for_conv(&k).unwrap();
    assert_eq!((est.rs, est.rt), (2, 3));
    assert!(!est.clamped);
}

#[test]
fn single_input_channel_gives_rank_one() {
    let mut r = rng(7);
    let k = ConvKernel::new(random_tensor(&mut r, &[3, 3, 3, 1, 6]), [1, 1, 1], [0, 0, 0], None).unwrap();
    assert_eq!(estimate_ranks_for_conv(&k).unwrap().rs, 1);
}

#[test]
fn zero_kernel_clamps_to_one() {
    let k = ConvKernel::new(DenseTensor::zeros(vec![2, 2, 2, 4, 5]).unwrap(), [1, 1, 1], [0, 0, 0], None).unwrap();
    let est = estimate_ranks_for_conv(&k).unwrap();
    assert_eq!((est.rs, est.rt), (1, 1));
    assert_eq!((est.input.rank, est.output.rank), (0, 0));
    assert!(est.clamped);
}
