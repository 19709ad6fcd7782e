use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tuckervid::bench::{bench_forward, BenchError, BenchOptions, TimingResult};
use tuckervid_core::network::{ConvKernel, LayerKind, LayerSpec, NetworkSpec, VolumeShape};
use tuckervid_core::DenseTensor;

fn tiny_net() -> NetworkSpec {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let w = DenseTensor::from_fn(vec![3, 3, 3, 2, 4], |_| r.sample(StandardNormal)).unwrap();
    let k = ConvKernel::new(w, [1, 1, 1], [1, 1, 1], Some(vec![0.1; 4])).unwrap();
    NetworkSpec::new(
        VolumeShape::new(6, 8, 8, 2),
        vec![
            LayerSpec::new("C", LayerKind::Conv3d(k)),
            LayerSpec::new("R", LayerKind::Relu),
            LayerSpec::new("F", LayerKind::Flatten),
        ],
    )
    .unwrap()
}

fn input() -> DenseTensor {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    DenseTensor::from_fn(vec![6, 8, 8, 2], |_| r.sample(StandardNormal)).unwrap()
}

#[test]
fn two_runs_smoke() {
    let net = tiny_net();
    let (t, y) = bench_forward(&net, &input(), &BenchOptions { runs: 2, warmup: 0 }).unwrap();
    assert_eq!(t.runs, 2);
    assert_eq!(t.layers.len(), 3);
    assert!(t.total_std_ms >= 0.0);
    assert!(t.layers.iter().all(|l| l.std_ms >= 0.0 && l.mean_ms >= 0.0));
    assert_eq!(y, net.forward(&input()).unwrap());
}

#[test]
fn rejects_single_run_and_bad_input() {
    let net = tiny_net();
    assert!(matches!(
        bench_forward(&net, &input(), &BenchOptions { runs: 1, warmup: 0 }),
        Err(BenchError::TooFewRuns(1))
    ));
    let bad = DenseTensor::zeros(vec![6, 8, 8, 3]).unwrap();
    assert!(bench_forward(&net, &bad, &BenchOptions { runs: 2, warmup: 0 }).is_err());
}

#[test]
fn layer_means_never_exceed_the_total() {
    let net = tiny_net();
    for _ in 0..5 {
        let (t, _) = bench_forward(&net, &input(), &BenchOptions { runs: 20, warmup: 2 }).unwrap();
        assert!(t.layer_sum_ms() <= t.total_mean_ms, "{} > {}", t.layer_sum_ms(), t.total_mean_ms);
    }
}

#[test]
fn timing_result_roundtrips_through_json() {
    let (t, _) = bench_forward(&tiny_net(), &input(), &BenchOptions { runs: 5, warmup: 1 }).unwrap();
    let s = serde_json::to_string(&t).unwrap();
    let back: TimingResult = serde_json::from_str(&s).unwrap();
    assert_eq!(back, t);
    assert!(back.group("C").unwrap().parts_ms.is_empty());
}
