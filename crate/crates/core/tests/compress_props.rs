mod common;

use common::{normal, random_orthonormal, random_tensor, rel_err, rng};
use tuckervid_core::compress::{
    compress_network, lift_linear_to_conv, rewrite_tucker1, rewrite_tucker2, CompressOptions, CompressionPlan,
    FactorRole, RankSource, RankSpec, Strategy,
};
use tuckervid_core::cost::{cost_conv_tucker2, cost_tucker1};
use tuckervid_core::network::{
    flatten_forward, reference, ActShape, Affine, ConvKernel, LayerKind, LayerSpec, NetworkSpec, VolumeShape,
};
use tuckervid_core::tucker::TuckerOptions;
use tuckervid_core::DenseTensor;

fn guard_off() -> CompressOptions {
    CompressOptions {
        no_gain_guard: false,
        ..CompressOptions::default()
    }
}

fn small_net(seed: u64) -> NetworkSpec {
    let mut r = rng(seed);
    reference::thetis_like(reference::SMALL_INPUT, || normal(&mut r)).unwrap()
}

fn small_input(seed: u64) -> DenseTensor {
    let mut r = rng(seed);
    random_tensor(&mut r, &reference::SMALL_INPUT.dims())
}

fn published_plan(net: &NetworkSpec) -> CompressionPlan {
    let mut plan = CompressionPlan::default_for(net);
    for (name, ranks) in reference::PUBLISHED_RANKS {
        let strategy = match ranks.len() {
            2 => Strategy::Tucker2,
            1 => Strategy::Tucker1,
            _ => Strategy::Skip,
        };
        plan.set(name, strategy, RankSpec::Explicit(ranks.to_vec())).unwrap();
    }
    plan
}

fn conv_layer(seed: u64, ext: [usize; 3], s: usize, t: usize, pad: [usize; 3], stride: [usize; 3]) -> LayerSpec {
    let mut r = rng(seed);
    let w = random_tensor(&mut r, &[ext[0], ext[1], ext[2], s, t]);
    let b = random_tensor(&mut r, &[t]).into_data();
    LayerSpec::new("C", LayerKind::Conv3d(ConvKernel::new(w, stride, pad, Some(b)).unwrap()))
}

fn run(layers: &[LayerSpec], x: &DenseTensor) -> DenseTensor {
    let mut y = x.clone();
    for l in layers {
        y = l.forward(&y).unwrap();
    }
    y
}

#[test]
fn full_rank_tucker2_conv_is_lossless() {
    let layer = conv_layer(1, [3, 3, 3], 4, 5, [1, 1, 1], [1, 2, 1]);
    let g = rewrite_tucker2(&layer, 4, 5, &TuckerOptions::default()).unwrap();
    let mut r = rng(2);
    let x = random_tensor(&mut r, &[6, 7, 5, 4]);
    let want = layer.forward(&x).unwrap();
    assert!(rel_err(&want, &run(&g.layers, &x)) < 1e-10);
}

#[test]
fn full_rank_tucker1_conv_and_linear_are_lossless() {
    let layer = conv_layer(3, [2, 3, 3], 3, 6, [0, 1, 1], [1, 1, 1]);
    let g = rewrite_tucker1(&layer, 6, &TuckerOptions::default()).unwrap();
    let mut r = rng(4);
    let x = random_tensor(&mut r, &[4, 5, 5, 3]);
    assert!(rel_err(&layer.forward(&x).unwrap(), &run(&g.layers, &x)) < 1e-10);

    let w = common::random_matrix(&mut r, 7, 11);
    let lin = LayerSpec::new("L", LayerKind::Linear(Affine::new(w, Some(vec![0.5; 7])).unwrap()));
    let g = rewrite_tucker1(&lin, 7, &TuckerOptions::default()).unwrap();
    let v = random_tensor(&mut r, &[11]);
    assert!(rel_err(&lin.forward(&v).unwrap(), &run(&g.layers, &v)) < 1e-10);
}

#[test]
fn c2_rewrite_has_expected_layers() {
    let layer = conv_layer(5, [3, 5, 5], 6, 16, [0, 0, 0], [1, 1, 1]);
    let g = rewrite_tucker2(&layer, 2, 3, &TuckerOptions::default()).unwrap();
    assert_eq!(g.roles, vec![FactorRole::InputFactor, FactorRole::Core, FactorRole::OutputFactor]);
    let names: Vec<&str> = g.layers.iter().map(|l| l.name.as_str()).collect();
    assert_eq!(names, ["C/in", "C/core", "C/out"]);
    match &g.layers[0].kind {
        LayerKind::Pointwise(a) => assert_eq!((a.inputs(), a.outputs(), a.bias.is_none()), (6, 2, true)),
        k => panic!("{k:?}"),
    }
    match &g.layers[1].kind {
        LayerKind::Conv3d(k) => {
            assert_eq!(k.weights.shape(), &[3, 5, 5, 2, 3]);
            assert!(k.bias.is_none());
        }
        k => panic!("{k:?}"),
    }
    match &g.layers[2].kind {
        LayerKind::Pointwise(a) => assert_eq!((a.inputs(), a.outputs(), a.bias.is_some()), (3, 16, true)),
        k => panic!("{k:?}"),
    }
    assert_eq!(g.param_count(), 526);
    assert_eq!(g.param_count() as u64, cost_conv_tucker2(6, 16, 2, 3, 75, 1, 1, true).params);
}

#[test]
fn planted_kernel_gets_vbmf_ranks_and_tight_fit() {
    let mut r = rng(6);
    let core = random_tensor(&mut r, &[3, 3, 3, 2, 3]);
    let u = random_orthonormal(&mut r, 8, 2);
    let v = random_orthonormal(&mut r, 10, 3);
    let mut w = core.mode_multiply(&u, 3).unwrap().mode_multiply(&v, 4).unwrap();
    let scale = 1e-4 * w.frobenius_norm() / (w.len() as f64).sqrt();
    for x in w.data_mut() {
        *x += scale * normal(&mut r);
    }
    let k = ConvKernel::new(w, [1, 1, 1], [1, 1, 1], Some(vec![0.0; 10])).unwrap();
    let net = NetworkSpec::new(VolumeShape::new(5, 5, 5, 8), vec![LayerSpec::new("C", LayerKind::Conv3d(k))]).unwrap();
    let (out, rec) = compress_network(&net, &CompressionPlan::default_for(&net), &CompressOptions::default()).unwrap();
    let lr = rec.layer("C").unwrap();
    assert_eq!(lr.ranks, vec![2, 3]);
    assert!(matches!(lr.rank_source, Some(RankSource::Vbmf { clamped: false, .. })));
    let x = random_tensor(&mut r, &[5, 5, 5, 8]);
    assert!(rel_err(&net.forward(&x).unwrap(), &out.forward(&x).unwrap()) < 1e-3);
}

#[test]
fn l2_tucker1_rank_one_stores_296() {
    let net = reference::thetis_like(reference::FULL_INPUT, || 0.5).unwrap();
    let g = rewrite_tucker1(net.layer("L2").unwrap(), 1, &TuckerOptions::default()).unwrap();
    assert_eq!(g.layers.len(), 2);
    assert_eq!(g.param_count(), 296);
    assert_eq!(g.param_count() as u64, cost_tucker1(128, 84, 1, 1, 1, true).params);
}

#[test]
fn lifted_linear_is_equivalent_and_keeps_params() {
    let net = reference::thetis_like(reference::FULL_INPUT, || 0.0).unwrap();
    let feature = match &net.layer_inputs().unwrap()[6] {
        ActShape::Volume(v) => *v,
        s => panic!("{s:?}"),
    };
    assert_eq!(feature, VolumeShape::new(4, 9, 9, 16));
    let lifted = lift_linear_to_conv(net.layer("L1").unwrap(), feature).unwrap();
    assert_eq!(lifted.param_count(), 663680);

    let feature = VolumeShape::new(2, 3, 4, 5);
    let mut r = rng(7);
    let w = common::random_matrix(&mut r, 6, feature.len());
    let lin = LayerSpec::new("L", LayerKind::Linear(Affine::new(w, Some(vec![0.25; 6])).unwrap()));
    let lifted = lift_linear_to_conv(&lin, feature).unwrap();
    let x = random_tensor(&mut r, &feature.dims());
    let direct = lin.forward(&flatten_forward(&x).unwrap()).unwrap();
    let via = flatten_forward(&lifted.forward(&x).unwrap()).unwrap();
    assert!(rel_err(&direct, &via) < 1e-12);
}

#[test]
fn published_ranks_give_expected_layer_groups() {
    let net = small_net(8);
    let (out, rec) = compress_network(&net, &published_plan(&net), &CompressOptions::default()).unwrap();
    for (name, n) in [("C1", 3), ("C2", 3), ("L1", 3), ("L2", 2), ("L3", 1)] {
        assert_eq!(out.layers.iter().filter(|l| l.origin() == name).count(), n, "{name}");
        assert!(!rec.layer(name).unwrap().downgraded);
    }
    let y = out.forward(&small_input(9)).unwrap();
    assert_eq!(y.shape(), &[2]);
    // flatten is re-emitted after the lifted group
    let pos = |n: &str| out.layers.iter().position(|l| l.name == n).unwrap();
    assert!(pos("L1/out") < pos("FL") && pos("FL") < pos("R3"));
}

#[test]
fn skip_all_is_the_identity() {
    let net = small_net(10);
    let (out, rec) = compress_network(&net, &CompressionPlan::skip_all(&net), &CompressOptions::default()).unwrap();
    assert_eq!(out, net);
    assert!(rec.layers.iter().all(|l| l.applied == Strategy::Skip));
}

#[test]
fn full_rank_plan_preserves_network_output() {
    let net = small_net(11);
    for plan in [CompressionPlan::default_for(&net), CompressionPlan::tucker1_first_conv(&net)] {
        let plan = plan.with_full_ranks(&net).unwrap();
        let (out, _) = compress_network(&net, &plan, &guard_off()).unwrap();
        let x = small_input(12);
        let want = net.forward(&x).unwrap();
        assert!(rel_err(&want, &out.forward(&x).unwrap()) < 1e-7);
    }
}

#[test]
fn guard_downgrades_growing_rewrites() {
    let net = small_net(13);
    let plan = CompressionPlan::default_for(&net).with_full_ranks(&net).unwrap();
    let (out, rec) = compress_network(&net, &plan, &CompressOptions::default()).unwrap();
    let c1 = rec.layer("C1").unwrap();
    assert!(c1.downgraded);
    assert_eq!(c1.applied, Strategy::Skip);
    assert!(out.param_count() <= net.param_count());
}

#[test]
fn bias_survives_in_the_output_factor() {
    let layer = conv_layer(14, [3, 3, 3], 4, 5, [1, 1, 1], [1, 1, 1]);
    let bias = match &layer.kind {
        LayerKind::Conv3d(k) => k.bias.clone().unwrap(),
        _ => unreachable!(),
    };
    for g in [
        rewrite_tucker2(&layer, 2, 2, &TuckerOptions::default()).unwrap(),
        rewrite_tucker1(&layer, 2, &TuckerOptions::default()).unwrap(),
    ] {
        let y = run(&g.layers, &DenseTensor::zeros(vec![3, 3, 3, 4]).unwrap());
        for (i, v) in y.data().iter().enumerate() {
            assert!((v - bias[i % 5]).abs() < 1e-14);
        }
    }
}

#[test]
fn group_params_match_closed_forms() {
    let mut r = rng(15);
    use rand::Rng;
    for _ in 0..20 {
        let ext = [r.random_range(1..4), r.random_range(1..4), r.random_range(1..4)];
        let s = r.random_range(1..7);
        let t = r.random_range(1..7);
        let layer = conv_layer(r.random(), ext, s, t, [0, 0, 0], [1, 1, 1]);
        let lambda = (ext[0] * ext[1] * ext[2]) as u64;
        let rs = r.random_range(1..=s);
        let rt = r.random_range(1..=t);
        let g2 = rewrite_tucker2(&layer, rs, rt, &TuckerOptions::default()).unwrap();
        assert_eq!(g2.param_count() as u64, cost_conv_tucker2(s as u64, t as u64, rs as u64, rt as u64, lambda, 1, 1, true).params);
        let g1 = rewrite_tucker1(&layer, rt, &TuckerOptions::default()).unwrap();
        assert_eq!(g1.param_count() as u64, cost_tucker1(s as u64, t as u64, rt as u64, lambda, 1, true).params);
    }
}

#[test]
fn invalid_plans_are_rejected() {
    let net = small_net(16);
    let mut plan = CompressionPlan::default_for(&net);
    assert!(plan.set("nope", Strategy::Skip, RankSpec::Auto).is_err());
    plan.set("R1", Strategy::Tucker2, RankSpec::Auto).unwrap();
    assert!(compress_network(&net, &plan, &CompressOptions::default()).is_err());
    let mut plan = CompressionPlan::default_for(&net);
    plan.set("C2", Strategy::Tucker2, RankSpec::Explicit(vec![7, 3])).unwrap();
    assert!(compress_network(&net, &plan, &CompressOptions::default()).is_err());
    plan.set("C2", Strategy::Tucker2, RankSpec::Explicit(vec![2])).unwrap();
    assert!(compress_network(&net, &plan, &CompressOptions::default()).is_err());
}
