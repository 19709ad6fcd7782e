use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tuckervid::format::{decode_blob, encode_blob, structure_only, FormatError, ModelManifest, StoredModel};
use tuckervid_core::compress::{compress_network, CompressOptions, CompressionPlan};
use tuckervid_core::network::{reference, Affine, ConvKernel, LayerKind, LayerSpec, NetworkSpec, PoolSpec, VolumeShape};
use tuckervid_core::{DenseTensor, Matrix};

fn small_reference(seed: u64) -> NetworkSpec {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    reference::thetis_like(reference::SMALL_INPUT, || r.sample(StandardNormal)).unwrap()
}

fn bytes(m: &StoredModel) -> (String, Vec<u8>) {
    (m.manifest.to_json(), encode_blob(&m.values))
}

#[test]
fn save_load_save_is_byte_identical() {
    let net = small_reference(1);
    let (small, _) = compress_network(&net, &CompressionPlan::default_for(&net), &CompressOptions::default()).unwrap();
    for n in [&net, &small] {
        let first = StoredModel::from_network(n);
        let (js, blob) = bytes(&first);
        let loaded = StoredModel::from_bytes(&js, &blob).unwrap();
        let again = StoredModel::from_network(&loaded.to_network().unwrap());
        assert_eq!(bytes(&again), (js, blob));
    }
}

#[test]
fn save_and_load_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let (m, b) = (dir.path().join("m.json"), dir.path().join("m.bin"));
    let stored = StoredModel::from_network(&small_reference(2));
    stored.save(&m, &b).unwrap();
    let loaded = StoredModel::load(&m, &b).unwrap();
    assert_eq!(loaded, stored);
    loaded.save(&m, &b).unwrap();
    assert_eq!(std::fs::read_to_string(&m).unwrap(), stored.manifest.to_json());
}

#[test]
fn loaded_values_are_the_f32_rounding() {
    let net = small_reference(3);
    let loaded = StoredModel::from_network(&net).to_network().unwrap();
    let (a, b) = match (&net.layer("C2").unwrap().kind, &loaded.layer("C2").unwrap().kind) {
        (LayerKind::Conv3d(a), LayerKind::Conv3d(b)) => (a.clone(), b.clone()),
        _ => unreachable!(),
    };
    for (x, y) in a.weights.data().iter().zip(b.weights.data()) {
        assert_eq!(*x as f32 as f64, *y);
    }
}

#[test]
fn kernel_element_order_is_t_s_i_j_l() {
    // kernel 1×1×2, S=2, T=2 with distinct values
    let w = DenseTensor::from_fn(vec![1, 1, 2, 2, 2], |i| (i[2] * 100 + i[3] * 10 + i[4]) as f64).unwrap();
    let k = ConvKernel::new(w, [1, 1, 1], [0, 0, 0], Some(vec![7.0, 8.0])).unwrap();
    let net = NetworkSpec::new(VolumeShape::new(1, 1, 2, 2), vec![LayerSpec::new("C", LayerKind::Conv3d(k))]).unwrap();
    let v = StoredModel::from_network(&net).values;
    // (t, s, l): 000 001 010 011 100 101 110 111 → value l*100 + s*10 + t
    assert_eq!(v, vec![0.0, 100.0, 10.0, 110.0, 1.0, 101.0, 11.0, 111.0, 7.0, 8.0]);
}

#[test]
fn corruption_is_detected() {
    let stored = StoredModel::from_network(&small_reference(4));
    let (js, mut blob) = bytes(&stored);
    let last = blob.len() - 1;
    blob[last] ^= 0x40;
    assert!(matches!(StoredModel::from_bytes(&js, &blob), Err(FormatError::Checksum { .. })));

    // a blob from another model
    let other = bytes(&StoredModel::from_network(&small_reference(5))).1;
    assert!(matches!(StoredModel::from_bytes(&js, &other), Err(FormatError::Checksum { .. })));

    // overlapping segments
    let mut m: ModelManifest = serde_json::from_str(&js).unwrap();
    if let tuckervid::format::LayerEntry::Conv3d { segment, .. } = &mut m.layers[3] {
        segment.offset -= 1;
    }
    assert!(ModelManifest::from_json(&serde_json::to_string(&m).unwrap()).is_err());

    let mut m: ModelManifest = serde_json::from_str(&js).unwrap();
    m.format_version = 99;
    assert!(matches!(
        ModelManifest::from_json(&serde_json::to_string(&m).unwrap()),
        Err(FormatError::Version(99))
    ));
}

#[test]
fn structure_only_keeps_shapes() {
    let net = small_reference(6);
    let m = StoredModel::from_network(&net).manifest;
    let s = structure_only(&m).unwrap();
    assert_eq!(s.infer_shapes().unwrap(), net.infer_shapes().unwrap());
    assert_eq!(s.param_count(), net.param_count());
}

fn random_net(seed: u64) -> NetworkSpec {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut n = || -> f64 { r.sample(StandardNormal) };
    let s = 1 + (seed % 3) as usize;
    let t = 1 + (seed / 3 % 3) as usize;
    let w = DenseTensor::from_fn(vec![2, 1, 3, s, t], |_| n()).unwrap();
    let conv = ConvKernel::new(w, [1, 2, 1], [1, 0, 1], seed.is_multiple_of(2).then(|| vec![0.5; t])).unwrap();
    let pw = Affine::new(Matrix::from_fn(2, t, |_, _| n()), None).unwrap();
    let input = VolumeShape::new(4, 5, 6, s);
    let mut layers = vec![
        LayerSpec::new("C", LayerKind::Conv3d(conv)),
        LayerSpec::new("P", LayerKind::Pointwise(pw)),
        LayerSpec::new("R", LayerKind::Relu),
        LayerSpec::new(
            "M",
            LayerKind::MaxPool3d(PoolSpec {
                window: [2, 2, 2],
                stride: [2, 2, 2],
                ceil_mode: seed.is_multiple_of(4),
            }),
        ),
        LayerSpec::new("F", LayerKind::Flatten),
    ];
    let probe = NetworkSpec::new(input, layers.clone()).unwrap();
    let feat = probe.output_shape().unwrap().len();
    layers.push(LayerSpec::new(
        "L",
        LayerKind::Linear(Affine::new(Matrix::from_fn(3, feat, |_, _| n()), Some(vec![n(), n(), n()])).unwrap()),
    ));
    NetworkSpec::new(input, layers).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn roundtrip_random_networks(seed in any::<u64>()) {
        let first = StoredModel::from_network(&random_net(seed));
        let (js, blob) = bytes(&first);
        let loaded = StoredModel::from_bytes(&js, &blob).unwrap();
        prop_assert_eq!(&loaded, &first);
        let again = StoredModel::from_network(&loaded.to_network().unwrap());
        prop_assert_eq!(bytes(&again), (js, blob));
    }

    #[test]
    fn blob_roundtrip_preserves_bits(values in prop::collection::vec(any::<f32>(), 0..200)) {
        let (back, _) = decode_blob(&encode_blob(&values)).unwrap();
        prop_assert_eq!(
            back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            values.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
