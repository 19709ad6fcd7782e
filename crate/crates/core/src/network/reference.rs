//! A THETIS-like video classifier reconstructed from published layer sizes.
//!
//! The exact strides and pool placements of the original architecture are
//! not public. This configuration reproduces every published layer size:
//! `C1` 5×11×11 (4→6, "same"), max-pool 2×4×4, `C2` 3×5×5 (6→16, valid),
//! max-pool 3×3×4 (ceil), flatten to 16·4·9·9 = 5184 features, then
//! 5184→128→84→2. It is a reconstruction, not ground truth.

use alloc::vec;
use alloc::vec::Vec;

use super::{Affine, ConvKernel, LayerKind, LayerSpec, NetworkSpec, PoolSpec, VolumeShape};
use crate::tensor::{DenseTensor, Matrix};
use crate::Result;

/// Full-resolution clip: 4 channels × 28 frames × 120 × 160.
pub const FULL_INPUT: VolumeShape = VolumeShape {
    frames: 28,
    height: 120,
    width: 160,
    channels: 4,
};

/// Reduced clip with the same layer structure; flattens to 16·2·2·2 = 128.
pub const SMALL_INPUT: VolumeShape = VolumeShape {
    frames: 12,
    height: 32,
    width: 40,
    channels: 4,
};

/// Published ranks for the reconstructed network: `(layer, ranks)`; a single
/// rank means Tucker-1, an empty list means the layer is left alone.
pub const PUBLISHED_RANKS: [(&str, &[usize]); 5] = [
    ("C1", &[2, 2]),
    ("C2", &[2, 3]),
    ("L1", &[4, 7]),
    ("L2", &[1]),
    ("L3", &[]),
];

/// Builds the reconstructed network for `input` with weights drawn from `init`.
/// Each layer's weights are scaled by `1/√fan_in` after drawing.
pub fn thetis_like(input: VolumeShape, mut init: impl FnMut() -> f64) -> Result<NetworkSpec> {
    let mut conv = |ext: [usize; 3], s: usize, t: usize, pad: [usize; 3]| -> Result<ConvKernel> {
        let fan_in = (ext.iter().product::<usize>() * s) as f64;
        let scale = 1.0 / libm::sqrt(fan_in);
        let w = DenseTensor::from_fn(vec![ext[0], ext[1], ext[2], s, t], |_| init() * scale)?;
        let b: Vec<f64> = (0..t).map(|_| init() * scale).collect();
        ConvKernel::new(w, [1, 1, 1], pad, Some(b))
    };
    let c1 = conv([5, 11, 11], 4, 6, [2, 5, 5])?;
    let c2 = conv([3, 5, 5], 6, 16, [0, 0, 0])?;

    let mut layers = vec![
        LayerSpec::new("C1", LayerKind::Conv3d(c1)),
        LayerSpec::new("R1", LayerKind::Relu),
        LayerSpec::new(
            "P1",
            LayerKind::MaxPool3d(PoolSpec {
                window: [2, 4, 4],
                stride: [2, 4, 4],
                ceil_mode: false,
            }),
        ),
        LayerSpec::new("C2", LayerKind::Conv3d(c2)),
        LayerSpec::new("R2", LayerKind::Relu),
        LayerSpec::new(
            "P2",
            LayerKind::MaxPool3d(PoolSpec {
                window: [3, 3, 4],
                stride: [3, 3, 4],
                ceil_mode: true,
            }),
        ),
        LayerSpec::new("FL", LayerKind::Flatten),
    ];
    let probe = NetworkSpec::new(input, layers.clone())?;
    let features = probe.output_shape()?.len();

    let mut linear = |inp: usize, out: usize| -> Result<Affine> {
        let scale = 1.0 / libm::sqrt(inp as f64);
        let w = Matrix::from_fn(out, inp, |_, _| init() * scale);
        let b = (0..out).map(|_| init() * scale).collect();
        Affine::new(w, Some(b))
    };
    layers.push(LayerSpec::new("L1", LayerKind::Linear(linear(features, 128)?)));
    layers.push(LayerSpec::new("R3", LayerKind::Relu));
    layers.push(LayerSpec::new("L2", LayerKind::Linear(linear(128, 84)?)));
    layers.push(LayerSpec::new("R4", LayerKind::Relu));
    layers.push(LayerSpec::new("L3", LayerKind::Linear(linear(84, 2)?)));
    NetworkSpec::new(input, layers)
}
