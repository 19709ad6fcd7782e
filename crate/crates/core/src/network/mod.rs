//! Layer-graph IR for video CNNs and the reference inference engine.
//!
//! Activations inside the convolutional stage are `F × H × W × S` tensors
//! (channels last). Kernels are `D_F × D_H × D_W × S × T`. After `flatten` the
//! activation is a vector ordered channel-slowest, then frame, row, column.

mod engine;
pub mod reference;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{DenseTensor, Matrix};
use crate::{Error, Result};

pub use engine::{
    conv3d_forward, conv3d_forward_counted, flatten_forward, linear_forward, linear_forward_counted,
    maxpool3d_forward, pointwise_forward, pointwise_forward_counted, relu_forward, source_index,
    OpCount,
};

/// A `F × H × W × S` activation volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VolumeShape {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl VolumeShape {
    pub fn new(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        Self {
            frames,
            height,
            width,
            channels,
        }
    }

    /// Voxels per channel (`Γ`).
    pub fn voxels(&self) -> usize {
        self.frames * self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.voxels() * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.frames, self.height, self.width, self.channels]
    }

    fn spatial(&self) -> [usize; 3] {
        [self.frames, self.height, self.width]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActShape {
    Volume(VolumeShape),
    Vector(usize),
}

impl ActShape {
    pub fn len(&self) -> usize {
        match self {
            ActShape::Volume(v) => v.len(),
            ActShape::Vector(n) => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        match self {
            ActShape::Volume(v) => v.dims().to_vec(),
            ActShape::Vector(n) => vec![*n],
        }
    }

    pub fn of(t: &DenseTensor) -> Result<ActShape> {
        match *t.shape() {
            [f, h, w, s] => Ok(ActShape::Volume(VolumeShape::new(f, h, w, s))),
            [n] => Ok(ActShape::Vector(n)),
            ref other => Err(Error::ShapeMismatch(format!(
                "activations are F×H×W×S volumes or vectors, got {other:?}"
            ))),
        }
    }
}

/// A 3D convolution kernel with its stride and zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    /// `D_F × D_H × D_W × S × T`.
    pub weights: DenseTensor,
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub bias: Option<Vec<f64>>,
}

impl ConvKernel {
    pub fn new(
        weights: DenseTensor,
        stride: [usize; 3],
        padding: [usize; 3],
        bias: Option<Vec<f64>>,
    ) -> Result<Self> {
        let k = Self {
            weights,
            stride,
            padding,
            bias,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.ndim() != 5 {
            return Err(Error::ShapeMismatch(format!(
                "conv kernel needs 5 modes, got {:?}",
                self.weights.shape()
            )));
        }
        if self.stride.contains(&0) {
            return Err(Error::InvalidArgument("stride must be at least 1".into()));
        }
        if let Some(b) = &self.bias {
            if b.len() != self.out_channels() {
                return Err(Error::ShapeMismatch(format!(
                    "bias has {} entries for {} output channels",
                    b.len(),
                    self.out_channels()
                )));
            }
        }
        Ok(())
    }

    /// `[D_F, D_H, D_W]`.
    pub fn extent(&self) -> [usize; 3] {
        let s = self.weights.shape();
        [s[0], s[1], s[2]]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[3]
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[4]
    }

    /// Kernel voxels per channel pair (`Λ`).
    pub fn lambda(&self) -> usize {
        self.extent().iter().product()
    }

    pub fn output_shape(&self, input: &VolumeShape) -> Result<VolumeShape> {
        if input.channels != self.in_channels() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} channels, kernel expects {}",
                input.channels,
                self.in_channels()
            )));
        }
        let ext = self.extent();
        let sp = input.spatial();
        let mut out = [0usize; 3];
        for d in 0..3 {
            let padded = sp[d] + 2 * self.padding[d];
            if padded < ext[d] {
                return Err(Error::ShapeMismatch(format!(
                    "kernel extent {} exceeds padded input {} along axis {d}",
                    ext[d], padded
                )));
            }
            out[d] = (padded - ext[d]) / self.stride[d] + 1;
        }
        Ok(VolumeShape::new(out[0], out[1], out[2], self.out_channels()))
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, Vec::len)
    }
}

/// `y = W·x + b` with `W` stored out × in. Used per voxel for pointwise
/// convolutions and once for linear layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weights: Matrix,
    pub bias: Option<Vec<f64>>,
}

impl Affine {
    pub fn new(weights: Matrix, bias: Option<Vec<f64>>) -> Result<Self> {
        if let Some(b) = &bias {
            if b.len() != weights.rows() {
                return Err(Error::ShapeMismatch(format!(
                    "bias has {} entries for {} outputs",
                    b.len(),
                    weights.rows()
                )));
            }
        }
        Ok(Self { weights, bias })
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.data().len() + self.bias.as_ref().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub window: [usize; 3],
    pub stride: [usize; 3],
    /// Round the output size up; windows hanging off the end are clipped.
    pub ceil_mode: bool,
}

impl PoolSpec {
    pub fn output_shape(&self, input: &VolumeShape) -> Result<VolumeShape> {
        if self.window.contains(&0) || self.stride.contains(&0) {
            return Err(Error::InvalidArgument("pool window and stride must be positive".into()));
        }
        let sp = input.spatial();
        let mut out = [0usize; 3];
        for d in 0..3 {
            if sp[d] < self.window[d] {
                return Err(Error::ShapeMismatch(format!(
                    "pool window {} exceeds input {} along axis {d}",
                    self.window[d], sp[d]
                )));
            }
            let span = sp[d] - self.window[d];
            let mut n = if self.ceil_mode {
                span.div_ceil(self.stride[d]) + 1
            } else {
                span / self.stride[d] + 1
            };
            // the last window must start inside the input
            if (n - 1) * self.stride[d] >= sp[d] {
                n -= 1;
            }
            out[d] = n;
        }
        Ok(VolumeShape::new(out[0], out[1], out[2], input.channels))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Conv3d(ConvKernel),
    /// 1×1×1 convolution: a per-voxel channel mix.
    Pointwise(Affine),
    MaxPool3d(PoolSpec),
    Relu,
    Flatten,
    Linear(Affine),
}

impl LayerKind {
    pub fn label(&self) -> &'static str {
        match self {
            LayerKind::Conv3d(_) => "conv3d",
            LayerKind::Pointwise(_) => "pointwise_conv",
            LayerKind::MaxPool3d(_) => "maxpool3d",
            LayerKind::Relu => "relu",
            LayerKind::Flatten => "flatten",
            LayerKind::Linear(_) => "linear",
        }
    }

    pub fn has_weights(&self) -> bool {
        matches!(
            self,
            LayerKind::Conv3d(_) | LayerKind::Pointwise(_) | LayerKind::Linear(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }

    /// Weights plus biases.
    pub fn param_count(&self) -> usize {
        match &self.kind {
            LayerKind::Conv3d(k) => k.param_count(),
            LayerKind::Pointwise(a) | LayerKind::Linear(a) => a.param_count(),
            _ => 0,
        }
    }

    /// Name of the layer this one was derived from (`"C2/core"` → `"C2"`).
    pub fn origin(&self) -> &str {
        self.name.split('/').next().unwrap_or(&self.name)
    }

    pub fn output_shape(&self, input: &ActShape) -> Result<ActShape> {
        let out = match (&self.kind, input) {
            (LayerKind::Conv3d(k), ActShape::Volume(v)) => ActShape::Volume(k.output_shape(v)?),
            (LayerKind::Pointwise(a), ActShape::Volume(v)) => {
                if a.inputs() != v.channels {
                    return Err(Error::ShapeMismatch(format!(
                        "input has {} channels, pointwise layer expects {}",
                        v.channels,
                        a.inputs()
                    )));
                }
                ActShape::Volume(VolumeShape { channels: a.outputs(), ..*v })
            }
            (LayerKind::MaxPool3d(p), ActShape::Volume(v)) => ActShape::Volume(p.output_shape(v)?),
            (LayerKind::Relu, s) => *s,
            (LayerKind::Flatten, ActShape::Volume(v)) => ActShape::Vector(v.len()),
            (LayerKind::Linear(a), ActShape::Vector(n)) => {
                if a.inputs() != *n {
                    return Err(Error::ShapeMismatch(format!(
                        "input has {n} features, linear layer expects {}",
                        a.inputs()
                    )));
                }
                ActShape::Vector(a.outputs())
            }
            (kind, s) => {
                return Err(Error::ShapeMismatch(format!(
                    "{} cannot consume a {} input",
                    kind.label(),
                    match s {
                        ActShape::Volume(_) => "volume",
                        ActShape::Vector(_) => "vector",
                    }
                )))
            }
        };
        Ok(out)
    }

    pub fn forward(&self, x: &DenseTensor) -> Result<DenseTensor> {
        let r = match &self.kind {
            LayerKind::Conv3d(k) => conv3d_forward(x, k),
            LayerKind::Pointwise(a) => pointwise_forward(x, &a.weights, a.bias.as_deref()),
            LayerKind::MaxPool3d(p) => maxpool3d_forward(x, p),
            LayerKind::Relu => Ok(relu_forward(x)),
            LayerKind::Flatten => flatten_forward(x),
            LayerKind::Linear(a) => linear_forward(x, a),
        };
        r.map_err(|e| e.in_layer(&self.name))
    }

    /// Forward pass that also tallies multiplications and bias additions.
    pub fn forward_counted(&self, x: &DenseTensor, count: &mut OpCount) -> Result<DenseTensor> {
        let r = match &self.kind {
            LayerKind::Conv3d(k) => conv3d_forward_counted(x, k, count),
            LayerKind::Pointwise(a) => pointwise_forward_counted(x, &a.weights, a.bias.as_deref(), count),
            LayerKind::Linear(a) => linear_forward_counted(x, a, count),
            _ => self.forward(x),
        };
        r.map_err(|e| e.in_layer(&self.name))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input: VolumeShape,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Builds a network and checks it end to end.
    pub fn new(input: VolumeShape, layers: Vec<LayerSpec>) -> Result<Self> {
        let net = Self { input, layers };
        net.infer_shapes()?;
        Ok(net)
    }

    /// Output shape of every layer, in order. Fails on the first inconsistent layer.
    pub fn infer_shapes(&self) -> Result<Vec<ActShape>> {
        if self.input.is_empty() {
            return Err(Error::ShapeMismatch("input shape has a zero dimension".into()));
        }
        let flattens = self
            .layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Flatten))
            .count();
        if flattens > 1 {
            return Err(Error::ShapeMismatch(format!("network has {flattens} flatten layers")));
        }
        let mut names: Vec<&str> = Vec::with_capacity(self.layers.len());
        let mut shape = ActShape::Volume(self.input);
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            if names.contains(&layer.name.as_str()) {
                return Err(Error::ShapeMismatch(format!("duplicate layer name `{}`", layer.name)));
            }
            names.push(&layer.name);
            if let LayerKind::Conv3d(k) = &layer.kind {
                k.validate().map_err(|e| e.in_layer(&layer.name))?;
            }
            shape = layer.output_shape(&shape).map_err(|e| e.in_layer(&layer.name))?;
            out.push(shape);
        }
        Ok(out)
    }

    /// Input shape seen by every layer, in order.
    pub fn layer_inputs(&self) -> Result<Vec<ActShape>> {
        let outs = self.infer_shapes()?;
        let mut ins = Vec::with_capacity(outs.len());
        ins.push(ActShape::Volume(self.input));
        ins.extend(outs.iter().take(outs.len().saturating_sub(1)).copied());
        ins.truncate(self.layers.len());
        Ok(ins)
    }

    pub fn output_shape(&self) -> Result<ActShape> {
        Ok(self
            .infer_shapes()?
            .last()
            .copied()
            .unwrap_or(ActShape::Volume(self.input)))
    }

    pub fn check_input(&self, x: &DenseTensor) -> Result<()> {
        if x.shape() != self.input.dims() {
            return Err(Error::ShapeMismatch(format!(
                "network expects input {:?}, got {:?}",
                self.input.dims(),
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &DenseTensor) -> Result<DenseTensor> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    pub fn forward_counted(&self, x: &DenseTensor, count: &mut OpCount) -> Result<DenseTensor> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward_counted(&cur, count)?;
        }
        Ok(cur)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }
}
