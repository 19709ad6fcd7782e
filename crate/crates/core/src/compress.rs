//! One-shot whole-network compression.
//!
//! Each layer named in a [`CompressionPlan`] is decomposed and replaced by a
//! short chain of cheaper layers:
//!
//! * Tucker-2 on a convolution becomes `[1×1×1 S→R_s] → [D_F×D_H×D_W R_s→R_t]
//!   → [1×1×1 R_t→T]`. Stride and padding stay on the middle convolution.
//! * Tucker-1 on a convolution becomes `[D_F×D_H×D_W S→r] → [1×1×1 r→T]`; on
//!   a linear layer `[in→r] → [r→out]`.
//! * A linear layer directly after the flatten can take Tucker-2 by first
//!   being lifted to a convolution covering the whole feature map. The
//!   flatten then moves behind the replacement chain.
//!
//! The original bias always ends up on the last replacement layer.
//! Replacement layers are named `<layer>/in`, `<layer>/core`, `<layer>/out`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::cost::{layer_cost, project_layer, Rewrite};
use crate::network::{ActShape, Affine, ConvKernel, LayerKind, LayerSpec, NetworkSpec, VolumeShape};
use crate::tensor::{DenseTensor, Matrix};
use crate::tucker::{
    tucker1_kernel, tucker2_kernel, TuckerFactors, TuckerOptions, INPUT_CHANNEL_MODE, OUTPUT_CHANNEL_MODE,
};
use crate::vbmf::{clamp_rank, estimate_rank, estimate_ranks_for_conv};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Tucker2,
    Tucker1,
    Skip,
}

impl Strategy {
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Tucker2 => "tucker2",
            Strategy::Tucker1 => "tucker1",
            Strategy::Skip => "skip",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RankSpec {
    /// Chosen by VBMF.
    Auto,
    /// `[rs, rt]` for Tucker-2, `[r]` for Tucker-1.
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanEntry {
    pub layer: String,
    pub strategy: Strategy,
    pub ranks: RankSpec,
}

/// One entry per layer of the network, in network order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressionPlan {
    pub entries: Vec<PlanEntry>,
}

impl CompressionPlan {
    fn build(net: &NetworkSpec, first_conv: Strategy) -> Self {
        let convs: Vec<usize> = indices(net, |k| matches!(k, LayerKind::Conv3d(_)));
        let linears: Vec<usize> = indices(net, |k| matches!(k, LayerKind::Linear(_)));
        let entries = net
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let strategy = if convs.first() == Some(&i) {
                    first_conv
                } else if convs.contains(&i) {
                    Strategy::Tucker2
                } else if linears.last() == Some(&i) {
                    Strategy::Skip
                } else if linears.first() == Some(&i) {
                    if follows_flatten(net, i) {
                        Strategy::Tucker2
                    } else {
                        Strategy::Tucker1
                    }
                } else if linears.contains(&i) {
                    Strategy::Tucker1
                } else {
                    Strategy::Skip
                };
                PlanEntry {
                    layer: l.name.clone(),
                    strategy,
                    ranks: RankSpec::Auto,
                }
            })
            .collect();
        Self { entries }
    }

    /// Tucker-2 on every convolution and the first linear layer, Tucker-1 on
    /// the other linear layers except the classifier, which is kept. All
    /// ranks are left to VBMF.
    pub fn default_for(net: &NetworkSpec) -> Self {
        Self::build(net, Strategy::Tucker2)
    }

    /// Like [`CompressionPlan::default_for`] but with Tucker-1 on the first convolution.
    pub fn tucker1_first_conv(net: &NetworkSpec) -> Self {
        Self::build(net, Strategy::Tucker1)
    }

    pub fn skip_all(net: &NetworkSpec) -> Self {
        Self {
            entries: net
                .layers
                .iter()
                .map(|l| PlanEntry {
                    layer: l.name.clone(),
                    strategy: Strategy::Skip,
                    ranks: RankSpec::Auto,
                })
                .collect(),
        }
    }

    /// Replaces every `Auto` rank with the full mode sizes (a lossless rewrite).
    pub fn with_full_ranks(mut self, net: &NetworkSpec) -> Result<Self> {
        let ins = net.layer_inputs()?;
        for e in &mut self.entries {
            let i = net
                .layers
                .iter()
                .position(|l| l.name == e.layer)
                .ok_or_else(|| Error::Plan(format!("unknown layer `{}`", e.layer)))?;
            let full = match (e.strategy, &net.layers[i].kind) {
                (Strategy::Skip, _) => continue,
                (Strategy::Tucker2, LayerKind::Conv3d(k)) => vec![k.in_channels(), k.out_channels()],
                (Strategy::Tucker1, LayerKind::Conv3d(k)) => vec![k.out_channels()],
                (Strategy::Tucker2, LayerKind::Linear(a)) => match i.checked_sub(1).map(|p| &ins[p]) {
                    Some(ActShape::Volume(v)) => vec![v.channels, a.outputs()],
                    _ => vec![a.inputs(), a.outputs()],
                },
                (Strategy::Tucker1, LayerKind::Linear(a)) => vec![a.outputs()],
                _ => continue,
            };
            e.ranks = RankSpec::Explicit(full);
        }
        Ok(self)
    }

    pub fn entry(&self, layer: &str) -> Option<&PlanEntry> {
        self.entries.iter().find(|e| e.layer == layer)
    }

    /// Overrides one layer's entry.
    pub fn set(&mut self, layer: &str, strategy: Strategy, ranks: RankSpec) -> Result<()> {
        let e = self
            .entries
            .iter_mut()
            .find(|e| e.layer == layer)
            .ok_or_else(|| Error::Plan(format!("unknown layer `{layer}`")))?;
        e.strategy = strategy;
        e.ranks = ranks;
        Ok(())
    }

    fn validate(&self, net: &NetworkSpec) -> Result<()> {
        if self.entries.len() != net.layers.len() {
            return Err(Error::Plan(format!(
                "plan has {} entries for {} layers",
                self.entries.len(),
                net.layers.len()
            )));
        }
        for layer in &net.layers {
            let n = self.entries.iter().filter(|e| e.layer == layer.name).count();
            if n != 1 {
                return Err(Error::Plan(format!(
                    "layer `{}` appears {n} times in the plan",
                    layer.name
                )));
            }
        }
        Ok(())
    }
}

fn indices(net: &NetworkSpec, pred: impl Fn(&LayerKind) -> bool) -> Vec<usize> {
    net.layers
        .iter()
        .enumerate()
        .filter(|(_, l)| pred(&l.kind))
        .map(|(i, _)| i)
        .collect()
}

fn follows_flatten(net: &NetworkSpec, i: usize) -> bool {
    i > 0 && matches!(net.layers[i - 1].kind, LayerKind::Flatten)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressOptions {
    pub tucker: TuckerOptions,
    /// Keep a layer as is when its rewrite would not store fewer parameters.
    pub no_gain_guard: bool,
}

impl Default for CompressOptions {
    fn default() -> Self {
        Self {
            tucker: TuckerOptions::default(),
            no_gain_guard: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorRole {
    /// `U^(s)` as an `S→R_s` channel mixer.
    InputFactor,
    /// The decomposition core as the spatial/temporal convolution.
    Core,
    /// `U^(t)` as an `R→T` channel mixer; carries the bias.
    OutputFactor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedLayerGroup {
    pub original: String,
    pub layers: Vec<LayerSpec>,
    pub roles: Vec<FactorRole>,
    /// Fit of the decomposition the group was built from.
    pub fit: f64,
}

impl CompressedLayerGroup {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }
}

fn conv_of(layer: &LayerSpec) -> Result<&ConvKernel> {
    match &layer.kind {
        LayerKind::Conv3d(k) => Ok(k),
        other => Err(Error::Plan(format!(
            "`{}` is a {} layer, expected conv3d",
            layer.name,
            other.label()
        ))),
    }
}

fn check_rank(rank: usize, size: usize) -> Result<()> {
    if rank == 0 || rank > size {
        return Err(Error::InvalidRank { rank, size });
    }
    Ok(())
}

fn sub(layer: &LayerSpec, role: &str) -> String {
    format!("{}/{role}", layer.name)
}

fn factors_core_kernel(f: &TuckerFactors, k: &ConvKernel) -> Result<ConvKernel> {
    ConvKernel::new(f.core.clone(), k.stride, k.padding, None)
}

/// Tucker-2 rewrite of a convolution layer into three convolutions.
pub fn rewrite_tucker2(layer: &LayerSpec, rs: usize, rt: usize, opts: &TuckerOptions) -> Result<CompressedLayerGroup> {
    let k = conv_of(layer)?;
    check_rank(rs, k.in_channels()).map_err(|e| e.in_layer(&layer.name))?;
    check_rank(rt, k.out_channels()).map_err(|e| e.in_layer(&layer.name))?;
    let f = tucker2_kernel(k, rs, rt, opts).map_err(|e| e.in_layer(&layer.name))?;
    let us = f.factor(INPUT_CHANNEL_MODE).expect("input factor");
    let ut = f.factor(OUTPUT_CHANNEL_MODE).expect("output factor");
    let layers = vec![
        LayerSpec::new(sub(layer, "in"), LayerKind::Pointwise(Affine::new(us.transpose(), None)?)),
        LayerSpec::new(sub(layer, "core"), LayerKind::Conv3d(factors_core_kernel(&f, k)?)),
        LayerSpec::new(
            sub(layer, "out"),
            LayerKind::Pointwise(Affine::new(ut.clone(), k.bias.clone())?),
        ),
    ];
    Ok(CompressedLayerGroup {
        original: layer.name.clone(),
        layers,
        roles: vec![FactorRole::InputFactor, FactorRole::Core, FactorRole::OutputFactor],
        fit: f.final_fit(),
    })
}

/// Tucker-1 rewrite on the output channels of a convolution or the output
/// features of a linear layer.
pub fn rewrite_tucker1(layer: &LayerSpec, r: usize, opts: &TuckerOptions) -> Result<CompressedLayerGroup> {
    let named = |e: Error| e.in_layer(&layer.name);
    let layers = match &layer.kind {
        LayerKind::Conv3d(k) => {
            check_rank(r, k.out_channels()).map_err(named)?;
            let f = tucker1_kernel(&k.weights, OUTPUT_CHANNEL_MODE, r, opts).map_err(named)?;
            let u = f.factor(OUTPUT_CHANNEL_MODE).expect("output factor").clone();
            let group = vec![
                LayerSpec::new(sub(layer, "core"), LayerKind::Conv3d(factors_core_kernel(&f, k)?)),
                LayerSpec::new(sub(layer, "out"), LayerKind::Pointwise(Affine::new(u, k.bias.clone())?)),
            ];
            (group, f.final_fit())
        }
        LayerKind::Linear(a) => {
            check_rank(r, a.outputs()).map_err(named)?;
            let w: DenseTensor = a.weights.clone().into();
            let f = tucker1_kernel(&w, 0, r, opts).map_err(named)?;
            let u = f.factor(0).expect("output factor").clone();
            let g = Matrix::try_from(f.core.clone())?;
            let group = vec![
                LayerSpec::new(sub(layer, "core"), LayerKind::Linear(Affine::new(g, None)?)),
                LayerSpec::new(sub(layer, "out"), LayerKind::Linear(Affine::new(u, a.bias.clone())?)),
            ];
            (group, f.final_fit())
        }
        other => {
            return Err(Error::Plan(format!(
                "cannot apply Tucker-1 to {} layer `{}`",
                other.label(),
                layer.name
            )))
        }
    };
    Ok(CompressedLayerGroup {
        original: layer.name.clone(),
        layers: layers.0,
        roles: vec![FactorRole::Core, FactorRole::OutputFactor],
        fit: layers.1,
    })
}

/// Reshapes a linear layer fed by `flatten(F×H×W×S)` into an equivalent
/// `F×H×W×S×T` convolution with stride 1 and no padding, producing `1×1×1×T`.
pub fn lift_linear_to_conv(layer: &LayerSpec, feature: VolumeShape) -> Result<LayerSpec> {
    let a = match &layer.kind {
        LayerKind::Linear(a) => a,
        other => {
            return Err(Error::Plan(format!(
                "`{}` is a {} layer, expected linear",
                layer.name,
                other.label()
            )))
        }
    };
    if a.inputs() != feature.len() {
        return Err(Error::ShapeMismatch(format!(
            "linear layer `{}` takes {} features, feature map {:?} flattens to {}",
            layer.name,
            a.inputs(),
            feature.dims(),
            feature.len()
        ))
        .in_layer(&layer.name));
    }
    let g = feature.voxels();
    let w = &a.weights;
    let kernel = DenseTensor::from_fn(
        vec![feature.frames, feature.height, feature.width, feature.channels, a.outputs()],
        |idx| {
            let vox = (idx[0] * feature.height + idx[1]) * feature.width + idx[2];
            w.get(idx[4], idx[3] * g + vox)
        },
    )?;
    Ok(LayerSpec::new(
        layer.name.clone(),
        LayerKind::Conv3d(ConvKernel::new(kernel, [1, 1, 1], [0, 0, 0], a.bias.clone())?),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub enum RankSource {
    Explicit,
    /// Raw VBMF estimates before clamping to 1.
    Vbmf { raw: Vec<usize>, clamped: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub layer: String,
    pub requested: Strategy,
    pub applied: Strategy,
    pub ranks: Vec<usize>,
    pub rank_source: Option<RankSource>,
    /// The rewrite was dropped because it would not shrink the layer.
    pub downgraded: bool,
    pub original_params: usize,
    pub compressed_params: usize,
    pub fit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CompressionRecord {
    pub layers: Vec<LayerRecord>,
}

impl CompressionRecord {
    pub fn layer(&self, name: &str) -> Option<&LayerRecord> {
        self.layers.iter().find(|l| l.layer == name)
    }
}

struct Decision {
    strategy: Strategy,
    ranks: Vec<usize>,
    source: Option<RankSource>,
    downgraded: bool,
    lifted: Option<LayerSpec>,
}

fn explicit(ranks: &[usize], want: usize, layer: &str) -> Result<Vec<usize>> {
    if ranks.len() != want {
        return Err(Error::Plan(format!(
            "layer `{layer}` needs {want} rank(s), got {}",
            ranks.len()
        )));
    }
    Ok(ranks.to_vec())
}

fn decide(net: &NetworkSpec, index: usize, entry: &PlanEntry, ins: &[ActShape], opts: &CompressOptions) -> Result<Decision> {
    let layer = &net.layers[index];
    let keep = Decision {
        strategy: Strategy::Skip,
        ranks: Vec::new(),
        source: None,
        downgraded: false,
        lifted: None,
    };
    if entry.strategy == Strategy::Skip {
        return Ok(keep);
    }

    let mut lifted = None;
    let (ranks, source) = match (entry.strategy, &layer.kind) {
        (Strategy::Tucker2, LayerKind::Conv3d(k)) => match &entry.ranks {
            RankSpec::Explicit(r) => (explicit(r, 2, &layer.name)?, RankSource::Explicit),
            RankSpec::Auto => {
                let est = estimate_ranks_for_conv(k).map_err(|e| e.in_layer(&layer.name))?;
                (
                    vec![est.rs, est.rt],
                    RankSource::Vbmf {
                        raw: vec![est.input.rank, est.output.rank],
                        clamped: est.clamped,
                    },
                )
            }
        },
        (Strategy::Tucker2, LayerKind::Linear(_)) => {
            let feature = match index.checked_sub(1).map(|p| (&net.layers[p].kind, &ins[p])) {
                Some((LayerKind::Flatten, ActShape::Volume(v))) => *v,
                _ => {
                    return Err(Error::Plan(format!(
                        "Tucker-2 on linear layer `{}` needs it to follow the flatten",
                        layer.name
                    )))
                }
            };
            let conv = lift_linear_to_conv(layer, feature)?;
            let r = match &entry.ranks {
                RankSpec::Explicit(r) => (explicit(r, 2, &layer.name)?, RankSource::Explicit),
                RankSpec::Auto => {
                    let est = estimate_ranks_for_conv(conv_of(&conv)?).map_err(|e| e.in_layer(&layer.name))?;
                    (
                        vec![est.rs, est.rt],
                        RankSource::Vbmf {
                            raw: vec![est.input.rank, est.output.rank],
                            clamped: est.clamped,
                        },
                    )
                }
            };
            lifted = Some(conv);
            r
        }
        (Strategy::Tucker1, LayerKind::Conv3d(_) | LayerKind::Linear(_)) => match &entry.ranks {
            RankSpec::Explicit(r) => (explicit(r, 1, &layer.name)?, RankSource::Explicit),
            RankSpec::Auto => {
                let m = match &layer.kind {
                    LayerKind::Conv3d(k) => k.weights.unfold(OUTPUT_CHANNEL_MODE)?,
                    LayerKind::Linear(a) => a.weights.clone(),
                    _ => unreachable!(),
                };
                let est = estimate_rank(&m).map_err(|e| e.in_layer(&layer.name))?;
                let (r, clamped) = clamp_rank(&est, &layer.name);
                (vec![r], RankSource::Vbmf { raw: vec![est.rank], clamped })
            }
        },
        (s, kind) => {
            return Err(Error::Plan(format!(
                "cannot apply {} to {} layer `{}`",
                s.label(),
                kind.label(),
                layer.name
            )))
        }
    };

    let rewrite = match entry.strategy {
        Strategy::Tucker2 => Rewrite::Tucker2 { rs: ranks[0], rt: ranks[1] },
        _ => Rewrite::Tucker1 { r: ranks[0] },
    };
    let compressed = project_layer(net, index, rewrite).map_err(|e| e.in_layer(&layer.name))?;
    let original = layer_cost(layer, &ins[index])?;
    if opts.no_gain_guard && compressed.params >= original.params {
        log::info!(
            "keeping `{}`: rewrite would store {} parameters instead of {}",
            layer.name,
            compressed.params,
            original.params
        );
        return Ok(Decision {
            ranks,
            source: Some(source),
            downgraded: true,
            ..keep
        });
    }
    Ok(Decision {
        strategy: entry.strategy,
        ranks,
        source: Some(source),
        downgraded: false,
        lifted,
    })
}

/// Applies `plan` to `net`. The result takes the same input and produces
/// outputs of the same shape.
pub fn compress_network(
    net: &NetworkSpec,
    plan: &CompressionPlan,
    opts: &CompressOptions,
) -> Result<(NetworkSpec, CompressionRecord)> {
    plan.validate(net)?;
    let ins = net.layer_inputs()?;
    let mut decisions = Vec::with_capacity(net.layers.len());
    for (i, layer) in net.layers.iter().enumerate() {
        let entry = plan.entry(&layer.name).expect("validated plan");
        decisions.push(decide(net, i, entry, &ins, opts)?);
    }

    let mut layers = Vec::new();
    let mut record = CompressionRecord::default();
    let mut deferred_flatten: Option<LayerSpec> = None;
    for (i, (layer, d)) in net.layers.iter().zip(&decisions).enumerate() {
        let entry = plan.entry(&layer.name).expect("validated plan");
        if matches!(layer.kind, LayerKind::Flatten) && decisions.get(i + 1).is_some_and(|n| n.lifted.is_some()) {
            deferred_flatten = Some(layer.clone());
            continue;
        }
        let (group, fit) = match d.strategy {
            Strategy::Skip => (vec![layer.clone()], None),
            Strategy::Tucker2 => {
                let source = d.lifted.as_ref().unwrap_or(layer);
                let g = rewrite_tucker2(source, d.ranks[0], d.ranks[1], &opts.tucker)?;
                (g.layers, Some(g.fit))
            }
            Strategy::Tucker1 => {
                let g = rewrite_tucker1(layer, d.ranks[0], &opts.tucker)?;
                (g.layers, Some(g.fit))
            }
        };
        if layer.kind.has_weights() {
            record.layers.push(LayerRecord {
                layer: layer.name.clone(),
                requested: entry.strategy,
                applied: d.strategy,
                ranks: d.ranks.clone(),
                rank_source: d.source.clone(),
                downgraded: d.downgraded,
                original_params: layer.param_count(),
                compressed_params: group.iter().map(LayerSpec::param_count).sum(),
                fit,
            });
        }
        layers.extend(group);
        if let Some(f) = deferred_flatten.take() {
            layers.push(f);
        }
    }
    let out = NetworkSpec::new(net.input, layers)?;
    Ok((out, record))
}
