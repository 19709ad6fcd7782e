//! Closed-form parameter and multiplication counts, and the per-layer report.
//!
//! Notation: `Γ` input voxels per channel, `Γ'` output voxels per channel,
//! `Λ` kernel voxels. Counts follow the compressed-convolution analysis with
//! two readings fixed here:
//!
//! * original parameters are `S·T·Λ` (the kernel), not `S·T·Γ`;
//! * original multiplications are `S·T·Λ·Γ'`, indexed by output voxels so the
//!   count stays right for strided convolutions (`Γ = Γ'` for "same" layers).
//!
//! FLOPs are reported as `2·mults + bias_adds`: one multiply and one add per
//! tap, plus one add per biased output. The multiply-only count is kept
//! alongside.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::network::{ActShape, LayerKind, LayerSpec, NetworkSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostTerm {
    pub label: String,
    pub params: u64,
    pub mults: u64,
    pub bias_adds: u64,
}

impl CostTerm {
    pub fn flops(&self) -> u64 {
        2 * self.mults + self.bias_adds
    }
}

/// Cost of one layer or of a group of replacement layers.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LayerCost {
    pub params: u64,
    pub mults: u64,
    pub bias_adds: u64,
    /// One term per replacement layer; empty for a plain layer.
    pub breakdown: Vec<CostTerm>,
}

impl LayerCost {
    fn from_terms(terms: Vec<CostTerm>) -> Self {
        let mut c = LayerCost::default();
        for t in &terms {
            c.params += t.params;
            c.mults += t.mults;
            c.bias_adds += t.bias_adds;
        }
        c.breakdown = terms;
        c
    }

    fn single(label: &str, params: u64, mults: u64, bias_adds: u64) -> Self {
        Self {
            params,
            mults,
            bias_adds,
            breakdown: alloc::vec![CostTerm {
                label: label.into(),
                params,
                mults,
                bias_adds,
            }],
        }
    }

    pub fn flops(&self) -> u64 {
        2 * self.mults + self.bias_adds
    }

    pub fn add(&mut self, other: &LayerCost) {
        self.params += other.params;
        self.mults += other.mults;
        self.bias_adds += other.bias_adds;
    }
}

fn bias_terms(bias: bool, t: u64, gamma_out: u64) -> (u64, u64) {
    if bias {
        (t, t * gamma_out)
    } else {
        (0, 0)
    }
}

/// Uncompressed convolution (a linear layer is `Λ = Γ' = 1`).
pub fn cost_conv_original(s: u64, t: u64, lambda: u64, gamma_out: u64, bias: bool) -> LayerCost {
    let (bp, ba) = bias_terms(bias, t, gamma_out);
    LayerCost::single("conv", s * t * lambda + bp, s * t * lambda * gamma_out, ba)
}

pub fn cost_linear(inputs: u64, outputs: u64, bias: bool) -> LayerCost {
    let mut c = cost_conv_original(inputs, outputs, 1, 1, bias);
    c.breakdown[0].label = "linear".into();
    c
}

/// Tucker-2 group: `S→R_s` pointwise, `R_s→R_t` core convolution, `R_t→T` pointwise.
#[allow(clippy::too_many_arguments)]
pub fn cost_conv_tucker2(
    s: u64,
    t: u64,
    rs: u64,
    rt: u64,
    lambda: u64,
    gamma: u64,
    gamma_out: u64,
    bias: bool,
) -> LayerCost {
    let (bp, ba) = bias_terms(bias, t, gamma_out);
    LayerCost::from_terms(alloc::vec![
        CostTerm {
            label: "in".into(),
            params: s * rs,
            mults: s * rs * gamma,
            bias_adds: 0,
        },
        CostTerm {
            label: "core".into(),
            params: rs * rt * lambda,
            mults: rs * rt * lambda * gamma_out,
            bias_adds: 0,
        },
        CostTerm {
            label: "out".into(),
            params: rt * t + bp,
            mults: rt * t * gamma_out,
            bias_adds: ba,
        },
    ])
}

/// Tucker-1 group: core convolution `in→r` then pointwise `r→out`.
/// Linear layers use `Λ = Γ' = 1`.
pub fn cost_tucker1(inputs: u64, outputs: u64, r: u64, lambda: u64, gamma_out: u64, bias: bool) -> LayerCost {
    let (bp, ba) = bias_terms(bias, outputs, gamma_out);
    LayerCost::from_terms(alloc::vec![
        CostTerm {
            label: "core".into(),
            params: inputs * r * lambda,
            mults: inputs * r * lambda * gamma_out,
            bias_adds: 0,
        },
        CostTerm {
            label: "out".into(),
            params: r * outputs + bp,
            mults: r * outputs * gamma_out,
            bias_adds: ba,
        },
    ])
}

/// Upper bound `S·T/(R_s·R_t)` on both improvement ratios of a Tucker-2 rewrite.
pub fn ratio_bound(s: u64, t: u64, rs: u64, rt: u64) -> f64 {
    (s * t) as f64 / (rs * rt) as f64
}

fn volume_voxels(shape: &ActShape) -> u64 {
    match shape {
        ActShape::Volume(v) => v.voxels() as u64,
        ActShape::Vector(_) => 1,
    }
}

/// Cost of a single layer seen with the given input shape.
pub fn layer_cost(layer: &LayerSpec, input: &ActShape) -> Result<LayerCost> {
    let out = layer.output_shape(input).map_err(|e| e.in_layer(&layer.name))?;
    let label = layer.name.rsplit('/').next().unwrap_or(&layer.name);
    let c = match &layer.kind {
        LayerKind::Conv3d(k) => {
            let mut c = cost_conv_original(
                k.in_channels() as u64,
                k.out_channels() as u64,
                k.lambda() as u64,
                volume_voxels(&out),
                k.bias.is_some(),
            );
            c.breakdown[0].label = label.into();
            c
        }
        LayerKind::Pointwise(a) => {
            let g = volume_voxels(input);
            let (bp, ba) = bias_terms(a.bias.is_some(), a.outputs() as u64, g);
            let s = a.inputs() as u64;
            let r = a.outputs() as u64;
            LayerCost::single(label, s * r + bp, s * r * g, ba)
        }
        LayerKind::Linear(a) => {
            let mut c = cost_linear(a.inputs() as u64, a.outputs() as u64, a.bias.is_some());
            c.breakdown[0].label = label.into();
            c
        }
        _ => LayerCost::default(),
    };
    Ok(c)
}

/// Measured time of a layer or group in milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeStat {
    pub mean_ms: f64,
    pub std_ms: f64,
    /// Mean per replacement layer, empty for a plain layer.
    pub parts_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub name: String,
    /// `"-"`, `"Tucker2"` or `"Tucker1"`.
    pub strategy: String,
    pub in_size: usize,
    pub out_size: usize,
    /// `(R_in, R_out)`; `R_in` is `None` for Tucker-1.
    pub ranks: Option<(Option<usize>, usize)>,
    pub original: LayerCost,
    pub compressed: LayerCost,
    pub original_time: Option<TimeStat>,
    pub compressed_time: Option<TimeStat>,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        a / b
    }
}

impl ReportRow {
    pub fn param_ratio(&self) -> f64 {
        ratio(self.original.params as f64, self.compressed.params as f64)
    }

    pub fn flop_ratio(&self) -> f64 {
        ratio(self.original.flops() as f64, self.compressed.flops() as f64)
    }

    pub fn mult_ratio(&self) -> f64 {
        ratio(self.original.mults as f64, self.compressed.mults as f64)
    }

    pub fn time_ratio(&self) -> Option<f64> {
        match (&self.original_time, &self.compressed_time) {
            (Some(a), Some(b)) => Some(ratio(a.mean_ms, b.mean_ms)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub rows: Vec<ReportRow>,
    pub total_original: LayerCost,
    pub total_compressed: LayerCost,
    /// End-to-end forward times, including parameter-free layers.
    pub total_original_time: Option<TimeStat>,
    pub total_compressed_time: Option<TimeStat>,
}

impl CostReport {
    fn from_rows(rows: Vec<ReportRow>) -> Self {
        let mut total_original = LayerCost::default();
        let mut total_compressed = LayerCost::default();
        for r in &rows {
            total_original.add(&r.original);
            total_compressed.add(&r.compressed);
        }
        Self {
            rows,
            total_original,
            total_compressed,
            total_original_time: None,
            total_compressed_time: None,
        }
    }

    pub fn param_ratio(&self) -> f64 {
        ratio(self.total_original.params as f64, self.total_compressed.params as f64)
    }

    pub fn flop_ratio(&self) -> f64 {
        ratio(self.total_original.flops() as f64, self.total_compressed.flops() as f64)
    }

    pub fn mult_ratio(&self) -> f64 {
        ratio(self.total_original.mults as f64, self.total_compressed.mults as f64)
    }

    pub fn time_ratio(&self) -> Option<f64> {
        match (&self.total_original_time, &self.total_compressed_time) {
            (Some(a), Some(b)) => Some(ratio(a.mean_ms, b.mean_ms)),
            _ => None,
        }
    }

    pub fn row(&self, name: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

fn io_sizes(layer: &LayerSpec) -> (usize, usize) {
    match &layer.kind {
        LayerKind::Conv3d(k) => (k.in_channels(), k.out_channels()),
        LayerKind::Pointwise(a) | LayerKind::Linear(a) => (a.inputs(), a.outputs()),
        _ => (0, 0),
    }
}

fn out_size(layer: &LayerSpec) -> usize {
    io_sizes(layer).1
}

/// Side-by-side costs of `original` and `compressed`. Compressed layers are
/// matched to original layers by [`LayerSpec::origin`].
pub fn report(original: &NetworkSpec, compressed: &NetworkSpec) -> Result<CostReport> {
    if original.input != compressed.input {
        return Err(Error::ShapeMismatch("networks take different inputs".into()));
    }
    let ins_a = original.layer_inputs()?;
    let ins_b = compressed.layer_inputs()?;

    for l in compressed.layers.iter().filter(|l| l.kind.has_weights()) {
        let known = original
            .layers
            .iter()
            .any(|o| o.kind.has_weights() && o.name == l.origin());
        if !known {
            return Err(Error::ShapeMismatch(format!(
                "compressed layer `{}` has no counterpart in the original network",
                l.name
            )));
        }
    }

    let mut rows = Vec::new();
    for (layer, input) in original.layers.iter().zip(&ins_a) {
        if !layer.kind.has_weights() {
            continue;
        }
        let group: Vec<(&LayerSpec, &ActShape)> = compressed
            .layers
            .iter()
            .zip(&ins_b)
            .filter(|(l, _)| l.kind.has_weights() && l.origin() == layer.name)
            .collect();
        if group.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "original layer `{}` is missing from the compressed network",
                layer.name
            )));
        }
        let orig_cost = layer_cost(layer, input)?;
        let mut terms = Vec::new();
        for (l, i) in &group {
            terms.extend(layer_cost(l, i)?.breakdown);
        }
        let (strategy, ranks) = match group.len() {
            1 => ("-", None),
            2 => ("Tucker1", Some((None, out_size(group[0].0)))),
            _ => (
                "Tucker2",
                Some((Some(out_size(group[0].0)), out_size(group[1].0))),
            ),
        };
        let compressed_cost = if group.len() == 1 {
            let mut c = LayerCost::from_terms(terms);
            c.breakdown.clear();
            c
        } else {
            LayerCost::from_terms(terms)
        };
        let (in_size, out_size) = io_sizes(layer);
        rows.push(ReportRow {
            name: layer.name.clone(),
            strategy: strategy.to_string(),
            in_size,
            out_size,
            ranks,
            original: {
                let mut c = orig_cost;
                c.breakdown.clear();
                c
            },
            compressed: compressed_cost,
            original_time: None,
            compressed_time: None,
        });
    }
    Ok(CostReport::from_rows(rows))
}

/// How a layer would be rewritten, for closed-form projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rewrite {
    Keep,
    Tucker2 { rs: usize, rt: usize },
    Tucker1 { r: usize },
}

/// Closed-form cost of rewriting `layers[index]` of `net` as `rewrite`.
///
/// A linear layer under Tucker-2 is costed as a convolution whose kernel
/// covers the whole feature map entering the preceding flatten.
pub fn project_layer(net: &NetworkSpec, index: usize, rewrite: Rewrite) -> Result<LayerCost> {
    let ins = net.layer_inputs()?;
    let outs = net.infer_shapes()?;
    let layer = &net.layers[index];
    let input = &ins[index];
    let original = layer_cost(layer, input)?;
    let cost = match (rewrite, &layer.kind) {
        (Rewrite::Keep, _) => original,
        (Rewrite::Tucker2 { rs, rt }, LayerKind::Conv3d(k)) => cost_conv_tucker2(
            k.in_channels() as u64,
            k.out_channels() as u64,
            rs as u64,
            rt as u64,
            k.lambda() as u64,
            volume_voxels(input),
            volume_voxels(&outs[index]),
            k.bias.is_some(),
        ),
        (Rewrite::Tucker2 { rs, rt }, LayerKind::Linear(a)) => {
            let feature = match index.checked_sub(1).map(|i| (&net.layers[i].kind, &ins[i])) {
                Some((LayerKind::Flatten, ActShape::Volume(v))) => *v,
                _ => {
                    return Err(Error::Plan(format!(
                        "Tucker-2 on linear layer `{}` needs it to follow the flatten",
                        layer.name
                    )))
                }
            };
            let lambda = feature.voxels() as u64;
            cost_conv_tucker2(
                feature.channels as u64,
                a.outputs() as u64,
                rs as u64,
                rt as u64,
                lambda,
                lambda,
                1,
                a.bias.is_some(),
            )
        }
        (Rewrite::Tucker1 { r }, LayerKind::Conv3d(k)) => cost_tucker1(
            k.in_channels() as u64,
            k.out_channels() as u64,
            r as u64,
            k.lambda() as u64,
            volume_voxels(&outs[index]),
            k.bias.is_some(),
        ),
        (Rewrite::Tucker1 { r }, LayerKind::Linear(a)) => {
            cost_tucker1(a.inputs() as u64, a.outputs() as u64, r as u64, 1, 1, a.bias.is_some())
        }
        (_, kind) => {
            return Err(Error::Plan(format!(
                "cannot decompose {} layer `{}`",
                kind.label(),
                layer.name
            )))
        }
    };
    Ok(cost)
}

/// Report for a rewrite of `net` computed from closed forms only (no weights touched).
pub fn project(net: &NetworkSpec, rewrites: &[(String, Rewrite)]) -> Result<CostReport> {
    let mut rows = Vec::new();
    let ins = net.layer_inputs()?;
    for (index, layer) in net.layers.iter().enumerate() {
        if !layer.kind.has_weights() {
            continue;
        }
        let rw = rewrites
            .iter()
            .find(|(n, _)| *n == layer.name)
            .map_or(Rewrite::Keep, |(_, r)| *r);
        let mut original = layer_cost(layer, &ins[index])?;
        original.breakdown.clear();
        let mut compressed = project_layer(net, index, rw)?;
        let (strategy, ranks) = match rw {
            Rewrite::Keep => {
                compressed.breakdown.clear();
                ("-", None)
            }
            Rewrite::Tucker2 { rs, rt } => ("Tucker2", Some((Some(rs), rt))),
            Rewrite::Tucker1 { r } => ("Tucker1", Some((None, r))),
        };
        let (in_size, out_size) = io_sizes(layer);
        rows.push(ReportRow {
            name: layer.name.clone(),
            strategy: strategy.into(),
            in_size,
            out_size,
            ranks,
            original,
            compressed,
            original_time: None,
            compressed_time: None,
        });
    }
    Ok(CostReport::from_rows(rows))
}

/// One-decimal K/M rendering (`K = 10³`, `M = 10⁶`); below 1000 the exact count.
pub fn format_count(n: u64) -> String {
    if n < 1_000 {
        format!("{n}")
    } else if n < 1_000_000 {
        format!("{:.1}K", n as f64 / 1e3)
    } else {
        format!("{:.1}M", n as f64 / 1e6)
    }
}
