//! Wall-clock timing of forward passes.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tuckervid_core::cost::{CostReport, TimeStat};
use tuckervid_core::network::NetworkSpec;
use tuckervid_core::DenseTensor;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("need at least 2 timed runs, got {0}")]
    TooFewRuns(usize),
    #[error("output of run {0} differs from the first run")]
    NonDeterministic(usize),
    #[error(transparent)]
    Core(#[from] tuckervid_core::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchOptions {
    pub runs: usize,
    pub warmup: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { runs: 500, warmup: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTiming {
    pub name: String,
    pub mean_ms: f64,
    pub std_ms: f64,
}

/// Time of all layers sharing an origin, summed per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTiming {
    pub origin: String,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub parts_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingResult {
    pub runs: usize,
    pub warmup: usize,
    /// The engine has no parallel code path, so this is always `"single"`.
    pub thread_mode: String,
    pub layers: Vec<LayerTiming>,
    pub groups: Vec<GroupTiming>,
    pub total_mean_ms: f64,
    pub total_std_ms: f64,
}

impl TimingResult {
    pub fn group(&self, origin: &str) -> Option<&GroupTiming> {
        self.groups.iter().find(|g| g.origin == origin)
    }

    pub fn total(&self) -> TimeStat {
        TimeStat {
            mean_ms: self.total_mean_ms,
            std_ms: self.total_std_ms,
            parts_ms: Vec::new(),
        }
    }

    pub fn layer_sum_ms(&self) -> f64 {
        self.layers.iter().map(|l| l.mean_ms).sum()
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn same_bits(a: &DenseTensor, b: &DenseTensor) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Runs `net` on `input` `warmup + runs` times and times the timed runs.
///
/// Each timed run goes layer by layer; the total is the span of the whole
/// run, so it also covers the work between layers. Returns the timings and
/// the network output.
pub fn bench_forward(
    net: &NetworkSpec,
    input: &DenseTensor,
    opts: &BenchOptions,
) -> Result<(TimingResult, DenseTensor), BenchError> {
    if opts.runs < 2 {
        return Err(BenchError::TooFewRuns(opts.runs));
    }
    net.check_input(input)?;
    let reference = net.forward(input)?;
    for _ in 1..opts.warmup {
        net.forward(input)?;
    }

    let n = net.layers.len();
    let mut per_layer = vec![Vec::with_capacity(opts.runs); n];
    let mut totals = Vec::with_capacity(opts.runs);
    for run in 0..opts.runs {
        let start = Instant::now();
        let mut cur = input.clone();
        for (i, layer) in net.layers.iter().enumerate() {
            let t = Instant::now();
            cur = layer.forward(&cur)?;
            per_layer[i].push(t.elapsed().as_secs_f64() * 1e3);
        }
        totals.push(start.elapsed().as_secs_f64() * 1e3);
        if !same_bits(&cur, &reference) {
            return Err(BenchError::NonDeterministic(run));
        }
    }

    let layers = net
        .layers
        .iter()
        .zip(&per_layer)
        .map(|(l, xs)| {
            let (mean_ms, std_ms) = mean_std(xs);
            LayerTiming {
                name: l.name.clone(),
                mean_ms,
                std_ms,
            }
        })
        .collect();

    let mut origins: Vec<&str> = Vec::new();
    for l in &net.layers {
        if !origins.contains(&l.origin()) {
            origins.push(l.origin());
        }
    }
    let groups = origins
        .iter()
        .map(|&o| {
            let members: Vec<usize> = (0..n).filter(|&i| net.layers[i].origin() == o).collect();
            let sums: Vec<f64> = (0..opts.runs).map(|r| members.iter().map(|&i| per_layer[i][r]).sum()).collect();
            let (mean_ms, std_ms) = mean_std(&sums);
            let parts_ms = if members.len() > 1 {
                members.iter().map(|&i| mean_std(&per_layer[i]).0).collect()
            } else {
                Vec::new()
            };
            GroupTiming {
                origin: o.to_string(),
                mean_ms,
                std_ms,
                parts_ms,
            }
        })
        .collect();

    let (total_mean_ms, total_std_ms) = mean_std(&totals);
    Ok((
        TimingResult {
            runs: opts.runs,
            warmup: opts.warmup,
            thread_mode: "single".into(),
            layers,
            groups,
            total_mean_ms,
            total_std_ms,
        },
        reference,
    ))
}

/// Fills the timing columns of `report` from benchmarks of the original and
/// the compressed network.
pub fn attach_timings(report: &mut CostReport, original: &TimingResult, compressed: &TimingResult) {
    let stat = |g: &GroupTiming| TimeStat {
        mean_ms: g.mean_ms,
        std_ms: g.std_ms,
        parts_ms: g.parts_ms.clone(),
    };
    for row in &mut report.rows {
        row.original_time = original.group(&row.name).map(stat);
        row.compressed_time = compressed.group(&row.name).map(stat);
    }
    report.total_original_time = Some(original.total());
    report.total_compressed_time = Some(compressed.total());
}
