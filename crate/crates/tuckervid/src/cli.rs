//! Command-line interface.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};
use tuckervid_core::compress::{compress_network, CompressOptions, CompressionPlan};
use tuckervid_core::cost::{project, report};
use tuckervid_core::network::{reference, NetworkSpec};
use tuckervid_core::tucker::TuckerOptions;
use tuckervid_core::DenseTensor;

use crate::bench::{attach_timings, bench_forward, BenchOptions};
use crate::format::{load_manifest, load_tensor, structure_only, StoredModel};
use crate::ranks::RankFile;
use crate::render;

#[derive(Debug, Parser)]
#[command(name = "tuckervid", version, about = "Tucker-2 compression of 3D convolutional video networks")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the reference network with random weights.
    Init(InitArgs),
    /// Compress a model and write the result.
    Compress(CompressArgs),
    /// Parameter and FLOP report.
    Flops(FlopsArgs),
    /// Time forward passes of two models.
    Bench(BenchArgs),
    /// Compare the outputs of two models on random inputs.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Size {
    /// 28×120×160 frames, 4 channels.
    Full,
    /// 12×32×40 frames, 4 channels; same layers, smaller L1.
    Small,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FirstConv {
    Tucker2,
    Tucker1,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long, value_enum, default_value = "full")]
    pub size: Size,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output prefix; writes `<out>.json` and `<out>.bin`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Rank override file (`name rs rt`, `name r`, `name auto`, `name skip`).
    #[arg(long)]
    pub ranks: Option<PathBuf>,
    /// Strategy for the first convolution when no rank file entry says otherwise.
    #[arg(long, value_enum, default_value = "tucker2")]
    pub first_conv: FirstConv,
    /// Keep rewrites even when they store more parameters than the original layer.
    #[arg(long)]
    pub allow_growth: bool,
    #[arg(long, default_value_t = 50)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Truncated HOSVD only, no HOOI refinement.
    #[arg(long)]
    pub hosvd: bool,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Weight blob; defaults to the manifest path with a `.bin` extension.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[command(flatten)]
    pub plan: PlanArgs,
    /// Output prefix; writes `<out>.json` and `<out>.bin`.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write line-delimited JSON records here.
    #[arg(long)]
    pub records: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Weight blob. Needed only to compress for real (VBMF ranks).
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Compare against an existing compressed manifest instead of a rank file.
    #[arg(long, conflicts_with_all = ["weights", "ranks"])]
    pub compressed: Option<PathBuf>,
    #[command(flatten)]
    pub plan: PlanArgs,
    #[arg(long)]
    pub records: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub model_a: PathBuf,
    #[arg(long)]
    pub weights_a: Option<PathBuf>,
    #[arg(long)]
    pub model_b: PathBuf,
    #[arg(long)]
    pub weights_b: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    pub runs: usize,
    #[arg(long, default_value_t = 10)]
    pub warmup: usize,
    /// Seed for a random standard-normal input.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Input tensor in the weight-blob format, instead of a random one.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub records: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub model_a: PathBuf,
    #[arg(long)]
    pub weights_a: Option<PathBuf>,
    #[arg(long)]
    pub model_b: PathBuf,
    #[arg(long)]
    pub weights_b: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub inputs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long)]
    pub records: Option<PathBuf>,
}

/// How a successful invocation ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    VerifyFailed,
}

pub fn blob_path(manifest: &Path, weights: Option<&Path>) -> PathBuf {
    weights.map_or_else(|| manifest.with_extension("bin"), Path::to_path_buf)
}

fn prefixed(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn load_model(manifest: &Path, weights: Option<&Path>) -> anyhow::Result<NetworkSpec> {
    let blob = blob_path(manifest, weights);
    let stored = StoredModel::load(manifest, &blob)
        .with_context(|| format!("loading {} / {}", manifest.display(), blob.display()))?;
    Ok(stored.to_network()?)
}

fn write_records(path: Option<&Path>, records: &[Value]) -> anyhow::Result<()> {
    if let Some(p) = path {
        fs::write(p, render::jsonl(records)).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

/// Standard-normal tensor of the given shape.
pub fn random_input(rng: &mut ChaCha8Rng, shape: &[usize]) -> DenseTensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    DenseTensor::new(shape.to_vec(), data).expect("shape and data agree")
}

/// Relative L2 distance `‖b − a‖ / ‖a‖`; the absolute distance when `a = 0`.
pub fn relative_error(a: &DenseTensor, b: &DenseTensor) -> f64 {
    let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = a.frobenius_norm();
    if norm > 0.0 {
        diff / norm
    } else {
        diff
    }
}

fn plan_for(net: &NetworkSpec, args: &PlanArgs) -> anyhow::Result<(CompressionPlan, CompressOptions)> {
    let mut plan = match args.first_conv {
        FirstConv::Tucker2 => CompressionPlan::default_for(net),
        FirstConv::Tucker1 => CompressionPlan::tucker1_first_conv(net),
    };
    if let Some(path) = &args.ranks {
        rank_file(path)?.apply(net, &mut plan)?;
    }
    let opts = CompressOptions {
        tucker: TuckerOptions {
            max_iters: args.max_iters,
            tol: args.tol,
            refine: !args.hosvd,
        },
        no_gain_guard: !args.allow_growth,
    };
    Ok((plan, opts))
}

fn rank_file(path: &Path) -> anyhow::Result<RankFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    RankFile::parse(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn run(cli: Cli, out: &mut dyn Write) -> anyhow::Result<Outcome> {
    match cli.command {
        Command::Init(a) => init(a, out),
        Command::Compress(a) => compress(a, out),
        Command::Flops(a) => flops(a, out),
        Command::Bench(a) => bench(a, out),
        Command::Verify(a) => verify(a, out),
    }
}

fn init(a: InitArgs, out: &mut dyn Write) -> anyhow::Result<Outcome> {
    let input = match a.size {
        Size::Full => reference::FULL_INPUT,
        Size::Small => reference::SMALL_INPUT,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let net = reference::thetis_like(input, || rng.sample(StandardNormal))?;
    let stored = StoredModel::from_network(&net);
    let (m, b) = (prefixed(&a.out, "json"), prefixed(&a.out, "bin"));
    stored.save(&m, &b)?;
    writeln!(out, "wrote {} and {} ({} parameters)", m.display(), b.display(), net.param_count())?;
    Ok(Outcome::Ok)
}

fn compress(a: CompressArgs, out: &mut dyn Write) -> anyhow::Result<Outcome> {
    let net = load_model(&a.model, a.weights.as_deref())?;
    let (plan, opts) = plan_for(&net, &a.plan)?;
    let (small, record) = compress_network(&net, &plan, &opts)?;
    let stored = StoredModel::from_network(&small);
    let (m, b) = (prefixed(&a.out, "json"), prefixed(&a.out, "bin"));
    stored.save(&m, &b)?;
    // what was written must load back as a valid network
    StoredModel::load(&m, &b)?.to_network()?;

    write!(out, "{}", render::compression_table(&record))?;
    let rep = report(&net, &small)?;
    writeln!(out)?;
    write!(out, "{}", render::report_table(&rep))?;
    writeln!(out, "wrote {} and {}", m.display(), b.display())?;
    let mut records = render::compression_records(&record);
    records.extend(render::report_records(&rep));
    write_records(a.records.as_deref(), &records)?;
    Ok(Outcome::Ok)
}

fn flops(a: FlopsArgs, out: &mut dyn Write) -> anyhow::Result<Outcome> {
    let manifest = load_manifest(&a.model)?;
    let net = structure_only(&manifest)?;
    let rep = if let Some(other) = &a.compressed {
        report(&net, &structure_only(&load_manifest(other)?)?)?
    } else if let Some(w) = &a.weights {
        let net = load_model(&a.model, Some(w))?;
        let (plan, opts) = plan_for(&net, &a.plan)?;
        let (small, _) = compress_network(&net, &plan, &opts)?;
        report(&net, &small)?
    } else if let Some(path) = &a.plan.ranks {
        let rewrites = rank_file(path)?.rewrites(&net)?;
        project(&net, &rewrites)?
    } else {
        bail!("flops needs --ranks, --weights or --compressed");
    };
    write!(out, "{}", render::report_table(&rep))?;
    write_records(a.records.as_deref(), &render::report_records(&rep))?;
    Ok(Outcome::Ok)
}

fn bench(a: BenchArgs, out: &mut dyn Write) -> anyhow::Result<Outcome> {
    let net_a = load_model(&a.model_a, a.weights_a.as_deref())?;
    let net_b = load_model(&a.model_b, a.weights_b.as_deref())?;
    if net_a.input != net_b.input {
        bail!("models take different inputs");
    }
    let shape = net_a.input.dims();
    let x = match &a.input {
        Some(p) => load_tensor(p, &shape)?,
        None => random_input(&mut ChaCha8Rng::seed_from_u64(a.seed), &shape),
    };
    let opts = BenchOptions {
        runs: a.runs,
        warmup: a.warmup,
    };
    let (ta, _) = bench_forward(&net_a, &x, &opts)?;
    let (tb, _) = bench_forward(&net_b, &x, &opts)?;
    write!(out, "{}", render::timing_table("A", &ta))?;
    writeln!(out)?;
    write!(out, "{}", render::timing_table("B", &tb))?;
    writeln!(out)?;
    let speedup = ta.total_mean_ms / tb.total_mean_ms;
    let mut records = vec![render::timing_record("a", &ta), render::timing_record("b", &tb)];
    if let Ok(mut rep) = report(&net_a, &net_b) {
        attach_timings(&mut rep, &ta, &tb);
        write!(out, "{}", render::report_table(&rep))?;
        records.extend(render::report_records(&rep));
    }
    writeln!(out, "observed speed-up A/B: ×{speedup:.2} (measured on this machine, not a target)")?;
    records.push(json!({"record": "speedup", "ratio": speedup}));
    write_records(a.records.as_deref(), &records)?;
    Ok(Outcome::Ok)
}

fn verify(a: VerifyArgs, out: &mut dyn Write) -> anyhow::Result<Outcome> {
    let net_a = load_model(&a.model_a, a.weights_a.as_deref())?;
    let net_b = load_model(&a.model_b, a.weights_b.as_deref())?;
    if net_a.input != net_b.input {
        bail!("models take different inputs");
    }
    if net_a.output_shape()? != net_b.output_shape()? {
        bail!("models produce outputs of different shapes");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut worst = 0.0f64;
    for _ in 0..a.inputs {
        let x = random_input(&mut rng, &net_a.input.dims());
        let e = relative_error(&net_a.forward(&x)?, &net_b.forward(&x)?);
        if e.is_nan() || e > worst {
            worst = e;
        }
    }
    let pass = worst <= a.tol;
    writeln!(
        out,
        "max relative error {worst:.3e} over {} inputs (tol {:.1e}): {}",
        a.inputs,
        a.tol,
        if pass { "PASS" } else { "FAIL" }
    )?;
    write_records(
        a.records.as_deref(),
        &[json!({
            "record": "verify",
            "inputs": a.inputs,
            "seed": a.seed,
            "tol": a.tol,
            "max_rel_error": worst,
            "pass": pass,
        })],
    )?;
    Ok(if pass { Outcome::Ok } else { Outcome::VerifyFailed })
}
