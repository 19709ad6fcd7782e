//! Text tables and line-delimited JSON records.

use std::fmt::Write as _;

use serde_json::{json, Value};
use tuckervid_core::compress::{CompressionRecord, RankSource};
use tuckervid_core::cost::{CostReport, LayerCost, ReportRow, TimeStat};

use crate::bench::TimingResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unit {
    One,
    Kilo,
    Mega,
}

impl Unit {
    fn of(n: u64) -> Self {
        if n >= 1_000_000 {
            Unit::Mega
        } else if n >= 1_000 {
            Unit::Kilo
        } else {
            Unit::One
        }
    }

    fn show(self, n: u64) -> String {
        match self {
            Unit::One => n.to_string(),
            Unit::Kilo => format!("{:.1}", n as f64 / 1e3),
            Unit::Mega => format!("{:.1}", n as f64 / 1e6),
        }
    }

    fn suffix(self) -> &'static str {
        match self {
            Unit::One => "",
            Unit::Kilo => "K",
            Unit::Mega => "M",
        }
    }
}

/// `n` with a K/M suffix and one decimal; exact below 1000.
pub fn count(n: u64) -> String {
    let u = Unit::of(n);
    format!("{}{}", u.show(n), u.suffix())
}

/// Total followed by the per-part values in the total's unit, e.g.
/// `2627.0M (=7.5+2609.0+10.5)`.
pub fn count_with_parts(total: u64, parts: &[u64]) -> String {
    let u = Unit::of(total);
    let mut s = format!("{}{}", u.show(total), u.suffix());
    if parts.len() > 1 {
        let inner: Vec<String> = parts.iter().map(|&p| u.show(p)).collect();
        let _ = write!(s, " (={})", inner.join("+"));
    }
    s
}

/// `mean ± std`, followed by `(=a+b+c)` when the stat has parts.
pub fn time(t: &TimeStat) -> String {
    let mut s = format!("{:.2} ± {:.2}", t.mean_ms, t.std_ms);
    if t.parts_ms.len() > 1 {
        let inner: Vec<String> = t.parts_ms.iter().map(|p| format!("{p:.2}")).collect();
        let _ = write!(s, " (={})", inner.join("+"));
    }
    s
}

fn ratio(x: f64) -> String {
    format!("×{x:.2}")
}

struct Table {
    rows: Vec<Vec<String>>,
}

impl Table {
    fn render(&self) -> String {
        let cols = self.rows.iter().map(Vec::len).max().unwrap_or(0);
        let widths: Vec<usize> = (0..cols)
            .map(|c| {
                self.rows
                    .iter()
                    .filter_map(|r| r.get(c))
                    .map(|s| s.chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        for r in &self.rows {
            let mut line = String::new();
            for (c, cell) in r.iter().enumerate() {
                let pad = widths[c] - cell.chars().count();
                line.push_str(cell);
                if c + 1 < r.len() {
                    line.extend(std::iter::repeat_n(' ', pad + 2));
                }
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    }
}

fn parts(c: &LayerCost, f: impl Fn(&tuckervid_core::cost::CostTerm) -> u64) -> Vec<u64> {
    c.breakdown.iter().map(f).collect()
}

fn rank_cells(row: &ReportRow) -> (String, String) {
    match row.ranks {
        None => ("-".into(), "-".into()),
        Some((rs, rt)) => (rs.map_or("-".into(), |r| r.to_string()), rt.to_string()),
    }
}

/// Three lines per layer (original, compressed, improvement) and a total,
/// like the usual layer-by-layer compression table.
pub fn report_table(report: &CostReport) -> String {
    let timed = report.total_original_time.is_some();
    let mut header = vec!["Layer", "Comp.", "S/Rin", "T/Rout", "Weights", "FLOPs", "Mults"];
    if timed {
        header.push("CPU time (ms)");
    }
    let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    let opt_time = |t: &Option<TimeStat>| t.as_ref().map_or("-".into(), time);
    for r in &report.rows {
        let mut orig = vec![
            r.name.clone(),
            String::new(),
            r.in_size.to_string(),
            r.out_size.to_string(),
            count(r.original.params),
            count(r.original.flops()),
            count(r.original.mults),
        ];
        let (rin, rout) = rank_cells(r);
        let mut comp = vec![
            "Comp".into(),
            r.strategy.clone(),
            rin,
            rout,
            count(r.compressed.params),
            count_with_parts(r.compressed.flops(), &parts(&r.compressed, |t| t.flops())),
            count_with_parts(r.compressed.mults, &parts(&r.compressed, |t| t.mults)),
        ];
        let mut impr = vec![
            "Impr".into(),
            String::new(),
            String::new(),
            String::new(),
            ratio(r.param_ratio()),
            ratio(r.flop_ratio()),
            ratio(r.mult_ratio()),
        ];
        if timed {
            orig.push(opt_time(&r.original_time));
            comp.push(opt_time(&r.compressed_time));
            impr.push(r.time_ratio().map_or(String::new(), ratio));
        }
        rows.extend([orig, comp, impr]);
    }
    let mut total = vec![
        "Total".into(),
        String::new(),
        String::new(),
        String::new(),
        format!("{} → {}", count(report.total_original.params), count(report.total_compressed.params)),
        format!("{} → {}", count(report.total_original.flops()), count(report.total_compressed.flops())),
        format!("{} → {}", count(report.total_original.mults), count(report.total_compressed.mults)),
    ];
    let mut total_impr = vec![
        "Impr".into(),
        String::new(),
        String::new(),
        String::new(),
        ratio(report.param_ratio()),
        ratio(report.flop_ratio()),
        ratio(report.mult_ratio()),
    ];
    if timed {
        total.push(format!(
            "{} → {}",
            opt_time(&report.total_original_time),
            opt_time(&report.total_compressed_time)
        ));
        total_impr.push(report.time_ratio().map_or(String::new(), ratio));
    }
    rows.extend([total, total_impr]);
    let mut out = Table { rows }.render();
    out.push_str("FLOPs = 2·mults + bias additions; Mults counts multiplications only.\n");
    out
}

fn cost_json(c: &LayerCost) -> Value {
    json!({
        "params": c.params,
        "mults": c.mults,
        "bias_adds": c.bias_adds,
        "flops": c.flops(),
        "breakdown": c.breakdown.iter().map(|t| json!({
            "label": t.label,
            "params": t.params,
            "mults": t.mults,
            "bias_adds": t.bias_adds,
            "flops": t.flops(),
        })).collect::<Vec<_>>(),
    })
}

fn time_json(t: &Option<TimeStat>) -> Value {
    match t {
        None => Value::Null,
        Some(t) => json!({"mean_ms": t.mean_ms, "std_ms": t.std_ms, "parts_ms": t.parts_ms}),
    }
}

/// One `layer` record per row and a final `total` record.
pub fn report_records(report: &CostReport) -> Vec<Value> {
    let mut out: Vec<Value> = report
        .rows
        .iter()
        .map(|r| {
            json!({
                "record": "layer",
                "name": r.name,
                "strategy": r.strategy,
                "in": r.in_size,
                "out": r.out_size,
                "ranks": r.ranks.map(|(rs, rt)| json!({"rs": rs, "rt": rt})),
                "original": cost_json(&r.original),
                "compressed": cost_json(&r.compressed),
                "param_ratio": r.param_ratio(),
                "flop_ratio": r.flop_ratio(),
                "mult_ratio": r.mult_ratio(),
                "original_time": time_json(&r.original_time),
                "compressed_time": time_json(&r.compressed_time),
            })
        })
        .collect();
    out.push(json!({
        "record": "total",
        "original": cost_json(&report.total_original),
        "compressed": cost_json(&report.total_compressed),
        "param_ratio": report.param_ratio(),
        "flop_ratio": report.flop_ratio(),
        "mult_ratio": report.mult_ratio(),
        "original_time": time_json(&report.total_original_time),
        "compressed_time": time_json(&report.total_compressed_time),
        "time_ratio": report.time_ratio(),
        "flops_convention": "2*mults+bias_adds",
    }));
    out
}

pub fn compression_table(rec: &CompressionRecord) -> String {
    let mut rows = vec![["Layer", "Requested", "Applied", "Ranks", "Source", "Params", "Fit"]
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()];
    for l in &rec.layers {
        if l.original_params == 0 {
            continue;
        }
        let ranks: Vec<String> = l.ranks.iter().map(usize::to_string).collect();
        let source = match &l.rank_source {
            None => "-".to_string(),
            Some(RankSource::Explicit) => "explicit".into(),
            Some(RankSource::Vbmf { raw, clamped }) => {
                let raw: Vec<String> = raw.iter().map(usize::to_string).collect();
                format!("vbmf [{}]{}", raw.join(","), if *clamped { " clamped" } else { "" })
            }
        };
        let applied = if l.downgraded {
            format!("{} (no gain)", l.applied.label())
        } else {
            l.applied.label().to_string()
        };
        rows.push(vec![
            l.layer.clone(),
            l.requested.label().into(),
            applied,
            if ranks.is_empty() { "-".into() } else { ranks.join(",") },
            source,
            format!("{} → {}", l.original_params, l.compressed_params),
            l.fit.map_or("-".into(), |f| format!("{f:.6}")),
        ]);
    }
    Table { rows }.render()
}

pub fn compression_records(rec: &CompressionRecord) -> Vec<Value> {
    rec.layers
        .iter()
        .map(|l| {
            let source = match &l.rank_source {
                None => Value::Null,
                Some(RankSource::Explicit) => json!({"kind": "explicit"}),
                Some(RankSource::Vbmf { raw, clamped }) => json!({"kind": "vbmf", "raw": raw, "clamped": clamped}),
            };
            json!({
                "record": "compression",
                "layer": l.layer,
                "requested": l.requested.label(),
                "applied": l.applied.label(),
                "ranks": l.ranks,
                "rank_source": source,
                "downgraded": l.downgraded,
                "original_params": l.original_params,
                "compressed_params": l.compressed_params,
                "fit": l.fit,
            })
        })
        .collect()
}

pub fn timing_table(label: &str, t: &TimingResult) -> String {
    let mut rows = vec![vec!["Layer".to_string(), format!("{label} (ms)")]];
    for l in &t.layers {
        rows.push(vec![l.name.clone(), format!("{:.3} ± {:.3}", l.mean_ms, l.std_ms)]);
    }
    rows.push(vec![
        "Total".into(),
        format!("{:.3} ± {:.3}", t.total_mean_ms, t.total_std_ms),
    ]);
    let mut out = Table { rows }.render();
    let _ = writeln!(
        out,
        "{} runs after {} warmup, {}-threaded; sum of layer means {:.3} ms",
        t.runs,
        t.warmup,
        t.thread_mode,
        t.layer_sum_ms()
    );
    out
}

pub fn timing_record(model: &str, t: &TimingResult) -> Value {
    let mut v = serde_json::to_value(t).expect("timings serialise");
    v["record"] = json!("timing");
    v["model"] = json!(model);
    v
}

/// Joins records as JSON lines.
pub fn jsonl(records: &[Value]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&r.to_string());
        s.push('\n');
    }
    s
}
