use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tuckervid"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = run(dir, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    stdout(&o)
}

fn reference_ranks() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.ranks")
}

fn small_model() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["init", "--size", "small", "--seed", "3", "--out", "m"]);
    dir
}

#[test]
fn flops_reproduces_table_totals_without_weights() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["init", "--size", "full", "--out", "full"]);
    fs::remove_file(dir.path().join("full.bin")).unwrap();
    let ranks = reference_ranks();
    let out = ok(
        dir.path(),
        &["flops", "--model", "full.json", "--ranks", ranks.to_str().unwrap(), "--records", "r.jsonl"],
    );
    assert!(out.contains("696.4K → 13.6K"), "{out}");
    assert!(out.contains("×51.22"), "{out}");
    let records = fs::read_to_string(dir.path().join("r.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = records.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 6);
    let total = lines.last().unwrap();
    assert_eq!(total["record"], "total");
    assert_eq!(total["compressed"]["params"], 13598);
    // double entry: totals equal the column sums of the layer records
    let sum: u64 = lines[..5].iter().map(|l| l["compressed"]["flops"].as_u64().unwrap()).sum();
    assert_eq!(total["compressed"]["flops"].as_u64().unwrap(), sum);
}

#[test]
fn compress_then_verify() {
    let dir = small_model();
    let d = dir.path();
    let ranks = reference_ranks();
    let out = ok(d, &["compress", "--model", "m.json", "--ranks", ranks.to_str().unwrap(), "--out", "c"]);
    assert!(out.contains("14526 → 2446"), "{out}");
    // truncated ranks: finite error, nonzero exit at a tight tolerance
    let o = run(d, &["verify", "--model-a", "m.json", "--model-b", "c.json", "--tol", "1e-12", "--inputs", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));

    fs::write(d.join("full.ranks"), "C1 4 6\nC2 6 16\nL1 16 128\nL2 84\n").unwrap();
    ok(d, &["compress", "--model", "m.json", "--ranks", "full.ranks", "--allow-growth", "--out", "f"]);
    let out = ok(d, &["verify", "--model-a", "m.json", "--model-b", "f.json", "--tol", "1e-6", "--inputs", "3"]);
    assert!(out.contains("PASS"), "{out}");
}

#[test]
fn verify_model_against_itself_is_exact() {
    let dir = small_model();
    let out = ok(dir.path(), &["verify", "--model-a", "m.json", "--model-b", "m.json", "--inputs", "2", "--records", "v.jsonl"]);
    assert!(out.contains("max relative error 0.000e0"), "{out}");
    let rec: serde_json::Value = serde_json::from_str(fs::read_to_string(dir.path().join("v.jsonl")).unwrap().trim()).unwrap();
    assert_eq!(rec["max_rel_error"], 0.0);
    assert_eq!(rec["pass"], true);
}

#[test]
fn commands_are_deterministic() {
    let a = small_model();
    let b = small_model();
    for f in ["m.json", "m.bin"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
    }
    for d in [a.path(), b.path()] {
        ok(d, &["compress", "--model", "m.json", "--out", "c"]);
    }
    for f in ["c.json", "c.bin"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
    }
}

#[test]
fn input_errors_exit_with_two() {
    let dir = small_model();
    let d = dir.path();
    fs::write(d.join("bad.ranks"), "C9 1 1\n").unwrap();
    let o = run(d, &["compress", "--model", "m.json", "--ranks", "bad.ranks", "--out", "c"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("C9"));

    let mut blob = fs::read(d.join("m.bin")).unwrap();
    let n = blob.len();
    blob[n - 3] ^= 1;
    fs::write(d.join("m.bin"), blob).unwrap();
    let o = run(d, &["verify", "--model-a", "m.json", "--model-b", "m.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checksum"));

    let o = run(d, &["flops", "--model", "missing.json", "--ranks", "bad.ranks"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn empty_network_compresses_to_empty() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let empty = tuckervid_core::network::NetworkSpec::new(tuckervid_core::network::VolumeShape::new(2, 2, 2, 1), vec![]).unwrap();
    tuckervid::format::StoredModel::from_network(&empty)
        .save(&d.join("e.json"), &d.join("e.bin"))
        .unwrap();
    ok(d, &["compress", "--model", "e.json", "--out", "ec"]);
    let back = tuckervid::format::StoredModel::load(&d.join("ec.json"), &d.join("ec.bin")).unwrap();
    assert!(back.manifest.layers.is_empty());
    assert!(back.values.is_empty());
}

#[test]
fn single_layer_model_has_one_report_row() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let w = tuckervid_core::DenseTensor::from_fn(vec![3, 3, 3, 4, 8], |i| (i.iter().sum::<usize>() % 5) as f64 - 2.0).unwrap();
    let k = tuckervid_core::network::ConvKernel::new(w, [1, 1, 1], [1, 1, 1], Some(vec![0.0; 8])).unwrap();
    let net = tuckervid_core::network::NetworkSpec::new(
        tuckervid_core::network::VolumeShape::new(4, 6, 6, 4),
        vec![tuckervid_core::network::LayerSpec::new("C", tuckervid_core::network::LayerKind::Conv3d(k))],
    )
    .unwrap();
    tuckervid::format::StoredModel::from_network(&net)
        .save(&d.join("one.json"), &d.join("one.bin"))
        .unwrap();
    fs::write(d.join("r"), "C 2 2\n").unwrap();
    ok(d, &["flops", "--model", "one.json", "--ranks", "r", "--records", "o.jsonl"]);
    let n = fs::read_to_string(d.join("o.jsonl")).unwrap().lines().filter(|l| l.contains("\"layer\"")).count();
    assert_eq!(n, 1);
}

#[test]
fn bench_smoke_with_identical_models() {
    let dir = small_model();
    let out = ok(
        dir.path(),
        &["bench", "--model-a", "m.json", "--model-b", "m.json", "--runs", "2", "--warmup", "0", "--records", "b.jsonl"],
    );
    assert!(out.contains("observed speed-up"), "{out}");
    let recs = fs::read_to_string(dir.path().join("b.jsonl")).unwrap();
    let timing: serde_json::Value = serde_json::from_str(recs.lines().next().unwrap()).unwrap();
    assert_eq!(timing["record"], "timing");
    assert_eq!(timing["runs"], 2);
}
