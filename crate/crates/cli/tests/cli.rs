use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn chada(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chada"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CHADA_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = chada(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const TINY: &str = r#"{
  "encoder": {"dim": 16, "depth": 1, "heads": 2, "mlp_ratio": 2, "patch_size": 8, "image_size": 16, "max_channels": 5},
  "dino": {"out_dim": 16, "hidden_dim": 16, "bottleneck_dim": 8, "batch_size": 4},
  "probe": {"epochs": 20},
  "decoder": {"steps": 5, "batch_size": 2},
  "decoder_params": 5000,
  "seeds": [0, 1]
}"#;

fn header_width(csv: &Path) -> usize {
    let text = std::fs::read_to_string(csv).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("index,split,label,e0,"));
    header.split(',').count() - 3
}

#[test]
fn synth_writes_images_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        &["synth", "--kind", "interchannel-xor", "--count", "256", "--channels", "3", "--seed", "0", "--out", "xor"],
        d,
    );
    let mcif = std::fs::read_dir(d.join("xor"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "mcif"))
        .count();
    assert_eq!(mcif, 256);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("xor/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["items"].as_array().unwrap().len(), 256);
}

#[test]
fn one_checkpoint_encodes_any_channel_count_to_192_columns() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(
        d,
        "wide.json",
        r#"{"encoder": {"depth": 1, "patch_size": 8, "image_size": 16},
            "dino": {"out_dim": 16, "hidden_dim": 16, "bottleneck_dim": 8, "batch_size": 2}}"#,
    );
    for (name, ch) in [("a", "3"), ("b", "5")] {
        ok(&["synth", "--kind", "interchannel-xor", "--count", "8", "--channels", ch, "--side", "16", "--out", name], d);
    }
    ok(&["train", "--data", "a", "--out", "run", "--config", "wide.json", "--steps", "2"], d);
    assert!(d.join("run/checkpoint.json").is_file() && d.join("run/checkpoint.bin").is_file());
    assert_eq!(std::fs::read_to_string(d.join("run/log.jsonl")).unwrap().lines().count(), 2);
    for name in ["a", "b"] {
        let out = format!("{name}.csv");
        ok(&["encode", "--checkpoint", "run/checkpoint.json", "--data", name, "--out", &out, "--threads", "1"], d);
        assert_eq!(header_width(&d.join(&out)), 192);
    }
}

#[test]
fn probe_is_deterministic_and_feeds_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "tiny.json", TINY);
    ok(&["synth", "--kind", "intrachannel-shape", "--count", "120", "--channels", "2", "--side", "16", "--out", "shape"], d);
    ok(&["encode", "--arch", "chada", "--config", "tiny.json", "--data", "shape", "--pool", "mean", "--out", "shape.csv"], d);
    assert_eq!(header_width(&d.join("shape.csv")), 16);
    for out in ["p1.json", "p2.json"] {
        ok(&["probe", "--embeddings", "shape.csv", "--fraction", "0.01", "--config", "tiny.json", "--out", out], d);
    }
    let p1 = std::fs::read(d.join("p1.json")).unwrap();
    assert_eq!(p1, std::fs::read(d.join("p2.json")).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&p1).unwrap();
    assert_eq!(report["per_seed"].as_array().unwrap().len(), 2);

    ok(&["probe", "--embeddings", "shape.csv", "--seeds", "3,4,5", "--out", "reports/full.json"], d);
    ok(&["knn", "--embeddings", "shape.csv", "--k", "5", "--out", "reports/knn.json"], d);
    std::fs::copy(d.join("p1.json"), d.join("reports/low.json")).unwrap();
    ok(&["report", "--inputs", "reports", "--out", "table.txt"], d);
    let table = std::fs::read_to_string(d.join("table.txt")).unwrap();
    let tasks: Vec<&str> = table.lines().skip(1).map(|l| l.split("  ").next().unwrap()).collect();
    assert_eq!(tasks, ["shape knn@5", "shape probe@0.01", "shape probe@1"]);
    let json = std::fs::read_to_string(d.join("table.json")).unwrap();
    let first = json.find("\"mean\"").unwrap();
    assert!(first < json.find("\"metric\"").unwrap() && json.find("\"metric\"").unwrap() < json.find("\"task\"").unwrap());
}

#[test]
fn reconstruct_attmap_and_pca_write_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "tiny.json", TINY);
    ok(&["synth", "--kind", "reconstruction", "--count", "8", "--channels", "3", "--side", "32", "--out", "rec"], d);
    let mut cfg: serde_json::Value = serde_json::from_str(TINY).unwrap();
    cfg["encoder"]["image_size"] = 32.into();
    write(d, "rec.json", &cfg.to_string());
    ok(&["reconstruct", "--arch", "chada", "--config", "rec.json", "--data", "rec", "--out", "recout"], d);
    let reports: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("recout/report.json")).unwrap()).unwrap();
    let metrics: Vec<&str> = reports.as_array().unwrap().iter().map(|r| r["metric"].as_str().unwrap()).collect();
    assert_eq!(metrics, ["r2", "mse", "mae"]);
    assert!(d.join("recout/pred_00.pgm").is_file());

    ok(&["attmap", "--arch", "chada", "--config", "tiny.json", "--data", "rec", "--index", "2", "--layer", "0", "--out", "att"], d);
    assert!(d.join("att/head1_ch2.pgm").is_file());
    let att = chada(&["attmap", "--arch", "chada", "--config", "tiny.json", "--data", "rec", "--layer", "1", "--out", "att"], d);
    assert_eq!(code(&att), 1);
    assert!(String::from_utf8_lossy(&att.stderr).contains("layer"));

    ok(&["synth", "--kind", "interchannel-xor", "--count", "12", "--channels", "5", "--side", "16", "--out", "five"], d);
    ok(&["synth", "--kind", "intrachannel-shape", "--count", "12", "--channels", "3", "--side", "16", "--out", "three"], d);
    for n in ["five", "three"] {
        ok(&["encode", "--arch", "chada", "--config", "tiny.json", "--data", n, "--out", &format!("{n}.csv")], d);
    }
    ok(&["pca", "--datasets", "three.csv,five.csv", "--components", "3", "--out", "joint.csv"], d);
    assert_eq!(std::fs::read_to_string(d.join("joint.csv")).unwrap().lines().count(), 25);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("joint.json")).unwrap()).unwrap();
    assert!(summary["orthonormality_error"].as_f64().unwrap() < 1e-8);

    // Per-channel encoder widths differ between 3 and 5 channels.
    for n in ["five", "three"] {
        ok(&["encode", "--arch", "onechannel", "--config", "tiny.json", "--data", n, "--out", &format!("{n}1.csv")], d);
    }
    let bad = chada(&["pca", "--datasets", "three1.csv,five1.csv", "--out", "joint1.csv"], d);
    assert_eq!(code(&bad), 2);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("width mismatch"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&chada(&[], d)), 1);
    assert_eq!(code(&chada(&["frobnicate"], d)), 1);
    assert_eq!(code(&chada(&["train", "--help"], d)), 0);
    assert_eq!(code(&chada(&["probe", "--embeddings", "x.csv"], d)), 1);

    // Strict config: a typo is a usage error naming the key.
    write(d, "typo.json", r#"{"encoder": {"dimm": 8}}"#);
    let out = chada(&["encode", "--arch", "chada", "--config", "typo.json", "--data", "x", "--out", "x.csv"], d);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimm"));

    let out = chada(&["encode", "--arch", "chada", "--data", "missing", "--out", "x.csv"], d);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing"));

    let out = chada(&["train", "--data", "x", "--out", "r", "--resume", "c.json", "--steps", "3"], d);
    assert_eq!(code(&out), 1);

    write(d, "tiny.json", TINY);
    ok(&["synth", "--kind", "interchannel-xor", "--count", "16", "--channels", "2", "--side", "16", "--out", "xor"], d);
    let out = chada(&["train", "--data", "xor", "--out", "nan", "--config", "tiny.json", "--lr", "1e30", "--steps", "20"], d);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let dump: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("nan/nan_dump.json")).unwrap()).unwrap();
    assert!(dump["error"].as_str().unwrap().contains("non-finite"));
    assert!(d.join("nan/nan_dump_checkpoint.json").is_file());
}

#[test]
fn data_dir_env_sets_default_root() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_chada"))
            .args(args)
            .current_dir(d)
            .env("CHADA_DATA_DIR", d.join("root"))
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["synth", "--kind", "intrachannel-shape", "--count", "4", "--channels", "2", "--side", "16"]);
    assert!(d.join("root/intrachannel-shape/manifest.json").is_file());
    write(d, "tiny.json", TINY);
    run(&["encode", "--arch", "interchannel", "--config", "tiny.json", "--data", "intrachannel-shape", "--out", "e.csv"]);
    assert_eq!(header_width(&d.join("e.csv")), 16);
}
