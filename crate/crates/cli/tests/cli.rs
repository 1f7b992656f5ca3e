use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use irfuse_core::imaging::load_png;
use serde_json::{json, Value};
use tempfile::TempDir;

fn irfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irfuse"))
        .args(args)
        .output()
        .expect("spawn irfuse")
}

fn ok(args: &[&str]) -> String {
    let out = irfuse(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> (i32, String) {
    let out = irfuse(args);
    (
        out.status.code().expect("exit code"),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Relative path -> bytes for every file under `dir`.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

fn synth(root: &Path, count: usize, size: usize) -> PathBuf {
    let dir = root.join("src");
    ok(&[
        "synth",
        "--out",
        s(&dir),
        "--count",
        &count.to_string(),
        "--size",
        &size.to_string(),
        "--seed",
        "1",
    ]);
    dir
}

fn small_config(dir: &Path, train_dir: &Path, extra: Value) -> PathBuf {
    let mut cfg = json!({
        "version": 1,
        "seed": 3,
        "block": {"channels": 8, "window_size": 8, "heads": 2, "gn_groups": 2},
        "train": {"crop_size": 16, "batch_size": 2, "stage1_steps": 2, "stage2_steps": 2},
        "paths": {"train_dir": train_dir, "out_dir": "run"}
    });
    if let (Value::Object(base), Value::Object(more)) = (&mut cfg, extra) {
        for (k, v) in more {
            match (base.get_mut(&k), v) {
                (Some(Value::Object(b)), Value::Object(m)) => b.extend(m),
                (_, v) => {
                    base.insert(k, v);
                }
            }
        }
    }
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn degrade_is_seeded_and_records_draws_in_range() {
    let t = TempDir::new().unwrap();
    let src = synth(t.path(), 3, 32);
    let before = snapshot(&src);
    let (a, b, c) = (t.path().join("a"), t.path().join("b"), t.path().join("c"));
    ok(&[
        "degrade",
        "--in",
        s(&src),
        "--out",
        s(&a),
        "--seed",
        "7",
        "--gamma",
        "1.5",
    ]);
    ok(&[
        "degrade",
        "--in",
        s(&src),
        "--out",
        s(&b),
        "--seed",
        "7",
        "--gamma",
        "1.5",
        "--jobs",
        "2",
    ]);
    ok(&[
        "degrade",
        "--in",
        s(&src),
        "--out",
        s(&c),
        "--seed",
        "8",
        "--gamma",
        "1.5",
    ]);
    assert_eq!(snapshot(&src), before, "inputs were modified");
    assert_eq!(snapshot(&a), snapshot(&b));
    assert_ne!(
        snapshot(&a)[Path::new("manifest.json")],
        snapshot(&c)[Path::new("manifest.json")]
    );

    let manifest: Value =
        serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    let files = manifest["files"].as_array().unwrap();
    assert_eq!(files.len(), 6);
    for f in files {
        let sigma = f["spec"]["gaussian_sigma"].as_f64().unwrap();
        let stripe = f["spec"]["stripe_intensity"].as_f64().unwrap();
        assert!(
            (5.0..=30.0).contains(&sigma) && (10.0..=30.0).contains(&stripe),
            "{f}"
        );
        let protocol = f["protocol"].as_str().unwrap();
        let name = f["file"].as_str().unwrap();
        assert_eq!(protocol == "infrared", name.starts_with("ir/"), "{f}");
    }
    // visible files are darkened, not noised
    let orig = load_png(src.join("vi/pair_00.png")).unwrap();
    let dark = load_png(a.join("vi/pair_00.png")).unwrap();
    let want = orig.data().mapv(|v| v.powf(1.5));
    let err = (dark.data() - &want)
        .mapv(f64::abs)
        .fold(0.0f64, |m, &v| m.max(v));
    assert!(err <= 0.5 / 255.0 + 1e-9, "{err}");
}

#[test]
fn degrade_rejects_empty_input_and_leaves_nothing() {
    let t = TempDir::new().unwrap();
    let empty = t.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = t.path().join("out");
    let (c, err) = code(&["degrade", "--in", s(&empty), "--out", s(&out)]);
    assert_eq!(c, 2);
    assert!(err.contains("no PNG"), "{err}");
    assert!(!out.exists());
    let (c, _) = code(&[
        "degrade",
        "--in",
        s(&t.path().join("missing")),
        "--out",
        s(&out),
    ]);
    assert_eq!(c, 2);
}

#[test]
fn degrade_removes_partial_outputs_on_failure() {
    let t = TempDir::new().unwrap();
    let src = synth(t.path(), 2, 32);
    std::fs::write(src.join("ir/zz_broken.png"), b"not a png").unwrap();
    let out = t.path().join("out");
    let (c, _) = code(&["degrade", "--in", s(&src), "--out", s(&out)]);
    assert_eq!(c, 2);
    assert!(
        !out.exists(),
        "partial output left: {:?}",
        snapshot(&out).keys().collect::<Vec<_>>()
    );
}

#[test]
fn decompose_writes_components_and_sidecar() {
    let t = TempDir::new().unwrap();
    let src = synth(t.path(), 1, 32);
    let img = src.join("vi/pair_00.png");
    let out = t.path().join("dec");
    ok(&["decompose", s(&img), "--out", s(&out), "--mode", "dct"]);
    ok(&["decompose", s(&img), "--out", s(&out), "--mode", "retinex"]);
    let names: Vec<String> = snapshot(&out)
        .keys()
        .map(|p| p.display().to_string())
        .collect();
    assert_eq!(
        names,
        [
            "pair_00_dct.json",
            "pair_00_high.png",
            "pair_00_illumination.png",
            "pair_00_low.png",
            "pair_00_reflectance.png",
            "pair_00_retinex.json"
        ]
    );
    let side: Value =
        serde_json::from_slice(&std::fs::read(out.join("pair_00_retinex.json")).unwrap()).unwrap();
    assert!(side["reconstruction_max_error"].as_f64().unwrap() < 1e-6);
    assert_eq!(side["components"][0]["file"], "pair_00_reflectance.png");

    let (c, _) = code(&["decompose", s(&t.path().join("nope.png")), "--out", s(&out)]);
    assert_eq!(c, 2);
}

#[test]
fn decompose_tau_zero_low_band_is_separable() {
    // with tau = 0 only the first row and column of coefficients are low, so
    // the low band is a row profile plus a column profile
    let t = TempDir::new().unwrap();
    let src = synth(t.path(), 1, 32);
    let out = t.path().join("dec");
    ok(&[
        "decompose",
        s(&src.join("ir/pair_00.png")),
        "--out",
        s(&out),
        "--tau",
        "0",
    ]);
    let side: Value =
        serde_json::from_slice(&std::fs::read(out.join("pair_00_dct.json")).unwrap()).unwrap();
    let (lo, hi) = (
        side["components"][0]["min"].as_f64().unwrap(),
        side["components"][0]["max"].as_f64().unwrap(),
    );
    let low = load_png(out.join("pair_00_low.png"))
        .unwrap()
        .plane(0)
        .mapv(|v| lo + v * (hi - lo));
    let mut worst = 0.0f64;
    for y in 0..32 {
        for x in 0..32 {
            worst = worst.max((low[[y, x]] - low[[y, 0]] - low[[0, x]] + low[[0, 0]]).abs());
        }
    }
    assert!(worst <= 2.0 * (hi - lo) / 255.0 + 1e-12, "{worst}");
}

#[test]
fn gradcheck_selection_and_exit_codes() {
    let out = ok(&["gradcheck", "--loss", "tv"]);
    assert!(out.starts_with("PASS loss tv"), "{out}");
    assert_eq!(code(&["gradcheck", "--loss", "nope"]).0, 2);
    assert_eq!(code(&["gradcheck", "--block", "tv"]).0, 2);
    assert_eq!(code(&["gradcheck"]).0, 2);
    let all = ok(&["gradcheck", "--all"]);
    let lines: Vec<&str> = all.lines().collect();
    assert_eq!(lines.len(), irfuse_core::gradcheck::suite::checks().len());
    assert!(lines.iter().all(|l| l.starts_with("PASS")), "{all}");
}

#[test]
fn train_rejects_bad_configs() {
    let t = TempDir::new().unwrap();
    let src = synth(t.path(), 2, 32);
    let bad = small_config(t.path(), &src, json!({"train": {"crop_sise": 16}}));
    let (c, err) = code(&["train", "--config", s(&bad)]);
    assert_eq!(c, 2);
    assert!(err.contains("crop_sise"), "{err}");
    let cfg = small_config(t.path(), &src, json!({}));
    let (c, err) = code(&["train", "--config", s(&cfg), "--stage", "2"]);
    assert_eq!(c, 2);
    assert!(err.contains("stage 1"), "{err}");
}

#[test]
fn train_exits_3_on_divergence() {
    let t = TempDir::new().unwrap();
    let src = synth(t.path(), 2, 32);
    let cfg = small_config(
        t.path(),
        &src,
        json!({"train": {"learning_rate": 1e300, "stage1_steps": 4}}),
    );
    let (c, err) = code(&["train", "--config", s(&cfg), "--stage", "1"]);
    assert_eq!(c, 3, "{err}");
    assert!(err.contains("non-finite"), "{err}");
}

fn log_steps(path: &Path) -> Vec<u64> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect()
}

#[test]
fn pipeline_train_fuse_evaluate() {
    let t = TempDir::new().unwrap();
    let src = synth(t.path(), 2, 32);
    let cfg = small_config(t.path(), &src, json!({}));
    let run = t.path().join("run");
    let out = ok(&["train", "--config", s(&cfg), "--stage", "all"]);
    assert!(out.contains("stage 1") && out.contains("stage 2"), "{out}");
    assert_eq!(log_steps(&run.join("stage1_log.csv")), [0, 1]);
    assert_eq!(log_steps(&run.join("stage2_log.csv")), [0, 1]);
    ok(&["train", "--config", s(&cfg), "--stage", "1", "--resume"]);
    assert_eq!(log_steps(&run.join("stage1_log.csv")), [0, 1, 2, 3]);

    let deg = t.path().join("deg");
    ok(&["degrade", "--in", s(&src), "--out", s(&deg), "--seed", "5"]);
    let (fa, fb) = (t.path().join("fa"), t.path().join("fb"));
    let ck = run.join("checkpoint.ddfu");
    for (dir, jobs) in [(&fa, "1"), (&fb, "2")] {
        ok(&[
            "fuse",
            "--checkpoint",
            s(&ck),
            "--ir",
            s(&deg.join("ir")),
            "--vi",
            s(&deg.join("vi")),
            "--out",
            s(dir),
            "--jobs",
            jobs,
        ]);
    }
    let fused = snapshot(&fa);
    assert_eq!(fused, snapshot(&fb));
    assert_eq!(fused.len(), 2);
    for name in fused.keys() {
        let img = load_png(fa.join(name)).unwrap();
        assert_eq!((img.channels(), img.height(), img.width()), (3, 32, 32));
    }

    let csv = t.path().join("metrics.csv");
    let table = ok(&[
        "evaluate",
        "--ir",
        s(&deg.join("ir")),
        "--vi",
        s(&deg.join("vi")),
        "--fused",
        s(&fa),
        "--out",
        s(&csv),
    ]);
    assert!(table.contains("mean"), "{table}");
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "pair,vif,ag,ei,qabf,sf,qw");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("mean,"));
    for l in &lines[1..] {
        let cells: Vec<&str> = l.split(',').collect();
        assert_eq!(cells.len(), 7);
        assert!(
            cells[1..]
                .iter()
                .all(|c| c.parse::<f64>().unwrap().is_finite()),
            "{l}"
        );
    }
    let again = t.path().join("metrics2.csv");
    ok(&[
        "evaluate",
        "--ir",
        s(&deg.join("ir")),
        "--vi",
        s(&deg.join("vi")),
        "--fused",
        s(&fa),
        "--out",
        s(&again),
    ]);
    assert_eq!(std::fs::read(&csv).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn fuse_and_evaluate_reject_bad_pairs() {
    let t = TempDir::new().unwrap();
    let src = synth(t.path(), 2, 32);
    let cfg = small_config(
        t.path(),
        &src,
        json!({"train": {"stage1_steps": 1, "stage2_steps": 1}}),
    );
    ok(&["train", "--config", s(&cfg)]);
    let ck = t.path().join("run/checkpoint.ddfu");

    let lone = t.path().join("lone");
    std::fs::create_dir(&lone).unwrap();
    std::fs::copy(src.join("vi/pair_00.png"), lone.join("pair_00.png")).unwrap();
    std::fs::copy(src.join("vi/pair_01.png"), lone.join("extra.png")).unwrap();
    let out = t.path().join("fused");
    let (c, err) = code(&[
        "fuse",
        "--checkpoint",
        s(&ck),
        "--ir",
        s(&src.join("ir")),
        "--vi",
        s(&lone),
        "--out",
        s(&out),
    ]);
    assert_eq!(c, 2);
    assert!(
        err.contains("extra.png") && err.contains("pair_01.png"),
        "{err}"
    );

    // a fused image of the wrong size
    let other = synth(&t.path().join("big"), 2, 40);
    let csv = t.path().join("m.csv");
    let (c, err) = code(&[
        "evaluate",
        "--ir",
        s(&src.join("ir")),
        "--vi",
        s(&src.join("vi")),
        "--fused",
        s(&other.join("vi")),
        "--out",
        s(&csv),
    ]);
    assert_eq!(c, 2);
    assert!(err.contains("misaligned"), "{err}");
    assert!(!csv.exists());
}
