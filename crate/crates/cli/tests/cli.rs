use std::path::Path;
use std::process::{Command, Output};

fn fvp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fvp"))
        .args(args)
        .env_remove("FVP_SEED")
        .output()
        .expect("spawn fvp")
}

fn ok(args: &[&str]) -> Output {
    let out = fvp(args);
    assert!(
        out.status.success(),
        "fvp {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generates a tiny benchmark and pretrains a model on its source domain.
fn setup(dir: &Path) {
    ok(&[
        "gen-data", "--out", s(&dir.join("data")), "--seed", "3", "--size", "32",
        "--n-train", "6", "--n-test", "3",
    ]);
    ok(&[
        "pretrain", "--data", s(&dir.join("data/source")), "--out", s(&dir.join("model.fvpw")),
        "--epochs", "2", "--seed", "3", "--history", s(&dir.join("history.json")),
    ]);
}

fn adapt_args<'a>(dir: &'a Path, prompt: &'a str, report: &'a str) -> Vec<String> {
    [
        "--threads", "1", "adapt", "--model", s(&dir.join("model.fvpw")), "--target",
        s(&dir.join("data/target")), "--r", "8", "--lr", "0.1", "--epochs", "2", "--seed", "3",
        "--out", prompt, "--report", report,
    ]
    .iter()
    .map(|a| a.to_string())
    .collect()
}

#[test]
fn full_pipeline_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    let prompt = d.join("p.fvpp");
    let report = d.join("r.json");
    let args = adapt_args(d, s(&prompt), s(&report));
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["learnable_params"], 128);
    assert_eq!(r["model_checksum_before"], r["model_checksum_after"]);
    assert!(r.get("wall_clock_secs").is_none());

    let eval = ok(&[
        "eval", "--model", s(&d.join("model.fvpw")), "--target", s(&d.join("data/target")),
        "--prompt", s(&prompt),
    ]);
    let e: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(e["dice"].as_array().unwrap().len(), 4);

    let figs = d.join("figs");
    ok(&[
        "render", "--out", s(&figs), "--model", s(&d.join("model.fvpw")), "--target",
        s(&d.join("data/target")), "--prompt", s(&prompt), "--noise-sim", "--r", "8",
    ]);
    for f in [
        "original.pgm", "prompted.pgm", "prompt_real.pgm", "prompt_imag.pgm",
        "overlay_truth.ppm", "overlay_prompted.ppm", "pseudo_labels.ppm", "noise_sim.pgm",
    ] {
        let bytes = std::fs::read(figs.join(f)).unwrap();
        assert!(bytes.starts_with(b"P5\n32 32\n255\n") || bytes.starts_with(b"P6\n32 32\n255\n"), "{f}");
    }
}

#[test]
fn eval_without_prompt_is_source_only() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    let out = d.join("e.json");
    ok(&[
        "eval", "--model", s(&d.join("model.fvpw")), "--target", s(&d.join("data/target")),
        "--out", s(&out),
    ]);
    let e: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    let dice = e["mean_fg_dice"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&dice));
}

#[test]
fn zero_box_is_a_usage_error_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let prompt = d.join("p.fvpp");
    let out = fvp(&[
        "adapt", "--model", s(&d.join("missing.fvpw")), "--target", s(d), "--r", "0",
        "--out", s(&prompt), "--report", s(&d.join("r.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!prompt.exists());
    assert!(!d.join("r.json").exists());
}

#[test]
fn bad_flags_exit_with_usage_status() {
    assert_eq!(fvp(&["adapt", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(fvp(&["adapt", "--variant", "svp", "--r", "4"]).status.code(), Some(2));
    assert_eq!(fvp(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_model_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = fvp(&["eval", "--model", s(&d.join("none.fvpw")), "--target", s(d)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn single_thread_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d);
    let mut outputs = Vec::new();
    for i in 0..2 {
        let p = d.join(format!("p{i}.fvpp"));
        let r = d.join(format!("r{i}.json"));
        let args = adapt_args(d, s(&p), s(&r));
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
        outputs.push((std::fs::read(&p).unwrap(), std::fs::read(&r).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}
