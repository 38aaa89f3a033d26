use std::path::Path;
use std::process::{Command, Output};

fn ihdr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ihdr"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn ihdr")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn simulate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = ihdr(tmp.path(), &["simulate", "--seeds", "4", "--size", "16", "--out", out]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let read = |d: &str| std::fs::read(tmp.path().join(d).join("manifest.jsonl")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_eq!(String::from_utf8(read("a")).unwrap().lines().count(), 4);
    for name in ["scene_000003_hdr.pfm", "scene_000003_ldr.png"] {
        let f = |d: &str| std::fs::read(tmp.path().join(d).join(name)).unwrap();
        assert_eq!(f("a"), f("b"), "{name}");
    }
}

#[test]
fn evaluate_identity_reports_zero_rmse() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ihdr(tmp.path(), &["simulate", "--seeds", "1", "--size", "16", "--out", "d"]);
    assert_eq!(code(&o), 0);
    let gt = "d/scene_000000_hdr.pfm";
    let o = ihdr(tmp.path(), &["evaluate", "--pred", gt, "--gt", gt, "--report", "r.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(tmp.path().join("r.json")).unwrap()).unwrap();
    let img = &report["images"][0];
    // zero up to floating-point roundoff on the 1000 range
    assert!(img["rmse_linear"].as_f64().unwrap() < 1e-9);
    assert_eq!(img["pu21_psnr"], "inf");
    let csv = std::fs::read_to_string(tmp.path().join("r.csv")).unwrap();
    assert!(csv.starts_with("id,scale,pu21_psnr,rmse_linear"));
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn gradcheck_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ihdr(tmp.path(), &["gradcheck", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("gradient checks passed"));
}

#[test]
fn train_reconstruct_evaluate_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let o = ihdr(tmp.path(), args);
        assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
    };
    run(&["simulate", "--seeds", "2", "--size", "16", "--out", "d"]);
    std::fs::create_dir(tmp.path().join("ck")).unwrap();
    for role in ["shading", "albedo"] {
        let ckpt = format!("ck/{role}.ckpt");
        run(&["train", "--role", role, "--data", "d", "--steps", "2", "--ckpt", &ckpt]);
    }
    run(&["train", "--role", "refinement", "--data", "d", "--steps", "2", "--ckpt", "ck/refinement.ckpt", "--ckpts", "ck"]);
    let curve = std::fs::read_to_string(tmp.path().join("ck/refinement.loss.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);

    std::fs::create_dir(tmp.path().join("pred")).unwrap();
    run(&["reconstruct", "--ldr", "d/scene_000001_ldr.png", "--ckpts", "ck", "--out", "pred/x"]);
    for suffix in ["dh", "ah", "ihat", "hdr"] {
        assert!(tmp.path().join(format!("pred/x_{suffix}.pfm")).is_file());
    }
    run(&[
        "reconstruct",
        "--ldr",
        "d/scene_000001_ldr.pfm",
        "--ckpts",
        "ck",
        "--out",
        "pred/y",
        "--inv-shading",
        "d/scene_000001_dl.pfm",
        "--albedo",
        "d/scene_000001_al.pfm",
    ]);

    // directory mode pairs files by name
    std::fs::create_dir(tmp.path().join("gt")).unwrap();
    std::fs::copy(tmp.path().join("d/scene_000001_hdr.pfm"), tmp.path().join("gt/y_hdr.pfm")).unwrap();
    run(&["evaluate", "--pred", "pred", "--gt", "gt", "--report", "rep.json"]);
    let rep = std::fs::read_to_string(tmp.path().join("rep.json")).unwrap();
    assert!(rep.contains("\"y_hdr.pfm\""));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    let o = ihdr(dir, &["frobnicate"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).starts_with("error[usage]:"));

    let o = ihdr(dir, &["simulate", "--out", "d"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--seeds"));

    assert_eq!(code(&ihdr(dir, &["--help"])), 0);
    assert_eq!(code(&ihdr(dir, &["--version"])), 0);

    std::fs::write(dir.join("bad.pfm"), b"Pf\n1 1\nabc\n").unwrap();
    let o = ihdr(dir, &["evaluate", "--pred", "bad.pfm", "--gt", "bad.pfm", "--report", "r.json"]);
    assert_eq!(code(&o), 2);
    let line = stderr(&o);
    assert_eq!(line.lines().count(), 1);
    assert!(line.starts_with("error[data]:") && line.contains("parse error at byte 7"), "{line}");

    // a flat ground truth cannot be aligned: numerical failure
    let mut rgb = b"PF\n2 2\n-1.0\n".to_vec();
    rgb.extend([1.0f32; 12].iter().flat_map(|v| v.to_le_bytes()));
    std::fs::write(dir.join("flat_rgb.pfm"), rgb).unwrap();
    let o = ihdr(dir, &["evaluate", "--pred", "flat_rgb.pfm", "--gt", "flat_rgb.pfm", "--report", "r.json"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error[numerical]:"));

    std::fs::write(dir.join("c.toml"), "seedz = 1\n").unwrap();
    let o = ihdr(dir, &["--config", "c.toml", "simulate", "--out", "d"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("seedz"));
}

#[test]
fn config_file_supplies_options() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("run.toml"), "seeds = 2\nsize = 16\nt_range = [-1.0, -1.0]\nout = \"cfg\"\n").unwrap();
    let o = ihdr(tmp.path(), &["--config", "run.toml", "simulate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest = std::fs::read_to_string(tmp.path().join("cfg/manifest.jsonl")).unwrap();
    assert_eq!(manifest.matches("\"exposure_stops\":-1.0").count(), 2, "{manifest}");
    // the flag overrides the file
    let o = ihdr(tmp.path(), &["--config", "run.toml", "simulate", "--seeds", "1", "--out", "flag"]);
    assert_eq!(code(&o), 0);
    let manifest = std::fs::read_to_string(tmp.path().join("flag/manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 1);
}
