use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use mcdiff::container;
use mcdiff_core::metrics::nmse;
use mcdiff_core::operators::ifft2_adjoint;
use tempfile::TempDir;

fn mcdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcdiff"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = mcdiff(args);
    assert!(
        out.status.success(),
        "mcdiff {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_config(dir: &Path, json: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_string()
}

fn csv_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(str::to_string).collect()
}

/// Tiny 16x16 phantom, degraded with a few angles, as inputs for reconstruct.
fn tiny_case(dir: &Path) -> String {
    let cfg = write_config(
        dir,
        r#"{"phantom": {"size": 16}, "degrade": {"n_angles": 12},
            "schedule": {"sigma_min": 0.05, "sigma_max": 2.0, "n_steps": 10},
            "sampler": {"n_steps": 10}}"#,
    );
    let data = dir.join("data");
    ok(&["phantom", "--config", &cfg, "--count", "1", "--out", p(&data)]);
    ok(&["degrade", "--config", &cfg, p(&data.join("pair_0000.mcd")), "--out", p(&dir.join("meas"))]);
    cfg
}

#[test]
fn phantom_writes_count_pairs_and_a_manifest() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("five");
    ok(&["phantom", "--count", "5", "--seed", "3", "--out", p(&out)]);
    for k in 0..5 {
        let pair = container::load_pair(&out.join(format!("pair_{k:04}.mcd"))).unwrap();
        assert_eq!(pair.dims(), (32, 32));
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["count"], 5);
    assert_eq!(manifest["files"][4]["seed"], 7);
    assert!(out.join("effective_config.json").exists());

    let empty = tmp.path().join("none");
    ok(&["phantom", "--count", "0", "--out", p(&empty)]);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(empty.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["count"], 0);
    assert_eq!(fs::read_dir(&empty).unwrap().count(), 2);
}

#[test]
fn degrade_at_four_fold_keeps_a_quarter_of_the_rows() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), r#"{"phantom": {"size": 128}, "degrade": {"n_angles": 16}}"#);
    let data = tmp.path().join("data");
    ok(&["phantom", "--config", &cfg, "--out", p(&data)]);
    let meas = tmp.path().join("meas");
    ok(&["degrade", "--config", &cfg, p(&data.join("pair_0000.mcd")), "--out", p(&meas)]);
    let mask = container::load_mask(&meas.join("mask.mcd")).unwrap();
    assert_eq!(mask.lines().len(), 32);
    let hash = container::peek_header(&meas.join("kspace.mcd")).unwrap().extra["config_hash"].clone();
    assert_eq!(hash.as_str().unwrap().len(), 64);
}

#[test]
fn fully_sampled_noiseless_kspace_inverts_to_the_mri() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"phantom": {"size": 24}, "degrade": {"acceleration": 1, "mri_noise_std": 0, "n_angles": 8}}"#,
    );
    let data = tmp.path().join("data");
    ok(&["phantom", "--config", &cfg, "--out", p(&data)]);
    let meas = tmp.path().join("meas");
    ok(&["degrade", "--config", &cfg, p(&data.join("pair_0000.mcd")), "--out", p(&meas)]);
    let truth = container::load_pair(&data.join("pair_0000.mcd")).unwrap();
    let ks = container::load_kspace(&meas.join("kspace.mcd")).unwrap();
    assert!(nmse(&ifft2_adjoint(&ks), &truth.mri).unwrap() < 1e-10);
}

#[test]
fn missing_input_fails_with_one_line_naming_the_path() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nowhere.mcd");
    let out = mcdiff(&["degrade", p(&missing), "--out", p(tmp.path())]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.contains(p(&missing)), "{err}");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), r#"{"sampler": {"snr_ratio": 0.1}}"#);
    let out = mcdiff(&["phantom", "--config", &cfg, "--out", p(tmp.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("snr_ratio"));
}

#[test]
fn training_smoke_run_and_resume() {
    let tmp = TempDir::new().unwrap();
    let one = write_config(tmp.path(), r#"{"phantom": {"size": 16}, "train": {"epochs": 1, "batch_size": 2}}"#);
    let data = tmp.path().join("data");
    ok(&["phantom", "--config", &one, "--count", "4", "--out", p(&data)]);
    let run = tmp.path().join("run");
    let start = Instant::now();
    ok(&["train", "--config", &one, p(&data), "--out", p(&run)]);
    assert!(start.elapsed() < Duration::from_secs(60));
    let rows = csv_rows(&run.join("loss.csv"));
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("1,"));

    let three = tmp.path().join("three.json");
    fs::write(&three, r#"{"phantom": {"size": 16}, "train": {"epochs": 3, "batch_size": 2}}"#).unwrap();
    let resumed = tmp.path().join("resumed");
    ok(&[
        "train",
        "--config",
        p(&three),
        p(&data),
        "--resume",
        p(&run.join("checkpoint.mcd")),
        "--out",
        p(&resumed),
    ]);
    let rows = csv_rows(&resumed.join("loss.csv"));
    let epochs: Vec<&str> = rows.iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(epochs, ["1", "2", "3"]);
    assert_eq!(rows[0], csv_rows(&run.join("loss.csv"))[0]);
}

#[test]
fn training_rejects_an_empty_dataset() {
    let tmp = TempDir::new().unwrap();
    let out = mcdiff(&["train", p(tmp.path()), "--out", p(&tmp.path().join("run"))]);
    assert!(!out.status.success());
}

#[test]
fn reconstruction_is_byte_identical_for_a_fixed_seed() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_case(tmp.path());
    let meas = tmp.path().join("meas");
    let run = |name: &str| {
        let out = tmp.path().join(name);
        ok(&[
            "reconstruct",
            "--config",
            &cfg,
            "--seed",
            "11",
            "--sinogram",
            p(&meas.join("sinogram.mcd")),
            "--kspace",
            p(&meas.join("kspace.mcd")),
            "--mask",
            p(&meas.join("mask.mcd")),
            "--out",
            p(&out),
        ]);
        out
    };
    let (a, b) = (run("a"), run("b"));
    for file in ["recon.mcd", "recon_pet.pgm", "recon_mri.pgm", "trace.csv", "effective_config.json"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file} differs");
    }
    // nine transitions between ten levels, each a predictor and one corrector
    assert_eq!(csv_rows(&a.join("trace.csv")).len(), 18);
}

#[test]
fn standalone_mri_needs_no_sinogram() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_case(tmp.path());
    let meas = tmp.path().join("meas");
    let out = tmp.path().join("mri");
    ok(&[
        "reconstruct",
        "--config",
        &cfg,
        "--standalone",
        "mri",
        "--kspace",
        p(&meas.join("kspace.mcd")),
        "--out",
        p(&out),
    ]);
    let (img, header) = container::image_from_bytes(&fs::read(out.join("recon.mcd")).unwrap()).unwrap();
    assert_eq!(img.dims(), (16, 16));
    assert_eq!(header.extra["modality"], "mri");
    assert!(out.join("recon_mri.pgm").exists());
    let rows = csv_rows(&out.join("trace.csv"));
    assert!(rows[0].split(',').nth(2).unwrap().is_empty());
}

#[test]
fn eval_of_the_truth_is_perfect() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    ok(&["phantom", "--out", p(&data)]);
    let pair = data.join("pair_0000.mcd");
    let text = ok(&["eval", p(&pair), p(&pair), "--out", p(tmp.path())]);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    for m in ["pet", "mri"] {
        assert_eq!(v[m]["psnr"], "inf");
        assert_eq!(v[m]["ssim"], 1.0);
        assert_eq!(v[m]["nmse"], 0.0);
    }
    assert_eq!(fs::read_to_string(tmp.path().join("metrics.json")).unwrap(), text);
}

#[test]
fn ablate_prints_two_methods_by_six_cells() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"phantom": {"size": 16}, "degrade": {"n_angles": 12},
            "schedule": {"sigma_min": 0.05, "sigma_max": 2.0, "n_steps": 8},
            "sampler": {"n_steps": 8}}"#,
    );
    let data = tmp.path().join("data");
    ok(&["phantom", "--config", &cfg, "--count", "2", "--out", p(&data)]);
    let table = ok(&["ablate", "--config", &cfg, p(&data), "--out", p(tmp.path())]);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[2].starts_with("| Stand-alone |"));
    assert!(lines[3].starts_with("| Joint |"));
    for line in &lines[2..] {
        assert_eq!(line.matches('±').count(), 6);
    }
    assert!(tmp.path().join("ablation.json").exists());
}
