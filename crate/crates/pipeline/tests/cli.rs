use std::process::Command;

use serde_json::Value;
use wmsync::core::dataset::synthetic_image;

fn wmsync(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_wmsync")).args(args).output().unwrap()
}

#[test]
fn attack_writes_a_record_and_an_image() {
    let dir = tempfile::tempdir().unwrap();
    let cover = dir.path().join("cover.png");
    let out = dir.path().join("out.png");
    let record = dir.path().join("record.json");
    let img = synthetic_image(120, 90, 4);
    image::GrayImage::from_raw(120, 90, img.to_u8()).unwrap().save(&cover).unwrap();
    let res = wmsync(&[
        "--seed",
        "2",
        "--record",
        record.to_str().unwrap(),
        "attack",
        "--in",
        cover.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--rotation",
        "15",
        "--jpeg",
        "70",
        "--resize",
        "0.5",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let v: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(v["command"], "attack");
    assert_eq!(v["width"], 60);
    assert_eq!(v["height"], 45);
    assert_eq!(std::fs::read(&record).unwrap(), res.stdout);
    assert_eq!(image::open(&out).unwrap().width(), 60);
}

#[test]
fn failures_report_json_on_stderr() {
    let res = wmsync(&["attack", "--in", "/nonexistent/in.png", "--out", "/tmp/never.png"]);
    assert!(!res.status.success());
    let v: Value = serde_json::from_slice(&res.stderr).unwrap();
    assert_eq!(v["kind"], "io");
    assert!(v["error"].as_str().unwrap().contains("nonexistent"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "colour = 3\n").unwrap();
    let res = wmsync(&["--config", cfg.to_str().unwrap(), "eval", "--suite", "quality", "--synthetic", "1"]);
    assert!(!res.status.success());
    let v: Value = serde_json::from_slice(&res.stderr).unwrap();
    assert_eq!(v["kind"], "config");
}
