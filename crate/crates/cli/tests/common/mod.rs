#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_bregdiv");

pub fn write_config(dir: &Path, json: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, json).unwrap();
    p
}

/// Runs `bregdiv <cmd> --config <config> --out <out>` plus `extra` arguments.
pub fn bregdiv(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(BIN)
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn ok(cmd: &str, config: &Path, out: &Path, extra: &[&str]) {
    let o = bregdiv(cmd, config, out, extra);
    assert!(
        o.status.success(),
        "{cmd} failed with {:?}: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
}

pub fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// File name to bytes for every file in `dir`.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

/// Distinct group ids in a grouped CSV.
pub fn group_count(path: &Path) -> usize {
    let mut r = csv::Reader::from_path(path).unwrap();
    let mut ids: Vec<String> = r.records().map(|rec| rec.unwrap()[0].to_string()).collect();
    ids.dedup();
    ids.len()
}
