#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_latticefind"));
    cmd.env_remove("LATTICEFIND_THREADS");
    cmd
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert_eq!(code(&out), 0, "{args:?}\nstderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("UTF-8 path")
}

pub fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas")
}

/// Panics with every violation if `doc` does not satisfy `schemas/<name>.schema.json`.
pub fn assert_valid(name: &str, doc: &Value) {
    let schema = read_json(&schema_dir().join(format!("{name}.schema.json")));
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = validator.iter_errors(doc).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{name}: {errors:#?}");
}

/// Writes a simulated image set (seed, vacancy count, noise variance) into `dir`.
pub fn simulate(dir: &Path, seed: u64, count: usize, noise: f64) {
    ok(&[
        "simulate",
        "--seed",
        &seed.to_string(),
        "--count",
        &count.to_string(),
        "--noise-var",
        &noise.to_string(),
        "--out-dir",
        s(dir),
    ]);
}
