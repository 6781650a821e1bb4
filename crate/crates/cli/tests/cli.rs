mod common;

use std::fs;

use common::{assert_valid, code, ok, read_json, run, s, simulate};

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["detect", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&["detect", "--bogus"])), 1);
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["detect", "--image", "x.png"])), 1);
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), 1, 0, 0.0);
    let img = dir.path().join("noisy.csv");
    let out = dir.path().join("r.json");
    for extra in [["--basis", "6,0,0"], ["--background", "dark"], ["--q-mult", "-1"], ["--tau", "0"], ["--mad-k", "-2"]]
    {
        let mut args = vec!["detect", "--image", s(&img), "--out", s(&out)];
        args.extend(extra);
        assert_eq!(code(&run(&args)), 1, "{extra:?}");
    }
    assert!(!out.exists());
}

#[test]
fn io_and_format_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let missing = dir.path().join("missing.png");
    assert_eq!(code(&run(&["detect", "--image", s(&missing), "--out", s(&out)])), 3);
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "1,2\n3\n").unwrap();
    assert_eq!(code(&run(&["detect", "--image", s(&bad), "--out", s(&out)])), 3);
    let garbage = dir.path().join("garbage.png");
    fs::write(&garbage, b"not a png").unwrap();
    assert_eq!(code(&run(&["estimate-lattice", "--image", s(&garbage), "--out", s(&out)])), 3);
}

#[test]
fn flat_image_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let flat = dir.path().join("flat.csv");
    let row = vec!["0.5"; 20].join(",");
    fs::write(&flat, format!("{}\n", vec![row; 20].join("\n"))).unwrap();
    let out = dir.path().join("r.json");
    let r = run(&["detect", "--image", s(&flat), "--out", s(&out)]);
    assert_eq!(code(&r), 2, "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(code(&run(&["estimate-lattice", "--image", s(&flat), "--out", s(&out)])), 2);
}

#[test]
fn simulate_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    simulate(a.path(), 7, 10, 0.25);
    simulate(b.path(), 7, 10, 0.25);
    let names = ["noisy.png", "noisy.csv", "clean.csv", "truth.csv", "vacancies.csv", "manifest.json"];
    for name in names {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let manifest = read_json(&a.path().join("manifest.json"));
    assert_valid("simulate-manifest", &manifest);
    assert_eq!(manifest["atoms"], 111);
    assert_eq!(manifest["vacancies"], 10);
    let truth = fs::read_to_string(a.path().join("truth.csv")).unwrap();
    assert_eq!(truth.lines().count(), 112);

    let c = tempfile::tempdir().unwrap();
    simulate(c.path(), 8, 10, 0.25);
    assert_ne!(fs::read(a.path().join("noisy.csv")).unwrap(), fs::read(c.path().join("noisy.csv")).unwrap());
}

#[test]
fn detect_png_emits_valid_outputs_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, 11, 5, 0.05);
    let result = d.join("result.json");
    let trace = d.join("trace.json");
    let overlay = d.join("overlay.png");
    ok(&[
        "detect",
        "--image",
        s(&d.join("noisy.png")),
        "--out",
        s(&result),
        "--background",
        "auto",
        "--trace",
        s(&trace),
        "--overlay",
        s(&overlay),
        "--truth",
        s(&d.join("truth.csv")),
    ]);
    let r = read_json(&result);
    assert_valid("result", &r);
    assert_valid("trace", &read_json(&trace));
    assert_valid("manifest", &read_json(&d.join("result.manifest.json")));
    assert_eq!((r["rows"].as_u64(), r["cols"].as_u64()), (Some(75), Some(75)));
    assert_eq!(r["basis"]["p"], serde_json::json!([6, 0]));
    assert_eq!(r["basis"]["q"], serde_json::json!([0, 6]));
    assert!(::image::open(&overlay).is_ok());

    let report = d.join("eval.json");
    let csv = d.join("eval.csv");
    ok(&[
        "evaluate",
        "--result",
        s(&result),
        "--truth",
        s(&d.join("truth.csv")),
        "--out",
        s(&report),
        "--csv",
        s(&csv),
    ]);
    let e = read_json(&report);
    assert_valid("eval-report", &e);
    assert_valid("manifest", &read_json(&d.join("eval.manifest.json")));
    assert_eq!(e["rows"][0]["fp"], 0);
    assert_eq!(e["rows"][0]["fn"], 0);
    assert_eq!(e["rows"][0]["basis_bias"], 0.0);
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 2);
}

#[test]
fn estimate_lattice_writes_basis_and_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, 3, 0, 0.0);
    let out = d.join("lattice.json");
    let spectrum = d.join("spectrum.csv");
    ok(&["estimate-lattice", "--image", s(&d.join("noisy.csv")), "--out", s(&out), "--spectrum", s(&spectrum)]);
    let e = read_json(&out);
    assert_valid("estimate", &e);
    assert_valid("manifest", &read_json(&d.join("lattice.manifest.json")));
    assert_eq!(e["p"], serde_json::json!([6, 0]));
    assert_eq!(e["q"], serde_json::json!([0, 6]));
    let tau = e["tau"].as_f64().unwrap();
    assert!((tau - 2.42).abs() < 0.25, "{tau}");
    let text = fs::read_to_string(&spectrum).unwrap();
    assert_eq!(text.lines().count(), 75);
    assert_eq!(text.lines().next().unwrap().split(',').count(), 75);
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, 5, 5, 0.0);
    let img = d.join("noisy.csv");
    let cfg = d.join("cfg.json");
    fs::write(&cfg, r#"{ "tau": 2.3, "basis": "6,0,0,6", "threads": 2 }"#).unwrap();
    let out = d.join("r.json");
    ok(&["--config", s(&cfg), "detect", "--image", s(&img), "--out", s(&out)]);
    let r = read_json(&out);
    assert_eq!(r["tau"], 2.3);
    ok(&["--config", s(&cfg), "detect", "--image", s(&img), "--out", s(&out), "--tau", "2.42"]);
    assert_eq!(read_json(&out)["tau"], 2.42);

    fs::write(&cfg, r#"{ "colour": "blue" }"#).unwrap();
    assert_eq!(code(&run(&["--config", s(&cfg), "detect", "--image", s(&img), "--out", s(&out)])), 1);
}

#[test]
fn thread_setting_from_env() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, 5, 0, 0.0);
    let img = d.join("noisy.csv");
    let out = d.join("r.json");
    let args = ["detect", "--image", s(&img), "--out", s(&out)];
    let with_env = |v: &str| common::bin().args(args).env("LATTICEFIND_THREADS", v).output().unwrap();
    assert_eq!(code(&with_env("2")), 0);
    let first = fs::read(&out).unwrap();
    assert_eq!(code(&with_env("lots")), 1);
    assert_eq!(code(&run(&["--threads", "0", "detect", "--image", s(&img), "--out", s(&out)])), 1);
    ok(&["--threads", "1", "detect", "--image", s(&img), "--out", s(&out)]);
    assert_eq!(fs::read(&out).unwrap(), first);
}

#[test]
fn small_sweep_writes_valid_tree() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    ok(&["sweep", "--reps", "2", "--counts", "5", "--modes", "uniform,mode4", "--noise", "0.05", "--out-dir", s(&out)]);
    assert_valid("sweep-manifest", &read_json(&out.join("manifest.json")));
    for cell in ["c05_uniform_v0.05", "c05_mode4_v0.05"] {
        let cdir = out.join("cells").join(cell);
        assert_valid("eval-report", &read_json(&cdir.join("report.json")));
        assert_eq!(fs::read_to_string(cdir.join("replicates.csv")).unwrap().lines().count(), 3);
    }
    assert_eq!(fs::read_to_string(out.join("summary.csv")).unwrap().lines().count(), 3);
    assert_eq!(code(&run(&["sweep", "--modes", "diagonal", "--out-dir", s(&out)])), 1);
}
