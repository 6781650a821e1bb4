use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use latticefind::eval::{match_atoms, score, summarize, ReplicateRow, DEFAULT_TOLERANCE};
use latticefind::io::{
    atoms_to_csv, encode_png16, encode_rgb, load_image, matrix_to_csv, parse_atoms_csv, write_atomic, write_json,
};
use latticefind::pipeline::detect;
use latticefind::simgen::{make_ground_truth, snr_db, SimDesign};
use latticefind::solver::{SolverTrace, Termination};
use latticefind::spectral::{estimate_lattice, Peak};
use latticefind::sweep::{run_sweep, SweepConfig};
use latticefind::{Error, LatticeBasis, Result, VERSION};

use crate::args::{
    detect_options, estimate_options, parse_basis, parse_list, parse_modes, DetectArgs, EstimateArgs, EvaluateArgs,
    FileConfig, SimulateArgs, SweepArgs,
};
use crate::overlay;

#[derive(Serialize)]
struct Manifest<'a, T: Serialize> {
    version: &'static str,
    command: &'static str,
    inputs: Vec<String>,
    outputs: Vec<String>,
    config: &'a T,
}

fn manifest_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    out.with_file_name(format!("{stem}.manifest.json"))
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

fn write_manifest<T: Serialize>(
    path: &Path,
    command: &'static str,
    inputs: &[&Path],
    outputs: &[&Path],
    config: &T,
) -> Result<()> {
    write_json(
        path,
        &Manifest {
            version: VERSION,
            command,
            inputs: inputs.iter().map(|p| show(p)).collect(),
            outputs: outputs.iter().map(|p| show(p)).collect(),
            config,
        },
    )
}

#[derive(Serialize, Deserialize)]
struct PeakOut {
    x: f64,
    y: f64,
    scale: f64,
    strength: f64,
    amplitude: f64,
}

impl From<&Peak> for PeakOut {
    fn from(p: &Peak) -> Self {
        PeakOut { x: p.location[0], y: p.location[1], scale: p.scale, strength: p.strength, amplitude: p.amplitude }
    }
}

#[derive(Serialize)]
struct EstimateOut {
    version: &'static str,
    p: [i64; 2],
    q: [i64; 2],
    tau: f64,
    peaks: Vec<PeakOut>,
}

pub fn estimate(a: &EstimateArgs, f: &FileConfig) -> Result<()> {
    let opts = estimate_options(a, f)?;
    let y = load_image(&a.image)?;
    let (est, spectrum) = estimate_lattice(&y, &opts.doh)?;
    write_json(
        &a.out,
        &EstimateOut {
            version: VERSION,
            p: est.basis.p,
            q: est.basis.q,
            tau: est.tau,
            peaks: est.peaks.iter().map(PeakOut::from).collect(),
        },
    )?;
    let mut outputs = vec![a.out.as_path()];
    if let Some(path) = &a.spectrum {
        write_atomic(path, matrix_to_csv(spectrum.values()).as_bytes())?;
        outputs.push(path);
    }
    write_manifest(&manifest_path(&a.out), "estimate-lattice", &[&a.image], &outputs, &opts.doh)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomOut {
    pub m: usize,
    pub n: usize,
    pub alpha: f64,
}

/// Contents of `result.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub version: String,
    pub rows: usize,
    pub cols: usize,
    pub atoms: Vec<AtomOut>,
    pub basis: LatticeBasis,
    pub tau: f64,
    pub sigma_hat: f64,
    /// Constant subtracted from the image before detection.
    pub background: f64,
    pub iterations: usize,
    pub termination: Termination,
}

#[derive(Serialize)]
struct TraceFile<'a> {
    version: &'static str,
    estimated_peaks: Option<Vec<PeakOut>>,
    solver: &'a SolverTrace,
}

pub fn detect_cmd(a: &DetectArgs, f: &FileConfig, verbose: bool) -> Result<()> {
    let opts = detect_options(a, f)?;
    let y = load_image(&a.image)?;
    let det = detect(&y, &opts)?;
    let r = &det.result;
    if verbose {
        eprintln!(
            "basis {} tau {:.4}: {} atoms after {} iteration(s), {:?}",
            r.basis,
            r.tau,
            r.atoms.len(),
            r.trace.iterations.len(),
            r.trace.termination
        );
    }
    let (rows, cols) = y.dims();
    let file = ResultFile {
        version: VERSION.to_string(),
        rows,
        cols,
        atoms: r.atoms.iter().map(|(s, alpha)| AtomOut { m: s.m, n: s.n, alpha }).collect(),
        basis: r.basis,
        tau: r.tau,
        sigma_hat: r.sigma_hat,
        background: det.background,
        iterations: r.trace.iterations.len(),
        termination: r.trace.termination,
    };
    write_json(&a.out, &file)?;
    let mut outputs = vec![a.out.as_path()];
    let mut inputs = vec![a.image.as_path()];

    if let Some(path) = &a.trace {
        let trace = TraceFile {
            version: VERSION,
            estimated_peaks: det.estimate.as_ref().map(|e| e.peaks.iter().map(PeakOut::from).collect()),
            solver: &r.trace,
        };
        write_json(path, &trace)?;
        outputs.push(path);
    }
    if let Some(path) = &a.overlay {
        let detected: Vec<_> = r.atoms.sites().collect();
        let fps = match &a.truth {
            Some(tp) => {
                inputs.push(tp);
                let truth = parse_atoms_csv(&fs::read_to_string(tp)?, rows, cols)?;
                let tol = a.tolerance.or(f.tolerance).unwrap_or(DEFAULT_TOLERANCE);
                let m = match_atoms(&truth, &r.atoms, tol)?;
                let hit: std::collections::BTreeSet<_> = m.pairs.iter().map(|p| p.1).collect();
                detected.iter().copied().filter(|s| !hit.contains(s)).collect()
            }
            None => Vec::new(),
        };
        let img = overlay::render(&y, &detected, &fps, (r.tau * 1.5).max(2.0));
        write_atomic(path, &encode_rgb(img)?)?;
        outputs.push(path);
    }
    write_manifest(&manifest_path(&a.out), "detect", &inputs, &outputs, &opts)
}

#[derive(Serialize)]
struct SimManifest<'a> {
    version: &'static str,
    command: &'static str,
    design: &'a SimDesign,
    signal_variance: f64,
    snr_db: Option<f64>,
    atoms: usize,
    vacancies: usize,
    outputs: Vec<&'static str>,
}

pub fn simulate(a: &SimulateArgs, f: &FileConfig) -> Result<()> {
    let mut d = SimDesign::default();
    if let Some(s) = a.seed.or(f.seed) {
        d.seed = s;
    }
    if let Some(c) = a.count.or(f.count) {
        d.vacancy_count = c;
    }
    if let Some(m) = a.mode.as_deref().or(f.mode.as_deref()) {
        d.vacancy_mode = m.parse()?;
    }
    if let Some(v) = a.noise_var.or(f.noise_var) {
        d.noise_var = v;
    }
    if let Some(t) = a.tau.or(f.tau) {
        d.tau = t;
    }
    let gt = make_ground_truth(&d)?;
    fs::create_dir_all(&a.out_dir)?;
    let dir = &a.out_dir;
    write_atomic(&dir.join("noisy.png"), &encode_png16(&gt.noisy)?)?;
    write_atomic(&dir.join("noisy.csv"), matrix_to_csv(gt.noisy.pixels()).as_bytes())?;
    write_atomic(&dir.join("clean.csv"), matrix_to_csv(gt.clean.pixels()).as_bytes())?;
    write_atomic(&dir.join("truth.csv"), atoms_to_csv(&gt.atoms).as_bytes())?;
    let mut vac = String::from("m,n\n");
    for s in &gt.vacancies {
        vac.push_str(&format!("{},{}\n", s.m, s.n));
    }
    write_atomic(&dir.join("vacancies.csv"), vac.as_bytes())?;
    write_json(
        &dir.join("manifest.json"),
        &SimManifest {
            version: VERSION,
            command: "simulate",
            design: &d,
            signal_variance: gt.signal_variance,
            snr_db: (d.noise_var > 0.0).then(|| snr_db(gt.signal_variance, d.noise_var)).transpose()?,
            atoms: gt.atoms.len(),
            vacancies: gt.vacancies.len(),
            outputs: vec!["noisy.png", "noisy.csv", "clean.csv", "truth.csv", "vacancies.csv"],
        },
    )
}

pub fn sweep(a: &SweepArgs, f: &FileConfig, verbose: bool) -> Result<()> {
    let mut cfg = SweepConfig::default();
    if let Some(s) = a.seed.or(f.seed) {
        cfg.master_seed = s;
    }
    if let Some(r) = a.reps.or(f.reps) {
        cfg.reps = r;
    }
    if let Some(s) = a.counts.as_deref().or(f.counts.as_deref()) {
        cfg.counts = parse_list(s, "count")?;
    }
    if let Some(s) = a.modes.as_deref().or(f.modes.as_deref()) {
        cfg.modes = parse_modes(s)?;
    }
    if let Some(s) = a.noise.as_deref().or(f.noise.as_deref()) {
        cfg.noise = parse_list(s, "noise variance")?;
    }
    if let Some(t) = a.tolerance.or(f.tolerance) {
        cfg.tolerance = t;
    }
    if cfg.reps == 0 {
        return Err(Error::invalid("reps must be at least 1"));
    }
    let reports = run_sweep(&cfg, &a.out_dir)?;
    if verbose {
        let failures: usize = reports.iter().map(|r| r.failures).sum();
        eprintln!("{} cells, {} estimation failures", reports.len(), failures);
    }
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs, f: &FileConfig) -> Result<()> {
    let result: ResultFile = serde_json::from_str(&fs::read_to_string(&a.result)?)?;
    let truth = parse_atoms_csv(&fs::read_to_string(&a.truth)?, result.rows, result.cols)?;
    let truth_basis = parse_basis(&a.truth_basis)?;
    let tol = a.tolerance.or(f.tolerance).unwrap_or(DEFAULT_TOLERANCE);
    let detected = latticefind::AtomMap::from_entries(
        result.rows,
        result.cols,
        result.atoms.iter().map(|x| (latticefind::Site::new(x.m, x.n), x.alpha)),
    )?;
    let (m, bias) = score(&truth, &detected, &truth_basis, &result.basis, tol)?;
    let row = ReplicateRow {
        rep: 0,
        seed: 0,
        truth_atoms: truth.len(),
        detected_atoms: detected.len(),
        fp: Some(m.fp),
        fn_: Some(m.fn_),
        matched: Some(m.matched()),
        basis_bias: Some(bias),
        tau_hat: Some(result.tau),
        iterations: Some(result.iterations),
        signal_variance: None,
        failure: None,
    };
    let design = SimDesign { basis: truth_basis, ..Default::default() };
    let report = summarize(design, tol, vec![row]);
    write_json(&a.out, &report)?;
    let mut outputs = vec![a.out.as_path()];
    if let Some(p) = &a.csv {
        write_atomic(p, report.to_csv().as_bytes())?;
        outputs.push(p);
    }
    write_manifest(
        &manifest_path(&a.out),
        "evaluate",
        &[&a.result, &a.truth],
        &outputs,
        &serde_json::json!({ "tolerance": tol, "truth_basis": truth_basis }),
    )
}
