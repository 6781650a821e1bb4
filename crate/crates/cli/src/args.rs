use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use latticefind::pipeline::{Background, DetectOptions, AUTO_BACKGROUND_QUANTILE};
use latticefind::simgen::VacancyMode;
use latticefind::{Error, LatticeBasis, Result};

#[derive(Parser, Debug)]
#[command(name = "latticefind", version, about = "Lattice, atom and vacancy identification in noisy images")]
pub struct Cli {
    /// Worker threads (default: LATTICEFIND_THREADS, else all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON file of flat key-value defaults; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Estimate the lattice basis and spot width from the double Fourier transform.
    EstimateLattice(EstimateArgs),
    /// Detect atoms and vacancies.
    Detect(DetectArgs),
    /// Generate one synthetic image with ground truth.
    Simulate(SimulateArgs),
    /// Run the full simulation grid.
    Sweep(SweepArgs),
    /// Score a detection result against ground truth.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
pub struct SpectralArgs {
    /// Maximum number of spectral peaks kept.
    #[arg(long)]
    pub max_peaks: Option<usize>,
    /// Comma-separated detection scales in pixels.
    #[arg(long)]
    pub scales: Option<String>,
    /// Peak threshold in MADs above the median detector response.
    #[arg(long)]
    pub mad_k: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the centred spectrum as a CSV matrix.
    #[arg(long)]
    pub spectrum: Option<PathBuf>,
    #[command(flatten)]
    pub spectral: SpectralArgs,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Spot width in pixels; estimated when omitted.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Lattice basis as "p1,p2,q1,q2"; estimated when omitted.
    #[arg(long)]
    pub basis: Option<String>,
    /// Stopping constant; defaults to the cost of one full group.
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub q_mult: Option<f64>,
    #[arg(long)]
    pub no_normalize_marginal: bool,
    /// Maximum number of lattice groups to select.
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub min_gain: Option<f64>,
    /// Border width in pixels left out of the analysis.
    #[arg(long)]
    pub margin: Option<usize>,
    /// Constant background to remove: "none", "auto" (1% quantile of the
    /// lightly blurred image) or a number.
    #[arg(long)]
    pub background: Option<String>,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub overlay: Option<PathBuf>,
    /// Ground-truth atoms (m,n,alpha CSV); false positives are drawn as crosses.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Matching tolerance in pixels for the overlay.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[command(flatten)]
    pub spectral: SpectralArgs,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub noise_var: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, default_value = "sim")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Comma-separated vacancy counts.
    #[arg(long)]
    pub counts: Option<String>,
    /// Comma-separated vacancy modes.
    #[arg(long)]
    pub modes: Option<String>,
    /// Comma-separated noise variances.
    #[arg(long)]
    pub noise: Option<String>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long, default_value = "sweep")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// result.json from `detect`.
    #[arg(long)]
    pub result: PathBuf,
    /// Ground-truth atoms (m,n,alpha CSV).
    #[arg(long)]
    pub truth: PathBuf,
    /// True basis as "p1,p2,q1,q2".
    #[arg(long, default_value = "6,0,0,6")]
    pub truth_basis: String,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Flat per-replicate CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Keys accepted in `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub threads: Option<usize>,
    pub tau: Option<f64>,
    pub basis: Option<String>,
    pub c: Option<f64>,
    pub q_mult: Option<f64>,
    pub normalize_marginal: Option<bool>,
    pub max_iters: Option<usize>,
    pub min_gain: Option<f64>,
    pub margin: Option<usize>,
    pub background: Option<String>,
    pub max_peaks: Option<usize>,
    pub scales: Option<String>,
    pub mad_k: Option<f64>,
    pub tolerance: Option<f64>,
    pub seed: Option<u64>,
    pub count: Option<usize>,
    pub mode: Option<String>,
    pub noise_var: Option<f64>,
    pub reps: Option<usize>,
    pub counts: Option<String>,
    pub modes: Option<String>,
    pub noise: Option<String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                serde_json::from_str(&text).map_err(|e| Error::invalid(format!("config {}: {e}", p.display())))
            }
        }
    }
}

pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',').map(|t| t.trim().parse::<T>().map_err(|_| Error::invalid(format!("bad {what} entry '{t}'")))).collect()
}

pub fn parse_basis(s: &str) -> Result<LatticeBasis> {
    let v: Vec<i64> = parse_list(s, "basis")?;
    if v.len() != 4 {
        return Err(Error::invalid(format!("basis needs four integers p1,p2,q1,q2, got '{s}'")));
    }
    LatticeBasis::new([v[0], v[1]], [v[2], v[3]])
}

pub fn parse_background(s: &str) -> Result<Background> {
    match s.trim() {
        "none" => Ok(Background::None),
        "auto" => Ok(Background::Quantile { quantile: AUTO_BACKGROUND_QUANTILE }),
        t => t
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(|value| Background::Constant { value })
            .ok_or_else(|| Error::invalid(format!("background must be none, auto or a number, got '{s}'"))),
    }
}

pub fn parse_modes(s: &str) -> Result<Vec<VacancyMode>> {
    s.split(',').map(|t| t.trim().parse()).collect()
}

fn apply_spectral(opts: &mut DetectOptions, a: &SpectralArgs, f: &FileConfig) -> Result<()> {
    if let Some(n) = a.max_peaks.or(f.max_peaks) {
        opts.doh.max_peaks = n;
    }
    if let Some(s) = a.scales.as_deref().or(f.scales.as_deref()) {
        opts.doh.scales = parse_list(s, "scale")?;
    }
    if let Some(k) = a.mad_k.or(f.mad_k) {
        if !(k >= 0.0 && k.is_finite()) {
            return Err(Error::invalid(format!("mad-k must be a nonnegative number, got {k}")));
        }
        opts.doh.mad_k = k;
    }
    Ok(())
}

pub fn estimate_options(a: &EstimateArgs, f: &FileConfig) -> Result<DetectOptions> {
    let mut opts = DetectOptions::default();
    apply_spectral(&mut opts, &a.spectral, f)?;
    Ok(opts)
}

pub fn detect_options(a: &DetectArgs, f: &FileConfig) -> Result<DetectOptions> {
    let mut opts = DetectOptions::default();
    apply_spectral(&mut opts, &a.spectral, f)?;
    opts.tau = a.tau.or(f.tau);
    opts.basis = a.basis.as_deref().or(f.basis.as_deref()).map(parse_basis).transpose()?;
    opts.solver.c = a.c.or(f.c);
    if let Some(q) = a.q_mult.or(f.q_mult) {
        opts.solver.q_mult = q;
    }
    opts.solver.normalize_marginal = !a.no_normalize_marginal && f.normalize_marginal.unwrap_or(true);
    if let Some(n) = a.max_iters.or(f.max_iters) {
        opts.solver.max_iters = n;
    }
    if let Some(g) = a.min_gain.or(f.min_gain) {
        opts.solver.min_gain = g;
    }
    opts.margin = a.margin.or(f.margin).unwrap_or(0);
    if let Some(b) = a.background.as_deref().or(f.background.as_deref()) {
        opts.background = parse_background(b)?;
    }
    opts.solver.validate()?;
    Ok(opts)
}
