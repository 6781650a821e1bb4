//! Scoring detections against ground truth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{AtomMap, Site};
use crate::lattice::LatticeBasis;
use crate::pipeline::{detect, DetectOptions};
use crate::simgen::{derive_seed, make_ground_truth, SimDesign};

pub const DEFAULT_TOLERANCE: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub fp: usize,
    pub fn_: usize,
    /// `(truth, detected)` pairs.
    pub pairs: Vec<(Site, Site)>,
}

impl MatchResult {
    pub fn matched(&self) -> usize {
        self.pairs.len()
    }
}

/// Greedy one-to-one matching of pairs within `tol`, closest first.
pub fn match_atoms(truth: &AtomMap, detected: &AtomMap, tol: f64) -> Result<MatchResult> {
    if !(tol >= 0.0) {
        return Err(Error::invalid(format!("tolerance must be nonnegative, got {tol}")));
    }
    let mut cands: Vec<(f64, Site, Site)> = Vec::new();
    for t in truth.sites() {
        for d in detected.sites() {
            let dist = t.distance(d);
            if dist <= tol {
                cands.push((dist, t, d));
            }
        }
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_t = std::collections::BTreeSet::new();
    let mut used_d = std::collections::BTreeSet::new();
    let mut pairs = Vec::new();
    for (_, t, d) in cands {
        if !used_t.contains(&t) && !used_d.contains(&d) {
            used_t.insert(t);
            used_d.insert(d);
            pairs.push((t, d));
        }
    }
    Ok(MatchResult { fp: detected.len() - pairs.len(), fn_: truth.len() - pairs.len(), pairs })
}

fn dist(a: [i64; 2], b: [i64; 2]) -> f64 {
    ((a[0] - b[0]) as f64).hypot((a[1] - b[1]) as f64)
}

/// `min ‖p̂′ − p‖ + ‖q̂′ − q‖` over the eight sign/order variants of `est`.
pub fn basis_bias(est: &LatticeBasis, truth: &LatticeBasis) -> f64 {
    let neg = |v: [i64; 2]| [-v[0], -v[1]];
    let mut best = f64::INFINITY;
    for (a, b) in [(est.p, est.q), (est.q, est.p)] {
        for a2 in [a, neg(a)] {
            for b2 in [b, neg(b)] {
                best = best.min(dist(a2, truth.p) + dist(b2, truth.q));
            }
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub rep: usize,
    pub seed: u64,
    pub truth_atoms: usize,
    pub detected_atoms: usize,
    pub fp: Option<usize>,
    #[serde(rename = "fn")]
    pub fn_: Option<usize>,
    pub matched: Option<usize>,
    pub basis_bias: Option<f64>,
    pub tau_hat: Option<f64>,
    pub iterations: Option<usize>,
    pub signal_variance: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub design: SimDesign,
    pub reps: usize,
    pub tolerance: f64,
    pub failures: usize,
    /// Means over replicates that did not fail.
    pub mean_fp: f64,
    pub mean_fn: f64,
    pub mean_matched: f64,
    pub mean_basis_bias: f64,
    pub rows: Vec<ReplicateRow>,
}

/// Scores one detection against one ground truth.
pub fn score(
    truth: &AtomMap,
    detected: &AtomMap,
    truth_basis: &LatticeBasis,
    est_basis: &LatticeBasis,
    tol: f64,
) -> Result<(MatchResult, f64)> {
    Ok((match_atoms(truth, detected, tol)?, basis_bias(est_basis, truth_basis)))
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Generates `reps` replicates of `design` (replicate `r` uses seed
/// `derive_seed(design.seed, 0, r)`), detects and scores each.
pub fn run_design(design: &SimDesign, reps: usize, opts: &DetectOptions, tol: f64) -> Result<EvalReport> {
    if reps == 0 {
        return Err(Error::invalid("reps must be at least 1"));
    }
    design.validate()?;
    opts.solver.validate()?;
    let rows: Vec<ReplicateRow> =
        (0..reps).into_par_iter().map(|rep| run_replicate(design, rep, opts, tol)).collect::<Result<_>>()?;
    Ok(summarize(design.clone(), tol, rows))
}

fn run_replicate(design: &SimDesign, rep: usize, opts: &DetectOptions, tol: f64) -> Result<ReplicateRow> {
    let seed = derive_seed(design.seed, 0, rep as u64);
    let gt = make_ground_truth(&SimDesign { seed, ..design.clone() })?;
    let mut row = ReplicateRow {
        rep,
        seed,
        truth_atoms: gt.atoms.len(),
        detected_atoms: 0,
        fp: None,
        fn_: None,
        matched: None,
        basis_bias: None,
        tau_hat: None,
        iterations: None,
        signal_variance: Some(gt.signal_variance),
        failure: None,
    };
    match detect(&gt.noisy, opts) {
        Ok(d) => {
            let (m, bias) = score(&gt.atoms, &d.result.atoms, &design.basis, &d.result.basis, tol)?;
            row.detected_atoms = d.result.atoms.len();
            row.fp = Some(m.fp);
            row.fn_ = Some(m.fn_);
            row.matched = Some(m.matched());
            row.basis_bias = Some(bias);
            row.tau_hat = Some(d.result.tau);
            row.iterations = Some(d.result.trace.iterations.len());
        }
        Err(e @ Error::Estimation { .. }) => row.failure = Some(e.to_string()),
        Err(e) => return Err(e),
    }
    Ok(row)
}

pub fn summarize(design: SimDesign, tolerance: f64, rows: Vec<ReplicateRow>) -> EvalReport {
    let ok = || rows.iter().filter(|r| r.failure.is_none());
    EvalReport {
        design,
        reps: rows.len(),
        tolerance,
        failures: rows.len() - ok().count(),
        mean_fp: mean(ok().filter_map(|r| r.fp).map(|v| v as f64)),
        mean_fn: mean(ok().filter_map(|r| r.fn_).map(|v| v as f64)),
        mean_matched: mean(ok().filter_map(|r| r.matched).map(|v| v as f64)),
        mean_basis_bias: mean(ok().filter_map(|r| r.basis_bias)),
        rows,
    }
}

impl EvalReport {
    /// One row per replicate; missing values are empty fields.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("writing to memory cannot fail");
        }
        let bytes = w.into_inner().expect("writing to memory cannot fail");
        String::from_utf8(bytes).expect("csv output is UTF-8")
    }
}
