//! End-to-end detection: lattice estimation, group catalog, solver.

use ndarray::s;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{AtomMap, DesignVectors, Image, Site};
use crate::lattice::{enumerate_groups, LatticeBasis};
use crate::solver::{gomp_thresholding, DetectionResult, SolverConfig};
use crate::spectral::{blur_periodic, estimate_lattice, DohParams, LatticeEstimate};

/// Constant background removed before detection. The image model has no
/// intercept, so an offset `b` raises every marginal coefficient by about `2b`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Background {
    #[default]
    None,
    /// Subtract the `quantile` of the image blurred at 1.5 px.
    Quantile { quantile: f64 },
    /// Subtract a fixed value.
    Constant { value: f64 },
}

pub const AUTO_BACKGROUND_QUANTILE: f64 = 0.01;

impl Background {
    pub fn estimate(&self, y: &Image) -> Result<f64> {
        match *self {
            Background::None => Ok(0.0),
            Background::Constant { value } if value.is_finite() => Ok(value),
            Background::Constant { value } => Err(Error::invalid(format!("background {value} is not finite"))),
            Background::Quantile { quantile } => {
                if !(0.0..=1.0).contains(&quantile) {
                    return Err(Error::invalid(format!("background quantile {quantile} outside [0, 1]")));
                }
                let mut v: Vec<f64> = blur_periodic(y.pixels(), 1.5).into_iter().collect();
                v.sort_by(f64::total_cmp);
                let k = ((v.len() - 1) as f64 * quantile).round() as usize;
                Ok(v[k])
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectOptions {
    /// Known basis; estimated from the spectrum when absent.
    pub basis: Option<LatticeBasis>,
    /// Known spot width; estimated when absent.
    pub tau: Option<f64>,
    pub doh: DohParams,
    pub solver: SolverConfig,
    /// Border width in pixels excluded from analysis.
    pub margin: usize,
    pub background: Background,
}

#[derive(Clone, Debug)]
pub struct Detection {
    /// Result in full-image coordinates.
    pub result: DetectionResult,
    /// Value subtracted from every pixel.
    pub background: f64,
    pub estimate: Option<LatticeEstimate>,
}

/// Runs the full pipeline on `y`.
pub fn detect(y: &Image, opts: &DetectOptions) -> Result<Detection> {
    opts.solver.validate()?;
    if let Some(tau) = opts.tau {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::invalid(format!("tau must be positive, got {tau}")));
        }
    }
    let (rows, cols) = y.dims();
    let k = opts.margin;
    if 2 * k >= rows || 2 * k >= cols {
        return Err(Error::invalid(format!("margin {k} leaves nothing of a {rows}x{cols} image")));
    }
    let window = y.pixels().slice(s![k..rows - k, k..cols - k]).to_owned();
    let cropped = Image::new(window)?;
    let background = opts.background.estimate(&cropped)?;
    let work = if background == 0.0 { cropped } else { Image::new(cropped.pixels() - background)? };
    let work = &work;

    let estimate =
        if opts.basis.is_none() || opts.tau.is_none() { Some(estimate_lattice(work, &opts.doh)?.0) } else { None };
    let basis = match (opts.basis, &estimate) {
        (Some(b), _) => b,
        (None, Some(e)) => e.basis,
        (None, None) => unreachable!(),
    };
    let tau = match (opts.tau, &estimate) {
        (Some(t), _) => t,
        (None, Some(e)) => e.tau,
        (None, None) => unreachable!(),
    };

    let (wr, wc) = work.dims();
    let design = DesignVectors::build(tau * tau, wr, wc)?;
    let catalog = enumerate_groups(&basis, wr, wc)?;
    let mut result = gomp_thresholding(work, &design, &catalog, &opts.solver)?;
    if k > 0 {
        result.atoms =
            AtomMap::from_entries(rows, cols, result.atoms.iter().map(|(s, a)| (Site::new(s.m + k, s.n + k), a)))?;
    }
    Ok(Detection { result, background, estimate })
}
