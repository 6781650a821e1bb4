//! Forward model: separable Gaussian spots on a pixel grid.
//!
//! A pixel `(i, j)` of the noiseless image is
//! `Σ α_{m,n} exp(-(i-m)²/τ²) exp(-(j-n)²/τ²)`, i.e. `U A Vᵀ` with the design
//! columns `u_m`, `v_n` held by [`DesignVectors`]. Note that `τ²` is the whole
//! denominator of the exponent (no factor of two).

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 1-based pixel site: `m` is the row, `n` the column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Site {
    pub m: usize,
    pub n: usize,
}

impl Site {
    pub const fn new(m: usize, n: usize) -> Self {
        Site { m, n }
    }

    pub fn as_i64(self) -> [i64; 2] {
        [self.m as i64, self.n as i64]
    }

    /// Converts signed coordinates back to a site if they fall inside `rows × cols`.
    pub fn from_i64(x: [i64; 2], rows: usize, cols: usize) -> Option<Site> {
        if x[0] >= 1 && x[1] >= 1 && x[0] as usize <= rows && x[1] as usize <= cols {
            Some(Site::new(x[0] as usize, x[1] as usize))
        } else {
            None
        }
    }

    pub fn in_bounds(self, rows: usize, cols: usize) -> bool {
        self.m >= 1 && self.n >= 1 && self.m <= rows && self.n <= cols
    }

    pub fn distance(self, other: Site) -> f64 {
        let dm = self.m as f64 - other.m as f64;
        let dn = self.n as f64 - other.n as f64;
        dm.hypot(dn)
    }
}

impl std::fmt::Display for Site {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.m, self.n)
    }
}

/// Dense `M × N` intensity image. Pixel `(m, n)` lives at array index `[m-1, n-1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pixels: Array2<f64>,
}

impl Image {
    pub fn new(pixels: Array2<f64>) -> Result<Self> {
        let (rows, cols) = pixels.dim();
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("image must have at least one row and one column"));
        }
        if let Some(bad) = pixels.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite pixel value {bad}")));
        }
        Ok(Image { pixels })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Image::new(Array2::zeros((rows, cols)))
    }

    pub fn rows(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn cols(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.pixels.dim()
    }

    pub fn pixels(&self) -> &Array2<f64> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array2<f64> {
        self.pixels
    }

    pub fn at(&self, site: Site) -> f64 {
        self.pixels[[site.m - 1, site.n - 1]]
    }

    /// Squared Frobenius norm.
    pub fn norm2(&self) -> f64 {
        self.pixels.iter().map(|v| v * v).sum()
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    /// Population variance of the pixel values.
    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.pixels.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / self.pixels.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.pixels.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Gaussian point spread width, stored as the squared width `τ²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Psf {
    tau2: f64,
}

impl Psf {
    pub fn new(tau2: f64) -> Result<Self> {
        if !(tau2 > 0.0 && tau2.is_finite()) {
            return Err(Error::invalid(format!("tau2 must be positive, got {tau2}")));
        }
        Ok(Psf { tau2 })
    }

    pub fn from_tau(tau: f64) -> Result<Self> {
        Psf::new(tau * tau)
    }

    pub fn tau2(&self) -> f64 {
        self.tau2
    }

    pub fn tau(&self) -> f64 {
        self.tau2.sqrt()
    }
}

/// The Gaussian design matrices `U` (`M × M`) and `V` (`N × N`) together with
/// their Gram matrices, which give every inner product between Kronecker
/// columns `v_n ⊗ u_m` without materialising them.
#[derive(Clone, Debug)]
pub struct DesignVectors {
    tau2: f64,
    u: Array2<f64>,
    v: Array2<f64>,
    gram_u: Array2<f64>,
    gram_v: Array2<f64>,
}

fn gaussian_design(tau2: f64, len: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, len), |(i, m)| {
        let d = i as f64 - m as f64;
        (-d * d / tau2).exp()
    })
}

impl DesignVectors {
    pub fn build(tau2: f64, rows: usize, cols: usize) -> Result<Self> {
        let psf = Psf::new(tau2)?;
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("design dimensions must be positive"));
        }
        let u = gaussian_design(psf.tau2(), rows);
        let v = gaussian_design(psf.tau2(), cols);
        let gram_u = u.t().dot(&u);
        let gram_v = v.t().dot(&v);
        Ok(DesignVectors { tau2: psf.tau2(), u, v, gram_u, gram_v })
    }

    pub fn tau2(&self) -> f64 {
        self.tau2
    }

    pub fn rows(&self) -> usize {
        self.u.nrows()
    }

    pub fn cols(&self) -> usize {
        self.v.nrows()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    pub fn u(&self) -> &Array2<f64> {
        &self.u
    }

    pub fn v(&self) -> &Array2<f64> {
        &self.v
    }

    pub fn gram_u(&self) -> &Array2<f64> {
        &self.gram_u
    }

    pub fn gram_v(&self) -> &Array2<f64> {
        &self.gram_v
    }

    /// `‖v_n ⊗ u_m‖² = ‖u_m‖² ‖v_n‖²`.
    pub fn column_norm2(&self, site: Site) -> f64 {
        self.gram_u[[site.m - 1, site.m - 1]] * self.gram_v[[site.n - 1, site.n - 1]]
    }

    /// Inner product of the Kronecker columns for two sites.
    #[inline]
    pub fn column_inner(&self, a: Site, b: Site) -> f64 {
        self.gram_u[[a.m - 1, b.m - 1]] * self.gram_v[[a.n - 1, b.n - 1]]
    }

    /// `Uᵀ Y V`: entry `(m, n)` is `u_mᵀ Y v_n`, the inner product of `vec(Y)`
    /// with the Kronecker column of site `(m, n)`.
    pub fn correlate(&self, y: &Image) -> Result<Array2<f64>> {
        self.check_dims(y.dims())?;
        Ok(self.u.t().dot(y.pixels()).dot(&self.v))
    }

    pub(crate) fn check_dims(&self, dims: (usize, usize)) -> Result<()> {
        if dims != self.dims() {
            return Err(Error::invalid(format!("dimension mismatch: design is {:?}, got {:?}", self.dims(), dims)));
        }
        Ok(())
    }
}

/// Sparse amplitude map `A`: site → `α`. Zero amplitudes are never stored.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct AtomMap {
    rows: usize,
    cols: usize,
    entries: BTreeMap<Site, f64>,
}

impl AtomMap {
    pub fn new(rows: usize, cols: usize) -> Self {
        AtomMap { rows, cols, entries: BTreeMap::new() }
    }

    pub fn from_entries(rows: usize, cols: usize, entries: impl IntoIterator<Item = (Site, f64)>) -> Result<Self> {
        let mut map = AtomMap::new(rows, cols);
        for (site, alpha) in entries {
            if map.entries.contains_key(&site) {
                return Err(Error::invalid(format!("duplicate site {site}")));
            }
            map.insert(site, alpha)?;
        }
        Ok(map)
    }

    /// Collects the nonzero entries of a dense `rows × cols` matrix.
    pub fn from_dense(dense: &Array2<f64>) -> Self {
        let (rows, cols) = dense.dim();
        let entries =
            dense.indexed_iter().filter(|(_, v)| **v != 0.0).map(|((i, j), v)| (Site::new(i + 1, j + 1), *v)).collect();
        AtomMap { rows, cols, entries }
    }

    /// Sets the amplitude at `site`; a zero amplitude removes the entry.
    pub fn insert(&mut self, site: Site, alpha: f64) -> Result<()> {
        if !site.in_bounds(self.rows, self.cols) {
            return Err(Error::invalid(format!("site {site} outside {}x{} grid", self.rows, self.cols)));
        }
        if !alpha.is_finite() {
            return Err(Error::invalid(format!("non-finite amplitude at {site}")));
        }
        if alpha == 0.0 {
            self.entries.remove(&site);
        } else {
            self.entries.insert(site, alpha);
        }
        Ok(())
    }

    pub fn remove(&mut self, site: Site) -> Option<f64> {
        self.entries.remove(&site)
    }

    pub fn get(&self, site: Site) -> f64 {
        self.entries.get(&site).copied().unwrap_or(0.0)
    }

    pub fn contains(&self, site: Site) -> bool {
        self.entries.contains_key(&site)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Number of nonzero entries, `‖A‖₀`.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in lexicographic site order.
    pub fn iter(&self) -> impl Iterator<Item = (Site, f64)> + '_ {
        self.entries.iter().map(|(s, a)| (*s, *a))
    }

    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        self.entries.keys().copied()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut dense = Array2::zeros((self.rows, self.cols));
        for (s, a) in self.iter() {
            dense[[s.m - 1, s.n - 1]] = a;
        }
        dense
    }
}

/// Noiseless image `U A Vᵀ`.
pub fn render(atoms: &AtomMap, design: &DesignVectors) -> Result<Image> {
    design.check_dims(atoms.dims())?;
    let (rows, cols) = design.dims();
    // T = A Vᵀ, touching only the occupied rows of A.
    let mut t = Array2::<f64>::zeros((rows, cols));
    for (site, alpha) in atoms.iter() {
        let v_n = design.v().column(site.n - 1);
        let mut row = t.row_mut(site.m - 1);
        row.scaled_add(alpha, &v_n);
    }
    Image::new(design.u().dot(&t))
}

/// Square loss `‖Y − U A Vᵀ‖²_F`.
pub fn loss(atoms: &AtomMap, design: &DesignVectors, y: &Image) -> Result<f64> {
    design.check_dims(y.dims())?;
    let fitted = render(atoms, design)?;
    Ok(y.pixels().iter().zip(fitted.pixels().iter()).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Adds i.i.d. zero-mean Gaussian noise of variance `sigma2`, deterministic in `seed`.
pub fn add_noise(y: &Image, sigma2: f64, seed: u64) -> Result<Image> {
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::invalid(format!("noise variance must be nonnegative, got {sigma2}")));
    }
    if sigma2 == 0.0 {
        return Ok(y.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma2.sqrt()).map_err(|e| Error::invalid(e.to_string()))?;
    let mut pixels = y.pixels().clone();
    for v in pixels.iter_mut() {
        *v += normal.sample(&mut rng);
    }
    Image::new(pixels)
}
