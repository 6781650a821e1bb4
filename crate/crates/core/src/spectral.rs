//! Lattice basis and spot-width estimation from the double Fourier transform.
//!
//! `𝓕{|𝓕{Y}|²}` is (up to the factor `MN`) the cyclic autocorrelation of
//! `Y`: a real, even function whose peaks sit on the lattice vectors
//! regardless of the lattice offset. Each peak is the autocorrelation of the
//! spot profile, a Gaussian `√2` times wider than the spot.
//!
//! Peaks are found with a scale-normalised determinant-of-Hessian detector,
//! the basis is the shortest non-collinear pair of peak vectors, and the spot
//! width comes from Gaussian fits around the strongest peaks.

use std::cmp::Ordering;

use ndarray::{Array2, Array3};
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::lattice::LatticeBasis;

/// Smallest image side accepted by [`double_fourier`].
pub const MIN_SIDE: usize = 8;

/// Default detection scales in pixels.
pub const DEFAULT_SCALES: [f64; 5] = [1.0, 1.4, 2.0, 2.8, 4.0];

/// Double Fourier transform, DC-centred.
///
/// Stores the signed real transform. The imaginary part vanishes because the
/// input `|𝓕{Y}|²` is real and even; keeping the sign lets the detector tell
/// lattice peaks from the negative lobes that mean removal creates between them.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    values: Array2<f64>,
}

impl Spectrum {
    /// Wraps an already centred array (centre at `(⌊M/2⌋, ⌊N/2⌋)`, 0-based).
    pub fn from_centered(values: Array2<f64>) -> Result<Self> {
        let (rows, cols) = values.dim();
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("empty spectrum"));
        }
        Ok(Spectrum { values })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// 0-based array index of zero frequency.
    pub fn center(&self) -> (usize, usize) {
        let (r, c) = self.dims();
        (r / 2, c / 2)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn magnitudes(&self) -> Array2<f64> {
        self.values.mapv(f64::abs)
    }

    /// Value at integer offset `(dx, dy)` from the centre, wrapping cyclically.
    pub fn at_offset(&self, dx: i64, dy: i64) -> f64 {
        let (rows, cols) = self.dims();
        let (cr, cc) = self.center();
        let i = (cr as i64 + dx).rem_euclid(rows as i64) as usize;
        let j = (cc as i64 + dy).rem_euclid(cols as i64) as usize;
        self.values[[i, j]]
    }

    pub fn scaled(&self, k: f64) -> Spectrum {
        Spectrum { values: &self.values * k }
    }
}

fn fft2(data: &mut Array2<Complex64>, planner: &mut FftPlanner<f64>) {
    let (rows, cols) = data.dim();
    let row_fft = planner.plan_fft_forward(cols);
    for mut row in data.rows_mut() {
        let mut buf: Vec<Complex64> = row.to_vec();
        row_fft.process(&mut buf);
        row.iter_mut().zip(buf).for_each(|(d, v)| *d = v);
    }
    let col_fft = planner.plan_fft_forward(rows);
    for mut col in data.columns_mut() {
        let mut buf: Vec<Complex64> = col.to_vec();
        col_fft.process(&mut buf);
        col.iter_mut().zip(buf).for_each(|(d, v)| *d = v);
    }
}

/// `𝓕{|𝓕{Y − mean(Y)}|²}`, centred.
pub fn double_fourier(y: &Image) -> Result<Spectrum> {
    let (rows, cols) = y.dims();
    if rows < MIN_SIDE || cols < MIN_SIDE {
        return Err(Error::invalid(format!("image must be at least {MIN_SIDE}x{MIN_SIDE}, got {rows}x{cols}")));
    }
    let mean = y.mean();
    let mut planner = FftPlanner::new();
    let mut data = y.pixels().mapv(|v| Complex64::new(v - mean, 0.0));
    fft2(&mut data, &mut planner);
    data.mapv_inplace(|z| Complex64::new(z.norm_sqr(), 0.0));
    fft2(&mut data, &mut planner);

    let (cr, cc) = (rows / 2, cols / 2);
    let mut values = Array2::zeros((rows, cols));
    for ((i, j), z) in data.indexed_iter() {
        values[[(i + cr) % rows, (j + cc) % cols]] = z.re;
    }
    Ok(Spectrum { values })
}

/// A detected spectral peak. `location` is `(row, col)` offset from the centre.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub location: [f64; 2],
    pub scale: f64,
    pub strength: f64,
    /// Spectrum value at `location`.
    pub amplitude: f64,
}

/// Knobs of the determinant-of-Hessian detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DohParams {
    pub scales: Vec<f64>,
    pub max_peaks: usize,
    /// Threshold is `median + mad_k · MAD` of the responses in the search window.
    pub mad_k: f64,
    /// Peaks within this radius of the centre are the DC term and dropped.
    pub dc_radius: f64,
    /// Search window half-width as a fraction of `min(M, N)`.
    pub window_frac: f64,
}

impl Default for DohParams {
    fn default() -> Self {
        DohParams { scales: DEFAULT_SCALES.to_vec(), max_peaks: 24, mad_k: 5.0, dc_radius: 2.0, window_frac: 1.0 / 3.0 }
    }
}

/// Cyclic separable Gaussian blur.
pub(crate) fn blur_periodic(src: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let radius = (4.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.into_iter().map(|k| k / norm).collect();
    let (rows, cols) = src.dim();

    let mut tmp = Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for (t, k) in kernel.iter().enumerate() {
                let jj = (j as i64 + t as i64 - radius).rem_euclid(cols as i64) as usize;
                acc += k * src[[i, jj]];
            }
            tmp[[i, j]] = acc;
        }
    }
    let mut out = Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for (t, k) in kernel.iter().enumerate() {
                let ii = (i as i64 + t as i64 - radius).rem_euclid(rows as i64) as usize;
                acc += k * tmp[[ii, j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

/// Scale-normalised `σ⁴ det H` and the Laplacian sign for one scale.
fn doh_layer(src: &Array2<f64>, sigma: f64) -> (Array2<f64>, Array2<bool>) {
    let l = blur_periodic(src, sigma);
    let (rows, cols) = l.dim();
    let at = |i: usize, di: i64, j: usize, dj: i64| {
        let ii = (i as i64 + di).rem_euclid(rows as i64) as usize;
        let jj = (j as i64 + dj).rem_euclid(cols as i64) as usize;
        l[[ii, jj]]
    };
    let s4 = sigma.powi(4);
    let mut det = Array2::zeros((rows, cols));
    let mut bright = Array2::from_elem((rows, cols), false);
    for i in 0..rows {
        for j in 0..cols {
            let c = l[[i, j]];
            let lxx = at(i, 1, j, 0) - 2.0 * c + at(i, -1, j, 0);
            let lyy = at(i, 0, j, 1) - 2.0 * c + at(i, 0, j, -1);
            let lxy = (at(i, 1, j, 1) - at(i, 1, j, -1) - at(i, -1, j, 1) + at(i, -1, j, -1)) / 4.0;
            det[[i, j]] = s4 * (lxx * lyy - lxy * lxy);
            bright[[i, j]] = lxx + lyy < 0.0;
        }
    }
    (det, bright)
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Bright blobs of the spectrum, strongest first, using default knobs
/// other than `scales` and `max_peaks`.
pub fn detect_peaks_doh(spectrum: &Spectrum, scales: &[f64], max_peaks: usize) -> Result<Vec<Peak>> {
    let params = DohParams { scales: scales.to_vec(), max_peaks, ..DohParams::default() };
    detect_peaks_doh_with(spectrum, &params)
}

/// Local maxima of the scale-normalised determinant of Hessian over
/// `(space, scale)` with a positive-curvature (bright blob) test, above a
/// median + k·MAD threshold, inside the low-frequency window and outside the
/// DC radius.
pub fn detect_peaks_doh_with(spectrum: &Spectrum, params: &DohParams) -> Result<Vec<Peak>> {
    let scales = &params.scales;
    if scales.is_empty() {
        return Err(Error::invalid("scale list must be nonempty"));
    }
    if scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) || scales.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("scales must be positive and strictly ascending"));
    }
    let (rows, cols) = spectrum.dims();
    let (cr, cc) = spectrum.center();
    let half = (rows.min(cols) as f64 * params.window_frac).floor() as i64;

    let layers: Vec<(Array2<f64>, Array2<bool>)> = scales.iter().map(|&s| doh_layer(spectrum.values(), s)).collect();
    let ns = scales.len();
    let mut det = Array3::zeros((ns, rows, cols));
    for (k, (d, _)) in layers.iter().enumerate() {
        det.index_axis_mut(ndarray::Axis(0), k).assign(d);
    }

    let in_window = |i: usize, j: usize| {
        let dx = i as i64 - cr as i64;
        let dy = j as i64 - cc as i64;
        dx.abs() <= half && dy.abs() <= half
    };

    let mut pool: Vec<f64> = Vec::new();
    for k in 0..ns {
        for i in 0..rows {
            for j in 0..cols {
                if in_window(i, j) {
                    pool.push(det[[k, i, j]]);
                }
            }
        }
    }
    let med = median(&mut pool.clone());
    let mut dev: Vec<f64> = pool.iter().map(|v| (v - med).abs()).collect();
    let mad = median(&mut dev);
    let threshold = med + params.mad_k * mad;

    let mut peaks = Vec::new();
    for k in 0..ns {
        for i in 0..rows {
            for j in 0..cols {
                if !in_window(i, j) {
                    continue;
                }
                let v = det[[k, i, j]];
                if !(v > threshold && v > 0.0) || !layers[k].1[[i, j]] {
                    continue;
                }
                let dx = i as f64 - cr as f64;
                let dy = j as f64 - cc as f64;
                if dx.hypot(dy) <= params.dc_radius {
                    continue;
                }
                let mut is_max = true;
                'nb: for dk in -1i64..=1 {
                    let kk = k as i64 + dk;
                    if kk < 0 || kk >= ns as i64 {
                        continue;
                    }
                    for di in -1i64..=1 {
                        for dj in -1i64..=1 {
                            if dk == 0 && di == 0 && dj == 0 {
                                continue;
                            }
                            let ii = (i as i64 + di).rem_euclid(rows as i64) as usize;
                            let jj = (j as i64 + dj).rem_euclid(cols as i64) as usize;
                            if det[[kk as usize, ii, jj]] > v {
                                is_max = false;
                                break 'nb;
                            }
                        }
                    }
                }
                if is_max {
                    peaks.push(Peak {
                        location: [dx, dy],
                        scale: scales[k],
                        strength: v,
                        amplitude: spectrum.values()[[i, j]],
                    });
                }
            }
        }
    }
    // Equal responses at adjacent scales can both survive; keep one per location.
    peaks.sort_by(peak_order);
    let mut seen = std::collections::HashSet::new();
    peaks.retain(|p| seen.insert((p.location[0] as i64, p.location[1] as i64)));
    peaks.sort_by(amplitude_order);
    peaks.truncate(params.max_peaks);
    Ok(peaks)
}

/// Strength descending, then location lexicographic.
fn peak_order(a: &Peak, b: &Peak) -> Ordering {
    b.strength
        .total_cmp(&a.strength)
        .then(a.location[0].total_cmp(&b.location[0]))
        .then(a.location[1].total_cmp(&b.location[1]))
}

/// Amplitude descending, then location lexicographic.
fn amplitude_order(a: &Peak, b: &Peak) -> Ordering {
    b.amplitude
        .total_cmp(&a.amplitude)
        .then(a.location[0].total_cmp(&b.location[0]))
        .then(a.location[1].total_cmp(&b.location[1]))
}

fn upper_half(v: [i64; 2]) -> [i64; 2] {
    if v[1] > 0 || (v[1] == 0 && v[0] > 0) {
        v
    } else {
        [-v[0], -v[1]]
    }
}

/// Shortest rounded peak vector `p̂`, then the shortest `q̂` with
/// `|det(p̂, q̂)| ≥ 0.25 ‖p̂‖‖q̂‖`; reduced and canonicalised.
pub fn estimate_basis(peaks: &[Peak]) -> Result<LatticeBasis> {
    let mut candidates: Vec<[i64; 2]> = Vec::new();
    for p in peaks {
        let v = upper_half([p.location[0].round() as i64, p.location[1].round() as i64]);
        if v != [0, 0] && !candidates.contains(&v) {
            candidates.push(v);
        }
    }
    // Stable: equal lengths keep the caller's (strength) order.
    candidates.sort_by_key(|v| v[0] * v[0] + v[1] * v[1]);
    let Some(&p) = candidates.first() else {
        return Err(Error::estimation("no peaks outside the DC region", peaks.to_vec()));
    };
    let pn = ((p[0] * p[0] + p[1] * p[1]) as f64).sqrt();
    let q = candidates[1..].iter().copied().find(|c| {
        let cn = ((c[0] * c[0] + c[1] * c[1]) as f64).sqrt();
        ((p[0] * c[1] - p[1] * c[0]).abs() as f64) >= 0.25 * pn * cn
    });
    match q {
        Some(q) => Ok(LatticeBasis::new(p, q)?.reduced()),
        None => Err(Error::estimation("fewer than two non-collinear peaks", peaks.to_vec())),
    }
}

/// Axis-aligned Gaussian `a·exp(−dx²/wx² − dy²/wy²) + b` fitted to a window.
#[derive(Clone, Copy, Debug, PartialEq)]
struct GaussFit {
    amplitude: f64,
    wx: f64,
    wy: f64,
    rss: f64,
}

/// For fixed widths the model is linear in `(a, b)`; solve that 2×2 system.
fn fit_linear(window: &[(f64, f64, f64)], wx: f64, wy: f64) -> Option<GaussFit> {
    let (mut sgg, mut sg, mut s1, mut sgv, mut sv, mut svv) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for &(dx, dy, v) in window {
        let g = (-(dx * dx) / (wx * wx) - (dy * dy) / (wy * wy)).exp();
        sgg += g * g;
        sg += g;
        s1 += 1.0;
        sgv += g * v;
        sv += v;
        svv += v * v;
    }
    let det = sgg * s1 - sg * sg;
    if det.abs() <= 1e-12 * sgg * s1 {
        return None;
    }
    let a = (sgv * s1 - sg * sv) / det;
    let b = (sgg * sv - sg * sgv) / det;
    // RSS = Σv² − 2(a Σgv + b Σv) + a²Σg² + 2ab Σg + b² n
    let rss = svv - 2.0 * (a * sgv + b * sv) + a * a * sgg + 2.0 * a * b * sg + b * b * s1;
    Some(GaussFit { amplitude: a, wx, wy, rss })
}

const MIN_WIDTH: f64 = 0.3;

fn fit_gaussian(window: &[(f64, f64, f64)], max_width: f64) -> Option<GaussFit> {
    // Coarse log grid, then two rounds of local refinement.
    let steps = 48usize;
    let lo = MIN_WIDTH.ln();
    let hi = max_width.ln();
    let grid = |i: usize| (lo + (hi - lo) * i as f64 / (steps - 1) as f64).exp();
    let mut best: Option<GaussFit> = None;
    let consider = |f: Option<GaussFit>, best: &mut Option<GaussFit>| {
        if let Some(f) = f {
            if f.rss.is_finite() && best.is_none_or(|b| f.rss < b.rss) {
                *best = Some(f);
            }
        }
    };
    for i in 0..steps {
        for j in 0..steps {
            consider(fit_linear(window, grid(i), grid(j)), &mut best);
        }
    }
    let mut step = (hi - lo) / (steps - 1) as f64;
    for _ in 0..3 {
        let centre = best?;
        let (cx, cy) = (centre.wx.ln(), centre.wy.ln());
        for i in -10i32..=10 {
            for j in -10i32..=10 {
                let wx = (cx + step * i as f64 / 10.0).exp().clamp(MIN_WIDTH, max_width);
                let wy = (cy + step * j as f64 / 10.0).exp().clamp(MIN_WIDTH, max_width);
                consider(fit_linear(window, wx, wy), &mut best);
            }
        }
        step /= 5.0;
    }
    let fit = best?;
    let at_edge = |w: f64| w <= MIN_WIDTH * 1.001 || w >= max_width * 0.999;
    if fit.amplitude <= 0.0 || at_edge(fit.wx) || at_edge(fit.wy) {
        return None;
    }
    Some(fit)
}

/// Spot width `τ ≈ τ̃ / √2`, where `τ̃` is the median Gaussian width fitted
/// around the five strongest peaks.
///
/// Window radius is `3 ×` the median detection scale, capped at half the
/// distance to the nearest other peak (or the DC term) so neighbouring peaks
/// stay out of the fit.
pub fn estimate_tau(spectrum: &Spectrum, peaks: &[Peak]) -> Result<f64> {
    if peaks.is_empty() {
        return Err(Error::estimation("no peaks to fit", Vec::new()));
    }
    let mut sorted = peaks.to_vec();
    sorted.sort_by(peak_order);
    let mut scales: Vec<f64> = sorted.iter().map(|p| p.scale).collect();
    let base_radius = (3.0 * median(&mut scales)).round().max(1.0) as i64;

    // Every peak has a centrosymmetric twin even if it was not reported.
    let mut others: Vec<[f64; 2]> = vec![[0.0, 0.0]];
    for p in peaks {
        others.push(p.location);
        others.push([-p.location[0], -p.location[1]]);
    }

    let mut widths = Vec::new();
    for peak in sorted.iter().take(5) {
        let cx = peak.location[0].round() as i64;
        let cy = peak.location[1].round() as i64;
        let nearest = others
            .iter()
            .map(|o| (o[0] - cx as f64).hypot(o[1] - cy as f64))
            .filter(|d| *d > 0.5)
            .fold(f64::INFINITY, f64::min);
        let cap = (nearest / 2.0).floor() as i64;
        let r = base_radius.min(cap.max(1));
        let mut window = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
        for dx in -r..=r {
            for dy in -r..=r {
                window.push((dx as f64, dy as f64, spectrum.at_offset(cx + dx, cy + dy)));
            }
        }
        if let Some(fit) = fit_gaussian(&window, 4.0 * r as f64) {
            widths.push((fit.wx * fit.wy).sqrt());
        }
    }
    if widths.is_empty() {
        return Err(Error::estimation("Gaussian fit failed on every peak", peaks.to_vec()));
    }
    Ok(median(&mut widths) / std::f64::consts::SQRT_2)
}

/// Everything `estimate-lattice` reports.
#[derive(Clone, Debug)]
pub struct LatticeEstimate {
    pub basis: LatticeBasis,
    pub tau: f64,
    pub peaks: Vec<Peak>,
}

/// Double Fourier transform, peak detection, basis and width estimation.
pub fn estimate_lattice(y: &Image, params: &DohParams) -> Result<(LatticeEstimate, Spectrum)> {
    let spectrum = double_fourier(y)?;
    let peaks = detect_peaks_doh_with(&spectrum, params)?;
    let basis = estimate_basis(&peaks)?;
    let tau = estimate_tau(&spectrum, &peaks)?;
    Ok((LatticeEstimate { basis, tau, peaks }, spectrum))
}
