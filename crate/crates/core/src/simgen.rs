//! Synthetic lattice images with vacancies and Gaussian noise.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{add_noise, render, AtomMap, DesignVectors, Image, Site};
use crate::lattice::LatticeBasis;

/// Spot width of the default design, chosen so the normalised clean image
/// has signal variance close to 0.075.
pub const DEFAULT_TAU: f64 = 2.42;

/// Nominal signal variance of the default design, used for SNR labels.
pub const DEFAULT_SIGNAL_VARIANCE: f64 = 0.075;

pub const VACANCY_COUNTS: [usize; 5] = [5, 10, 15, 20, 25];

pub const NOISE_GRID: [f64; 11] = [0.05, 0.10, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.95];

/// Where vacancies are drawn from, in grid coordinates `(i, j)` with `i` the
/// row and `j` the column index of the atom grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VacancyMode {
    /// Any grid site.
    Uniform,
    /// Bottom-right 6×6 block.
    Mode1,
    /// Central 6×6 block.
    Mode2,
    /// Leftmost three columns.
    Mode3,
    /// Main-diagonal band `|i − j| ≤ 1`.
    Mode4,
}

impl VacancyMode {
    pub const ALL: [VacancyMode; 5] =
        [VacancyMode::Uniform, VacancyMode::Mode1, VacancyMode::Mode2, VacancyMode::Mode3, VacancyMode::Mode4];

    pub fn name(self) -> &'static str {
        match self {
            VacancyMode::Uniform => "uniform",
            VacancyMode::Mode1 => "mode1",
            VacancyMode::Mode2 => "mode2",
            VacancyMode::Mode3 => "mode3",
            VacancyMode::Mode4 => "mode4",
        }
    }

    /// Whether grid cell `(i, j)` of a `gr × gc` grid is eligible.
    fn eligible(self, i: usize, j: usize, gr: usize, gc: usize) -> bool {
        let block = |k: usize, len: usize| {
            let w = len.min(6);
            let start = (len - w) / 2;
            (start..start + w).contains(&k)
        };
        match self {
            VacancyMode::Uniform => true,
            VacancyMode::Mode1 => i + 6 >= gr && j + 6 >= gc,
            VacancyMode::Mode2 => block(i, gr) && block(j, gc),
            VacancyMode::Mode3 => j < 3,
            VacancyMode::Mode4 => i.abs_diff(j) <= 1,
        }
    }
}

impl std::fmt::Display for VacancyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for VacancyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VacancyMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown vacancy mode '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimDesign {
    pub rows: usize,
    pub cols: usize,
    pub basis: LatticeBasis,
    /// 1-based site of grid cell `(0, 0)`.
    pub origin: [i64; 2],
    /// Number of grid cells along `p` and along `q`.
    pub grid: [usize; 2],
    pub tau: f64,
    pub vacancy_count: usize,
    pub vacancy_mode: VacancyMode,
    pub noise_var: f64,
    pub seed: u64,
}

impl Default for SimDesign {
    fn default() -> Self {
        SimDesign {
            rows: 75,
            cols: 75,
            basis: LatticeBasis { p: [6, 0], q: [0, 6] },
            origin: [5, 5],
            grid: [11, 11],
            tau: DEFAULT_TAU,
            vacancy_count: 0,
            vacancy_mode: VacancyMode::Uniform,
            noise_var: 0.0,
            seed: 0,
        }
    }
}

impl SimDesign {
    /// Atom sites in grid order: `lattice[i * grid[1] + j] = origin + i·p + j·q`.
    pub fn lattice_sites(&self) -> Result<Vec<Site>> {
        if self.basis.det() == 0 {
            return Err(Error::invalid("degenerate basis"));
        }
        let mut out = Vec::with_capacity(self.grid[0] * self.grid[1]);
        for i in 0..self.grid[0] as i64 {
            for j in 0..self.grid[1] as i64 {
                let x = [
                    self.origin[0] + i * self.basis.p[0] + j * self.basis.q[0],
                    self.origin[1] + i * self.basis.p[1] + j * self.basis.q[1],
                ];
                let site = Site::from_i64(x, self.rows, self.cols)
                    .ok_or_else(|| Error::invalid(format!("grid cell ({i},{j}) at {x:?} is outside the image")))?;
                out.push(site);
            }
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(Error::invalid("noise variance must be nonnegative"));
        }
        let n = self.lattice_sites()?.len();
        if n == 0 {
            return Err(Error::invalid("empty atom grid"));
        }
        if self.vacancy_count >= n {
            return Err(Error::invalid(format!(
                "vacancy count {} must be below the {n} lattice sites",
                self.vacancy_count
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub design: SimDesign,
    /// Amplitudes of the normalised clean image.
    pub atoms: AtomMap,
    pub vacancies: Vec<Site>,
    pub clean: Image,
    pub noisy: Image,
    pub signal_variance: f64,
}

/// SplitMix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream seed for `(master, design, rep)`.
pub fn derive_seed(master: u64, design_index: u64, rep_index: u64) -> u64 {
    mix(mix(mix(master) ^ design_index) ^ rep_index)
}

/// `count` distinct sites drawn from the mode's eligible region, returned in
/// grid order.
pub fn vacancy_sites(
    mode: VacancyMode,
    count: usize,
    grid: [usize; 2],
    all_sites: &[Site],
    seed: u64,
) -> Result<Vec<Site>> {
    if all_sites.len() != grid[0] * grid[1] {
        return Err(Error::invalid("site list does not match grid extent"));
    }
    let eligible: Vec<usize> =
        (0..all_sites.len()).filter(|&k| mode.eligible(k / grid[1], k % grid[1], grid[0], grid[1])).collect();
    if count > eligible.len() {
        return Err(Error::invalid(format!(
            "{count} vacancies requested but {mode} has {} eligible sites",
            eligible.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = sample(&mut rng, eligible.len(), count).into_iter().map(|k| eligible[k]).collect();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|k| all_sites[k]).collect())
}

/// Renders the design, normalises the clean image to `[0, 1]` and adds noise.
///
/// The atom amplitudes in the result are scaled by the same factor as the
/// image; the normalisation offset is not representable in the model.
pub fn make_ground_truth(design: &SimDesign) -> Result<GroundTruth> {
    design.validate()?;
    let all = design.lattice_sites()?;
    let vacancies =
        vacancy_sites(design.vacancy_mode, design.vacancy_count, design.grid, &all, derive_seed(design.seed, 0, 0))?;
    let mut atoms = AtomMap::new(design.rows, design.cols);
    for s in &all {
        if vacancies.binary_search(s).is_err() {
            atoms.insert(*s, 1.0)?;
        }
    }
    let dv = DesignVectors::build(design.tau * design.tau, design.rows, design.cols)?;
    let raw = render(&atoms, &dv)?;
    let (lo, hi) = raw.min_max();
    let span = hi - lo;
    if !(span > 0.0) {
        return Err(Error::Numerical("rendered image is constant".into()));
    }
    let clean = Image::new(raw.pixels().mapv(|v| (v - lo) / span))?;
    let atoms = AtomMap::from_entries(design.rows, design.cols, atoms.iter().map(|(s, a)| (s, a / span)))?;
    let noisy = add_noise(&clean, design.noise_var, derive_seed(design.seed, 0, 1))?;
    Ok(GroundTruth { design: design.clone(), signal_variance: clean.variance(), atoms, vacancies, clean, noisy })
}

/// `10 log10(sig_var) − 10 log10(noise_var)`.
pub fn snr_db(sig_var: f64, noise_var: f64) -> Result<f64> {
    if !(sig_var > 0.0 && noise_var > 0.0 && sig_var.is_finite() && noise_var.is_finite()) {
        return Err(Error::invalid("variances must be positive and finite"));
    }
    Ok(10.0 * sig_var.log10() - 10.0 * noise_var.log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeSet;

    #[test]
    fn default_geometry() {
        let d = SimDesign::default();
        let sites = d.lattice_sites().unwrap();
        assert_eq!(sites.len(), 121);
        assert_eq!(sites[0], Site::new(5, 5));
        assert_eq!(sites[120], Site::new(65, 65));
        assert_eq!(sites[1], Site::new(5, 11));
    }

    #[test]
    fn no_vacancies() {
        let gt = make_ground_truth(&SimDesign::default()).unwrap();
        assert_eq!(gt.atoms.len(), 121);
        assert!(gt.vacancies.is_empty());
        let (lo, hi) = gt.clean.min_max();
        assert_abs_diff_eq!(lo, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 1.0, epsilon = 1e-12);
        assert_eq!(gt.clean, gt.noisy);
    }

    #[test]
    fn signal_variance_near_target() {
        let gt = make_ground_truth(&SimDesign::default()).unwrap();
        assert!((0.05..=0.10).contains(&gt.signal_variance), "{}", gt.signal_variance);
        assert!((gt.signal_variance - 0.075).abs() < 0.002, "{}", gt.signal_variance);
    }

    #[test]
    fn vacancies_partition_lattice() {
        for mode in VacancyMode::ALL {
            for count in [0, 5, 25] {
                let d = SimDesign { vacancy_count: count, vacancy_mode: mode, seed: 11, ..Default::default() };
                let gt = make_ground_truth(&d).unwrap();
                let all: BTreeSet<Site> = d.lattice_sites().unwrap().into_iter().collect();
                let vac: BTreeSet<Site> = gt.vacancies.iter().copied().collect();
                let atoms: BTreeSet<Site> = gt.atoms.sites().collect();
                assert_eq!(vac.len(), count);
                assert!(vac.is_disjoint(&atoms));
                assert_eq!(&vac | &atoms, all);
            }
        }
    }

    #[test]
    fn mode_regions() {
        let d = SimDesign::default();
        let all = d.lattice_sites().unwrap();
        let region =
            |mode: VacancyMode| -> usize { (0..121).filter(|k| mode.eligible(k / 11, k % 11, 11, 11)).count() };
        assert_eq!(region(VacancyMode::Uniform), 121);
        assert_eq!(region(VacancyMode::Mode1), 36);
        assert_eq!(region(VacancyMode::Mode2), 36);
        assert_eq!(region(VacancyMode::Mode3), 33);
        assert_eq!(region(VacancyMode::Mode4), 31);

        let v = vacancy_sites(VacancyMode::Mode1, 25, [11, 11], &all, 3).unwrap();
        assert_eq!(v.len(), 25);
        assert!(v.iter().all(|s| s.m >= 35 && s.n >= 35));
        assert!(vacancy_sites(VacancyMode::Mode1, 37, [11, 11], &all, 3).is_err());
        assert!(vacancy_sites(VacancyMode::Uniform, 0, [11, 11], &all, 3).unwrap().is_empty());
    }

    #[test]
    fn uniform_seeds_differ() {
        let all = SimDesign::default().lattice_sites().unwrap();
        let a = vacancy_sites(VacancyMode::Uniform, 5, [11, 11], &all, 1).unwrap();
        let b = vacancy_sites(VacancyMode::Uniform, 5, [11, 11], &all, 2).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn deterministic_noise() {
        let d = SimDesign { vacancy_count: 10, noise_var: 0.25, seed: 99, ..Default::default() };
        let a = make_ground_truth(&d).unwrap();
        let b = make_ground_truth(&d).unwrap();
        assert_eq!(a.noisy, b.noisy);
        assert_eq!(a.vacancies, b.vacancies);
        let c = make_ground_truth(&SimDesign { seed: 100, ..d }).unwrap();
        assert_ne!(a.noisy, c.noisy);
    }

    #[test]
    fn invalid_designs() {
        assert!(make_ground_truth(&SimDesign { vacancy_count: 121, ..Default::default() }).is_err());
        assert!(make_ground_truth(&SimDesign { grid: [13, 13], ..Default::default() }).is_err());
        assert!(make_ground_truth(&SimDesign { tau: 0.0, ..Default::default() }).is_err());
    }

    #[test]
    fn snr_values() {
        assert_abs_diff_eq!(snr_db(0.075, 0.05).unwrap(), 1.7609, epsilon = 1e-4);
        assert_abs_diff_eq!(snr_db(0.075, 0.75).unwrap(), -10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(snr_db(0.3, 0.3).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(snr_db(0.2, 0.7).unwrap(), -snr_db(0.7, 0.2).unwrap(), epsilon = 1e-12);
        assert!(snr_db(0.0, 1.0).is_err());
        assert!(snr_db(1.0, -1.0).is_err());
    }

    #[test]
    fn seeds_are_spread() {
        let mut seen = BTreeSet::new();
        for d in 0..20 {
            for r in 0..20 {
                assert!(seen.insert(derive_seed(42, d, r)));
            }
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for m in VacancyMode::ALL {
            assert_eq!(m.name().parse::<VacancyMode>().unwrap(), m);
        }
        assert!("mode9".parse::<VacancyMode>().is_err());
    }
}
