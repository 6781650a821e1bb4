//! Group orthogonal matching pursuit with thresholding.
//!
//! Each iteration
//!
//! 1. picks the lattice group with the largest gain ratio: loss reduction of
//!    the support-restricted least-squares fit per bit of sparsity cost,
//! 2. grows the support `F` by that group,
//! 3. computes marginal regression coefficients `u_mᵀ Y v_n` on `F`,
//! 4. keeps the top `j*` coefficients, where `j*` is the first rank at which
//!    the projection increment `Del(j)` drops below `σ̂ δ_k`.
//!
//! The loop runs while the thresholded estimate costs less than `c`.
//!
//! Every column is a Kronecker product `v_n ⊗ u_m`, so all inner products come
//! from `UᵀU`, `VᵀV` and `UᵀYV`; `vec(Y)` is never formed.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{AtomMap, DesignVectors, Image, Site};
use crate::lattice::{cost_from_counts, sparsity_cost, stopping_constant, GroupCatalog, LatticeBasis};
use crate::linalg::{IncrementalCholesky, Pivot, PIVOT_TOL};

/// Ridge used when the unregularised Gram matrix is numerically singular.
pub const FALLBACK_RIDGE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Stopping constant. `None` selects the cost of one fully occupied group.
    pub c: Option<f64>,
    /// Multiplier `q ≥ 1` in `δ_k = q·sqrt(2 ln ‖Â_γ‖₀)`.
    pub q_mult: f64,
    /// Upper bound on group selections, i.e. the number of lattice groups
    /// expected in the image. Clamped to `|G|`.
    pub max_iters: usize,
    pub ridge: f64,
    /// Divide marginal coefficients by `‖u_m‖²‖v_n‖²`.
    pub normalize_marginal: bool,
    /// Stop when the best gain ratio is at or below this value.
    pub min_gain: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { c: None, q_mult: 1.0, max_iters: 1, ridge: 0.0, normalize_marginal: true, min_gain: 0.0 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.c {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::invalid(format!("stopping constant must be positive, got {c}")));
            }
        }
        if !(self.q_mult >= 1.0 && self.q_mult.is_finite()) {
            return Err(Error::invalid(format!("q_mult must be >= 1, got {}", self.q_mult)));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::invalid("ridge must be nonnegative"));
        }
        if !(self.min_gain >= 0.0) {
            return Err(Error::invalid("min_gain must be nonnegative"));
        }
        Ok(())
    }
}

/// Precomputed quantities shared by every step for one image.
#[derive(Clone, Debug)]
pub struct Problem<'a> {
    pub design: &'a DesignVectors,
    pub image: &'a Image,
    /// `UᵀYV`.
    corr: Array2<f64>,
    energy: f64,
}

impl<'a> Problem<'a> {
    pub fn new(image: &'a Image, design: &'a DesignVectors) -> Result<Self> {
        let corr = design.correlate(image)?;
        Ok(Problem { design, image, corr, energy: image.norm2() })
    }

    /// `u_mᵀ Y v_n`.
    #[inline]
    pub fn xty(&self, site: Site) -> f64 {
        self.corr[[site.m - 1, site.n - 1]]
    }

    /// `‖Y‖²_F`.
    pub fn energy(&self) -> f64 {
        self.energy
    }

    fn check_sites(&self, sites: &[Site]) -> Result<()> {
        let (rows, cols) = self.design.dims();
        if let Some(s) = sites.iter().find(|s| !s.in_bounds(rows, cols)) {
            return Err(Error::invalid(format!("site {s} outside {rows}x{cols} grid")));
        }
        Ok(())
    }
}

/// Cholesky factor of the Gram matrix over a support, in insertion order.
#[derive(Clone, Debug, Default)]
struct SupportFit {
    chol: IncrementalCholesky,
    /// Sites whose columns were accepted into the factor, in factor order.
    accepted: Vec<Site>,
    ridge: f64,
}

impl SupportFit {
    fn new(ridge: f64) -> Self {
        SupportFit { ridge, ..Default::default() }
    }

    /// Appends one site. Returns false when its column is numerically
    /// dependent on the current span (the factor is left unchanged).
    fn push(&mut self, problem: &Problem<'_>, site: Site) -> bool {
        let d = problem.design;
        let cross: Vec<f64> = self.accepted.iter().map(|&s| d.column_inner(s, site)).collect();
        let diag = d.column_norm2(site) + self.ridge;
        match self.chol.push(&cross, diag, problem.xty(site), PIVOT_TOL) {
            Pivot::Accepted(_) => {
                self.accepted.push(site);
                true
            }
            Pivot::Dependent => false,
        }
    }

    fn loss(&self, problem: &Problem<'_>) -> f64 {
        (problem.energy() - self.chol.explained()).max(0.0)
    }

    fn coefficients(&self, rows: usize, cols: usize) -> Result<AtomMap> {
        let a = self.chol.solve();
        AtomMap::from_entries(rows, cols, self.accepted.iter().copied().zip(a))
    }
}

/// Builds the least-squares factor over `sites`, retrying with
/// [`FALLBACK_RIDGE`] if the Gram matrix is singular.
fn fit_support(problem: &Problem<'_>, sites: &[Site], ridge: f64) -> Result<SupportFit> {
    let attempt = |ridge: f64| {
        let mut fit = SupportFit::new(ridge);
        fit.chol = IncrementalCholesky::with_capacity(sites.len());
        sites.iter().all(|&s| fit.push(problem, s)).then_some(fit)
    };
    if let Some(fit) = attempt(ridge) {
        return Ok(fit);
    }
    if ridge < FALLBACK_RIDGE {
        if let Some(fit) = attempt(FALLBACK_RIDGE) {
            return Ok(fit);
        }
    }
    Err(Error::Numerical(format!(
        "Gram matrix over {} sites is singular even with ridge {FALLBACK_RIDGE}",
        sites.len()
    )))
}

/// `argmin ‖Y − U A Vᵀ‖²_F` subject to `supp(A) ⊆ sites`, via the normal
/// equations plus `ridge · I`.
pub fn restricted_least_squares(y: &Image, design: &DesignVectors, sites: &[Site], ridge: f64) -> Result<AtomMap> {
    if sites.is_empty() {
        return Err(Error::invalid("support must be nonempty"));
    }
    let problem = Problem::new(y, design)?;
    problem.check_sites(sites)?;
    let fit = fit_support(&problem, sites, ridge)?;
    let (rows, cols) = design.dims();
    fit.coefficients(rows, cols)
}

/// Marginal regression coefficients on `sites`: `u_mᵀ Y v_n`, optionally
/// divided by `‖u_m‖²‖v_n‖²`. Zero elsewhere.
pub fn marginal_coeffs(y: &Image, design: &DesignVectors, sites: &[Site], normalize: bool) -> Result<AtomMap> {
    let problem = Problem::new(y, design)?;
    problem.check_sites(sites)?;
    Ok(marginal_on(&problem, sites, normalize))
}

fn marginal_on(problem: &Problem<'_>, sites: &[Site], normalize: bool) -> AtomMap {
    let (rows, cols) = problem.design.dims();
    let mut out = AtomMap::new(rows, cols);
    for &s in sites {
        let mut v = problem.xty(s);
        if normalize {
            v /= problem.design.column_norm2(s);
        }
        out.insert(s, v).expect("site checked in bounds");
    }
    out
}

/// `σ̂ = sqrt(‖Y − U Â_γ Vᵀ‖²_F / (MN − 1))`.
pub fn estimate_sigma(y: &Image, design: &DesignVectors, a_gamma: &AtomMap) -> Result<f64> {
    let (rows, cols) = y.dims();
    if rows * cols < 2 {
        return Err(Error::invalid("need at least two pixels to estimate sigma"));
    }
    let rss = crate::image::loss(a_gamma, design, y)?;
    Ok((rss / (rows * cols - 1) as f64).sqrt())
}

/// Nonzero coefficients ranked by value, largest first; ties in
/// lexicographic site order.
pub fn ranked_sites(coeffs: &AtomMap) -> Vec<(Site, f64)> {
    let mut ranked: Vec<(Site, f64)> = coeffs.iter().collect();
    // BTreeMap iteration is already lexicographic; a stable sort keeps it for ties.
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    ranked
}

fn del_values(problem: &Problem<'_>, ranked: &[(Site, f64)]) -> Vec<f64> {
    let d = problem.design;
    let mut chol = IncrementalCholesky::with_capacity(ranked.len());
    let mut basis: Vec<Site> = Vec::with_capacity(ranked.len());
    let mut dels = Vec::with_capacity(ranked.len().saturating_sub(1));
    for (idx, &(site, _)) in ranked.iter().enumerate() {
        let cross: Vec<f64> = basis.iter().map(|&s| d.column_inner(s, site)).collect();
        let inc = match chol.push(&cross, d.column_norm2(site), problem.xty(site), PIVOT_TOL) {
            Pivot::Accepted(z) => {
                basis.push(site);
                z * z
            }
            Pivot::Dependent => 0.0,
        };
        // Del(j) is the increment from the top-j to the top-(j+1) span.
        if idx > 0 {
            dels.push(inc);
        }
    }
    dels
}

/// `Del(j) = ‖(H_{j+1} − H_j) y‖²` for `j = 1 .. nnz − 1`, where `H_j` projects
/// onto the columns of the `j` largest coefficients.
pub fn del_curve(y: &Image, design: &DesignVectors, a_gamma: &AtomMap) -> Result<Vec<(usize, f64)>> {
    if a_gamma.len() < 2 {
        return Err(Error::invalid("Del curve needs at least two nonzero coefficients"));
    }
    let problem = Problem::new(y, design)?;
    let ranked = ranked_sites(a_gamma);
    Ok(del_values(&problem, &ranked).into_iter().enumerate().map(|(i, v)| (i + 1, v)).collect())
}

/// Result of the `Del`-based cut.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub j_star: usize,
    pub rho: f64,
    pub delta_k: f64,
    /// `σ · δ_k`.
    pub cutoff: f64,
    /// No `j` qualified and every coefficient was kept.
    pub fallback: bool,
    pub del: Vec<f64>,
}

fn choose_threshold(dels: &[f64], ranked: &[(Site, f64)], q_mult: f64, sigma: f64) -> ThresholdChoice {
    let nnz = ranked.len();
    let delta_k = q_mult * (2.0 * (nnz as f64).ln()).max(0.0).sqrt();
    let cutoff = sigma * delta_k;
    let hit = dels.iter().position(|&d| d < cutoff || (cutoff == 0.0 && d == 0.0)).map(|i| i + 1);
    let (j_star, fallback) = match hit {
        Some(j) => (j, false),
        None => (nnz, true),
    };
    ThresholdChoice { j_star, rho: ranked[j_star - 1].1, delta_k, cutoff, fallback, del: dels.to_vec() }
}

/// `j* = min{j : Del(j) < σ δ_k}` and `ρ` = the `j*`-th largest coefficient.
/// Falls back to keeping all `nnz` coefficients when no `j` qualifies.
pub fn select_threshold(
    a_gamma: &AtomMap,
    y: &Image,
    design: &DesignVectors,
    q_mult: f64,
    sigma: f64,
) -> Result<ThresholdChoice> {
    if a_gamma.len() < 2 {
        return Err(Error::invalid("thresholding needs at least two nonzero coefficients"));
    }
    if !(sigma >= 0.0) {
        return Err(Error::invalid("sigma must be nonnegative"));
    }
    let problem = Problem::new(y, design)?;
    let ranked = ranked_sites(a_gamma);
    let dels = del_values(&problem, &ranked);
    Ok(choose_threshold(&dels, &ranked, q_mult, sigma))
}

/// Iterate of the algorithm.
#[derive(Clone, Debug)]
pub struct SolverState {
    /// `F^(k)`, sorted.
    pub support: Vec<Site>,
    pub selected_groups: Vec<usize>,
    /// `Â^(k)`: least squares restricted to `F^(k)`.
    pub a_ls: AtomMap,
    /// `Â_γ^(k)`: marginal coefficients on `F^(k)`.
    pub a_gamma: AtomMap,
    /// `Â_ρ^(k)`: thresholded estimate.
    pub a_rho: AtomMap,
    pub iteration: usize,
    fit: SupportFit,
    selected: Vec<bool>,
}

impl SolverState {
    pub fn new(catalog: &GroupCatalog, ridge: f64) -> Self {
        let (rows, cols) = catalog.dims();
        SolverState {
            support: Vec::new(),
            selected_groups: Vec::new(),
            a_ls: AtomMap::new(rows, cols),
            a_gamma: AtomMap::new(rows, cols),
            a_rho: AtomMap::new(rows, cols),
            iteration: 0,
            fit: SupportFit::new(ridge),
            selected: vec![false; catalog.len()],
        }
    }

    pub fn is_selected(&self, g: usize) -> bool {
        self.selected[g]
    }

    /// `L(Â^(k))`.
    pub fn loss(&self, problem: &Problem<'_>) -> f64 {
        self.fit.loss(problem)
    }

    /// Adds group `g` to the support and refits the restricted least squares.
    pub fn add_group(&mut self, problem: &Problem<'_>, catalog: &GroupCatalog, g: usize) -> Result<()> {
        if self.selected[g] {
            return Err(Error::invalid(format!("group {g} already selected")));
        }
        let members = &catalog.group(g).members;
        let mut fit = self.fit.clone();
        let ok = members.iter().all(|&s| fit.push(problem, s));
        self.support.extend_from_slice(members);
        self.support.sort_unstable();
        self.fit = if ok {
            fit
        } else {
            // Refactor the whole support in insertion order with the fallback ridge.
            let mut order = self.fit.accepted.clone();
            order.extend_from_slice(members);
            fit_support(problem, &order, self.fit.ridge.max(FALLBACK_RIDGE))?
        };
        self.selected[g] = true;
        self.selected_groups.push(g);
        self.iteration += 1;
        let (rows, cols) = catalog.dims();
        self.a_ls = self.fit.coefficients(rows, cols)?;
        Ok(())
    }
}

/// Loss reduction and cost increase for adding one group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gain {
    pub group: usize,
    pub loss_reduction: f64,
    pub cost_increase: f64,
    pub ratio: f64,
}

fn evaluate_gain(problem: &Problem<'_>, catalog: &GroupCatalog, state: &SolverState, g: usize) -> Gain {
    let members = &catalog.group(g).members;
    let mut fit = state.fit.clone();
    for &s in members {
        // Dependent columns add nothing to the span and hence nothing to the fit.
        fit.push(problem, s);
    }
    let before = state.fit.chol.explained();
    let mut reduction = fit.chol.explained() - before;
    if reduction <= 1e-12 * problem.energy() {
        reduction = 0.0;
    }
    // Groups are disjoint, so every member is new to the support.
    let cost_increase = cost_from_counts(catalog, 1, members.len());
    Gain { group: g, loss_reduction: reduction, cost_increase, ratio: reduction / cost_increase }
}

/// Gain ratio `φ(g)`: loss reduction of the restricted fit over `F ∪ L_g`
/// divided by the increase in sparsity cost, counting every supported site
/// as nonzero.
pub fn gain_ratio(
    g: usize,
    state: &SolverState,
    y: &Image,
    design: &DesignVectors,
    catalog: &GroupCatalog,
) -> Result<f64> {
    if g >= catalog.len() {
        return Err(Error::invalid(format!("group index {g} out of range")));
    }
    let problem = Problem::new(y, design)?;
    Ok(evaluate_gain(&problem, catalog, state, g).ratio)
}

/// Gains of every unselected group, in index order.
fn all_gains(problem: &Problem<'_>, catalog: &GroupCatalog, state: &SolverState) -> Vec<Gain> {
    (0..catalog.len())
        .into_par_iter()
        .filter(|&g| !state.is_selected(g))
        .map(|g| evaluate_gain(problem, catalog, state, g))
        .collect()
}

/// Largest ratio; ties go to the smaller group index.
fn best_gain(gains: &[Gain]) -> Option<Gain> {
    gains.iter().fold(None, |best: Option<Gain>, &cand| match best {
        Some(b) if !(cand.ratio > b.ratio) => Some(b),
        _ => Some(cand),
    })
}

/// Unselected group with the largest gain ratio.
pub fn select_group(state: &SolverState, y: &Image, design: &DesignVectors, catalog: &GroupCatalog) -> Result<usize> {
    let problem = Problem::new(y, design)?;
    let gains = all_gains(&problem, catalog, state);
    best_gain(&gains).map(|g| g.group).ok_or_else(|| Error::invalid("every group is already selected"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// `C(Â_ρ) ≥ c`.
    CostReached,
    /// `max_iters` (clamped to `|G|`) selections made.
    MaxIterations,
    /// Best gain ratio at or below `min_gain`.
    GainFloor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub group: usize,
    pub offset: [i64; 2],
    pub gain_ratio: f64,
    pub loss_before: f64,
    pub loss_after: f64,
    pub cost_before: f64,
    pub cost_after: f64,
    pub support_size: usize,
    pub marginal_nnz: usize,
    pub sigma_hat: f64,
    pub threshold: Option<ThresholdChoice>,
    pub kept: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub stop_constant: f64,
    pub iterations: Vec<IterationRecord>,
    pub termination: Termination,
}

#[derive(Clone, Debug)]
pub struct DetectionResult {
    pub atoms: AtomMap,
    pub basis: LatticeBasis,
    pub tau: f64,
    pub sigma_hat: f64,
    pub trace: SolverTrace,
}

/// Runs group OMP with thresholding on `y`.
pub fn gomp_thresholding(
    y: &Image,
    design: &DesignVectors,
    catalog: &GroupCatalog,
    cfg: &SolverConfig,
) -> Result<DetectionResult> {
    cfg.validate()?;
    if catalog.is_empty() {
        return Err(Error::invalid("empty group catalog"));
    }
    if catalog.dims() != y.dims() {
        return Err(Error::invalid(format!("catalog is {:?} but image is {:?}", catalog.dims(), y.dims())));
    }
    let problem = Problem::new(y, design)?;
    let c = cfg.c.unwrap_or_else(|| stopping_constant(catalog));
    let max_iters = cfg.max_iters.min(catalog.len());
    let (rows, cols) = y.dims();

    let mut state = SolverState::new(catalog, cfg.ridge);
    let mut records = Vec::new();
    let mut sigma_hat = 0.0;

    let termination = loop {
        let cost = sparsity_cost(&state.a_rho, catalog)?;
        if !(cost < c) {
            break Termination::CostReached;
        }
        if state.iteration >= max_iters {
            break Termination::MaxIterations;
        }
        let gains = all_gains(&problem, catalog, &state);
        let best = best_gain(&gains).expect("max_iters is clamped to |G|");
        if best.ratio <= cfg.min_gain {
            break Termination::GainFloor;
        }

        let loss_before = state.loss(&problem);
        state.add_group(&problem, catalog, best.group)?;
        let loss_after = state.loss(&problem);

        state.a_gamma = marginal_on(&problem, &state.support, cfg.normalize_marginal);
        sigma_hat = estimate_sigma(y, design, &state.a_gamma)?;
        let ranked = ranked_sites(&state.a_gamma);
        let (kept, threshold) = match ranked.len() {
            0 => (0, None),
            1 => (1, None),
            _ => {
                let dels = del_values(&problem, &ranked);
                let choice = choose_threshold(&dels, &ranked, cfg.q_mult, sigma_hat);
                (choice.j_star, Some(choice))
            }
        };
        state.a_rho = AtomMap::from_entries(rows, cols, ranked[..kept].iter().copied())?;
        let cost_after = sparsity_cost(&state.a_rho, catalog)?;

        records.push(IterationRecord {
            iteration: state.iteration,
            group: best.group,
            offset: catalog.group(best.group).offset,
            gain_ratio: best.ratio,
            loss_before,
            loss_after,
            cost_before: cost,
            cost_after,
            support_size: state.support.len(),
            marginal_nnz: ranked.len(),
            sigma_hat,
            threshold,
            kept,
        });
    };

    Ok(DetectionResult {
        atoms: state.a_rho,
        basis: *catalog.basis(),
        tau: design.tau2().sqrt(),
        sigma_hat,
        trace: SolverTrace { stop_constant: c, iterations: records, termination },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{add_noise, loss, render};
    use crate::lattice::{enumerate_groups, LatticeBasis};
    use approx::assert_abs_diff_eq;

    fn lattice_image(catalog: &GroupCatalog, design: &DesignVectors, g: usize, skip: &[Site]) -> (AtomMap, Image) {
        let (rows, cols) = catalog.dims();
        let atoms = AtomMap::from_entries(
            rows,
            cols,
            catalog.group(g).members.iter().filter(|s| !skip.contains(s)).map(|s| (*s, 1.0)),
        )
        .unwrap();
        let img = render(&atoms, design).unwrap();
        (atoms, img)
    }

    #[test]
    fn single_site_least_squares_is_exact() {
        let d = DesignVectors::build(2.0, 12, 12).unwrap();
        let x0 = Site::new(5, 7);
        let truth = AtomMap::from_entries(12, 12, [(x0, 1.0)]).unwrap();
        let y = render(&truth, &d).unwrap();
        let fit = restricted_least_squares(&y, &d, &[x0], 0.0).unwrap();
        assert_abs_diff_eq!(fit.get(x0), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn single_site_closed_form() {
        let d = DesignVectors::build(3.0, 10, 8).unwrap();
        let y = add_noise(&Image::zeros(10, 8).unwrap(), 1.0, 9).unwrap();
        let s = Site::new(4, 3);
        let fit = restricted_least_squares(&y, &d, &[s], 0.0).unwrap();
        let u = d.u().column(s.m - 1);
        let v = d.v().column(s.n - 1);
        let uyv = u.dot(&y.pixels().dot(&v));
        let expected = uyv / (u.dot(&u) * v.dot(&v));
        assert_abs_diff_eq!(fit.get(s), expected, epsilon = 1e-12);
    }

    #[test]
    fn least_squares_rejects_bad_support() {
        let d = DesignVectors::build(2.0, 5, 5).unwrap();
        let y = Image::zeros(5, 5).unwrap();
        assert!(restricted_least_squares(&y, &d, &[], 0.0).is_err());
        assert!(restricted_least_squares(&y, &d, &[Site::new(6, 1)], 0.0).is_err());
    }

    #[test]
    fn true_group_has_greatest_gain() {
        let basis = LatticeBasis::new([6, 0], [0, 6]).unwrap();
        let cat = enumerate_groups(&basis, 40, 40).unwrap();
        let d = DesignVectors::build(4.0, 40, 40).unwrap();
        let g_star = 14;
        let (_, y) = lattice_image(&cat, &d, g_star, &[]);
        let state = SolverState::new(&cat, 0.0);
        let ratios: Vec<f64> = (0..cat.len()).map(|g| gain_ratio(g, &state, &y, &d, &cat).unwrap()).collect();
        for (g, r) in ratios.iter().enumerate() {
            if g != g_star {
                assert!(ratios[g_star] > *r, "group {g}: {r} vs {}", ratios[g_star]);
            }
        }
        assert_eq!(select_group(&state, &y, &d, &cat).unwrap(), g_star);
        // Pure: repeated evaluation is bit-identical.
        assert_eq!(gain_ratio(3, &state, &y, &d, &cat).unwrap(), ratios[3]);
    }

    #[test]
    fn zero_image_gains_and_tie_break() {
        let cat = enumerate_groups(&LatticeBasis::new([4, 0], [0, 4]).unwrap(), 16, 16).unwrap();
        let d = DesignVectors::build(2.0, 16, 16).unwrap();
        let y = Image::zeros(16, 16).unwrap();
        let state = SolverState::new(&cat, 0.0);
        for g in 0..cat.len() {
            assert_eq!(gain_ratio(g, &state, &y, &d, &cat).unwrap(), 0.0);
        }
        assert_eq!(select_group(&state, &y, &d, &cat).unwrap(), 0);
    }

    #[test]
    fn reselection_excludes_selected_group() {
        let basis = LatticeBasis::new([5, 0], [0, 5]).unwrap();
        let cat = enumerate_groups(&basis, 30, 30).unwrap();
        let d = DesignVectors::build(3.0, 30, 30).unwrap();
        let (_, y) = lattice_image(&cat, &d, 7, &[]);
        let problem = Problem::new(&y, &d).unwrap();
        let mut state = SolverState::new(&cat, 0.0);
        assert_eq!(select_group(&state, &y, &d, &cat).unwrap(), 7);
        state.add_group(&problem, &cat, 7).unwrap();
        assert_ne!(select_group(&state, &y, &d, &cat).unwrap(), 7);
        assert!(state.add_group(&problem, &cat, 7).is_err());
        assert!(state.loss(&problem) < 1e-8);
    }

    #[test]
    fn marginal_peak_and_zero() {
        let d = DesignVectors::build(2.0, 15, 15).unwrap();
        let x0 = Site::new(8, 6);
        let y = render(&AtomMap::from_entries(15, 15, [(x0, 2.0)]).unwrap(), &d).unwrap();
        let f: Vec<Site> = (5..=11).flat_map(|m| (3..=9).map(move |n| Site::new(m, n))).collect();
        let coeffs = marginal_coeffs(&y, &d, &f, true).unwrap();
        let (best, _) = ranked_sites(&coeffs)[0];
        assert_eq!(best, x0);
        let zero = marginal_coeffs(&Image::zeros(15, 15).unwrap(), &d, &f, true).unwrap();
        assert!(zero.is_empty());
    }

    #[test]
    fn sigma_limits() {
        let d = DesignVectors::build(2.0, 10, 10).unwrap();
        let a = AtomMap::from_entries(10, 10, [(Site::new(3, 3), 1.0), (Site::new(7, 6), 0.5)]).unwrap();
        let y = render(&a, &d).unwrap();
        assert!(estimate_sigma(&y, &d, &a).unwrap() < 1e-12);
        let empty = AtomMap::new(10, 10);
        assert_abs_diff_eq!(estimate_sigma(&y, &d, &empty).unwrap(), (y.norm2() / 99.0).sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn del_curve_on_near_orthogonal_columns() {
        // τ² = 0.05 makes the columns orthogonal to machine precision.
        let d = DesignVectors::build(0.05, 8, 8).unwrap();
        let sites = [Site::new(2, 2), Site::new(5, 3), Site::new(7, 7), Site::new(3, 6), Site::new(6, 1)];
        let truth = AtomMap::from_entries(8, 8, sites[..3].iter().map(|s| (*s, 1.0))).unwrap();
        let y = render(&truth, &d).unwrap();
        let coeffs = AtomMap::from_entries(8, 8, sites.iter().enumerate().map(|(i, s)| (*s, 5.0 - i as f64))).unwrap();
        let curve = del_curve(&y, &d, &coeffs).unwrap();
        assert_eq!(curve.len(), 4);
        assert!(curve[0].1 > 0.5 && curve[1].1 > 0.5);
        assert!(curve[2].1 < 1e-20 && curve[3].1 < 1e-20);
        let t = select_threshold(&coeffs, &y, &d, 1.0, 0.01).unwrap();
        assert_eq!(t.j_star, 3);
        assert_eq!(t.rho, 3.0);
        assert!(!t.fallback);
    }

    #[test]
    fn del_curve_tie_order_is_lexicographic() {
        let d = DesignVectors::build(2.0, 10, 10).unwrap();
        let y = add_noise(&Image::zeros(10, 10).unwrap(), 1.0, 1).unwrap();
        let a = AtomMap::from_entries(10, 10, [(Site::new(5, 5), 1.0), (Site::new(2, 8), 1.0), (Site::new(9, 1), 2.0)])
            .unwrap();
        let b = AtomMap::from_entries(10, 10, [(Site::new(9, 1), 2.0), (Site::new(2, 8), 1.0), (Site::new(5, 5), 1.0)])
            .unwrap();
        assert_eq!(del_curve(&y, &d, &a).unwrap(), del_curve(&y, &d, &b).unwrap());
        let ranked: Vec<Site> = ranked_sites(&a).into_iter().map(|x| x.0).collect();
        assert_eq!(ranked, vec![Site::new(9, 1), Site::new(2, 8), Site::new(5, 5)]);
    }

    #[test]
    fn threshold_fallback_and_zero_sigma() {
        let d = DesignVectors::build(2.0, 12, 12).unwrap();
        let y = add_noise(&Image::zeros(12, 12).unwrap(), 1.0, 5).unwrap();
        let a =
            AtomMap::from_entries(12, 12, [(Site::new(2, 2), 3.0), (Site::new(6, 6), 2.0), (Site::new(10, 10), 1.0)])
                .unwrap();
        let t = select_threshold(&a, &y, &d, 1.0, 0.0).unwrap();
        assert!(t.fallback);
        assert_eq!(t.j_star, 3);
        assert_eq!(t.rho, 1.0);
        let t = select_threshold(&a, &y, &d, 1.0, 1e9).unwrap();
        assert_eq!(t.j_star, 1);
        assert!(select_threshold(&AtomMap::new(12, 12), &y, &d, 1.0, 1.0).is_err());
        assert!(del_curve(&y, &d, &AtomMap::new(12, 12)).is_err());
    }

    #[test]
    fn full_group_is_recovered_in_one_iteration() {
        let basis = LatticeBasis::new([6, 0], [0, 6]).unwrap();
        let cat = enumerate_groups(&basis, 75, 75).unwrap();
        let d = DesignVectors::build(4.0, 75, 75).unwrap();
        // A 169-site group costs more than c, so the cost rule stops the loop
        // even with max_iters > 1.
        let g = cat.groups().iter().position(|g| g.len() == 169).unwrap();
        let (truth, y) = lattice_image(&cat, &d, g, &[]);
        let cfg = SolverConfig { max_iters: 5, ..Default::default() };
        let res = gomp_thresholding(&y, &d, &cat, &cfg).unwrap();
        assert_eq!(res.trace.iterations.len(), 1);
        assert_eq!(res.trace.termination, Termination::CostReached);
        let found: Vec<Site> = res.atoms.sites().collect();
        let want: Vec<Site> = truth.sites().collect();
        assert_eq!(found, want);
    }

    #[test]
    fn zero_image_stops_on_gain_floor() {
        let cat = enumerate_groups(&LatticeBasis::new([6, 0], [0, 6]).unwrap(), 30, 30).unwrap();
        let d = DesignVectors::build(4.0, 30, 30).unwrap();
        let y = Image::zeros(30, 30).unwrap();
        let res = gomp_thresholding(&y, &d, &cat, &SolverConfig::default()).unwrap();
        assert!(res.atoms.is_empty());
        assert!(res.trace.iterations.is_empty());
        assert_eq!(res.trace.termination, Termination::GainFloor);
    }

    #[test]
    fn iterates_are_nested_and_losses_monotone() {
        let basis = LatticeBasis::new([5, 1], [-1, 4]).unwrap();
        let cat = enumerate_groups(&basis, 30, 30).unwrap();
        let d = DesignVectors::build(2.0, 30, 30).unwrap();
        let (_, clean) = lattice_image(&cat, &d, 3, &[Site::new(1, 1)]);
        let y = add_noise(&clean, 0.1, 11).unwrap();
        let cfg = SolverConfig { max_iters: 6, c: Some(1e9), ..Default::default() };
        let res = gomp_thresholding(&y, &d, &cat, &cfg).unwrap();
        assert_eq!(res.trace.iterations.len(), 6);
        assert_eq!(res.trace.termination, Termination::MaxIterations);
        let mut prev = f64::INFINITY;
        let mut prev_support = 0;
        for rec in &res.trace.iterations {
            assert!(rec.loss_after <= rec.loss_before + 1e-9);
            assert!(rec.loss_before <= prev + 1e-9);
            assert!(rec.support_size > prev_support);
            prev = rec.loss_after;
            prev_support = rec.support_size;
        }
        let selected: Vec<usize> = res.trace.iterations.iter().map(|r| r.group).collect();
        for s in res.atoms.sites() {
            assert!(selected.contains(&cat.group_of(s)));
        }
    }

    #[test]
    fn gomp_rejects_bad_input() {
        let cat = enumerate_groups(&LatticeBasis::new([3, 0], [0, 3]).unwrap(), 9, 9).unwrap();
        let d = DesignVectors::build(2.0, 9, 9).unwrap();
        let y = Image::zeros(9, 9).unwrap();
        let bad = SolverConfig { q_mult: 0.5, ..Default::default() };
        assert!(gomp_thresholding(&y, &d, &cat, &bad).is_err());
        let y8 = Image::zeros(8, 9).unwrap();
        assert!(gomp_thresholding(&y8, &d, &cat, &SolverConfig::default()).is_err());
    }

    #[test]
    fn loss_identity_on_rendered_maps() {
        let d = DesignVectors::build(2.5, 20, 20).unwrap();
        let a =
            AtomMap::from_entries(20, 20, [(Site::new(3, 4), 1.2), (Site::new(15, 9), 9.5), (Site::new(10, 10), 0.1)])
                .unwrap();
        let y = render(&a, &d).unwrap();
        assert!(loss(&a, &d, &y).unwrap() < 1e-10);
    }
}
