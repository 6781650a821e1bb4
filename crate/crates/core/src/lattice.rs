//! Integer lattices on the pixel grid and the structural sparsity cost.
//!
//! For a fixed basis `(p, q)` every pixel belongs to exactly one residue
//! class `site mod (ℤp + ℤq)`. Each class, clipped to the image, is a lattice
//! group; the groups of one basis partition the grid.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{AtomMap, Site};

/// Two integer basis vectors, in `(row, col)` pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeBasis {
    pub p: [i64; 2],
    pub q: [i64; 2],
}

fn norm2(v: [i64; 2]) -> i64 {
    v[0] * v[0] + v[1] * v[1]
}

fn to_upper_half(v: [i64; 2]) -> [i64; 2] {
    if v[1] > 0 || (v[1] == 0 && v[0] > 0) {
        v
    } else {
        [-v[0], -v[1]]
    }
}

fn half_plane_angle(v: [i64; 2]) -> f64 {
    (v[1] as f64).atan2(v[0] as f64)
}

impl LatticeBasis {
    pub fn new(p: [i64; 2], q: [i64; 2]) -> Result<Self> {
        let b = LatticeBasis { p, q };
        if b.det() == 0 {
            return Err(Error::invalid(format!("degenerate lattice basis p={p:?}, q={q:?}")));
        }
        Ok(b)
    }

    /// Rounds real-valued vectors to the nearest integers.
    pub fn from_f64(p: [f64; 2], q: [f64; 2]) -> Result<Self> {
        let r = |v: [f64; 2]| [v[0].round() as i64, v[1].round() as i64];
        LatticeBasis::new(r(p), r(q))
    }

    pub fn det(&self) -> i64 {
        self.p[0] * self.q[1] - self.p[1] * self.q[0]
    }

    /// Number of residue classes, `|det(p, q)|`.
    pub fn cell_area(&self) -> u64 {
        self.det().unsigned_abs()
    }

    /// Canonical representative: `p` in the upper half-plane (angle in
    /// `[0°, 180°)`), `‖p‖ ≤ ‖q‖` with ties broken by angle, and `det > 0`.
    pub fn canonical(&self) -> LatticeBasis {
        let a = to_upper_half(self.p);
        let b = to_upper_half(self.q);
        let key = |v: [i64; 2]| (norm2(v), half_plane_angle(v));
        let (p, mut q) = if key(a).partial_cmp(&key(b)) == Some(std::cmp::Ordering::Greater) { (b, a) } else { (a, b) };
        if p[0] * q[1] - p[1] * q[0] < 0 {
            q = [-q[0], -q[1]];
        }
        LatticeBasis { p, q }
    }

    /// Lagrange-Gauss reduction: the same lattice spanned by its two
    /// shortest independent vectors, canonicalised.
    pub fn reduced(&self) -> LatticeBasis {
        let (mut a, mut b) = (self.p, self.q);
        if norm2(a) > norm2(b) {
            std::mem::swap(&mut a, &mut b);
        }
        loop {
            let dot = a[0] * b[0] + a[1] * b[1];
            let k = (dot as f64 / norm2(a) as f64).round() as i64;
            b = [b[0] - k * a[0], b[1] - k * a[1]];
            if norm2(b) >= norm2(a) {
                break;
            }
            std::mem::swap(&mut a, &mut b);
        }
        LatticeBasis { p: a, q: b }.canonical()
    }

    pub fn is_canonical(&self) -> bool {
        self.canonical() == *self
    }
}

impl std::fmt::Display for LatticeBasis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "p=({},{}) q=({},{})", self.p[0], self.p[1], self.q[0], self.q[1])
    }
}

/// Representative of `site`'s residue class: the unique point
/// `site − ⌊a_p⌋p − ⌊a_q⌋q` whose lattice coordinates lie in `[0, 1)²`.
///
/// Computed in exact integer arithmetic.
pub fn reduce_offset(site: [i64; 2], basis: &LatticeBasis) -> [i64; 2] {
    let LatticeBasis { p, q } = *basis;
    let mut det = basis.det();
    // Cramer's rule: a_p = num_p / det, a_q = num_q / det.
    let mut num_p = q[1] * site[0] - q[0] * site[1];
    let mut num_q = -p[1] * site[0] + p[0] * site[1];
    if det < 0 {
        det = -det;
        num_p = -num_p;
        num_q = -num_q;
    }
    let zp = num_p.div_euclid(det);
    let zq = num_q.div_euclid(det);
    [site[0] - zp * p[0] - zq * q[0], site[1] - zp * p[1] - zq * q[1]]
}

/// One residue class clipped to the image.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeGroup {
    pub basis: LatticeBasis,
    pub offset: [i64; 2],
    /// In-bounds members, sorted lexicographically.
    pub members: Vec<Site>,
}

impl LatticeGroup {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Every nonempty lattice group of one basis over an `M × N` grid.
#[derive(Clone, Debug)]
pub struct GroupCatalog {
    basis: LatticeBasis,
    rows: usize,
    cols: usize,
    groups: Vec<LatticeGroup>,
    labels: Array2<usize>,
    max_group_size: usize,
}

impl GroupCatalog {
    pub fn basis(&self) -> &LatticeBasis {
        &self.basis
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn groups(&self) -> &[LatticeGroup] {
        &self.groups
    }

    pub fn group(&self, g: usize) -> &LatticeGroup {
        &self.groups[g]
    }

    /// `|G|`.
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// `K = max_g |L_g|`.
    pub fn max_group_size(&self) -> usize {
        self.max_group_size
    }

    /// Index of the group containing `site`.
    pub fn group_of(&self, site: Site) -> usize {
        self.labels[[site.m - 1, site.n - 1]]
    }

    /// Bits charged for switching a group on: `log₂(2|G|)`.
    pub fn group_bits(&self) -> f64 {
        (2.0 * self.len() as f64).log2()
    }

    /// Bits charged per nonzero entry: `log₂(2K)`.
    pub fn site_bits(&self) -> f64 {
        (2.0 * self.max_group_size as f64).log2()
    }

    /// Offsets and group sizes, optionally with member lists.
    pub fn summary(&self, full: bool) -> CatalogSummary {
        CatalogSummary {
            basis: self.basis,
            rows: self.rows,
            cols: self.cols,
            group_count: self.len(),
            max_group_size: self.max_group_size,
            groups: self
                .groups
                .iter()
                .map(|g| GroupSummary {
                    offset: g.offset,
                    size: g.len(),
                    members: full.then(|| g.members.iter().map(|s| [s.m, s.n]).collect()),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroupSummary {
    pub offset: [i64; 2],
    pub size: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub members: Option<Vec<[usize; 2]>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CatalogSummary {
    pub basis: LatticeBasis,
    pub rows: usize,
    pub cols: usize,
    pub group_count: usize,
    pub max_group_size: usize,
    pub groups: Vec<GroupSummary>,
}

/// Partitions `[1, M] × [1, N]` into lattice groups keyed by residue, in
/// lexicographic offset order.
///
/// Residue classes with no in-bounds pixel are omitted, so `|G| = |det|`
/// whenever the grid is at least one fundamental cell wide.
pub fn enumerate_groups(basis: &LatticeBasis, rows: usize, cols: usize) -> Result<GroupCatalog> {
    if basis.det() == 0 {
        return Err(Error::invalid(format!("degenerate lattice basis {basis}")));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("grid dimensions must be positive"));
    }
    let mut classes: BTreeMap<[i64; 2], Vec<Site>> = BTreeMap::new();
    for m in 1..=rows {
        for n in 1..=cols {
            let site = Site::new(m, n);
            classes.entry(reduce_offset(site.as_i64(), basis)).or_default().push(site);
        }
    }
    let mut labels = Array2::zeros((rows, cols));
    let mut groups = Vec::with_capacity(classes.len());
    for (g, (offset, members)) in classes.into_iter().enumerate() {
        for s in &members {
            labels[[s.m - 1, s.n - 1]] = g;
        }
        groups.push(LatticeGroup { basis: *basis, offset, members });
    }
    let max_group_size = groups.iter().map(LatticeGroup::len).max().unwrap_or(0);
    Ok(GroupCatalog { basis: *basis, rows, cols, groups, labels, max_group_size })
}

/// `C(A) = log₂(2|G|)·#{g : A_(g) ≠ 0} + log₂(2K)·‖A‖₀`.
pub fn sparsity_cost(atoms: &AtomMap, catalog: &GroupCatalog) -> Result<f64> {
    if atoms.dims() != catalog.dims() {
        return Err(Error::invalid(format!(
            "dimension mismatch: catalog is {:?}, atom map is {:?}",
            catalog.dims(),
            atoms.dims()
        )));
    }
    let mut active = vec![false; catalog.len()];
    for site in atoms.sites() {
        active[catalog.group_of(site)] = true;
    }
    let active_groups = active.iter().filter(|a| **a).count();
    Ok(cost_from_counts(catalog, active_groups, atoms.len()))
}

pub(crate) fn cost_from_counts(catalog: &GroupCatalog, groups: usize, sites: usize) -> f64 {
    catalog.group_bits() * groups as f64 + catalog.site_bits() * sites as f64
}

/// Cost of selecting one fully occupied group of `MN / |det(p, q)|` sites.
pub fn stopping_constant(catalog: &GroupCatalog) -> f64 {
    let (rows, cols) = catalog.dims();
    let atoms_per_group = (rows * cols) as f64 / catalog.basis().cell_area() as f64;
    catalog.group_bits() + catalog.site_bits() * atoms_per_group
}
