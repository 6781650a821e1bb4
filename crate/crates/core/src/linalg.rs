//! Row-by-row Cholesky factorisation of a growing Gram matrix.
//!
//! Appending column `x_{k+1}` to a design whose Gram matrix is `L Lᵀ` costs one
//! triangular solve. The running vector `z = L⁻¹ Xᵀy` gives the projection of
//! `y` onto the span of the columns: `‖H_k y‖² = Σ_{i≤k} z_i²`, so
//! `‖(H_{k+1} − H_k) y‖² = z_{k+1}²`.

/// Default relative pivot tolerance: a column whose squared distance from the
/// current span is below `tol · ‖x‖²` is treated as dependent.
pub const PIVOT_TOL: f64 = 1e-14;

#[derive(Clone, Debug, Default)]
pub struct IncrementalCholesky {
    // Packed lower triangle; row i starts at i(i+1)/2.
    packed: Vec<f64>,
    z: Vec<f64>,
}

/// Outcome of appending one column.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pivot {
    /// Column accepted; carries the new entry of `z`.
    Accepted(f64),
    /// Column numerically inside the current span; the factor is unchanged.
    Dependent,
}

impl IncrementalCholesky {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        IncrementalCholesky { packed: Vec::with_capacity(n * (n + 1) / 2), z: Vec::with_capacity(n) }
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        let start = i * (i + 1) / 2;
        &self.packed[start..start + i + 1]
    }

    /// Appends a column given its inner products with the existing columns
    /// (`cross`, in insertion order), its squared norm `diag` and `rhs = xᵀy`.
    pub fn push(&mut self, cross: &[f64], diag: f64, rhs: f64, tol: f64) -> Pivot {
        let k = self.len();
        debug_assert_eq!(cross.len(), k);
        let mut l = Vec::with_capacity(k + 1);
        let mut sq = 0.0;
        for (i, &c) in cross.iter().enumerate() {
            let row = self.row(i);
            let mut acc = c;
            for (a, b) in row[..i].iter().zip(&l) {
                acc -= a * b;
            }
            let v = acc / row[i];
            sq += v * v;
            l.push(v);
        }
        let d2 = diag - sq;
        if !(d2.is_finite() && d2 > tol * diag.abs()) {
            return Pivot::Dependent;
        }
        let d = d2.sqrt();
        let mut acc = rhs;
        for (a, b) in l.iter().zip(&self.z) {
            acc -= a * b;
        }
        let zk = acc / d;
        l.push(d);
        self.packed.extend_from_slice(&l);
        self.z.push(zk);
        Pivot::Accepted(zk)
    }

    /// `‖H y‖² = ‖z‖²`, the energy of `y` explained by the current span.
    pub fn explained(&self) -> f64 {
        self.z.iter().map(|v| v * v).sum()
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    /// Least-squares coefficients: solves `Lᵀ a = z`.
    pub fn solve(&self) -> Vec<f64> {
        let n = self.len();
        let mut a = self.z.clone();
        for i in (0..n).rev() {
            let row = self.row(i);
            let v = a[i] / row[i];
            a[i] = v;
            for (aj, r) in a[..i].iter_mut().zip(row) {
                *aj -= r * v;
            }
        }
        a
    }
}
