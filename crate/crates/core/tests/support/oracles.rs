//! Dense reference computations against the structured implementations.

use latticefind::image::{loss, render};
use latticefind::solver::{del_curve, restricted_least_squares};
use latticefind::{AtomMap, DesignVectors, Image, Site};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

/// Column `vec(u_m v_nᵀ)` in row-major pixel order.
fn column(d: &DesignVectors, s: Site) -> DVector<f64> {
    let (rows, cols) = d.dims();
    DVector::from_fn(rows * cols, |k, _| d.u()[[k / cols, s.m - 1]] * d.v()[[k % cols, s.n - 1]])
}

fn dense_design(d: &DesignVectors, sites: &[Site]) -> DMatrix<f64> {
    let cols: Vec<DVector<f64>> = sites.iter().map(|&s| column(d, s)).collect();
    DMatrix::from_columns(&cols)
}

fn vec_image(y: &Image) -> DVector<f64> {
    DVector::from_iterator(y.rows() * y.cols(), y.pixels().iter().copied())
}

fn random_sites(rng: &mut ChaCha8Rng, rows: usize, cols: usize, k: usize) -> Vec<Site> {
    let mut out: Vec<Site> = Vec::new();
    while out.len() < k {
        let s = Site::new(rng.random_range(1..=rows), rng.random_range(1..=cols));
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

fn random_image(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Image {
    Image::new(ndarray::Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..2.0))).unwrap()
}

pub fn restricted_least_squares_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..60 {
        let rows = rng.random_range(6..=20);
        let cols = rng.random_range(6..=20);
        let tau2 = rng.random_range(0.4..3.0);
        let k = rng.random_range(1..=8);
        let d = DesignVectors::build(tau2, rows, cols).unwrap();
        let sites = random_sites(&mut rng, rows, cols, k);
        let y = random_image(&mut rng, rows, cols);

        let x = dense_design(&d, &sites);
        let gram = x.transpose() * &x;
        let rhs = x.transpose() * vec_image(&y);
        let want = gram.lu().solve(&rhs).expect("nonsingular Gram matrix");

        let got = restricted_least_squares(&y, &d, &sites, 0.0).unwrap();
        for (i, &s) in sites.iter().enumerate() {
            assert!(close(got.get(s), want[i], 1e-8), "case {case}: site {s} got {} want {}", got.get(s), want[i]);
        }
        assert_eq!(got.len(), sites.iter().filter(|&&s| got.get(s) != 0.0).count());
    }
}

pub fn del_curve_matches_dense_projections() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..30 {
        let rows = rng.random_range(6..=20);
        let cols = rng.random_range(6..=20);
        let tau2 = rng.random_range(0.4..3.0);
        let k = rng.random_range(2..=8);
        let d = DesignVectors::build(tau2, rows, cols).unwrap();
        let sites = random_sites(&mut rng, rows, cols, k);
        let y = random_image(&mut rng, rows, cols);
        // Distinct coefficient values fix the ranking.
        let coeffs =
            AtomMap::from_entries(rows, cols, sites.iter().enumerate().map(|(i, &s)| (s, (k - i) as f64))).unwrap();

        let yv = vec_image(&y);
        let mn = rows * cols;
        let proj = |j: usize| -> DMatrix<f64> {
            if j == 0 {
                return DMatrix::zeros(mn, mn);
            }
            let x = dense_design(&d, &sites[..j]);
            let inv = (x.transpose() * &x).try_inverse().expect("nonsingular");
            &x * inv * x.transpose()
        };
        let got = del_curve(&y, &d, &coeffs).unwrap();
        assert_eq!(got.len(), k - 1);
        for (j, del) in got {
            let want = ((proj(j + 1) - proj(j)) * &yv).norm_squared();
            assert!(close(del, want, 1e-8), "case {case}: Del({j}) got {del} want {want}");
        }
    }
}

fn elementwise_render(a: &AtomMap, tau2: f64) -> ndarray::Array2<f64> {
    let (rows, cols) = a.dims();
    ndarray::Array2::from_shape_fn((rows, cols), |(i, j)| {
        a.iter()
            .map(|(s, alpha)| {
                let di = (i + 1) as f64 - s.m as f64;
                let dj = (j + 1) as f64 - s.n as f64;
                alpha * (-(di * di) / tau2).exp() * (-(dj * dj) / tau2).exp()
            })
            .sum()
    })
}

pub fn render_and_loss_match_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..40 {
        let rows = rng.random_range(1..=25);
        let cols = rng.random_range(1..=25);
        let tau2 = rng.random_range(0.3..8.0);
        let d = DesignVectors::build(tau2, rows, cols).unwrap();
        let k = rng.random_range(0..=(rows * cols).min(12));
        let sites = random_sites(&mut rng, rows, cols, k);
        let a = AtomMap::from_entries(rows, cols, sites.iter().map(|&s| (s, rng.random_range(-2.0..2.0)))).unwrap();
        let want = elementwise_render(&a, tau2);
        let got = render(&a, &d).unwrap();
        for (g, w) in got.pixels().iter().zip(want.iter()) {
            assert!((g - w).abs() <= 1e-10, "render {g} vs {w}");
        }
        let y = random_image(&mut rng, rows, cols);
        let want_loss: f64 = y.pixels().iter().zip(want.iter()).map(|(p, w)| (p - w) * (p - w)).sum();
        let got_loss = loss(&a, &d, &y).unwrap();
        assert!(close(got_loss, want_loss, 1e-10), "loss {got_loss} vs {want_loss}");
    }
}
