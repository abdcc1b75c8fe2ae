use std::f64::consts::PI;

use wellbath::well::{dipole_element, WellModel, WellSpec};

/// Half-splittings of the default geometry from an independent bracketed
/// root solve of the even/odd matching conditions (scipy `brentq`).
const G_ORACLE: [f64; 20] = [
    6.207938052504858e-10,
    2.637549512130022e-09,
    6.564873977765728e-09,
    1.345505040717399e-08,
    2.528379106081502e-08,
    4.573598388901701e-08,
    8.181788757610775e-08,
    1.472631048216044e-07,
    2.700133734379051e-07,
    5.094077266676322e-07,
    9.977644310765754e-07,
    2.047038449859429e-06,
    4.441468718141550e-06,
    1.030627716147592e-05,
    2.593950355844754e-05,
    7.216204625137834e-05,
    2.280357001609445e-04,
    8.547659450357514e-04,
    4.110348241596284e-03,
    3.029839420028679e-02,
];

#[test]
fn splittings_match_frozen_root_solve() {
    let model = WellModel::new(WellSpec::default()).unwrap();
    for (i, (g, want)) in model.splittings().iter().zip(G_ORACLE).enumerate() {
        // Both sides difference two energies near E_i, so agreement is
        // bounded by a few ulps of E_i.
        let e = ((i + 1) * (i + 1)) as f64;
        let tol = 4e-15 * e + 1e-12 * want;
        assert!((g - want).abs() <= tol, "level {}: {g:e} vs {want:e}", i + 1);
    }
}

/// Eigenvalues of a symmetric tridiagonal matrix below `x` (Sturm count).
fn count_below(diag: &[f64], off: f64, x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for (i, d) in diag.iter().enumerate() {
        let o2 = if i == 0 { 0.0 } else { off * off };
        q = d - x - o2 / q;
        if q == 0.0 {
            q = f64::EPSILON * (d.abs() + off.abs());
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

fn kth_eigenvalue(diag: &[f64], off: f64, k: usize, lo: f64, hi: f64) -> f64 {
    let (mut lo, mut hi) = (lo, hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count_below(diag, off, mid) > k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Second-order finite differences of `−s ψ'' + V ψ` on `[−8, 8]` with hard walls.
fn finite_difference_splittings(points: usize, levels: usize) -> Vec<f64> {
    let spec = WellSpec::default();
    let s = spec.kinetic_scale();
    let wall = spec.well_width + spec.barrier_half_width;
    let h = 2.0 * wall / (points + 1) as f64;
    let diag: Vec<f64> = (1..=points)
        .map(|j| {
            let x = -wall + j as f64 * h;
            // Nodes on the barrier edge take the mean of the two sides.
            let d = x.abs() - spec.barrier_half_width;
            let v = if d.abs() < 0.5 * h * 1e-6 {
                0.5 * spec.barrier_height
            } else if d < 0.0 {
                spec.barrier_height
            } else {
                0.0
            };
            2.0 * s / (h * h) + v
        })
        .collect();
    let off = -s / (h * h);
    let hi = 4.0 * s / (h * h) + spec.barrier_height;
    (0..levels)
        .map(|i| {
            let e0 = kth_eigenvalue(&diag, off, 2 * i, 0.0, hi);
            let e1 = kth_eigenvalue(&diag, off, 2 * i + 1, 0.0, hi);
            0.5 * (e1 - e0)
        })
        .collect()
}

#[test]
fn upper_splittings_match_finite_difference_diagonalisation() {
    let model = WellModel::new(WellSpec::default()).unwrap();
    // Richardson extrapolation of two grids removes the O(h²) term.
    let coarse = finite_difference_splittings(3_999, 20);
    let fine = finite_difference_splittings(7_999, 20);
    // Lower splittings fall below the Sturm-count round-off on these grids.
    for i in 15..20 {
        let extrapolated = (4.0 * fine[i] - coarse[i]) / 3.0;
        let g = model.splittings()[i];
        let rel = (extrapolated - g).abs() / g;
        assert!(rel < 1e-5, "level {}: fd {extrapolated:e} vs {g:e} ({rel:e})", i + 1);
    }
}

#[test]
fn dipole_closed_form_matches_quadrature() {
    let width: f64 = 7.0;
    let psi = |n: usize, x: f64| (2.0 / width).sqrt() * (n as f64 * PI * x / width).sin();
    for (j, k) in [(1usize, 2usize), (2, 3), (1, 4), (3, 6), (5, 8)] {
        // Composite Simpson on [0, L] with the origin moved to the centre.
        let n = 20_000;
        let h = width / n as f64;
        let f = |x: f64| psi(j, x) * (x - 0.5 * width) * psi(k, x);
        let mut sum = f(0.0) + f(width);
        for m in 1..n {
            sum += if m % 2 == 1 { 4.0 } else { 2.0 } * f(m as f64 * h);
        }
        let quad = sum * h / 3.0;
        let closed = dipole_element(j, k, width);
        assert!((quad - closed).abs() < 1e-10, "({j},{k}): {quad} vs {closed}");
    }
    assert_eq!(dipole_element(1, 3, width), 0.0);
    assert_eq!(dipole_element(2, 2, width), 0.0);
}
