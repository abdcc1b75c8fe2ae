//! Oracles shared by the integration tests.

use nalgebra::Matrix4;

use wellbath::linalg::C64;

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Concurrence from the eigenvalues of the non-Hermitian `ρρ̃`, by complex Schur
/// decomposition.
pub fn concurrence_by_schur(rho: &Matrix4<C64>) -> f64 {
    #[rustfmt::skip]
    let sy = Matrix4::new(
        c(0.0), c(0.0), c(0.0), c(-1.0),
        c(0.0), c(0.0), c(1.0), c(0.0),
        c(0.0), c(1.0), c(0.0), c(0.0),
        c(-1.0), c(0.0), c(0.0), c(0.0),
    );
    let tilde = sy * rho.conjugate() * sy;
    let mut l: Vec<f64> = nalgebra::Schur::new(rho * tilde).eigenvalues().expect("complex Schur form is triangular").iter().map(|z| z.re.max(0.0).sqrt()).collect();
    l.sort_by(|a, b| b.total_cmp(a));
    (l[0] - l[1] - l[2] - l[3]).max(0.0)
}
