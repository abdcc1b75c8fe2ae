mod common;

use common::{c, concurrence_by_schur};
use nalgebra::Matrix4;

use wellbath::bath::CalibratedBath;
use wellbath::integrator::{Method, StepperConfig};
use wellbath::linalg::C64;
use wellbath::pair::{
    concurrence, run_general, run_reduced, thermal_bell_field, BellKind, PairGeneral, PairReduced,
};
use wellbath::single::CouplingSpec;
use wellbath::well::{WellModel, WellSpec};

fn werner(p: f64) -> Matrix4<C64> {
    BellKind::PsiMinus.projector() * c(p) + Matrix4::identity() * c(0.25 * (1.0 - p))
}

#[test]
fn werner_concurrence_matches_closed_form_and_root_oracle() {
    for p in [0.0, 0.2, 1.0 / 3.0, 0.5, 0.9, 1.0] {
        let rho = werner(p);
        let got = concurrence(&rho).unwrap();
        let closed = (0.5 * (3.0 * p - 1.0)).max(0.0);
        let schur = concurrence_by_schur(&rho);
        assert!((got - closed).abs() < 1e-10, "p = {p}: {got} vs {closed}");
        assert!((schur - closed).abs() < 1e-10, "p = {p}: schur {schur} vs {closed}");
    }
}

#[test]
fn mixed_state_concurrence_matches_root_oracle() {
    // Bell/product mixtures with a local phase, pseudo-randomly weighted.
    let mut seed = 0x2545_f491_4f6c_dd1du64;
    let mut next = || {
        seed ^= seed << 13;
        seed ^= seed >> 7;
        seed ^= seed << 17;
        (seed >> 11) as f64 / (1u64 << 53) as f64
    };
    for _ in 0..50 {
        let w: Vec<f64> = (0..4).map(|_| next()).collect();
        let total: f64 = w.iter().sum::<f64>() + 0.3;
        let mut rho = Matrix4::<C64>::zeros();
        for (kind, wk) in BellKind::ALL.iter().zip(&w) {
            rho += kind.projector() * c(wk / total);
        }
        let mut ll = Matrix4::<C64>::zeros();
        ll[(0, 0)] = c(0.3 / total);
        rho += ll;
        let phase = C64::new(0.0, 6.0 * next()).exp();
        let u = Matrix4::from_diagonal(&nalgebra::Vector4::new(c(1.0), phase, c(1.0), phase));
        let rho = u * rho * u.adjoint();
        let got = concurrence(&rho).unwrap();
        let oracle = concurrence_by_schur(&rho);
        assert!((got - oracle).abs() < 1e-10, "{got} vs {oracle}");
    }
}

#[test]
fn blind_coupling_keeps_the_bell_sparsity() {
    let model = WellModel::new(WellSpec::default().with_levels(3)).unwrap();
    let bath = CalibratedBath::for_ratio(&model, 5.0, 5.0).unwrap();
    let blind = CouplingSpec::SIDE_BLIND;
    let sys = PairGeneral::new(&model, &bath.table, blind, blind).unwrap();
    let start = thermal_bell_field(BellKind::PhiPlus, model.energies(), 5.0);
    let t_max = 5.0 / bath.averages.g;
    let run = run_general(&sys, &start, &StepperConfig::new(Method::Exponential, t_max, 50)).unwrap();
    let allowed = [(0, 0), (1, 1), (2, 2), (2, 3), (3, 2), (3, 3)];
    for field in &run.fields {
        for a in 0..4 {
            for b in 0..4 {
                if !allowed.contains(&(a, b)) {
                    assert!(field.component_max(a, b) < 1e-10, "({a},{b}) grew to {:e}", field.component_max(a, b));
                }
            }
        }
        assert!((field.total(0, 0) - 0.25).abs() < 1e-10);
        assert!((field.total(1, 1) - 0.25).abs() < 1e-10);
    }
}

#[test]
fn reduced_run_matches_closed_form_and_general_equation() {
    let model = WellModel::new(WellSpec::default().with_levels(3)).unwrap();
    let bath = CalibratedBath::for_ratio(&model, 5.0, 0.05).unwrap();
    let reduced = PairReduced::new(&model, &bath.table).unwrap();
    let blind = CouplingSpec::SIDE_BLIND;
    let general = PairGeneral::new(&model, &bath.table, blind, blind).unwrap();
    let start = thermal_bell_field(BellKind::PhiPlus, model.energies(), 5.0);
    let t_max = 5.0 / bath.averages.g;
    let cfg = StepperConfig::new(Method::Rosenbrock { rel_tol: 1e-10, abs_tol: 1e-14 }, t_max, 20);
    let r = run_reduced(&reduced, &start, &cfg).unwrap();
    let g = run_general(&general, &start, &StepperConfig::new(Method::Exponential, t_max, 20)).unwrap();
    for ((t, fr), fg) in r.t.iter().zip(&r.fields).zip(&g.fields) {
        let closed = reduced.propagate(&start.reduced(), *t);
        for (x, y) in fr.reduced().iter().zip(&closed) {
            assert!((x - y).abs() < 1e-8, "t = {t}: {x} vs {y}");
        }
        for (x, y) in fg.reduced().iter().zip(&closed) {
            assert!((x - y).abs() < 1e-9, "t = {t}: {x} vs {y}");
        }
    }
}

#[test]
fn phi_minus_on_one_level_is_stationary_under_tunneling() {
    let model = WellModel::new(WellSpec::default().with_levels(2)).unwrap();
    let bath = CalibratedBath::for_ratio(&model, 5.0, 0.0).unwrap();
    let reduced = PairReduced::new(&model, &bath.table).unwrap();
    let mut w = vec![0.0; 2];
    w[0] = 1.0;
    let start = wellbath::pair::bell_field(BellKind::PhiMinus, &w, &w).unwrap();
    let t = 10.0 / model.splittings()[0];
    let end = reduced.propagate(&start.reduced(), t);
    for (x, y) in end.iter().zip(start.reduced()) {
        assert!((x - y).abs() < 1e-12);
    }
}
