use wellbath::bath::{boltzmann_weights, coupling_for_ratio, BathSpec, CalibratedBath, RateTable};
use wellbath::fermi::{solve_mu, solve_mu_with_degeneracy};
use wellbath::single::DensityLadder;
use wellbath::well::{WellModel, WellSpec};

// Reference values from an independent 40-digit evaluation of the rate
// formula and Boltzmann sums at T = 5 over 20 levels.
const P1: f64 = 0.5525753120415766860;
const S0: f64 = 1.0618947960470126285;
const MEAN_G: f64 = 2.386837514970354388e-9;
const MEAN_GAMMA_UNIT_Q: f64 = 281.22515341729646521;
const Q_FOR_RATIO_1000: f64 = 9.212645212998375971e-5;
const RATE_1_TO_2: f64 = 109.35517341502512163;
const RATE_2_TO_1: f64 = 199.25811739948165325;
const MU_TWO_FLAVOUR: f64 = 21.352764440185163917;
const MU_ONE_FLAVOUR: f64 = 72.602706825671864675;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn model() -> WellModel {
    WellModel::new(WellSpec::default()).unwrap()
}

#[test]
fn boltzmann_ground_weight_and_entropy() {
    let m = model();
    let p = boltzmann_weights(m.energies(), 5.0);
    assert!(rel(p[0], P1) < 1e-14);
    let s = DensityLadder::thermal_left(m.energies(), 5.0).entropy();
    assert!(rel(s, S0) < 1e-13);
}

#[test]
fn unit_coupling_rates_and_mean_rate() {
    let m = model();
    let table = RateTable::build(&BathSpec::new(5.0, 1.0), &m).unwrap();
    assert!(rel(table.rate(0, 1), RATE_1_TO_2) < 1e-13);
    assert!(rel(table.rate(1, 0), RATE_2_TO_1) < 1e-13);
    assert_eq!(table.rate(0, 2), 0.0);
    let bath = CalibratedBath::with_coupling(&m, BathSpec::new(5.0, 1.0)).unwrap();
    assert!(rel(bath.averages.gamma, MEAN_GAMMA_UNIT_Q) < 1e-13);
    // ⟨g⟩ inherits the cancellation-limited low splittings.
    assert!(rel(bath.averages.g, MEAN_G) < 1e-6);
}

#[test]
fn coupling_calibration() {
    let m = model();
    let q = coupling_for_ratio(1000.0, &m, 5.0, 1.0).unwrap();
    assert!(rel(q, Q_FOR_RATIO_1000) < 1e-6);
    let bath = CalibratedBath::for_ratio(&m, 5.0, 1000.0).unwrap();
    assert!(rel(bath.averages.ratio(), 1000.0) < 1e-12);
}

#[test]
fn chemical_potentials() {
    let e: Vec<f64> = (1..=20).map(|i| (i * i) as f64).collect();
    let two = solve_mu(8.0, 5.0, &e).unwrap();
    assert!((two.mu - MU_TWO_FLAVOUR).abs() < 1e-9);
    assert!(two.residual(&e) < 1e-10);
    let one = solve_mu_with_degeneracy(8.0, 5.0, &e, 1.0).unwrap();
    assert!((one.mu - MU_ONE_FLAVOUR).abs() < 1e-9);
}
