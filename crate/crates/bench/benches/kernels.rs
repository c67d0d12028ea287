use criterion::{black_box, criterion_group, criterion_main, Criterion};
use robust_miso::ammse::{mc_ammse_all, quartic_moment, MomentInputs};
use robust_miso::channel::build_instance;
use robust_miso::conic::{solve_plr, PlrSpec, SolverSettings};
use robust_miso::design::{minimize_power, AlgoConfig};
use robust_miso::{reference_scenario, CMatrix, CVector, ClarabelBackend};

fn plr_solve(c: &mut Criterion) {
    let inst = build_instance(&reference_scenario()).unwrap();
    let spec = PlrSpec::new(inst.clone(), 0.3, vec![1.0; 4]).unwrap();
    let settings = SolverSettings::default();
    c.bench_function("plr_solve_reference_4x4", |b| {
        b.iter(|| solve_plr(black_box(&spec), &ClarabelBackend, &settings).unwrap())
    });
    let algo = AlgoConfig {
        verify: None,
        ..AlgoConfig::default()
    };
    c.bench_function("minimize_power_reference_0.25", |b| {
        b.iter(|| minimize_power(black_box(&inst), 0.25, &algo, &ClarabelBackend).unwrap())
    });
}

fn moments(c: &mut Criterion) {
    let n = 8;
    let a = CMatrix::from_fn(n, n, |i, j| robust_miso::linalg::c(1.0 / (1 + i + j) as f64, 0.0));
    let inputs = MomentInputs {
        mean: CVector::from_element(n, robust_miso::linalg::c(0.5, -0.2)),
        cov_scale: 0.3,
        a: a.clone(),
        b: CMatrix::identity(n, n) + a,
    };
    c.bench_function("quartic_moment_n8", |b| {
        b.iter(|| quartic_moment(black_box(&inputs)).unwrap())
    });
}

fn monte_carlo(c: &mut Criterion) {
    let inst = build_instance(&reference_scenario()).unwrap();
    let algo = AlgoConfig {
        verify: None,
        ..AlgoConfig::default()
    };
    let precoder = minimize_power(&inst, 0.4, &algo, &ClarabelBackend)
        .unwrap()
        .final_precoder;
    c.bench_function("mc_ammse_4000", |b| {
        b.iter(|| mc_ammse_all(black_box(&inst), &precoder, 4000, 1).unwrap())
    });
}

criterion_group!(benches, plr_solve, moments, monte_carlo);
criterion_main!(benches);
