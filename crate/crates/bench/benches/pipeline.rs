use criterion::{criterion_group, criterion_main, Criterion};
use rdsctl::enkf::{augmented_model, filter_update, init_ensemble, predict, predict_output};
use rdsctl::plantlab::NetworkedPlant;
use rdsctl::rng::rng_from_seed;
use rdsctl::sdp::max_min_eig_within;
use rdsctl::simulate::run_closed_loop;
use rdsctl::synthesis::{
    build_synthesis_lmi, factorize_gram, pack_xy, synthesize, trace_cap_domain, GramFactor,
    DEFAULT_RANK_TOL,
};
use rdsctl::system::{gram_closed_form, AffineCoefficients, DistributionModel};
use rdsctl::{scenario, DMatrix, DVector, SdpOptions, SynthesisOptions};

fn network_factor() -> GramFactor {
    let gram = gram_closed_form(&scenario::network_system().coeffs, &scenario::reference_model()).unwrap();
    factorize_gram(&gram, DEFAULT_RANK_TOL).unwrap()
}

/// Two states, one input, two correlated parameters.
fn small_factor() -> GramFactor {
    let mut c = AffineCoefficients::zeros(2, 1, 1, 2).unwrap();
    *c.term_mut('A', 0).unwrap() = DMatrix::from_row_slice(2, 2, &[0.9, 0.3, -0.2, 1.1]);
    *c.term_mut('A', 1).unwrap() = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
    *c.term_mut('A', 2).unwrap() = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.5, 0.0]);
    *c.term_mut('B', 0).unwrap() = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
    let model = DistributionModel::new(
        DVector::from_vec(vec![0.1, 0.2]),
        DMatrix::from_row_slice(2, 2, &[0.04, 0.01, 0.01, 0.09]),
    )
    .unwrap();
    factorize_gram(&gram_closed_form(&c, &model).unwrap(), DEFAULT_RANK_TOL).unwrap()
}

fn sdp_solve(c: &mut Criterion) {
    let factor = network_factor();
    let opts = SynthesisOptions::default();
    let (n, m) = (factor.n(), factor.m());
    let map = build_synthesis_lmi(&factor, 0.9).unwrap();
    let domain = trace_cap_domain(n, map.var_count(), opts.max_condition).unwrap();
    let sdp = SdpOptions {
        start: Some(pack_xy(&(DMatrix::identity(n, n) * (0.5 * opts.max_condition)), &DMatrix::zeros(m, n))),
        ..SdpOptions::default()
    };
    c.bench_function("sdp/networked synthesis LMI at lambda 0.9", |b| {
        b.iter(|| max_min_eig_within(&map, &domain, &sdp).unwrap())
    });
}

fn synthesis(c: &mut Criterion) {
    let factor = small_factor();
    let opts = SynthesisOptions::default();
    c.bench_function("synthesis/two-state bisection", |b| b.iter(|| synthesize(&factor, &opts).unwrap()));
}

fn enkf_step(c: &mut Criterion) {
    let model = augmented_model(
        scenario::network_system(),
        scenario::process_noise(),
        scenario::measurement_noise(),
    )
    .unwrap();
    let psi0 = DVector::from_fn(9, |i, _| if i < 6 { 1.0 } else { 0.3 });
    let ens = init_ensemble(&psi0, scenario::ENSEMBLE_SIZE).unwrap();
    let u = DVector::from_element(1, 1.0);
    let y = DVector::from_element(3, 0.5);
    let mut rng = rng_from_seed(1);
    c.bench_function("enkf/networked step, 300 members", |b| {
        b.iter(|| {
            let (forecast, _) = predict(&ens, &u, &model, &mut rng).unwrap();
            let out = predict_output(&forecast, &u, &model, &mut rng).unwrap();
            filter_update(&forecast, &out, &y, None).unwrap()
        })
    });
}

fn closed_loop_path(c: &mut Criterion) {
    let ctrl = scenario::controller(scenario::row_gain(&scenario::REFERENCE_GAIN)).unwrap();
    let sim = scenario::simulation(1, 0);
    let mut plant = NetworkedPlant::new(0);
    let mut group = c.benchmark_group("simulate");
    group.sample_size(20);
    group.bench_function("networked closed-loop path, 101 steps", |b| {
        b.iter(|| run_closed_loop(&mut plant, &ctrl, &sim, 7).unwrap())
    });
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = sdp_solve, synthesis, enkf_step, closed_loop_path
}
criterion_main!(benches);
