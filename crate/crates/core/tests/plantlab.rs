use rdsctl::plantlab::*;
use rdsctl::scenario;
use rdsctl::system::{gram_closed_form, gram_empirical, AffineCoefficients, DistributionModel, RandomLinearSystem};
use rdsctl::{DMatrix, DVector, IdentificationResult, Plant};

/// Brute-force three-stage register: feedback = b3 xor b2, output = b3.
fn brute_force_order3() -> Vec<f64> {
    let mut b = [1u8, 1, 1]; // stages 1..=3
    (0..7)
        .map(|_| {
            let out = b[2];
            let fb = b[2] ^ b[1];
            b = [fb, b[0], b[1]];
            if out == 1 {
                1.0
            } else {
                -1.0
            }
        })
        .collect()
}

#[test]
fn order_three_sequence_matches_the_register_and_autocorrelation() {
    let seq = mls(3, Some(&[3, 2]), 7, 1.0).unwrap();
    assert_eq!(seq, brute_force_order3());
    for lag in 1..7 {
        let r: f64 = (0..7).map(|i| seq[i] * seq[(i + lag) % 7]).sum::<f64>() / 7.0;
        assert!((r + 1.0 / 7.0).abs() < 1e-15, "lag {lag}: {r}");
    }
    let scaled = mls(3, Some(&[3, 2]), 7, 2.5).unwrap();
    let r: f64 = (0..7).map(|i| scaled[i] * scaled[(i + 1) % 7]).sum::<f64>() / 7.0;
    assert!((r + 2.5 * 2.5 / 7.0).abs() < 1e-12);
}

#[test]
fn default_sequences_have_full_period_and_balance() {
    for order in 3..=12 {
        let period = (1usize << order) - 1;
        let seq = mls(order, None, 2 * period + 5, 1.0).unwrap();
        for i in 0..period + 5 {
            assert_eq!(seq[i], seq[i + period], "order {order}");
        }
        // No shorter period divides the full one.
        for p in 1..period {
            if period.is_multiple_of(p) {
                assert!((0..period).any(|i| seq[i] != seq[i + p]), "order {order} period {p}");
            }
        }
        let plus = seq[..period].iter().filter(|&&v| v > 0.0).count();
        assert_eq!(plus, period - plus + 1, "order {order}");
    }
}

#[test]
fn frozen_networked_plant_matches_the_hand_product() {
    let mut plant = NetworkedPlant::with_laws(
        0,
        ScalarLaw { mean: 0.8, std_dev: 0.0 },
        ScalarLaw { mean: 0.2, std_dev: 0.0 },
    )
    .unwrap();
    assert_eq!(plant.true_state(), DVector::from_element(6, 1.0));
    let y = plant.step(&DVector::zeros(1)).unwrap();
    assert_eq!(y.as_slice(), &[1.0, 1.0, 1.0]);
    // q = 1: -0.4; 1 + 1.3 + 0.4; -0.6; 0.4 + 1 + 0.56; -0.8; 0.2 + 1 + 0.2
    let expected = [-0.4, 2.7, -0.6, 1.96, -0.8, 1.4];
    for (got, want) in plant.true_state().iter().zip(expected) {
        assert!((got - want).abs() < 1e-15);
    }
    let y = plant.step(&DVector::zeros(1)).unwrap();
    for (got, want) in y.iter().zip([2.7, 1.96, 1.4]) {
        assert!((got - want).abs() < 1e-15);
    }
}

#[test]
fn lti_networked_plant_matches_dense_simulation() {
    let (s1, s2) = (0.8, 0.2);
    let mut plant = NetworkedPlant::with_laws(
        3,
        ScalarLaw { mean: s1, std_dev: 0.0 },
        ScalarLaw { mean: s2, std_dev: 0.0 },
    )
    .unwrap();
    let a = NetworkedPlant::state_matrix(s1, s2);
    let b = NetworkedPlant::input_matrix();
    let c = NetworkedPlant::output_matrix();
    let inputs = mls(6, None, 60, 0.7).unwrap();
    let mut q = DVector::from_element(6, 1.0);
    for &u in &inputs {
        let u = DVector::from_element(1, u);
        let y = plant.step(&u).unwrap();
        assert!((y - &c * &q).norm() < 1e-12);
        q = &a * &q + &b * &u;
        let scale = q.norm().max(1.0);
        assert!((plant.true_state() - &q).norm() < 1e-12 * scale);
    }
}

#[test]
fn networked_plant_mean_matches_the_controller_model() {
    let (a, b) = scenario::network_system()
        .coeffs
        .eval_ab(&DVector::from_row_slice(&scenario::TRUE_PARAMETER_MEAN))
        .unwrap();
    assert!((a - NetworkedPlant::state_matrix(0.8, 0.2)).amax() < 1e-15);
    assert_eq!(b, NetworkedPlant::input_matrix());
}

#[test]
fn plants_are_deterministic_per_seed() {
    let run = |plant: &mut dyn Plant| -> Vec<DVector<f64>> {
        (0..30).map(|k| plant.step(&DVector::from_element(1, (k as f64).sin())).unwrap()).collect()
    };
    let mut a = make_networked_plant(5);
    let mut b = make_networked_plant(5);
    let first = run(&mut a);
    assert_eq!(first, run(&mut b));
    assert_ne!(first, run(&mut make_networked_plant(6)));
    a.reset(5);
    assert_eq!(run(&mut a), first);

    let model = scenario::reference_model();
    let sys = scenario::network_system();
    let x0 = DVector::from_element(6, 1.0);
    let mut p = make_model_plant(sys.clone(), &model, x0.clone(), 8).unwrap();
    let mut q = make_model_plant(sys, &model, x0, 8).unwrap();
    assert_eq!(run(&mut p), run(&mut q));
}

#[test]
fn zero_covariance_model_plant_is_the_mean_lti_system() {
    let sys = scenario::network_system();
    let model = scenario::reference_model().without_covariance();
    let (a, b) = sys.coeffs.eval_ab(model.mean()).unwrap();
    let mut plant = make_model_plant(sys, &model, DVector::from_element(6, 1.0), 1).unwrap();
    let mut x = DVector::from_element(6, 1.0);
    for k in 0..20 {
        let u = DVector::from_element(1, if k % 3 == 0 { 1.0 } else { -0.5 });
        plant.step(&u).unwrap();
        x = &a * &x + &b * &u;
        assert!((plant.true_state() - &x).norm() < 1e-12 * x.norm().max(1.0));
    }
}

#[test]
fn model_plant_one_step_moments_match_the_gram() {
    // n = 2, m = 1, Z = 2 with correlated parameters.
    let mut c = AffineCoefficients::zeros(2, 1, 1, 2).unwrap();
    *c.term_mut('A', 0).unwrap() = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.7]);
    *c.term_mut('A', 1).unwrap() = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.3, 0.0]);
    *c.term_mut('A', 2).unwrap() = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.0, -1.0]);
    *c.term_mut('B', 0).unwrap() = DMatrix::from_column_slice(2, 1, &[1.0, 0.5]);
    *c.term_mut('B', 2).unwrap() = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
    c.term_mut('C', 0).unwrap()[(0, 0)] = 1.0;
    let sys = RandomLinearSystem::new(c, "moments");
    let model = DistributionModel::new(
        DVector::from_vec(vec![0.3, -0.2]),
        DMatrix::from_row_slice(2, 2, &[0.2, 0.05, 0.05, 0.1]),
    )
    .unwrap();
    let gram = gram_closed_form(&sys.coeffs, &model).unwrap();
    let x = DVector::from_vec(vec![1.0, -2.0]);
    let u = DVector::from_element(1, 0.5);

    // x+_i = r . w_i with w_i holding x at row i of A and u at row i of B.
    let w = |i: usize| {
        let mut v = DVector::zeros(6);
        v[2 * i] = x[0];
        v[2 * i + 1] = x[1];
        v[4 + i] = u[0];
        v
    };
    let predicted = DMatrix::from_fn(2, 2, |i, j| (w(i).transpose() * gram.matrix() * w(j))[(0, 0)]);

    // One step from x0 per seed; reset restores x0 and reseeds.
    let mut plant = make_model_plant(sys, &model, x.clone(), 0).unwrap();
    let draws = 100_000u64;
    let mut second = DMatrix::zeros(2, 2);
    for seed in 0..draws {
        plant.reset(seed);
        plant.step(&u).unwrap();
        let xn = plant.true_state();
        second += &xn * xn.transpose();
    }
    second /= draws as f64;
    let rel = (&second - &predicted).norm() / predicted.norm();
    assert!(rel < 0.02, "relative error {rel}");
}

fn identify_exact(seed: u64, k1: usize) -> IdentificationResult {
    let sys = scenario::network_system();
    let truth = DistributionModel::deterministic(DVector::from_row_slice(&scenario::TRUE_PARAMETER_MEAN)).unwrap();
    let mut plant = make_model_plant(sys.clone(), &truth, DVector::from_element(6, 1.0), seed).unwrap();
    let mut cfg = IdentificationConfig::networked();
    cfg.k1 = k1;
    cfg.amplitude = 1.0;
    cfg.enkf.seed = seed;
    identify(&mut plant, &sys, &cfg).unwrap()
}

#[test]
fn exact_model_identification_recovers_the_constant_parameter() {
    let res = identify_exact(3, 80);
    for (got, want) in res.mean().iter().zip(scenario::TRUE_PARAMETER_MEAN) {
        assert!((got - want).abs() < 0.05, "mean {}", res.mean().transpose());
    }
}

#[test]
fn single_sample_window_has_zero_covariance() {
    let res = identify_exact(1, 0);
    assert_eq!(res.window().len(), 1);
    assert!(res.covariance().iter().all(|&v| v == 0.0));
    assert_eq!(res.mean(), &res.trace[20].xi_filt);
}

#[test]
fn trace_reaggregates_to_the_reported_moments() {
    let res = scenario::run_identification(4).unwrap();
    assert_eq!(res.trace.len(), 101);
    let window = res.window();
    assert_eq!(window.len(), 81);
    let n = window.len() as f64;
    let mean = window.iter().fold(DVector::zeros(3), |acc, w| acc + w) / n;
    let cov = window
        .iter()
        .fold(DMatrix::zeros(3, 3), |acc, w| acc + (w - &mean) * (w - &mean).transpose())
        / (n - 1.0);
    assert!((&mean - res.mean()).amax() < 1e-12);
    assert!((&cov - res.covariance()).amax() < 1e-12);
    let gram = gram_empirical(&scenario::network_system().coeffs, &window).unwrap();
    assert!((gram.matrix() - res.empirical_gram.matrix()).amax() < 1e-12);

    let csv = res.trace_csv();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "k,u1,y1,y2,y3,x1,x2,x3,x4,x5,x6,xi1,xi2,xi3"
    );
    assert_eq!(lines.count(), 101);
}

#[test]
fn identification_is_deterministic_per_seed() {
    let a = scenario::run_identification(9).unwrap();
    let b = scenario::run_identification(9).unwrap();
    assert_eq!(a.trace_csv(), b.trace_csv());
    assert_ne!(a.trace_csv(), scenario::run_identification(10).unwrap().trace_csv());
}

#[test]
fn identification_checks_plant_dimensions() {
    let sys = scenario::network_system();
    let other = RandomLinearSystem::new(AffineCoefficients::zeros(2, 1, 2, 1).unwrap(), "small");
    let model = DistributionModel::deterministic(DVector::zeros(1)).unwrap();
    let mut plant = make_model_plant(other, &model, DVector::zeros(2), 0).unwrap();
    assert!(identify(&mut plant, &sys, &IdentificationConfig::networked()).is_err());
}
