use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rdsctl::linalg::rel_frobenius;
use rdsctl::scenario;
use rdsctl::synthesis::{factorize_gram, DEFAULT_RANK_TOL};
use rdsctl::system::*;
use rdsctl::{DMatrix, DVector};

mod common;
use common::{random_coeffs, random_model};

#[test]
fn network_model_at_the_reference_mean() {
    let sys = scenario::network_system();
    let mean = DVector::from_row_slice(&scenario::REFERENCE_MEAN);
    let c = eval_coeff(&sys.coeffs, &mean).unwrap();
    assert!((c.a[(3, 3)] - 0.4403).abs() < 1e-15);
    assert!((c.a[(5, 3)] - 0.1739).abs() < 1e-15);
    assert!((c.a[(2, 3)] + 0.5003).abs() < 1e-15);
    assert!((c.a[(5, 5)] - 0.1739).abs() < 1e-15);
    assert_eq!(c.d, DMatrix::zeros(3, 1));

    let x = DVector::from_fn(6, |i, _| i as f64 + 1.0);
    let y = sys.output(&x, &DVector::zeros(1), &mean).unwrap();
    assert_eq!(y.as_slice(), &[2.0, 4.0, 6.0]);
}

#[test]
fn network_gram_has_rank_four() {
    let sys = scenario::network_system();
    let gram = gram_closed_form(&sys.coeffs, &scenario::reference_model()).unwrap();
    assert_eq!(gram.matrix().nrows(), 42);
    let factor = factorize_gram(&gram, DEFAULT_RANK_TOL).unwrap();
    assert_eq!(factor.nbar(), 4);
    let recon = factor.gbar().transpose() * factor.gbar();
    assert!(rel_frobenius(&recon, gram.matrix()) < 1e-8);

    // Without covariance the three parameter directions collapse into the mean.
    let nominal = gram_closed_form(&sys.coeffs, &scenario::reference_model().without_covariance()).unwrap();
    assert_eq!(factorize_gram(&nominal, DEFAULT_RANK_TOL).unwrap().nbar(), 1);
}

#[test]
fn monte_carlo_gram_agrees_with_the_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..20 {
        let (n, m, z) = (
            rng.random_range(1..=4),
            rng.random_range(1..=4),
            rng.random_range(1..=4),
        );
        let coeffs = random_coeffs(&mut rng, n, m, 1, z);
        let model = random_model(&mut rng, z);
        let exact = gram_closed_form(&coeffs, &model).unwrap();
        let mc = gram_monte_carlo(&coeffs, &model, 1_000_000, i).unwrap();
        let err = rel_frobenius(mc.matrix(), exact.matrix());
        assert!(err < 1e-2, "instance {i} (n={n}, m={m}, Z={z}): {err}");
    }
}

#[test]
fn empirical_gram_of_model_draws_converges() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let coeffs = random_coeffs(&mut rng, 2, 1, 1, 2);
    let model = random_model(&mut rng, 2);
    let sampler = model.sampler().unwrap();
    let mut draw_rng = rdsctl::rng::rng_from_seed(8);
    let samples: Vec<DVector<f64>> = (0..1_000_000).map(|_| sampler.sample(&mut draw_rng)).collect();
    let emp = gram_empirical(&coeffs, &samples).unwrap();
    let exact = gram_closed_form(&coeffs, &model).unwrap();
    assert!(rel_frobenius(emp.matrix(), exact.matrix()) < 1e-2);

    // The window statistics of a sample-backed model are its own moments.
    let from = DistributionModel::from_samples(samples[..1000].to_vec()).unwrap();
    let (mean, cov) = sample_moments(from.samples().unwrap()).unwrap();
    assert!((mean - from.mean()).amax() < 1e-9);
    assert!((cov - from.covariance()).amax() < 1e-9);
}

#[test]
fn step_is_the_two_call_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..10 {
        let (n, m, p, z) = (3, 2, 2, 3);
        let sys = RandomLinearSystem::new(random_coeffs(&mut rng, n, m, p, z), "random");
        let x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let u = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let xi = DVector::from_fn(z, |_, _| rng.random_range(-1.0..1.0));
        let c = eval_coeff(&sys.coeffs, &xi).unwrap();
        let step = sys.step(&x, &u, &xi).unwrap();
        assert!((step - (&c.a * &x + &c.b * &u)).norm() < 1e-13);
        let y = sys.output(&x, &u, &xi).unwrap();
        assert!((y - (&c.c * &x + &c.d * &u)).norm() < 1e-13);
    }
}
