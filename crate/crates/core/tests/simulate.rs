use rdsctl::plantlab::{make_model_plant, make_networked_plant, ModelPlant, NetworkedPlant, ScalarLaw};
use rdsctl::scenario;
use rdsctl::simulate::*;
use rdsctl::synthesis::pole_place_siso_real;
use rdsctl::system::{AffineCoefficients, DistributionModel, RandomLinearSystem};
use rdsctl::{DMatrix, DVector, EnkfConfig, Plant, Result};

/// A 2-state unstable plant, fully observed, with a parameter that does
/// not enter the dynamics.
fn full_observation_system() -> RandomLinearSystem {
    let mut c = AffineCoefficients::zeros(2, 1, 2, 1).unwrap();
    *c.term_mut('A', 0).unwrap() = DMatrix::from_row_slice(2, 2, &[1.1, 0.3, 0.0, 0.8]);
    *c.term_mut('B', 0).unwrap() = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
    *c.term_mut('C', 0).unwrap() = DMatrix::identity(2, 2);
    RandomLinearSystem::new(c, "full observation")
}

fn small_network_controller(gain: &[f64], members: usize) -> Controller {
    Controller::new(ControllerConfig {
        gain: scenario::row_gain(gain),
        enkf: EnkfConfig {
            members,
            ..EnkfConfig::default()
        },
        q: scenario::process_noise(),
        r: scenario::measurement_noise(),
        system: scenario::network_system(),
        psi0: DVector::zeros(9),
        filter_sees_disturbance: true,
    })
    .unwrap()
}

fn short_sim(paths: usize, base_seed: u64) -> SimulationConfig {
    SimulationConfig {
        horizon: 30,
        disturbance: scenario::disturbance(30),
        paths,
        base_seed,
    }
}

#[test]
fn zero_gain_without_disturbance_is_the_free_response() {
    let ctrl = small_network_controller(&[0.0; 6], 20);
    let sim = SimulationConfig {
        horizon: 25,
        disturbance: vec![DVector::zeros(1); 25],
        paths: 1,
        base_seed: 0,
    };
    let frozen = ScalarLaw { mean: 0.8, std_dev: 0.0 };
    let frozen2 = ScalarLaw { mean: 0.2, std_dev: 0.0 };
    let mut plant = NetworkedPlant::with_laws(0, frozen, frozen2).unwrap();
    let traj = run_closed_loop(&mut plant, &ctrl, &sim, 5).unwrap();
    let a = NetworkedPlant::state_matrix(0.8, 0.2);
    let mut q = DVector::from_element(6, 1.0);
    for s in &traj.steps {
        assert_eq!(s.u_applied[0], 0.0);
        assert!((&s.true_state - &q).norm() <= 1e-12 * q.norm().max(1.0));
        q = &a * q;
    }
}

#[test]
fn exact_noise_free_filter_reproduces_state_feedback() {
    let sys = full_observation_system();
    let (a, b) = sys.coeffs.eval_ab(&DVector::zeros(1)).unwrap();
    let f = pole_place_siso_real(&a, &b, &[0.5, 0.3]).unwrap();
    // The initial ensemble counts as filtered one step before the plant's
    // first sample, so start it at the preimage of the plant's x0.
    let x0 = DVector::from_vec(vec![1.0, -2.0]);
    let pre = a.clone().lu().solve(&x0).unwrap();
    let ctrl = Controller::new(ControllerConfig {
        gain: f.clone(),
        enkf: EnkfConfig {
            members: 4,
            ..EnkfConfig::default()
        },
        q: DMatrix::zeros(3, 3),
        r: DMatrix::zeros(2, 2),
        system: sys.clone(),
        psi0: DVector::from_vec(vec![pre[0], pre[1], 0.0]),
        filter_sees_disturbance: true,
    })
    .unwrap();
    let model = DistributionModel::deterministic(DVector::zeros(1)).unwrap();
    let mut plant = make_model_plant(sys, &model, x0.clone(), 0).unwrap();
    let sim = SimulationConfig {
        horizon: 100,
        disturbance: vec![DVector::zeros(1); 100],
        paths: 1,
        base_seed: 0,
    };
    let traj = run_closed_loop(&mut plant, &ctrl, &sim, 1).unwrap();
    let acl = &a + &b * &f;
    let mut x = x0;
    for s in &traj.steps {
        assert!((&s.true_state - &x).norm() < 1e-6, "step {}", s.k);
        assert!((&s.x_estimate - &x).norm() < 1e-6, "step {}", s.k);
        x = &acl * x;
    }
}

#[test]
fn monte_carlo_is_deterministic_and_order_free() {
    let ctrl = small_network_controller(&scenario::REFERENCE_GAIN, 40);
    let sim = short_sim(8, 77);
    let opts = MonteCarloOptions {
        keep_norms: true,
        allow_divergence: false,
    };
    let a = monte_carlo(|| make_networked_plant(0), Some(&ctrl), &sim, &opts).unwrap();
    let b = monte_carlo(|| make_networked_plant(0), Some(&ctrl), &sim, &opts).unwrap();
    assert_eq!(a, b);

    // Paths run one by one in reverse order give the same per-seed norms.
    let norms = a.norms.as_ref().unwrap();
    let mut rev_seeds = a.seeds.clone();
    rev_seeds.reverse();
    let rev_norms: Vec<Vec<f64>> = rev_seeds
        .iter()
        .map(|&s| {
            run_closed_loop(&mut make_networked_plant(123), &ctrl, &sim, s)
                .unwrap()
                .state_norms()
        })
        .collect();
    for (i, path) in rev_norms.iter().enumerate() {
        assert_eq!(path, &norms[norms.len() - 1 - i]);
    }
    let rev = MonteCarloStats::from_norms(rev_seeds, rev_norms, false).unwrap();
    for (x, y) in rev.rms.iter().zip(&a.rms) {
        assert!((x - y).abs() <= 1e-12 * y.abs());
    }

    let other = monte_carlo(|| make_networked_plant(0), Some(&ctrl), &short_sim(8, 78), &opts).unwrap();
    assert_ne!(other.rms, a.rms);
}

#[test]
fn single_path_rms_is_the_state_norm() {
    let ctrl = small_network_controller(&scenario::REFERENCE_GAIN, 30);
    let sim = short_sim(1, 3);
    let stats = monte_carlo(
        || make_networked_plant(0),
        Some(&ctrl),
        &sim,
        &MonteCarloOptions {
            keep_norms: true,
            allow_divergence: false,
        },
    )
    .unwrap();
    assert_eq!(stats.rms, stats.norms.as_ref().unwrap()[0]);
    let csv = stats.to_csv();
    assert!(csv.starts_with("k,rms\n0,"));
    assert_eq!(csv.lines().count(), 31);
}

/// Delegates to a plant but reports garbage through the logging channel.
struct Blindfolded(NetworkedPlant);

impl Plant for Blindfolded {
    fn input_dim(&self) -> usize {
        self.0.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.0.output_dim()
    }
    fn reset(&mut self, seed: u64) {
        self.0.reset(seed)
    }
    fn step(&mut self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.0.step(u)
    }
    fn true_state(&self) -> DVector<f64> {
        DVector::from_element(6, f64::NAN)
    }
}

#[test]
fn logging_channel_does_not_affect_control() {
    let ctrl = small_network_controller(&scenario::REFERENCE_GAIN, 30);
    let sim = short_sim(1, 0);
    let seen = run_closed_loop(&mut make_networked_plant(0), &ctrl, &sim, 42).unwrap();
    let blind = run_closed_loop(&mut Blindfolded(make_networked_plant(0)), &ctrl, &sim, 42).unwrap();
    let bits = |t: &Trajectory| -> Vec<u64> { t.inputs().iter().map(|u| u[0].to_bits()).collect() };
    assert_eq!(bits(&seen), bits(&blind));
    assert!(blind.steps.iter().all(|s| s.true_state[0].is_nan()));
}

#[test]
fn disturbance_reaches_the_plant_on_top_of_feedback() {
    let ctrl = small_network_controller(&scenario::REFERENCE_GAIN, 30);
    let sim = short_sim(1, 0);
    let traj = run_closed_loop(&mut make_networked_plant(0), &ctrl, &sim, 9).unwrap();
    let f = scenario::row_gain(&scenario::REFERENCE_GAIN);
    for s in &traj.steps {
        let u = (&f * &s.x_estimate)[0];
        let d = if s.k < 50 { 10.0 } else { 0.0 };
        assert!((s.u_applied[0] - (u + d)).abs() < 1e-12);
    }
    let csv = traj.to_csv();
    let header = csv.lines().next().unwrap();
    assert_eq!(
        header,
        "k,u1,y1,y2,y3,xhat1,xhat2,xhat3,xhat4,xhat5,xhat6,xihat1,xihat2,xihat3,q1,q2,q3,q4,q5,q6"
    );
}

#[test]
fn open_loop_monte_carlo_needs_no_controller() {
    let sim = short_sim(3, 0);
    let stats = monte_carlo(|| make_networked_plant(0), None, &sim, &MonteCarloOptions::default()).unwrap();
    assert_eq!(stats.rms.len(), 30);
    assert!((stats.rms[0] - 6f64.sqrt()).abs() < 1e-12);
}

#[test]
fn numerical_failures_become_divergent_paths_when_allowed() {
    // A huge gain on the unstable model overflows within the horizon.
    let ctrl = small_network_controller(&[1e30, 0.0, 0.0, 0.0, 0.0, 0.0], 20);
    let sim = short_sim(2, 0);
    let strict = monte_carlo(|| make_networked_plant(0), Some(&ctrl), &sim, &MonteCarloOptions::default());
    assert!(strict.is_err());
    let lenient = monte_carlo(
        || make_networked_plant(0),
        Some(&ctrl),
        &sim,
        &MonteCarloOptions {
            keep_norms: true,
            allow_divergence: true,
        },
    )
    .unwrap();
    assert_eq!(lenient.diverged.len(), 2);
    assert_eq!(*lenient.rms.last().unwrap(), f64::INFINITY);
}

#[test]
fn window_trend_of_identical_paths_has_no_spread() {
    let path: Vec<f64> = (0..40).map(|k| 0.9f64.powi(k)).collect();
    let stats = MonteCarloStats::from_norms(vec![0, 1, 2], vec![path.clone(); 3], true).unwrap();
    let tr = window_trend(&stats, 10, 39, 5).unwrap();
    assert_eq!(tr.len(), 6);
    assert_eq!(tr[0].change, 0.0);
    for w in &tr[1..] {
        assert!(w.change < 0.0);
        assert!(w.change_se < 1e-12);
    }
    let (k1, k2) = (12, 30);
    assert!((convergence_rate(&stats, k1, k2).unwrap() - 0.9).abs() < 1e-12);
    let bare = MonteCarloStats::from_norms(vec![0], vec![path], false).unwrap();
    assert!(window_trend(&bare, 0, 10, 5).is_err());
}

#[test]
fn window_trend_standard_error_matches_a_linearized_oracle() {
    // Two windows of width 1: change = rms[1] - rms[0]. The delta method
    // gives var(change) ~ var(a^2/(2 r1) - b^2/(2 r0)) / N for per-path
    // squares a^2 at step 1 and b^2 at step 0.
    let norms: Vec<Vec<f64>> = (0..50)
        .map(|i| {
            let t = i as f64 / 49.0;
            vec![1.0 + t, 2.0 - t]
        })
        .collect();
    let stats = MonteCarloStats::from_norms((0..50).collect(), norms.clone(), true).unwrap();
    let tr = window_trend(&stats, 0, 1, 1).unwrap();
    let (r0, r1) = (stats.rms[0], stats.rms[1]);
    let d: Vec<f64> = norms
        .iter()
        .map(|p| p[1] * p[1] / (2.0 * r1) - p[0] * p[0] / (2.0 * r0))
        .collect();
    let m = d.iter().sum::<f64>() / 50.0;
    let var = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 49.0;
    assert!((tr[1].change - (r1 - r0)).abs() < 1e-15);
    assert!((tr[1].change_se - (var / 50.0).sqrt()).abs() < 1e-14);
}

#[test]
fn model_plant_controller_dimensions_are_checked() {
    let sys = full_observation_system();
    let model = DistributionModel::deterministic(DVector::zeros(1)).unwrap();
    let mut plant: ModelPlant = make_model_plant(sys, &model, DVector::zeros(2), 0).unwrap();
    let ctrl = small_network_controller(&[0.0; 6], 10);
    assert!(run_closed_loop(&mut plant, &ctrl, &short_sim(1, 0), 0).is_err());
    assert!(Controller::new(ControllerConfig {
        gain: DMatrix::zeros(1, 5),
        ..ctrl.config().clone()
    })
    .is_err());
}
