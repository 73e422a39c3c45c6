//! Plants, excitation signals and identification of the parameter
//! distribution.
//!
//! [`identify`] drives a plant open loop with a maximal-length sequence,
//! runs the EnKF on the augmented model, and treats the filtered parameter
//! estimates over a window as samples of the parameter distribution.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};

use crate::enkf::{
    estimate_param, estimate_state, filter_update, init_ensemble_jittered, predict,
    predict_output, AugmentedModel, EnkfConfig,
};
use crate::error::check_dim;
use crate::rng::{rng_from_seed, GaussianSampler, Rng};
use crate::scenario;
use crate::system::{gram_empirical, DistributionModel, GramMatrix, RandomLinearSystem};
use crate::{Error, Result};

/// A sampled system driven one sample at a time.
///
/// `step(u_k)` returns the measurement `y_k` taken at the current state and
/// input, then advances the state to `k + 1`.
pub trait Plant: Send {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Restores the initial state and reseeds the plant's own randomness.
    fn reset(&mut self, seed: u64);
    fn step(&mut self, u: &DVector<f64>) -> Result<DVector<f64>>;
    /// Internal state, for logging only.
    fn true_state(&self) -> DVector<f64>;
}

/// Gaussian law of a scalar plant coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarLaw {
    pub mean: f64,
    pub std_dev: f64,
}

impl ScalarLaw {
    fn draw(&self, rng: &mut Rng) -> f64 {
        if self.std_dev == 0.0 {
            return self.mean;
        }
        Normal::new(self.mean, self.std_dev)
            .expect("validated standard deviation")
            .sample(rng)
    }
}

/// The three-subsystem ring with random coefficients `s1` and `s2`.
///
/// Subsystem 2 has the self-loop `0.7 s1`, subsystem 3 is driven by and
/// feeds back through `s2`, and the coupling from subsystem 2 into
/// subsystem 1 has weight `-0.6`; the rest matches the mean model of
/// [`scenario::network_system`].
#[derive(Debug, Clone)]
pub struct NetworkedPlant {
    s1: ScalarLaw,
    s2: ScalarLaw,
    q0: DVector<f64>,
    q: DVector<f64>,
    rng: Rng,
}

pub const NETWORK_S1: ScalarLaw = ScalarLaw {
    mean: 0.8,
    std_dev: 0.2,
};
pub const NETWORK_S2: ScalarLaw = ScalarLaw {
    mean: 0.2,
    std_dev: 0.3,
};

impl NetworkedPlant {
    pub fn new(seed: u64) -> Self {
        Self::with_laws(seed, NETWORK_S1, NETWORK_S2).expect("built-in laws are valid")
    }

    /// Overrides the coefficient laws (e.g. zero spread for an LTI plant).
    pub fn with_laws(seed: u64, s1: ScalarLaw, s2: ScalarLaw) -> Result<Self> {
        for law in [s1, s2] {
            if !(law.std_dev >= 0.0 && law.std_dev.is_finite() && law.mean.is_finite()) {
                return Err(Error::Input("coefficient law must be finite with std_dev >= 0".into()));
            }
        }
        let q0 = DVector::from_element(scenario::N, 1.0);
        Ok(Self {
            s1,
            s2,
            q: q0.clone(),
            q0,
            rng: rng_from_seed(seed),
        })
    }

    /// State matrix for given coefficient values.
    pub fn state_matrix(s1: f64, s2: f64) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(6, 6);
        a[(0, 1)] = -0.4;
        a[(1, 0)] = 1.0;
        a[(1, 1)] = 1.3;
        a[(1, 5)] = 0.4;
        a[(2, 3)] = -0.6;
        a[(3, 1)] = 0.4;
        a[(3, 2)] = 1.0;
        a[(3, 3)] = 0.7 * s1;
        a[(4, 5)] = -0.8;
        a[(5, 3)] = s2;
        a[(5, 4)] = 1.0;
        a[(5, 5)] = s2;
        a
    }

    pub fn input_matrix() -> DMatrix<f64> {
        let mut b = DMatrix::zeros(6, 1);
        b[(1, 0)] = 0.4;
        b
    }

    /// Measures `[q2, q4, q6]`.
    pub fn output_matrix() -> DMatrix<f64> {
        let mut c = DMatrix::zeros(3, 6);
        c[(0, 1)] = 1.0;
        c[(1, 3)] = 1.0;
        c[(2, 5)] = 1.0;
        c
    }
}

/// [`NetworkedPlant::new`].
pub fn make_networked_plant(seed: u64) -> NetworkedPlant {
    NetworkedPlant::new(seed)
}

impl Plant for NetworkedPlant {
    fn input_dim(&self) -> usize {
        1
    }

    fn output_dim(&self) -> usize {
        3
    }

    fn reset(&mut self, seed: u64) {
        self.q = self.q0.clone();
        self.rng = rng_from_seed(seed);
    }

    fn step(&mut self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("plant input", 1, u.len())?;
        let y = DVector::from_vec(vec![self.q[1], self.q[3], self.q[5]]);
        let s1 = self.s1.draw(&mut self.rng);
        let s2 = self.s2.draw(&mut self.rng);
        let q = &self.q;
        let next = DVector::from_vec(vec![
            -0.4 * q[1],
            q[0] + 1.3 * q[1] + 0.4 * q[5] + 0.4 * u[0],
            -0.6 * q[3],
            0.4 * q[1] + q[2] + 0.7 * s1 * q[3],
            -0.8 * q[5],
            s2 * q[3] + q[4] + s2 * q[5],
        ]);
        self.q = next;
        Ok(y)
    }

    fn true_state(&self) -> DVector<f64> {
        self.q.clone()
    }
}

/// A plant that is exactly a member of the model class: `xi_k` is drawn
/// i.i.d. from `model` every step.
#[derive(Debug, Clone)]
pub struct ModelPlant {
    system: RandomLinearSystem,
    sampler: GaussianSampler,
    x0: DVector<f64>,
    x: DVector<f64>,
    rng: Rng,
}

impl ModelPlant {
    pub fn new(
        system: RandomLinearSystem,
        model: &DistributionModel,
        x0: DVector<f64>,
        seed: u64,
    ) -> Result<Self> {
        check_dim("model plant parameters", system.z(), model.dim())?;
        check_dim("model plant initial state", system.n(), x0.len())?;
        Ok(Self {
            system,
            sampler: model.sampler()?,
            x: x0.clone(),
            x0,
            rng: rng_from_seed(seed),
        })
    }
}

/// [`ModelPlant::new`].
pub fn make_model_plant(
    system: RandomLinearSystem,
    model: &DistributionModel,
    x0: DVector<f64>,
    seed: u64,
) -> Result<ModelPlant> {
    ModelPlant::new(system, model, x0, seed)
}

impl Plant for ModelPlant {
    fn input_dim(&self) -> usize {
        self.system.m()
    }

    fn output_dim(&self) -> usize {
        self.system.p()
    }

    fn reset(&mut self, seed: u64) {
        self.x = self.x0.clone();
        self.rng = rng_from_seed(seed);
    }

    fn step(&mut self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let xi = self.sampler.sample(&mut self.rng);
        let y = self.system.output(&self.x, u, &xi)?;
        self.x = self.system.step(&self.x, u, &xi)?;
        Ok(y)
    }

    fn true_state(&self) -> DVector<f64> {
        self.x.clone()
    }
}

/// Feedback taps (1-based register stages) of a primitive polynomial for
/// each register length from 3 to 16.
pub fn default_taps(order: usize) -> Option<&'static [usize]> {
    Some(match order {
        3 => &[3, 2],
        4 => &[4, 3],
        5 => &[5, 3],
        6 => &[6, 5],
        7 => &[7, 6],
        8 => &[8, 6, 5, 4],
        9 => &[9, 5],
        10 => &[10, 7],
        11 => &[11, 9],
        12 => &[12, 11, 10, 4],
        13 => &[13, 12, 11, 8],
        14 => &[14, 13, 12, 2],
        15 => &[15, 14],
        16 => &[16, 15, 13, 4],
        _ => return None,
    })
}

/// Maximal-length sequence from a Fibonacci LFSR started at all ones.
///
/// A one bit maps to `+amplitude`, a zero bit to `-amplitude`. `taps`
/// defaults to [`default_taps`]; explicit taps are not checked for
/// primitivity.
pub fn mls(order: usize, taps: Option<&[usize]>, length: usize, amplitude: f64) -> Result<Vec<f64>> {
    if order == 0 || order > 63 {
        return Err(Error::Input(format!("unsupported MLS order {order}")));
    }
    let taps = match taps {
        Some(t) => t,
        None => default_taps(order).ok_or_else(|| {
            Error::Input(format!("no default taps for MLS order {order}; give taps explicitly"))
        })?,
    };
    if taps.is_empty() || taps.iter().any(|&t| t == 0 || t > order) {
        return Err(Error::Input(format!("MLS taps must lie in 1..={order}")));
    }
    let mut reg: u64 = (1u64 << order) - 1;
    let mut out = Vec::with_capacity(length);
    for _ in 0..length {
        let bit = (reg >> (order - 1)) & 1;
        out.push(if bit == 1 { amplitude } else { -amplitude });
        let fb = taps.iter().fold(0, |acc, &t| acc ^ ((reg >> (t - 1)) & 1));
        reg = ((reg << 1) | fb) & ((1u64 << order) - 1);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct IdentificationConfig {
    /// First step of the sample window.
    pub k0: usize,
    /// Window length; samples are taken at `k0..=k0 + k1`.
    pub k1: usize,
    pub amplitude: f64,
    pub mls_order: usize,
    pub mls_taps: Option<Vec<usize>>,
    /// User-supplied input sequence; replaces the MLS when set.
    pub input: Option<Vec<f64>>,
    pub enkf: EnkfConfig,
    /// Process noise on `[x; xi]`.
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// Initial `[x; xi]`; zero when unset.
    pub psi0: Option<DVector<f64>>,
    /// `|x_{k|k-1}|` above this counts as divergence.
    pub divergence_limit: f64,
}

impl IdentificationConfig {
    /// Window, noise and ensemble settings of the networked example with the
    /// library's default excitation.
    pub fn networked() -> Self {
        Self {
            k0: scenario::WINDOW_START,
            k1: scenario::WINDOW_LENGTH,
            amplitude: 1.0,
            mls_order: 10,
            mls_taps: None,
            input: None,
            enkf: EnkfConfig {
                members: scenario::ENSEMBLE_SIZE,
                ..EnkfConfig::default()
            },
            q: scenario::process_noise(),
            r: scenario::measurement_noise(),
            psi0: None,
            divergence_limit: 1e6,
        }
    }

    pub fn steps(&self) -> usize {
        self.k0 + self.k1 + 1
    }

    /// Scalar input sequence of length [`Self::steps`].
    pub fn input_sequence(&self) -> Result<Vec<f64>> {
        match &self.input {
            Some(seq) => {
                if seq.len() < self.steps() {
                    return Err(Error::Input(format!(
                        "input sequence has {} samples, experiment needs {}",
                        seq.len(),
                        self.steps()
                    )));
                }
                Ok(seq[..self.steps()].to_vec())
            }
            None => mls(self.mls_order, self.mls_taps.as_deref(), self.steps(), self.amplitude),
        }
    }
}

/// One identification step.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationStep {
    pub k: usize,
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    /// `x_{k|k-1}`.
    pub x_pred: DVector<f64>,
    /// `xi_{k|k}`.
    pub xi_filt: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct IdentificationResult {
    /// Window statistics as a distribution model (samples retained).
    pub distribution: DistributionModel,
    /// `1/(K1+1) sum r(xi)^T r(xi)` over the window.
    pub empirical_gram: GramMatrix,
    pub trace: Vec<IdentificationStep>,
    pub k0: usize,
    pub k1: usize,
}

impl IdentificationResult {
    pub fn mean(&self) -> &DVector<f64> {
        self.distribution.mean()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        self.distribution.covariance()
    }

    /// The window's filtered parameter estimates.
    pub fn window(&self) -> Vec<DVector<f64>> {
        self.trace[self.k0..=self.k0 + self.k1]
            .iter()
            .map(|s| s.xi_filt.clone())
            .collect()
    }

    /// Columns `k,u1..,y1..,x1..,xi1..`, one row per step.
    pub fn trace_csv(&self) -> String {
        let mut out = String::new();
        let Some(first) = self.trace.first() else {
            return out;
        };
        let mut header = vec!["k".to_string()];
        let names = [
            ("u", first.u.len()),
            ("y", first.y.len()),
            ("x", first.x_pred.len()),
            ("xi", first.xi_filt.len()),
        ];
        for (name, len) in names {
            header.extend((1..=len).map(|i| format!("{name}{i}")));
        }
        let _ = writeln!(out, "{}", header.join(","));
        for s in &self.trace {
            let mut row = vec![s.k.to_string()];
            for v in [&s.u, &s.y, &s.x_pred, &s.xi_filt] {
                row.extend(v.iter().map(|x| format!("{x:e}")));
            }
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

/// Open-loop identification experiment.
///
/// The initial ensemble is treated as filtered at `k = -1` with
/// `u_{-1} = 0`, so step `k` predicts with `u_{k-1}`, drives the plant with
/// `u_k`, and filters against the returned `y_k`.
pub fn identify(
    plant: &mut dyn Plant,
    system: &RandomLinearSystem,
    cfg: &IdentificationConfig,
) -> Result<IdentificationResult> {
    check_dim("plant input", system.m(), plant.input_dim())?;
    check_dim("plant output", system.p(), plant.output_dim())?;
    if system.m() != 1 && cfg.input.is_none() {
        return Err(Error::Input(
            "MLS excitation is scalar; multi-input plants need an explicit input".into(),
        ));
    }
    cfg.enkf.validate()?;
    let (n, z) = (system.n(), system.z());
    let model = AugmentedModel::new(system.clone(), cfg.q.clone(), cfg.r.clone())?;
    let psi0 = cfg.psi0.clone().unwrap_or_else(|| DVector::zeros(n + z));
    check_dim("initial augmented state", n + z, psi0.len())?;
    let inputs = cfg.input_sequence()?;

    let mut rng = rng_from_seed(cfg.enkf.seed);
    let mut ens = init_ensemble_jittered(&psi0, cfg.enkf.members, cfg.enkf.jitter, &mut rng)?;
    let mut u_prev = DVector::zeros(system.m());
    let mut trace = Vec::with_capacity(cfg.steps());
    for (k, &uk) in inputs.iter().enumerate() {
        let mut run = |ens: &crate::enkf::Ensemble, rng: &mut Rng, u_prev: &DVector<f64>| {
            let (forecast, _) = predict(ens, u_prev, &model, rng)?;
            let x_pred = estimate_state(&forecast, n)?;
            let norm = x_pred.norm();
            if !(norm <= cfg.divergence_limit) {
                return Err(Error::Diverged { step: k, norm });
            }
            let u = DVector::from_element(system.m(), uk);
            let y = plant.step(&u)?;
            let out = predict_output(&forecast, &u, &model, rng)?;
            let filtered = filter_update(&forecast, &out, &y, cfg.enkf.eps_v)?;
            Ok((filtered, x_pred, u, y))
        };
        let (filtered, x_pred, u, y) = run(&ens, &mut rng, &u_prev).map_err(|e| match e {
            e @ Error::Diverged { .. } => e,
            e => e.at_step(k),
        })?;
        let xi_filt = estimate_param(&filtered, n, z)?;
        trace.push(IdentificationStep {
            k,
            u: u.clone(),
            y,
            x_pred,
            xi_filt,
        });
        ens = filtered;
        u_prev = u;
    }

    let window: Vec<DVector<f64>> = trace[cfg.k0..=cfg.k0 + cfg.k1]
        .iter()
        .map(|s| s.xi_filt.clone())
        .collect();
    if cfg.k1 == 0 {
        log::warn!("identification window holds a single sample; covariance reported as zero");
    }
    let empirical_gram = gram_empirical(&system.coeffs, &window)?;
    let distribution = DistributionModel::from_samples(window)?;
    Ok(IdentificationResult {
        distribution,
        empirical_gram,
        trace,
        k0: cfg.k0,
        k1: cfg.k1,
    })
}
