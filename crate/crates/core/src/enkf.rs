//! Ensemble Kalman filter over a pluggable simulation model.
//!
//! The filter follows the perturbed-output formulation: every member is
//! propagated through the transition map plus an independent process noise
//! draw, each forecast member produces its own noisy output, and all members
//! are corrected against the single measured output `y`:
//!
//! ```text
//! psi_i <- psi_i + K (y - z_i),   K = U (V + eps I)^{-1}
//! U = 1/(M-1) sum (psi_i - psi_mean)(z_i - z_mean)^T
//! V = 1/(M-1) sum (z_i - z_mean)(z_i - z_mean)^T
//! ```
//!
//! [`AugmentedModel`] turns a random linear system into the joint
//! state/parameter model `psi = [x; xi]` with `xi` carried over unchanged
//! (it moves only through its share of the process noise).

use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::check_dim;
use crate::linalg::{asymmetry, symmetrize};
use crate::rng::{GaussianSampler, Rng};
use crate::system::RandomLinearSystem;
use crate::{Error, Result};

/// A validated zero-mean Gaussian noise law: covariance and its sampler.
#[derive(Debug, Clone)]
pub struct Noise {
    cov: DMatrix<f64>,
    sampler: GaussianSampler,
}

impl Noise {
    pub fn new(cov: DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() {
            return Err(Error::Input("noise covariance must be square".into()));
        }
        let asym = asymmetry(&cov);
        if asym > 1e-9 * cov.amax().max(1.0) {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        let cov = symmetrize(&cov);
        let sampler = GaussianSampler::zero_mean(&cov)?;
        Ok(Self { cov, sampler })
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(DMatrix::zeros(dim, dim)).expect("zero covariance is valid")
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn add_to(&self, rng: &mut Rng, target: &mut [f64]) {
        self.sampler.add_noise_slice(rng, target);
    }
}

/// What the filter needs to know about the system it tracks.
pub trait SimulationModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// `f(psi, u)`, written into `out` (length [`Self::state_dim`]).
    fn transition(&self, psi: &[f64], u: &DVector<f64>, out: &mut [f64]);
    /// `h(psi, u)`, written into `out` (length [`Self::output_dim`]).
    fn observation(&self, psi: &[f64], u: &DVector<f64>, out: &mut [f64]);
    /// `w ~ N(0, Q)`.
    fn process_noise(&self) -> &Noise;
    /// `v ~ N(0, R)`.
    fn measurement_noise(&self) -> &Noise;
}

/// `M` members of dimension `d`, stored as the columns of a `d x M` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: DMatrix<f64>,
}

impl Ensemble {
    pub fn new(members: DMatrix<f64>) -> Result<Self> {
        if members.ncols() < 2 {
            return Err(Error::Input(format!(
                "an ensemble needs at least 2 members, got {}",
                members.ncols()
            )));
        }
        if members.nrows() == 0 {
            return Err(Error::Input("ensemble members must be nonempty".into()));
        }
        Ok(Self { members })
    }

    pub fn from_members(members: &[DVector<f64>]) -> Result<Self> {
        let d = members.first().map_or(0, |m| m.len());
        if members.iter().any(|m| m.len() != d) {
            return Err(Error::Input("ensemble members differ in length".into()));
        }
        Self::new(DMatrix::from_fn(d, members.len(), |i, j| members[j][i]))
    }

    pub fn members(&self) -> &DMatrix<f64> {
        &self.members
    }

    pub fn member(&self, i: usize) -> DVector<f64> {
        self.members.column(i).into_owned()
    }

    pub fn len(&self) -> usize {
        self.members.ncols()
    }

    /// Always false: an ensemble has at least two members.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.members.nrows()
    }

    pub fn mean(&self) -> DVector<f64> {
        self.members.column_mean()
    }

    /// Sample covariance with `1/(M-1)` normalization.
    pub fn covariance(&self) -> DMatrix<f64> {
        let centered = centered(&self.members);
        &centered * centered.transpose() / (self.len() - 1) as f64
    }

    /// One row per member, components comma separated, with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = (0..self.dim()).map(|i| format!("psi{}", i + 1)).collect();
        let _ = writeln!(out, "member,{}", header.join(","));
        for (j, col) in self.members.column_iter().enumerate() {
            let row: Vec<String> = col.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(out, "{j},{}", row.join(","));
        }
        out
    }
}

fn centered(members: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = members.column_mean();
    let mut c = members.clone();
    for mut col in c.column_iter_mut() {
        col -= &mean;
    }
    c
}

/// Per-member predicted outputs and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputEnsemble {
    z_members: DMatrix<f64>,
    z_mean: DVector<f64>,
}

impl OutputEnsemble {
    pub fn new(z_members: DMatrix<f64>) -> Result<Self> {
        if z_members.ncols() < 2 {
            return Err(Error::Input("output ensemble needs at least 2 members".into()));
        }
        let z_mean = z_members.column_mean();
        Ok(Self { z_members, z_mean })
    }

    /// `p x M`, one column per member.
    pub fn z_members(&self) -> &DMatrix<f64> {
        &self.z_members
    }

    pub fn z_mean(&self) -> &DVector<f64> {
        &self.z_mean
    }

    pub fn len(&self) -> usize {
        self.z_members.ncols()
    }

    /// Always false: an output ensemble has at least two members.
    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnkfConfig {
    pub members: usize,
    pub seed: u64,
    /// Innovation regularization; `None` picks [`default_eps_v`].
    pub eps_v: Option<f64>,
    /// Standard deviation of an optional initial spread around `psi0`.
    pub jitter: f64,
}

impl Default for EnkfConfig {
    fn default() -> Self {
        Self {
            members: 300,
            seed: 0,
            eps_v: None,
            jitter: 0.0,
        }
    }
}

impl EnkfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.members < 2 {
            return Err(Error::Input("ensemble size must be at least 2".into()));
        }
        if let Some(e) = self.eps_v {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(Error::Input("eps_v must be finite and nonnegative".into()));
            }
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::Input("jitter must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// `m` copies of `psi0`.
pub fn init_ensemble(psi0: &DVector<f64>, m: usize) -> Result<Ensemble> {
    if m < 2 {
        return Err(Error::Input(format!(
            "an ensemble needs at least 2 members, got {m}"
        )));
    }
    Ensemble::new(DMatrix::from_fn(psi0.len(), m, |i, _| psi0[i]))
}

/// `m` draws from `N(psi0, jitter^2 I)`; plain copies when `jitter == 0`.
pub fn init_ensemble_jittered(
    psi0: &DVector<f64>,
    m: usize,
    jitter: f64,
    rng: &mut Rng,
) -> Result<Ensemble> {
    let mut ens = init_ensemble(psi0, m)?;
    if jitter > 0.0 {
        let noise = Noise::new(DMatrix::identity(psi0.len(), psi0.len()) * (jitter * jitter))?;
        for mut col in ens.members.column_iter_mut() {
            noise.add_to(rng, col.as_mut_slice());
        }
    }
    Ok(ens)
}

/// Forecast ensemble `f(psi_i, u) + w_i` and its mean.
///
/// Noise is drawn member by member, in order, from `rng`.
pub fn predict(
    ens: &Ensemble,
    u: &DVector<f64>,
    model: &dyn SimulationModel,
    rng: &mut Rng,
) -> Result<(Ensemble, DVector<f64>)> {
    check_dim("ensemble state", model.state_dim(), ens.dim())?;
    check_dim("input", model.input_dim(), u.len())?;
    let d = ens.dim();
    let mut next = DMatrix::zeros(d, ens.len());
    for (src, mut dst) in ens.members.column_iter().zip(next.column_iter_mut()) {
        let out = dst.as_mut_slice();
        model.transition(src.as_slice(), u, out);
        model.process_noise().add_to(rng, out);
    }
    let forecast = Ensemble { members: next };
    let mean = forecast.mean();
    Ok((forecast, mean))
}

/// Predicted outputs `h(psi_i, u) + v_i`.
pub fn predict_output(
    forecast: &Ensemble,
    u: &DVector<f64>,
    model: &dyn SimulationModel,
    rng: &mut Rng,
) -> Result<OutputEnsemble> {
    check_dim("ensemble state", model.state_dim(), forecast.dim())?;
    check_dim("input", model.input_dim(), u.len())?;
    let p = model.output_dim();
    let mut z = DMatrix::zeros(p, forecast.len());
    for (src, mut dst) in forecast.members.column_iter().zip(z.column_iter_mut()) {
        let out = dst.as_mut_slice();
        model.observation(src.as_slice(), u, out);
        model.measurement_noise().add_to(rng, out);
    }
    OutputEnsemble::new(z)
}

/// Cross covariance `U` (`d x p`) and output covariance `V` (`p x p`).
pub fn innovation_moments(
    forecast: &Ensemble,
    out: &OutputEnsemble,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_dim("output ensemble size", forecast.len(), out.len())?;
    let scale = 1.0 / (forecast.len() - 1) as f64;
    let dpsi = centered(&forecast.members);
    let dz = centered(&out.z_members);
    let u = &dpsi * dz.transpose() * scale;
    let v = symmetrize(&(&dz * dz.transpose() * scale));
    Ok((u, v))
}

/// `1e-10 tr(V) / p + 1e-12`.
pub fn default_eps_v(v: &DMatrix<f64>) -> f64 {
    1e-10 * v.trace() / v.nrows().max(1) as f64 + 1e-12
}

/// Kalman gain `U (V + eps I)^{-1}`.
pub fn kalman_gain(u: &DMatrix<f64>, v: &DMatrix<f64>, eps_v: f64) -> Result<DMatrix<f64>> {
    let p = v.nrows();
    let reg = v + DMatrix::identity(p, p) * eps_v;
    let condition = condition_estimate(&reg);
    if !(condition < 1e14) {
        return Err(Error::SingularInnovation { condition });
    }
    let ch = Cholesky::new(reg).ok_or(Error::SingularInnovation { condition })?;
    // K^T = (V + eps I)^{-1} U^T
    Ok(ch.solve(&u.transpose()).transpose())
}

fn condition_estimate(s: &DMatrix<f64>) -> f64 {
    let eig = s.clone().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// Corrects every member against the measured `y`.
///
/// `eps_v == None` uses [`default_eps_v`].
pub fn filter_update(
    forecast: &Ensemble,
    out: &OutputEnsemble,
    y: &DVector<f64>,
    eps_v: Option<f64>,
) -> Result<Ensemble> {
    check_dim("measurement", out.z_members.nrows(), y.len())?;
    let (u, v) = innovation_moments(forecast, out)?;
    let eps = eps_v.unwrap_or_else(|| default_eps_v(&v));
    let k = kalman_gain(&u, &v, eps)?;
    let mut innov = -out.z_members.clone();
    for mut col in innov.column_iter_mut() {
        col += y;
    }
    Ok(Ensemble {
        members: &forecast.members + k * innov,
    })
}

/// Mean of the first `n` components (the state part).
pub fn estimate_state(ens: &Ensemble, n: usize) -> Result<DVector<f64>> {
    if n > ens.dim() {
        return Err(Error::Dimension {
            context: "state part of ensemble",
            expected: n,
            got: ens.dim(),
        });
    }
    Ok(ens.members.rows(0, n).column_mean())
}

/// Mean of the last `z` components (the parameter part).
pub fn estimate_param(ens: &Ensemble, n: usize, z: usize) -> Result<DVector<f64>> {
    check_dim("augmented state", n + z, ens.dim())?;
    Ok(ens.members.rows(n, z).column_mean())
}

/// `psi = [x; xi]`, `f = [A(xi) x + B(xi) u; xi]`, `h = C(xi) x + D(xi) u`.
#[derive(Debug, Clone)]
pub struct AugmentedModel {
    system: RandomLinearSystem,
    q: Noise,
    r: Noise,
}

impl AugmentedModel {
    pub fn new(system: RandomLinearSystem, q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let d = system.n() + system.z();
        if q.shape() != (d, d) {
            return Err(Error::Input(format!(
                "process noise covariance must be {d}x{d} (n + Z), got {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        let p = system.p();
        if r.shape() != (p, p) {
            return Err(Error::Input(format!(
                "measurement noise covariance must be {p}x{p}, got {}x{}",
                r.nrows(),
                r.ncols()
            )));
        }
        Ok(Self {
            system,
            q: Noise::new(q)?,
            r: Noise::new(r)?,
        })
    }

    pub fn system(&self) -> &RandomLinearSystem {
        &self.system
    }

    pub fn n(&self) -> usize {
        self.system.n()
    }

    pub fn z(&self) -> usize {
        self.system.z()
    }
}

/// Convenience constructor for [`AugmentedModel`].
pub fn augmented_model(
    system: RandomLinearSystem,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
) -> Result<AugmentedModel> {
    AugmentedModel::new(system, q, r)
}

impl SimulationModel for AugmentedModel {
    fn state_dim(&self) -> usize {
        self.system.n() + self.system.z()
    }

    fn input_dim(&self) -> usize {
        self.system.m()
    }

    fn output_dim(&self) -> usize {
        self.system.p()
    }

    fn transition(&self, psi: &[f64], u: &DVector<f64>, out: &mut [f64]) {
        let n = self.system.n();
        let (x, xi) = psi.split_at(n);
        let next = self.system.coeffs.apply_state(xi, x, u);
        out[..n].copy_from_slice(next.as_slice());
        out[n..].copy_from_slice(xi);
    }

    fn observation(&self, psi: &[f64], u: &DVector<f64>, out: &mut [f64]) {
        let n = self.system.n();
        let (x, xi) = psi.split_at(n);
        let y = self.system.coeffs.apply_output(xi, x, u);
        out.copy_from_slice(y.as_slice());
    }

    fn process_noise(&self) -> &Noise {
        &self.q
    }

    fn measurement_noise(&self) -> &Noise {
        &self.r
    }
}
