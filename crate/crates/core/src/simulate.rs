//! EnKF output-feedback loop and Monte Carlo evaluation.
//!
//! Each sample runs four phases:
//!
//! 1. predict the ensemble with the input applied at the previous step;
//! 2. estimate `x_{k|k-1}` and decide `u_k = F x_{k|k-1}`; the plant gets
//!    `u_k + d_k`;
//! 3. predict the outputs with the applied input;
//! 4. read `y_k` from the plant and filter.
//!
//! The filter is told the applied input `u_k + d_k` unless
//! [`ControllerConfig::filter_sees_disturbance`] is off, in which case it is
//! told `u_k` only.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::enkf::{
    estimate_param, estimate_state, filter_update, init_ensemble_jittered, predict,
    predict_output, AugmentedModel, EnkfConfig, Ensemble,
};
use crate::error::check_dim;
use crate::plantlab::Plant;
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::system::RandomLinearSystem;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    /// State feedback gain, `m x n`.
    pub gain: DMatrix<f64>,
    pub enkf: EnkfConfig,
    /// Process noise on `[x; xi]`.
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// The controller's internal model.
    pub system: RandomLinearSystem,
    /// Initial `[x; xi]`.
    pub psi0: DVector<f64>,
    pub filter_sees_disturbance: bool,
}

/// A validated controller: config plus the filter's model.
#[derive(Debug, Clone)]
pub struct Controller {
    cfg: ControllerConfig,
    model: AugmentedModel,
}

impl Controller {
    pub fn new(cfg: ControllerConfig) -> Result<Self> {
        let (n, m, z) = (cfg.system.n(), cfg.system.m(), cfg.system.z());
        if cfg.gain.shape() != (m, n) {
            return Err(Error::Input(format!(
                "gain must be {m}x{n}, got {}x{}",
                cfg.gain.nrows(),
                cfg.gain.ncols()
            )));
        }
        check_dim("controller initial augmented state", n + z, cfg.psi0.len())?;
        cfg.enkf.validate()?;
        let model = AugmentedModel::new(cfg.system.clone(), cfg.q.clone(), cfg.r.clone())?;
        Ok(Self { cfg, model })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn model(&self) -> &AugmentedModel {
        &self.model
    }

    /// Fresh filter state for a path whose filter stream is `seed`.
    pub fn start(&self, seed: u64) -> Result<ControllerState> {
        let mut rng = rng_from_seed(seed);
        let ensemble = init_ensemble_jittered(
            &self.cfg.psi0,
            self.cfg.enkf.members,
            self.cfg.enkf.jitter,
            &mut rng,
        )?;
        Ok(ControllerState {
            ensemble,
            u_prev: DVector::zeros(self.cfg.system.m()),
            rng,
        })
    }
}

/// Filter state carried between samples.
#[derive(Debug, Clone)]
pub struct ControllerState {
    pub ensemble: Ensemble,
    /// Input the filter was told about at the previous step.
    pub u_prev: DVector<f64>,
    rng: Rng,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub horizon: usize,
    /// Additive input `d_k`; at least `horizon` entries.
    pub disturbance: Vec<DVector<f64>>,
    pub paths: usize,
    pub base_seed: u64,
}

impl SimulationConfig {
    pub fn validate(&self, m: usize) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Input("horizon must be positive".into()));
        }
        if self.disturbance.len() < self.horizon {
            return Err(Error::Input(format!(
                "disturbance has {} samples, horizon is {}",
                self.disturbance.len(),
                self.horizon
            )));
        }
        if let Some(d) = self.disturbance.iter().find(|d| d.len() != m) {
            return Err(Error::Dimension {
                context: "disturbance sample",
                expected: m,
                got: d.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    /// Input reaching the plant, `u_k + d_k`.
    pub u_applied: DVector<f64>,
    pub y: DVector<f64>,
    /// `x_{k|k-1}`; empty in open loop.
    pub x_estimate: DVector<f64>,
    /// `xi_{k|k}`; empty in open loop.
    pub xi_estimate: DVector<f64>,
    /// Plant state `q_k` before the step (logging only).
    pub true_state: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `|q_k|` per step.
    pub fn state_norms(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.true_state.norm()).collect()
    }

    pub fn inputs(&self) -> Vec<DVector<f64>> {
        self.steps.iter().map(|s| s.u_applied.clone()).collect()
    }

    /// Columns `k,u..,y..,xhat..,xihat..,q..`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let Some(first) = self.steps.first() else {
            return out;
        };
        let mut header = vec!["k".to_string()];
        let groups = [
            ("u", first.u_applied.len()),
            ("y", first.y.len()),
            ("xhat", first.x_estimate.len()),
            ("xihat", first.xi_estimate.len()),
            ("q", first.true_state.len()),
        ];
        for (name, len) in groups {
            header.extend((1..=len).map(|i| format!("{name}{i}")));
        }
        let _ = writeln!(out, "{}", header.join(","));
        for s in &self.steps {
            let mut row = vec![s.k.to_string()];
            for v in [&s.u_applied, &s.y, &s.x_estimate, &s.xi_estimate, &s.true_state] {
                row.extend(v.iter().map(|x| format!("{x:e}")));
            }
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

/// One sample of the loop; `state` is advanced in place.
pub fn closed_loop_step(
    plant: &mut dyn Plant,
    controller: &Controller,
    state: &mut ControllerState,
    d_k: &DVector<f64>,
    k: usize,
) -> Result<StepRecord> {
    let cfg = &controller.cfg;
    let model = &controller.model;
    let (n, z) = (cfg.system.n(), cfg.system.z());
    let inner = |state: &mut ControllerState, plant: &mut dyn Plant| -> Result<StepRecord> {
        // 1. state prediction
        let (forecast, _) = predict(&state.ensemble, &state.u_prev, model, &mut state.rng)?;
        // 2. control decision
        let x_estimate = estimate_state(&forecast, n)?;
        let norm = x_estimate.norm();
        if !norm.is_finite() {
            return Err(Error::Diverged { step: k, norm });
        }
        let u = &cfg.gain * &x_estimate;
        let u_applied = &u + d_k;
        let u_filter = if cfg.filter_sees_disturbance {
            u_applied.clone()
        } else {
            u
        };
        // 3. output prediction
        let out = predict_output(&forecast, &u_filter, model, &mut state.rng)?;
        // 4. measurement and filtering
        let true_state = plant.true_state();
        let y = plant.step(&u_applied)?;
        let filtered = filter_update(&forecast, &out, &y, cfg.enkf.eps_v)?;
        let xi_estimate = estimate_param(&filtered, n, z)?;
        state.ensemble = filtered;
        state.u_prev = u_filter;
        Ok(StepRecord {
            k,
            u_applied,
            y,
            x_estimate,
            xi_estimate,
            true_state,
        })
    };
    inner(state, plant).map_err(|e| match e {
        e @ Error::Diverged { .. } => e,
        e => e.at_step(k),
    })
}

/// Path seeds: the plant and the filter draw from separate child streams.
fn stream_seeds(path_seed: u64) -> (u64, u64) {
    (derive_seed(path_seed, 0), derive_seed(path_seed, 1))
}

/// `horizon` closed-loop samples from a reset plant and a fresh ensemble.
pub fn run_closed_loop(
    plant: &mut dyn Plant,
    controller: &Controller,
    sim: &SimulationConfig,
    path_seed: u64,
) -> Result<Trajectory> {
    check_dim("plant input", controller.cfg.system.m(), plant.input_dim())?;
    check_dim("plant output", controller.cfg.system.p(), plant.output_dim())?;
    sim.validate(plant.input_dim())?;
    let (plant_seed, filter_seed) = stream_seeds(path_seed);
    plant.reset(plant_seed);
    let mut state = controller.start(filter_seed)?;
    let steps = (0..sim.horizon)
        .map(|k| closed_loop_step(plant, controller, &mut state, &sim.disturbance[k], k))
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory { steps })
}

/// The plant driven by `d` alone.
pub fn run_open_loop(
    plant: &mut dyn Plant,
    disturbance: &[DVector<f64>],
    horizon: usize,
    seed: u64,
) -> Result<Trajectory> {
    if disturbance.len() < horizon {
        return Err(Error::Input(format!(
            "disturbance has {} samples, horizon is {horizon}",
            disturbance.len()
        )));
    }
    let (plant_seed, _) = stream_seeds(seed);
    plant.reset(plant_seed);
    let mut steps = Vec::with_capacity(horizon);
    for (k, d) in disturbance.iter().take(horizon).enumerate() {
        check_dim("disturbance sample", plant.input_dim(), d.len())?;
        let true_state = plant.true_state();
        let y = plant.step(d).map_err(|e| e.at_step(k))?;
        steps.push(StepRecord {
            k,
            u_applied: d.clone(),
            y,
            x_estimate: DVector::zeros(0),
            xi_estimate: DVector::zeros(0),
            true_state,
        });
    }
    Ok(Trajectory { steps })
}

#[derive(Debug, Clone, Default)]
pub struct MonteCarloOptions {
    /// Keep each path's state norms in the result.
    pub keep_norms: bool,
    /// Treat a path that fails numerically (non-finite estimates, singular
    /// innovations) as divergent from that step on instead of failing the
    /// whole run. Its norms become `+inf` from the failing step.
    pub allow_divergence: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloStats {
    /// `rms[k] = sqrt(mean over paths of |q_k|^2)`.
    pub rms: Vec<f64>,
    pub n_paths: usize,
    pub seeds: Vec<u64>,
    /// Per-path `|q_k|`, when requested.
    pub norms: Option<Vec<Vec<f64>>>,
    /// Seeds of paths that diverged (only with `allow_divergence`).
    pub diverged: Vec<u64>,
}

impl MonteCarloStats {
    /// Aggregates per-path norms.
    pub fn from_norms(seeds: Vec<u64>, norms: Vec<Vec<f64>>, keep: bool) -> Result<Self> {
        if norms.is_empty() {
            return Err(Error::Input("need at least one path".into()));
        }
        let horizon = norms[0].len();
        if norms.iter().any(|p| p.len() != horizon) {
            return Err(Error::Input("paths differ in length".into()));
        }
        let n = norms.len() as f64;
        let rms = (0..horizon)
            .map(|k| (norms.iter().map(|p| p[k] * p[k]).sum::<f64>() / n).sqrt())
            .collect();
        Ok(Self {
            rms,
            n_paths: norms.len(),
            seeds,
            norms: keep.then_some(norms),
            diverged: Vec::new(),
        })
    }

    /// Columns `k,rms`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,rms\n");
        for (k, r) in self.rms.iter().enumerate() {
            let _ = writeln!(out, "{k},{r:e}");
        }
        out
    }
}

fn is_numerical_failure(e: &Error) -> bool {
    matches!(
        e.root(),
        Error::Diverged { .. } | Error::SingularInnovation { .. } | Error::Factorization { .. }
    )
}

/// `paths` independent runs with seeds `derive_seed(base_seed, i)`.
///
/// `make_plant` builds one plant per path. `controller == None` runs the
/// plant open loop on the disturbance.
pub fn monte_carlo<P, F>(
    make_plant: F,
    controller: Option<&Controller>,
    sim: &SimulationConfig,
    opts: &MonteCarloOptions,
) -> Result<MonteCarloStats>
where
    P: Plant,
    F: Fn() -> P + Sync,
{
    if sim.paths == 0 {
        return Err(Error::Input("need at least one path".into()));
    }
    let seeds: Vec<u64> = (0..sim.paths as u64)
        .map(|i| derive_seed(sim.base_seed, i))
        .collect();
    let results: Vec<Result<(Vec<f64>, bool)>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut plant = make_plant();
            let run = match controller {
                Some(c) => run_closed_loop(&mut plant, c, sim, seed),
                None => run_open_loop(&mut plant, &sim.disturbance, sim.horizon, seed),
            };
            match run {
                Ok(t) => Ok((t.state_norms(), false)),
                Err(e) if opts.allow_divergence && is_numerical_failure(&e) => {
                    let fail_at = failing_step(&e).unwrap_or(0);
                    let mut norms = partial_norms(&mut plant, controller, sim, seed, fail_at)?;
                    norms.resize(sim.horizon, f64::INFINITY);
                    Ok((norms, true))
                }
                Err(e) => Err(Error::Path {
                    seed,
                    source: Box::new(e),
                }),
            }
        })
        .collect();
    let mut norms = Vec::with_capacity(seeds.len());
    let mut diverged = Vec::new();
    for (r, &seed) in results.into_iter().zip(&seeds) {
        let (path, failed) = r?;
        if failed {
            diverged.push(seed);
        }
        norms.push(path);
    }
    let mut stats = MonteCarloStats::from_norms(seeds, norms, opts.keep_norms)?;
    stats.diverged = diverged;
    Ok(stats)
}

fn failing_step(e: &Error) -> Option<usize> {
    match e {
        Error::AtStep { step, .. } | Error::Diverged { step, .. } => Some(*step),
        Error::Path { source, .. } => failing_step(source),
        _ => None,
    }
}

/// Norms of the first `steps` samples of a path, replayed deterministically.
fn partial_norms(
    plant: &mut dyn Plant,
    controller: Option<&Controller>,
    sim: &SimulationConfig,
    seed: u64,
    steps: usize,
) -> Result<Vec<f64>> {
    let short = SimulationConfig {
        horizon: steps.max(1),
        ..sim.clone()
    };
    if steps == 0 {
        return Ok(Vec::new());
    }
    let t = match controller {
        Some(c) => run_closed_loop(plant, c, &short, seed)?,
        None => run_open_loop(plant, &sim.disturbance, steps, seed)?,
    };
    Ok(t.state_norms())
}

/// Mean rms over one window of consecutive steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowTrend {
    pub start: usize,
    pub mean: f64,
    /// Increase over the previous window (negative when decreasing).
    pub change: f64,
    /// Monte Carlo standard error of `change` (delta method over paths).
    pub change_se: f64,
}

/// Non-overlapping `width`-step windows from `start` while they fit before
/// `end` (inclusive), with the standard error of each window-to-window
/// change. Needs per-path norms.
///
/// With `g_k = 1 / (2 width rms[k])` the window mean has the per-path
/// influence `sum_k g_k |q_k|^2`; the change between two windows has the
/// difference of influences, whose sample variance over paths divided by
/// `N` estimates the variance of the change.
pub fn window_trend(
    stats: &MonteCarloStats,
    start: usize,
    end: usize,
    width: usize,
) -> Result<Vec<WindowTrend>> {
    let norms = stats
        .norms
        .as_ref()
        .ok_or_else(|| Error::Input("window trend needs per-path norms".into()))?;
    if width == 0 || end >= stats.rms.len() || start + width > end + 1 {
        return Err(Error::Input("trend windows do not fit the horizon".into()));
    }
    let starts: Vec<usize> = (start..=end + 1 - width).step_by(width).collect();
    let n = norms.len() as f64;
    let influence = |w: usize| -> Vec<f64> {
        norms
            .iter()
            .map(|path| {
                (w..w + width)
                    .map(|k| path[k] * path[k] / (2.0 * width as f64 * stats.rms[k]))
                    .sum()
            })
            .collect()
    };
    let mut out = Vec::with_capacity(starts.len());
    let mut prev: Option<(f64, Vec<f64>)> = None;
    for &w in &starts {
        let mean = stats.rms[w..w + width].iter().sum::<f64>() / width as f64;
        let inf = influence(w);
        let (change, change_se) = match &prev {
            None => (0.0, 0.0),
            Some((pm, pinf)) => {
                let d: Vec<f64> = inf.iter().zip(pinf).map(|(a, b)| a - b).collect();
                let dm = d.iter().sum::<f64>() / n;
                let var = if norms.len() > 1 {
                    d.iter().map(|x| (x - dm).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                (mean - pm, (var / n).sqrt())
            }
        };
        out.push(WindowTrend {
            start: w,
            mean,
            change,
            change_se,
        });
        prev = Some((mean, inf));
    }
    Ok(out)
}

/// `(rms[k2] / rms[k1])^(1 / (k2 - k1))`.
pub fn convergence_rate(stats: &MonteCarloStats, k1: usize, k2: usize) -> Result<f64> {
    if !(k1 < k2 && k2 < stats.rms.len()) {
        return Err(Error::Input(format!(
            "need k1 < k2 < {} for the convergence rate, got ({k1}, {k2})",
            stats.rms.len()
        )));
    }
    let (r1, r2) = (stats.rms[k1], stats.rms[k2]);
    if !(r1 > 0.0) {
        return Err(Error::Input(format!("rms[{k1}] is zero")));
    }
    Ok((r2 / r1).powf(1.0 / (k2 - k1) as f64))
}
