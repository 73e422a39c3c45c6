//! The subcommands. Each reads its inputs, validates that they exist, runs
//! the pipeline stage and writes its products atomically into the output
//! directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use log::{info, warn};
use rdsctl::files::{
    analysis_to_document, read_gain, read_gram, read_model, read_system, write_atomic, write_gain,
    write_gram, write_model,
};
use rdsctl::plantlab::{identify, ModelPlant, NetworkedPlant};
use rdsctl::rng::derive_seed;
use rdsctl::simulate::{
    convergence_rate, monte_carlo, run_closed_loop, window_trend, MonteCarloOptions,
};
use rdsctl::synthesis::{analyze, factorize_gram, synthesize, GramFactor};
use rdsctl::system::gram_closed_form;
use rdsctl::textfmt::{format_f64, Document, Section};
use rdsctl::{
    scenario, Controller, ControllerConfig, DMatrix, DVector, DistributionModel, EnkfConfig,
    GramMatrix, IdentificationConfig, MonteCarloStats, Plant, RandomLinearSystem, SimulationConfig,
    SynthesisOptions, SynthesisResult,
};

use crate::config::{default_measurement_noise, default_process_noise, row, PlantKind, RunConfig};
use crate::exit::{self, CliError, CliResult};
use crate::plot::{line_plot, Table};

/// `# rdsctl <version> <command>, generated <UTC time>`: the only line of
/// any output that varies between identical runs.
fn header(command: &str) -> String {
    format!(
        "# rdsctl {} {command}, generated {}\n",
        env!("CARGO_PKG_VERSION"),
        humantime::format_rfc3339_seconds(SystemTime::now())
    )
}

fn write_report(path: &Path, command: &str, doc: &Document) -> CliResult<()> {
    let text = format!("{}{doc}", header(command));
    Ok(write_atomic(path, text.as_bytes())?)
}

/// Fails with a usage error naming the first input that does not exist.
fn check_inputs(paths: &[&Path]) -> CliResult<()> {
    for p in paths {
        if !p.is_file() {
            return Err(CliError::usage(format!("{}: input file not found", p.display())));
        }
    }
    Ok(())
}

fn load_system(cfg: &RunConfig) -> CliResult<RandomLinearSystem> {
    match &cfg.system {
        Some(file) => {
            let path = cfg.resolve(file);
            check_inputs(&[&path])?;
            Ok(read_system(&path)?)
        }
        None => Ok(scenario::network_system()),
    }
}

/// The simulated plant, built by identification and the Monte Carlo runner.
// Both variants are a few hundred bytes; plants are cloned once per path.
#[allow(clippy::large_enum_variant)]
#[derive(Clone)]
pub enum AnyPlant {
    Networked(NetworkedPlant),
    Model(ModelPlant),
}

impl AnyPlant {
    fn inner(&self) -> &dyn Plant {
        match self {
            Self::Networked(p) => p,
            Self::Model(p) => p,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Plant {
        match self {
            Self::Networked(p) => p,
            Self::Model(p) => p,
        }
    }
}

impl Plant for AnyPlant {
    fn input_dim(&self) -> usize {
        self.inner().input_dim()
    }
    fn output_dim(&self) -> usize {
        self.inner().output_dim()
    }
    fn reset(&mut self, seed: u64) {
        self.inner_mut().reset(seed)
    }
    fn step(&mut self, u: &DVector<f64>) -> rdsctl::Result<DVector<f64>> {
        self.inner_mut().step(u)
    }
    fn true_state(&self) -> DVector<f64> {
        self.inner().true_state()
    }
}

fn build_plant(cfg: &RunConfig, system: &RandomLinearSystem, seed: u64) -> CliResult<AnyPlant> {
    let p = &cfg.plant;
    match p.kind {
        PlantKind::Networked => Ok(AnyPlant::Networked(NetworkedPlant::with_laws(seed, p.s1, p.s2)?)),
        PlantKind::Model => {
            let file = p
                .model
                .as_ref()
                .ok_or_else(|| CliError::usage("[plant] kind = model needs a model file"))?;
            let path = cfg.resolve(file);
            check_inputs(&[&path])?;
            let model = read_model(&path)?;
            let x0 = p.x0.clone().unwrap_or_else(|| DVector::from_element(system.n(), 1.0));
            Ok(AnyPlant::Model(ModelPlant::new(system.clone(), &model, x0, seed)?))
        }
    }
}

fn filter_noise(cfg: &RunConfig, system: &RandomLinearSystem) -> (DMatrix<f64>, DMatrix<f64>) {
    let q = cfg
        .filter
        .q
        .clone()
        .unwrap_or_else(|| default_process_noise(system.n(), system.z()));
    let r = cfg
        .filter
        .r
        .clone()
        .unwrap_or_else(|| default_measurement_noise(system.p()));
    (q, r)
}

fn enkf_config(cfg: &RunConfig, seed: u64) -> EnkfConfig {
    EnkfConfig {
        members: cfg.filter.members,
        seed,
        eps_v: cfg.filter.eps_v,
        jitter: cfg.filter.jitter,
    }
}

fn create_out(cfg: &RunConfig) -> CliResult<PathBuf> {
    let out = cfg.out_dir();
    fs::create_dir_all(&out)
        .map_err(|e| CliError::usage(format!("{}: cannot create output directory: {e}", out.display())))?;
    Ok(out)
}

pub fn cmd_identify(cfg: &RunConfig) -> CliResult<()> {
    let system = load_system(cfg)?;
    // Stream layout shared with the library experiment: plant 0, filter 1.
    let mut plant = build_plant(cfg, &system, derive_seed(cfg.seed, 0))?;
    let (q, r) = filter_noise(cfg, &system);
    let i = &cfg.identify;
    let icfg = IdentificationConfig {
        k0: i.k0,
        k1: i.k1,
        amplitude: i.amplitude,
        mls_order: i.mls_order,
        mls_taps: i.mls_taps.clone(),
        input: None,
        enkf: enkf_config(cfg, derive_seed(cfg.seed, 1)),
        q,
        r,
        psi0: cfg.filter.psi0.clone(),
        divergence_limit: i.divergence_limit,
    };
    let out = create_out(cfg)?;
    info!("identifying over {} steps", icfg.steps());
    let res = identify(&mut plant, &system, &icfg)?;
    write_model(&out.join("model.txt"), &res.distribution)?;
    write_gram(&out.join("gram.txt"), &res.empirical_gram)?;
    write_atomic(&out.join("trace.csv"), res.trace_csv().as_bytes())?;
    println!("mean = {}", row(res.mean()));
    println!("covariance =");
    for r in res.covariance().row_iter() {
        println!("    {}", rdsctl::textfmt::format_row(r.iter().copied()));
    }
    println!("wrote {}", out.display());
    Ok(())
}

/// The Gram from `[synthesize] gram`, else from the model file and system.
fn load_gram(cfg: &RunConfig) -> CliResult<GramMatrix> {
    if let Some(g) = &cfg.synthesize.gram {
        let path = cfg.resolve(g);
        check_inputs(&[&path])?;
        return Ok(read_gram(&path)?);
    }
    let path = cfg.input(&cfg.synthesize.model, "model.txt");
    check_inputs(&[&path])?;
    let system = load_system(cfg)?;
    let model = read_model(&path)?;
    Ok(gram_closed_form(&system.coeffs, &model)?)
}

fn load_factor(cfg: &RunConfig) -> CliResult<GramFactor> {
    let gram = load_gram(cfg)?;
    Ok(factorize_gram(&gram, cfg.synthesize.rank_tol)?)
}

fn trace_matrix(trace: &[(f64, bool)]) -> DMatrix<f64> {
    DMatrix::from_fn(trace.len(), 2, |i, j| match j {
        0 => trace[i].0,
        _ => trace[i].1 as u8 as f64,
    })
}

fn synthesis_report(res: &SynthesisResult) -> Document {
    let mut doc = Document::new();
    let mut s = Section::new("synthesis");
    s.set("lambda", format_f64(res.lambda_star))
        .set("nbar", res.nbar)
        .set("lmi_margin", format_f64(res.lmi_margin))
        .set("x_condition", format_f64(res.x_condition))
        .set_matrix("F", &res.f)
        .set_matrix("X", &res.x)
        .set_matrix("Y", &res.y);
    doc.push(s).expect("fresh document");
    let mut b = Section::new("bisection");
    b.set_matrix("trace", &trace_matrix(&res.trace));
    doc.push(b).expect("fresh document");
    doc
}

pub fn cmd_synthesize(cfg: &RunConfig) -> CliResult<()> {
    let factor = load_factor(cfg)?;
    let out = create_out(cfg)?;
    info!("synthesizing with nbar = {}", factor.nbar());
    let res = synthesize(&factor, &cfg.synthesis_options())?;
    write_gain(&out.join("gain.txt"), &res.f, Some(&res))?;
    write_report(&out.join("report.txt"), "synthesize", &synthesis_report(&res))?;
    println!("nbar = {}", res.nbar);
    println!("lambda* = {:.6}", res.lambda_star);
    println!("F = {}", rdsctl::textfmt::format_row(res.f.iter().copied()));
    println!("wrote {}", out.display());
    Ok(())
}

pub fn cmd_analyze(cfg: &RunConfig) -> CliResult<()> {
    let gain_path = cfg.input(&cfg.analyze_gain, "gain.txt");
    check_inputs(&[&gain_path])?;
    let factor = load_factor(cfg)?;
    let f = read_gain(&gain_path)?;
    let out = create_out(cfg)?;
    let res = analyze(&factor, &f, &cfg.synthesis_options())?;
    let mut doc = analysis_to_document(&res);
    let mut b = Section::new("bisection");
    b.set_matrix("trace", &trace_matrix(&res.trace));
    doc.push(b).expect("fresh section");
    write_report(&out.join("analysis.txt"), "analyze", &doc)?;
    println!("lambda = {:.6}", res.lambda_star);
    println!("wrote {}", out.join("analysis.txt").display());
    Ok(())
}

/// Controller and Monte Carlo settings for `gain` under `cfg`.
fn closed_loop_setup(
    cfg: &RunConfig,
    system: &RandomLinearSystem,
    gain: DMatrix<f64>,
) -> CliResult<(Controller, SimulationConfig)> {
    let (q, r) = filter_noise(cfg, system);
    let s = &cfg.simulate;
    let ctrl = Controller::new(ControllerConfig {
        gain,
        // Per-path filter streams are derived from the path seed.
        enkf: enkf_config(cfg, 0),
        q,
        r,
        system: system.clone(),
        psi0: cfg
            .filter
            .psi0
            .clone()
            .unwrap_or_else(|| DVector::zeros(system.n() + system.z())),
        filter_sees_disturbance: s.filter_sees_disturbance,
    })?;
    let disturbance = (0..s.horizon)
        .map(|k| {
            let level = if k < s.disturbance_until { s.disturbance } else { 0.0 };
            DVector::from_element(system.m(), level)
        })
        .collect();
    let sim = SimulationConfig {
        horizon: s.horizon,
        disturbance,
        paths: s.paths,
        base_seed: cfg.seed,
    };
    Ok((ctrl, sim))
}

pub fn cmd_simulate(cfg: &RunConfig) -> CliResult<()> {
    let gain_path = cfg.input(&cfg.simulate.gain, "gain.txt");
    check_inputs(&[&gain_path])?;
    let system = load_system(cfg)?;
    let gain = read_gain(&gain_path)?;
    let plant = build_plant(cfg, &system, 0)?;
    let (ctrl, sim) = closed_loop_setup(cfg, &system, gain)?;
    let out = create_out(cfg)?;

    info!("running {} paths of {} steps", sim.paths, sim.horizon);
    let stats = monte_carlo(
        || plant.clone(),
        Some(&ctrl),
        &sim,
        &MonteCarloOptions {
            keep_norms: false,
            allow_divergence: cfg.simulate.allow_divergence,
        },
    )?;
    write_atomic(&out.join("rms.csv"), stats.to_csv().as_bytes())?;

    let paths_dir = out.join("paths");
    for i in 0..cfg.simulate.trajectories.min(sim.paths) {
        let seed = derive_seed(cfg.seed, i as u64);
        let mut p = plant.clone();
        match run_closed_loop(&mut p, &ctrl, &sim, seed) {
            Ok(t) => write_atomic(&paths_dir.join(format!("path_{i:03}.csv")), t.to_csv().as_bytes())?,
            Err(e) => warn!("path {i} (seed {seed}) not written: {e}"),
        }
    }

    let s = &cfg.simulate;
    let rate = convergence_rate(&stats, s.rate_from, s.rate_to);
    let mut sec = Section::new("simulate");
    sec.set("paths", stats.n_paths)
        .set("horizon", stats.rms.len())
        .set("diverged", stats.diverged.len());
    if !stats.diverged.is_empty() {
        let seeds: Vec<String> = stats.diverged.iter().map(|s| s.to_string()).collect();
        sec.set("diverged_seeds", seeds.join(" "));
    }
    match &rate {
        Ok(r) => {
            sec.set(&format!("rate_{}_{}", s.rate_from, s.rate_to), format_f64(*r));
        }
        Err(e) => warn!("no convergence rate: {e}"),
    }
    let mut doc = Document::new();
    doc.push(sec).expect("fresh document");
    write_report(&out.join("summary.txt"), "simulate", &doc)?;

    if cfg.plots {
        plot_dir(&out)?;
    }
    if let Ok(r) = rate {
        println!("convergence rate rms[{}..{}] = {r:.4}", s.rate_from, s.rate_to);
    }
    println!("wrote {}", out.display());
    if !stats.diverged.is_empty() {
        return Err(CliError::new(
            exit::DIVERGED,
            format!(
                "{} of {} paths diverged; results are partial (diverged paths are inf)",
                stats.diverged.len(),
                stats.n_paths
            ),
        ));
    }
    Ok(())
}

fn read_table(path: &Path) -> CliResult<Table> {
    let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    Table::parse(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

/// Writes `plots/*.svg` for the CSV files found in `out`: `rms*.csv`,
/// `paths/*.csv` and `trace.csv`. Returns the number of plots.
pub fn plot_dir(out: &Path) -> CliResult<usize> {
    let plots = out.join("plots");
    let mut written = 0;
    let mut emit = |name: &str, svg: String| -> CliResult<()> {
        write_atomic(&plots.join(name), svg.as_bytes())?;
        written += 1;
        Ok(())
    };

    let mut tables: Vec<PathBuf> = fs::read_dir(out)
        .map_err(|e| CliError::usage(format!("{}: {e}", out.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().unwrap_or_default().to_string_lossy();
            name.starts_with("rms") && name.ends_with(".csv")
        })
        .collect();
    tables.sort();
    for f in tables {
        let t = read_table(&f)?;
        let stem = f.file_stem().unwrap().to_string_lossy().into_owned();
        let series = t.series_with_prefix("rms");
        emit(&format!("{stem}.svg"), line_plot("rms state norm", "k", "rms |q_k|", &series, true))?;
    }
    let paths = out.join("paths");
    if paths.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(&paths)
            .map_err(|e| CliError::usage(format!("{}: {e}", paths.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        for f in files {
            let t = read_table(&f)?;
            let stem = f.file_stem().unwrap().to_string_lossy().into_owned();
            let series = t.series_with_prefix("q");
            emit(&format!("{stem}.svg"), line_plot(&format!("{stem} plant state"), "k", "q_k", &series, false))?;
        }
    }
    let trace = out.join("trace.csv");
    if trace.is_file() {
        let t = read_table(&trace)?;
        let series = t.series_with_prefix("xi");
        emit("trace_xi.svg", line_plot("filtered parameters", "k", "xi_k", &series, false))?;
    }
    Ok(written)
}

pub fn cmd_plot(cfg: &RunConfig) -> CliResult<()> {
    let out = cfg.out_dir();
    let n = plot_dir(&out)?;
    if n == 0 {
        return Err(CliError::usage(format!(
            "{}: no rms*.csv, paths/*.csv or trace.csv to plot",
            out.display()
        )));
    }
    println!("wrote {n} plots to {}", out.join("plots").display());
    Ok(())
}

struct Check {
    name: &'static str,
    value: String,
    band: String,
    pass: bool,
}

fn rms_growth(stats: &MonteCarloStats) -> Option<(f64, f64)> {
    Some((*stats.rms.get(50)?, *stats.rms.get(100)?))
}

/// The networked experiment end to end, checked against its reference bands.
pub fn cmd_reproduce(cfg: &RunConfig) -> CliResult<()> {
    let out = create_out(cfg)?;
    let seed = cfg.seed;
    let paths = cfg.simulate.paths;
    let opts = SynthesisOptions {
        lambda_max: cfg.synthesize.lambda_max,
        ..SynthesisOptions::default()
    };
    let sys = scenario::network_system();
    let mut checks: Vec<Check> = Vec::new();
    let mut notes: Vec<String> = Vec::new();

    info!("stage identify");
    let ident = scenario::run_identification(seed).map_err(|e| CliError::from(e).in_stage("identify"))?;
    write_model(&out.join("model.txt"), &ident.distribution)?;
    write_atomic(&out.join("trace.csv"), ident.trace_csv().as_bytes())?;
    let mean_err = ident
        .mean()
        .iter()
        .zip(scenario::TRUE_PARAMETER_MEAN)
        .map(|(g, w)| (g - w).abs())
        .fold(0.0, f64::max);
    checks.push(Check {
        name: "identified mean",
        value: format!("[{}], worst error {mean_err:.3}", fmt_vec(ident.mean().iter())),
        band: "within 0.2 of [0.56, 0.2, 0.6]".into(),
        pass: mean_err <= 0.2,
    });
    let var2 = ident.covariance()[(1, 1)];
    checks.push(Check {
        name: "identified xi2 variance",
        value: format!("{var2:.4}"),
        band: "[0.03, 0.15]".into(),
        pass: (0.03..=0.15).contains(&var2),
    });

    info!("stage synthesize");
    let synth_stage = |model: &DistributionModel| -> CliResult<SynthesisResult> {
        let gram = gram_closed_form(&sys.coeffs, model)?;
        let factor = factorize_gram(&gram, cfg.synthesize.rank_tol)?;
        Ok(synthesize(&factor, &opts)?)
    };
    let reference = synth_stage(&scenario::reference_model()).map_err(|e| e.in_stage("synthesize"))?;
    write_gain(&out.join("gain.txt"), &reference.f, Some(&reference))?;
    checks.push(Check {
        name: "Gram factor rank",
        value: reference.nbar.to_string(),
        band: "4".into(),
        pass: reference.nbar == 4,
    });
    checks.push(Check {
        name: "lambda* (reference moments)",
        value: format!("{:.4}", reference.lambda_star),
        band: format!("{} +- 0.005", scenario::REFERENCE_LAMBDA),
        pass: (reference.lambda_star - scenario::REFERENCE_LAMBDA).abs() <= 0.005,
    });
    match synth_stage(&ident.distribution) {
        Ok(r) => notes.push(format!("lambda* for the identified moments: {:.4}", r.lambda_star)),
        Err(e) => notes.push(format!("no gain for the identified moments: {e}")),
    }
    let nominal = synth_stage(&scenario::reference_model().without_covariance())
        .map_err(|e| e.in_stage("nominal synthesis"))?;
    checks.push(Check {
        name: "lambda* (nominal, no covariance)",
        value: format!("{:.4}", nominal.lambda_star),
        band: format!("{} +- 0.005", scenario::NOMINAL_LAMBDA),
        pass: (nominal.lambda_star - scenario::NOMINAL_LAMBDA).abs() <= 0.005,
    });

    info!("stage pole placement");
    let placed = scenario::placed_gain(&scenario::reference_model())
        .map_err(|e| CliError::from(e).in_stage("pole placement"))?;
    let worst = placed
        .iter()
        .zip(scenario::PLACED_GAIN)
        .map(|(g, w)| ((g - w) / w).abs())
        .fold(0.0, f64::max);
    checks.push(Check {
        name: "pole-placement gain",
        value: format!("[{}]", fmt_vec(placed.iter())),
        band: "relative error <= 1e-3".into(),
        pass: worst <= 1e-3,
    });

    let evaluate = |stage: &str, gain: DMatrix<f64>| -> CliResult<MonteCarloStats> {
        info!("stage {stage}: {paths} paths");
        scenario::evaluate_gain(gain, paths, seed).map_err(|e| CliError::from(e).in_stage(stage))
    };
    let closed = evaluate("simulate", reference.f.clone())?;
    write_atomic(&out.join("rms.csv"), closed.to_csv().as_bytes())?;
    let rate = convergence_rate(&closed, 60, 80).map_err(|e| CliError::from(e).in_stage("simulate"))?;
    checks.push(Check {
        name: "convergence rate rms[60..80]",
        value: format!("{rate:.4}"),
        band: "[0.80, 0.90]".into(),
        pass: (0.80..=0.90).contains(&rate),
    });
    let trend = window_trend(&closed, 55, 99, 5).map_err(|e| CliError::from(e).in_stage("simulate"))?;
    let worst_rise = trend
        .iter()
        .skip(1)
        .map(|w| w.change / w.change_se)
        .fold(f64::NEG_INFINITY, f64::max);
    checks.push(Check {
        name: "rms trend over k in [55, 99]",
        value: format!("largest 5-step window rise {worst_rise:.2} standard errors"),
        band: "<= 2".into(),
        pass: trend.iter().skip(1).all(|w| w.change <= 2.0 * w.change_se),
    });

    for (stage, name, gain, file) in [
        ("placed gain", "pole-placement gain fails", placed, "rms_placed.csv"),
        ("nominal gain", "nominal gain fails", nominal.f.clone(), "rms_nominal.csv"),
    ] {
        let stats = evaluate(stage, gain)?;
        write_atomic(&out.join(file), stats.to_csv().as_bytes())?;
        let (r50, r100) = rms_growth(&stats).unwrap_or((f64::NAN, f64::NAN));
        checks.push(Check {
            name,
            value: format!("rms[50] = {r50:.3e}, rms[100] = {r100:.3e}, {} diverged paths", stats.diverged.len()),
            band: "rms[100] > rms[50]".into(),
            pass: r100 > r50,
        });
    }

    let mut table = String::new();
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in &checks {
        let _ = writeln!(
            table,
            "{:<4}  {:<width$}  {}  (band {})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.band
        );
    }
    for n in &notes {
        let _ = writeln!(table, "note  {n}");
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    let _ = writeln!(
        table,
        "{} of {} checks passed (seed {seed}, {paths} paths)",
        checks.len() - failed,
        checks.len()
    );
    let text = format!("{}{table}", header("reproduce-paper"));
    write_atomic(&out.join("summary.txt"), text.as_bytes())?;
    print!("{table}");
    if cfg.plots {
        plot_dir(&out)?;
    }
    if failed > 0 {
        return Err(CliError::new(exit::CHECK_FAILED, format!("{failed} checks failed")));
    }
    Ok(())
}

fn fmt_vec<'a>(v: impl Iterator<Item = &'a f64>) -> String {
    v.map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ")
}
