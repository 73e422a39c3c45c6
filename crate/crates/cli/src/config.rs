//! The run configuration: a sectioned key/value file plus flag overrides.
//!
//! Every recognized key is listed in [`KEYS`]; anything else is rejected.
//! Relative paths in a config file are resolved against the directory of
//! that file. Input files that are not named default to the products of
//! earlier commands in the output directory (`model.txt`, `gain.txt`).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rdsctl::files::read_document;
use rdsctl::plantlab::{ScalarLaw, NETWORK_S1, NETWORK_S2};
use rdsctl::synthesis::DEFAULT_RANK_TOL;
use rdsctl::textfmt::{format_f64, format_row, Document, Section};
use rdsctl::{scenario, DMatrix, DVector, Error, Result, SynthesisOptions};

pub struct KeySpec {
    pub section: &'static str,
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(
    section: &'static str,
    key: &'static str,
    default: &'static str,
    help: &'static str,
) -> KeySpec {
    KeySpec {
        section,
        key,
        default,
        help,
    }
}

/// Every recognized config key, in file order.
pub const KEYS: &[KeySpec] = &[
    key("run", "seed", "0", "base seed of every random stream (flag --seed)"),
    key("run", "out", "out", "output directory (flag --out)"),
    key("run", "plots", "true", "write SVG plots after simulate (flag --no-plots)"),
    key("system", "file", "(built-in networked model)", "controller/identification model: system file"),
    key("plant", "kind", "networked", "plant driven by identify/simulate: networked | model"),
    key("plant", "model", "-", "kind = model: parameter model file the plant draws from"),
    key("plant", "x0", "all ones", "kind = model: initial state"),
    key("plant", "s1_mean", "0.8", "kind = networked: mean of s1"),
    key("plant", "s1_std", "0.2", "kind = networked: standard deviation of s1"),
    key("plant", "s2_mean", "0.2", "kind = networked: mean of s2"),
    key("plant", "s2_std", "0.3", "kind = networked: standard deviation of s2"),
    key("filter", "members", "300", "EnKF ensemble size"),
    key("filter", "eps_v", "auto", "innovation regularization (auto: scaled to the innovation covariance)"),
    key("filter", "jitter", "0", "standard deviation of an initial ensemble spread"),
    key("filter", "q", "0.01 I (state), 0.02 I (parameters)", "process noise on [x; xi]"),
    key("filter", "r", "0.01 I", "measurement noise"),
    key("filter", "psi0", "zeros", "initial [x; xi] of the ensemble"),
    key("identify", "k0", "20", "first step of the sample window"),
    key("identify", "k1", "80", "window length (samples k0..=k0+k1)"),
    key("identify", "amplitude", "5", "MLS excitation amplitude"),
    key("identify", "mls_order", "10", "MLS register order (3..=20)"),
    key("identify", "mls_taps", "default for the order", "MLS feedback taps"),
    key("identify", "divergence_limit", "1e6", "state estimate norm treated as divergence"),
    key("synthesize", "model", "<out>/model.txt", "parameter model the Gram is computed from"),
    key("synthesize", "gram", "-", "Gram file; replaces model when set"),
    key("synthesize", "rank_tol", "1e-9", "relative eigenvalue cutoff of the Gram factor"),
    key("synthesize", "lambda_lo", "1e-4", "lower end of the rate bisection"),
    key("synthesize", "lambda_hi", "0.999999", "upper end of the synthesis bisection"),
    key("synthesize", "tol_lambda2", "1e-5", "bisection tolerance on lambda^2"),
    key("synthesize", "eps_feas", "1e-8", "LMI feasibility margin"),
    key("synthesize", "lambda_max", "10", "upper end of the analysis bisection (flag --lambda-max)"),
    key("synthesize", "max_condition", "1e12", "trace/condition cap on X and P"),
    key("analyze", "gain", "<out>/gain.txt", "gain file to analyze"),
    key("simulate", "gain", "<out>/gain.txt", "gain file of the controller"),
    key("simulate", "paths", "200", "Monte Carlo paths (flag --paths)"),
    key("simulate", "horizon", "101", "samples per path"),
    key("simulate", "disturbance", "10", "level of the additive input disturbance"),
    key("simulate", "disturbance_until", "50", "the disturbance is applied for k < this"),
    key("simulate", "filter_sees_disturbance", "true", "feed the disturbed input to the filter"),
    key("simulate", "allow_divergence", "true", "record failing paths as divergent instead of aborting"),
    key("simulate", "trajectories", "3", "number of per-path CSV files"),
    key("simulate", "rate_from", "60", "first step of the reported convergence rate"),
    key("simulate", "rate_to", "80", "last step of the reported convergence rate"),
];

pub const SECTIONS: &[&str] = &[
    "run", "system", "plant", "filter", "identify", "synthesize", "analyze", "simulate",
];

fn keys_of(section: &str) -> Vec<&'static str> {
    KEYS.iter()
        .filter(|k| k.section == section)
        .map(|k| k.key)
        .collect()
}

/// The key reference shown by `--help`.
pub fn key_help() -> String {
    let mut out = String::from("Config keys ([section] key: default -- meaning):\n");
    let mut current = "";
    for k in KEYS {
        if k.section != current {
            current = k.section;
            let _ = writeln!(out, "  [{current}]");
        }
        let _ = writeln!(out, "    {}: {} -- {}", k.key, k.default, k.help);
    }
    out.push_str(
        "\nEvery flag can also be set through the environment with the RDSCTL_ prefix \
         (RDSCTL_CONFIG, RDSCTL_SEED, RDSCTL_PATHS, RDSCTL_OUT, RDSCTL_LAMBDA_MAX, \
         RDSCTL_NO_PLOTS); RDSCTL_LOG sets the log level.\n\
         Exit codes: 0 success, 1 reproduce-paper check failed, 2 usage or config error, \
         3 infeasible or not stabilizable, 4 numerical failure, 5 simulation divergence.",
    );
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlantKind {
    Networked,
    Model,
}

impl FromStr for PlantKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "networked" => Ok(Self::Networked),
            "model" => Ok(Self::Model),
            other => Err(format!("unknown plant kind {other:?} (networked | model)")),
        }
    }
}

impl std::fmt::Display for PlantKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Networked => "networked",
            Self::Model => "model",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantConfig {
    pub kind: PlantKind,
    pub model: Option<String>,
    pub x0: Option<DVector<f64>>,
    pub s1: ScalarLaw,
    pub s2: ScalarLaw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub members: usize,
    pub eps_v: Option<f64>,
    pub jitter: f64,
    pub q: Option<DMatrix<f64>>,
    pub r: Option<DMatrix<f64>>,
    pub psi0: Option<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentifyConfig {
    pub k0: usize,
    pub k1: usize,
    pub amplitude: f64,
    pub mls_order: usize,
    pub mls_taps: Option<Vec<usize>>,
    pub divergence_limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizeConfig {
    pub model: Option<String>,
    pub gram: Option<String>,
    pub rank_tol: f64,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub tol_lambda2: f64,
    pub eps_feas: f64,
    pub lambda_max: f64,
    pub max_condition: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateConfig {
    pub gain: Option<String>,
    pub paths: usize,
    pub horizon: usize,
    pub disturbance: f64,
    pub disturbance_until: usize,
    pub filter_sees_disturbance: bool,
    pub allow_divergence: bool,
    pub trajectories: usize,
    pub rate_from: usize,
    pub rate_to: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
    pub seed: u64,
    pub out: String,
    pub plots: bool,
    pub system: Option<String>,
    pub plant: PlantConfig,
    pub filter: FilterConfig,
    pub identify: IdentifyConfig,
    pub synthesize: SynthesizeConfig,
    pub analyze_gain: Option<String>,
    pub simulate: SimulateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sopts = SynthesisOptions::default();
        Self {
            base_dir: PathBuf::new(),
            seed: 0,
            out: "out".into(),
            plots: true,
            system: None,
            plant: PlantConfig {
                kind: PlantKind::Networked,
                model: None,
                x0: None,
                s1: NETWORK_S1,
                s2: NETWORK_S2,
            },
            filter: FilterConfig {
                members: scenario::ENSEMBLE_SIZE,
                eps_v: None,
                jitter: 0.0,
                q: None,
                r: None,
                psi0: None,
            },
            identify: IdentifyConfig {
                k0: scenario::WINDOW_START,
                k1: scenario::WINDOW_LENGTH,
                amplitude: scenario::IDENTIFICATION_AMPLITUDE,
                mls_order: 10,
                mls_taps: None,
                divergence_limit: 1e6,
            },
            synthesize: SynthesizeConfig {
                model: None,
                gram: None,
                rank_tol: DEFAULT_RANK_TOL,
                lambda_lo: sopts.lambda_lo,
                lambda_hi: sopts.lambda_hi,
                tol_lambda2: sopts.tol_lambda2,
                eps_feas: sopts.eps_feas,
                lambda_max: sopts.lambda_max,
                max_condition: sopts.max_condition,
            },
            analyze_gain: None,
            simulate: SimulateConfig {
                gain: None,
                paths: scenario::PATHS,
                horizon: scenario::HORIZON,
                disturbance: scenario::DISTURBANCE_LEVEL,
                disturbance_until: scenario::DISTURBANCE_UNTIL,
                filter_sees_disturbance: true,
                allow_divergence: true,
                trajectories: 3,
                rate_from: 60,
                rate_to: 80,
            },
        }
    }
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub out: Option<PathBuf>,
    pub lambda_max: Option<f64>,
    pub no_plots: bool,
}

fn parse<T: FromStr>(s: Option<&Section>, key: &str, default: T) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    match s.and_then(|s| s.get(key)) {
        Some(e) if !e.text().is_empty() => e.parse(),
        _ => Ok(default),
    }
}

/// `None` for absent or empty values.
fn optional<T>(s: Option<&Section>, key: &str, f: impl FnOnce(&rdsctl::textfmt::Entry) -> Result<T>) -> Result<Option<T>> {
    match s.and_then(|s| s.get(key)) {
        Some(e) if !e.text().is_empty() => f(e).map(Some),
        _ => Ok(None),
    }
}

impl RunConfig {
    pub fn from_document(doc: &Document, base_dir: &Path) -> Result<Self> {
        doc.check_sections(SECTIONS)?;
        for s in doc.sections() {
            s.check_keys(&keys_of(&s.name))?;
        }
        let d = Self::default();
        let sec = |name: &str| doc.section(name);
        let text = |s: Option<&Section>, key: &str| optional(s, key, |e| Ok(e.text()));

        let run = sec("run");
        let plant = sec("plant");
        let filter = sec("filter");
        let ident = sec("identify");
        let synth = sec("synthesize");
        let sim = sec("simulate");
        Ok(Self {
            base_dir: base_dir.to_path_buf(),
            seed: parse(run, "seed", d.seed)?,
            out: parse(run, "out", d.out)?,
            plots: parse(run, "plots", d.plots)?,
            system: text(sec("system"), "file")?,
            plant: PlantConfig {
                kind: parse(plant, "kind", d.plant.kind)?,
                model: text(plant, "model")?,
                x0: optional(plant, "x0", |e| e.vector())?,
                s1: ScalarLaw {
                    mean: parse(plant, "s1_mean", d.plant.s1.mean)?,
                    std_dev: parse(plant, "s1_std", d.plant.s1.std_dev)?,
                },
                s2: ScalarLaw {
                    mean: parse(plant, "s2_mean", d.plant.s2.mean)?,
                    std_dev: parse(plant, "s2_std", d.plant.s2.std_dev)?,
                },
            },
            filter: FilterConfig {
                members: parse(filter, "members", d.filter.members)?,
                eps_v: optional(filter, "eps_v", |e| e.parse())?,
                jitter: parse(filter, "jitter", d.filter.jitter)?,
                q: optional(filter, "q", |e| e.matrix())?,
                r: optional(filter, "r", |e| e.matrix())?,
                psi0: optional(filter, "psi0", |e| e.vector())?,
            },
            identify: IdentifyConfig {
                k0: parse(ident, "k0", d.identify.k0)?,
                k1: parse(ident, "k1", d.identify.k1)?,
                amplitude: parse(ident, "amplitude", d.identify.amplitude)?,
                mls_order: parse(ident, "mls_order", d.identify.mls_order)?,
                mls_taps: optional(ident, "mls_taps", |e| {
                    e.text()
                        .split_whitespace()
                        .map(|t| {
                            t.parse::<usize>().map_err(|err| Error::Parse {
                                line: e.line,
                                msg: format!("mls_taps: {t:?}: {err}"),
                            })
                        })
                        .collect()
                })?,
                divergence_limit: parse(ident, "divergence_limit", d.identify.divergence_limit)?,
            },
            synthesize: SynthesizeConfig {
                model: text(synth, "model")?,
                gram: text(synth, "gram")?,
                rank_tol: parse(synth, "rank_tol", d.synthesize.rank_tol)?,
                lambda_lo: parse(synth, "lambda_lo", d.synthesize.lambda_lo)?,
                lambda_hi: parse(synth, "lambda_hi", d.synthesize.lambda_hi)?,
                tol_lambda2: parse(synth, "tol_lambda2", d.synthesize.tol_lambda2)?,
                eps_feas: parse(synth, "eps_feas", d.synthesize.eps_feas)?,
                lambda_max: parse(synth, "lambda_max", d.synthesize.lambda_max)?,
                max_condition: parse(synth, "max_condition", d.synthesize.max_condition)?,
            },
            analyze_gain: text(sec("analyze"), "gain")?,
            simulate: SimulateConfig {
                gain: text(sim, "gain")?,
                paths: parse(sim, "paths", d.simulate.paths)?,
                horizon: parse(sim, "horizon", d.simulate.horizon)?,
                disturbance: parse(sim, "disturbance", d.simulate.disturbance)?,
                disturbance_until: parse(sim, "disturbance_until", d.simulate.disturbance_until)?,
                filter_sees_disturbance: parse(
                    sim,
                    "filter_sees_disturbance",
                    d.simulate.filter_sees_disturbance,
                )?,
                allow_divergence: parse(sim, "allow_divergence", d.simulate.allow_divergence)?,
                trajectories: parse(sim, "trajectories", d.simulate.trajectories)?,
                rate_from: parse(sim, "rate_from", d.simulate.rate_from)?,
                rate_to: parse(sim, "rate_to", d.simulate.rate_to)?,
            },
        })
    }

    /// Every setting, including defaults; unset optional keys are omitted.
    pub fn to_document(&self) -> Document {
        let mut doc = Document::new();
        let f = |x: f64| format_f64(x);

        doc.section_mut("run")
            .set("seed", self.seed)
            .set("out", &self.out)
            .set("plots", self.plots);
        if let Some(file) = &self.system {
            doc.section_mut("system").set("file", file);
        }

        let s = doc.section_mut("plant");
        s.set("kind", self.plant.kind);
        if let Some(m) = &self.plant.model {
            s.set("model", m);
        }
        if let Some(x0) = &self.plant.x0 {
            s.set_vector("x0", x0);
        }
        s.set("s1_mean", f(self.plant.s1.mean))
            .set("s1_std", f(self.plant.s1.std_dev))
            .set("s2_mean", f(self.plant.s2.mean))
            .set("s2_std", f(self.plant.s2.std_dev));

        let s = doc.section_mut("filter");
        s.set("members", self.filter.members);
        if let Some(e) = self.filter.eps_v {
            s.set("eps_v", f(e));
        }
        s.set("jitter", f(self.filter.jitter));
        if let Some(q) = &self.filter.q {
            s.set_matrix("q", q);
        }
        if let Some(r) = &self.filter.r {
            s.set_matrix("r", r);
        }
        if let Some(p) = &self.filter.psi0 {
            s.set_vector("psi0", p);
        }

        let i = &self.identify;
        let s = doc.section_mut("identify");
        s.set("k0", i.k0)
            .set("k1", i.k1)
            .set("amplitude", f(i.amplitude))
            .set("mls_order", i.mls_order);
        if let Some(taps) = &i.mls_taps {
            let taps: Vec<String> = taps.iter().map(|t| t.to_string()).collect();
            s.set("mls_taps", taps.join(" "));
        }
        s.set("divergence_limit", f(i.divergence_limit));

        let y = &self.synthesize;
        let s = doc.section_mut("synthesize");
        if let Some(m) = &y.model {
            s.set("model", m);
        }
        if let Some(g) = &y.gram {
            s.set("gram", g);
        }
        s.set("rank_tol", f(y.rank_tol))
            .set("lambda_lo", f(y.lambda_lo))
            .set("lambda_hi", f(y.lambda_hi))
            .set("tol_lambda2", f(y.tol_lambda2))
            .set("eps_feas", f(y.eps_feas))
            .set("lambda_max", f(y.lambda_max))
            .set("max_condition", f(y.max_condition));

        if let Some(g) = &self.analyze_gain {
            doc.section_mut("analyze").set("gain", g);
        }

        let m = &self.simulate;
        let s = doc.section_mut("simulate");
        if let Some(g) = &m.gain {
            s.set("gain", g);
        }
        s.set("paths", m.paths)
            .set("horizon", m.horizon)
            .set("disturbance", f(m.disturbance))
            .set("disturbance_until", m.disturbance_until)
            .set("filter_sees_disturbance", m.filter_sees_disturbance)
            .set("allow_divergence", m.allow_divergence)
            .set("trajectories", m.trajectories)
            .set("rate_from", m.rate_from)
            .set("rate_to", m.rate_to);
        doc
    }

    /// Reads `path`, or the defaults when no file is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let doc = read_document(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_document(&doc, base).map_err(|e| e.in_file(path))
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(paths) = o.paths {
            self.simulate.paths = paths;
        }
        if let Some(out) = &o.out {
            // Flag paths are relative to the working directory.
            self.out = std::path::absolute(out)?.display().to_string();
        }
        if let Some(l) = o.lambda_max {
            self.synthesize.lambda_max = l;
        }
        if o.no_plots {
            self.plots = false;
        }
        Ok(())
    }

    /// `path` relative to the config file's directory.
    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.out)
    }

    /// A configured input file, or `default_name` in the output directory.
    pub fn input(&self, configured: &Option<String>, default_name: &str) -> PathBuf {
        match configured {
            Some(p) => self.resolve(p),
            None => self.out_dir().join(default_name),
        }
    }

    pub fn synthesis_options(&self) -> SynthesisOptions {
        let y = &self.synthesize;
        SynthesisOptions {
            lambda_lo: y.lambda_lo,
            lambda_hi: y.lambda_hi,
            tol_lambda2: y.tol_lambda2,
            eps_feas: y.eps_feas,
            lambda_max: y.lambda_max,
            max_condition: y.max_condition,
            ..SynthesisOptions::default()
        }
    }
}

/// Default process noise: 0.01 on the states, 0.02 on the parameters.
pub fn default_process_noise(n: usize, z: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n + z, n + z, |i, j| match (i == j, i < n) {
        (true, true) => 0.01,
        (true, false) => 0.02,
        _ => 0.0,
    })
}

pub fn default_measurement_noise(p: usize) -> DMatrix<f64> {
    DMatrix::identity(p, p) * 0.01
}

/// One line of numbers, for reports.
pub fn row(v: &DVector<f64>) -> String {
    format_row(v.iter().copied())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reparse(cfg: &RunConfig) -> RunConfig {
        let text = cfg.to_document().to_string();
        RunConfig::from_document(&Document::parse(&text).unwrap(), &cfg.base_dir).unwrap()
    }

    #[test]
    fn defaults_round_trip() {
        let d = RunConfig::default();
        assert_eq!(reparse(&d), d);
    }

    #[test]
    fn full_config_round_trips_idempotently() {
        let text = "\
[run]
seed = 7
[system]
file = sys.txt
[plant]
kind = model
model = m.txt
x0 = 1 2
[filter]
eps_v = 1e-9
q =
    0.1 0
    0 0.2
r = 0.3
psi0 = 0 0
[identify]
mls_taps = 7 6
[synthesize]
gram = g.txt
[analyze]
gain = f.txt
[simulate]
paths = 3
";
        let cfg = RunConfig::from_document(&Document::parse(text).unwrap(), Path::new("base")).unwrap();
        assert_eq!(cfg.plant.kind, PlantKind::Model);
        assert_eq!(cfg.identify.mls_taps, Some(vec![7, 6]));
        assert_eq!(cfg.filter.q.as_ref().unwrap()[(1, 1)], 0.2);
        assert_eq!(cfg.resolve("sys.txt"), Path::new("base/sys.txt"));
        let once = reparse(&cfg);
        assert_eq!(once, cfg);
        assert_eq!(once.to_document().to_string(), cfg.to_document().to_string());
    }

    #[test]
    fn unknown_keys_and_sections_are_rejected() {
        for text in ["[run]\nsed = 1\n", "[runs]\nseed = 1\n"] {
            let err = RunConfig::from_document(&Document::parse(text).unwrap(), Path::new("")).unwrap_err();
            assert!(matches!(err, Error::Parse { .. }), "{err}");
        }
        let bad = Document::parse("[plant]\nkind = lti\n").unwrap();
        assert!(RunConfig::from_document(&bad, Path::new("")).is_err());
    }

    #[test]
    fn help_lists_every_key() {
        let help = key_help();
        for k in KEYS {
            assert!(help.contains(&format!("    {}: ", k.key)), "{}", k.key);
        }
        for s in SECTIONS {
            assert!(help.contains(&format!("[{s}]")));
        }
    }

    #[test]
    fn default_noise_matches_the_experiment() {
        assert_eq!(default_process_noise(6, 3), scenario::process_noise());
        assert_eq!(default_measurement_noise(3), scenario::measurement_noise());
    }
}
