//! On-disk formats for systems, parameter models, Gram matrices and gains,
//! all as [`textfmt`](crate::textfmt) documents.
//!
//! System file:
//!
//! ```text
//! [system]
//! label = networked       # optional
//! dims = 6 1 3 3          # n m p Z
//! A0 =                    # n x n, row-major, one row per line
//!     0 -0.4 0 0 0 0
//!     ...
//! A1 = ...                # A1..AZ, B0..BZ (n x m), C0..CZ (p x n), D0..DZ (p x m)
//! ```
//!
//! Every coefficient block is optional and defaults to zeros; `M(xi) = M0 +
//! sum_j xi_j Mj`.
//!
//! Model file: `[model]` with `mean` (Z numbers) and `covariance` (Z x Z).
//! Gram file: `[gram]` with `n`, `m` and `matrix` (`(n+m)n` square).
//! Gain file: `[gain]` with `F` (m x n) and, when produced by synthesis,
//! `lambda`, `nbar`, `X`, `Y`, `lmi_margin` and `x_condition`.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::synthesis::{AnalysisResult, SynthesisResult};
use crate::system::{AffineCoefficients, DistributionModel, GramMatrix, RandomLinearSystem};
use crate::textfmt::{Document, Section};

/// Writes `contents` to a temporary file next to `path`, then renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let wrap = |e: std::io::Error| Error::from(e).in_file(path);
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(wrap)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(wrap)?;
    tmp.write_all(contents).map_err(wrap)?;
    tmp.as_file().sync_all().map_err(wrap)?;
    tmp.persist(path).map_err(|e| wrap(e.error))?;
    Ok(())
}

pub fn read_document(path: &Path) -> Result<Document> {
    let text = fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
    Document::parse(&text).map_err(|e| e.in_file(path))
}

pub fn write_document(path: &Path, doc: &Document) -> Result<()> {
    write_atomic(path, doc.to_string().as_bytes())
}

const TERMS: [char; 4] = ['A', 'B', 'C', 'D'];

fn term_shape(which: char, n: usize, m: usize, p: usize) -> (usize, usize) {
    match which {
        'A' => (n, n),
        'B' => (n, m),
        'C' => (p, n),
        _ => (p, m),
    }
}

pub fn system_to_document(system: &RandomLinearSystem) -> Document {
    let c = &system.coeffs;
    let mut s = Section::new("system");
    if !system.label.is_empty() {
        s.set("label", &system.label);
    }
    s.set("dims", format!("{} {} {} {}", c.n(), c.m(), c.p(), c.z()));
    for which in TERMS {
        for j in 0..=c.z() {
            let mat = c.term(which, j).expect("index in range");
            if j == 0 || mat.iter().any(|&v| v != 0.0) {
                s.set_matrix(&format!("{which}{j}"), mat);
            }
        }
    }
    let mut doc = Document::new();
    doc.push(s).expect("fresh document");
    doc
}

pub fn system_from_document(doc: &Document) -> Result<RandomLinearSystem> {
    doc.check_sections(&["system"])?;
    let s = doc.require("system")?;
    let dims = s.require("dims")?;
    let d = dims.numbers()?;
    if d.len() != 4 || d.iter().any(|&x| x < 1.0 || x.fract() != 0.0) {
        return Err(Error::Parse {
            line: dims.line,
            msg: "dims must be four positive integers: n m p Z".into(),
        });
    }
    let (n, m, p, z) = (d[0] as usize, d[1] as usize, d[2] as usize, d[3] as usize);

    let mut allowed: Vec<String> = vec!["label".into(), "dims".into()];
    for which in TERMS {
        allowed.extend((0..=z).map(|j| format!("{which}{j}")));
    }
    let allowed: Vec<&str> = allowed.iter().map(String::as_str).collect();
    s.check_keys(&allowed)?;

    let mut coeffs = AffineCoefficients::zeros(n, m, p, z)?;
    for which in TERMS {
        let (rows, cols) = term_shape(which, n, m, p);
        for j in 0..=z {
            if let Some(e) = s.get(&format!("{which}{j}")) {
                *coeffs.term_mut(which, j).expect("index in range") = e.matrix_of(rows, cols)?;
            }
        }
    }
    let label = s.get("label").map(|e| e.text()).unwrap_or_default();
    Ok(RandomLinearSystem::new(coeffs, label))
}

pub fn read_system(path: &Path) -> Result<RandomLinearSystem> {
    system_from_document(&read_document(path)?).map_err(|e| e.in_file(path))
}

pub fn write_system(path: &Path, system: &RandomLinearSystem) -> Result<()> {
    write_document(path, &system_to_document(system))
}

pub fn model_to_document(model: &DistributionModel) -> Document {
    let mut s = Section::new("model");
    s.set("dim", model.dim())
        .set_vector("mean", model.mean())
        .set_matrix("covariance", model.covariance());
    let mut doc = Document::new();
    doc.push(s).expect("fresh document");
    doc
}

pub fn model_from_document(doc: &Document) -> Result<DistributionModel> {
    doc.check_sections(&["model"])?;
    let s = doc.require("model")?;
    s.check_keys(&["dim", "mean", "covariance"])?;
    let mean = s.require("mean")?.vector()?;
    let z = mean.len();
    if let Some(e) = s.get("dim") {
        let dim: usize = e.parse()?;
        if dim != z {
            return Err(Error::Parse {
                line: e.line,
                msg: format!("dim = {dim} but mean has {z} entries"),
            });
        }
    }
    let cov = match s.get("covariance") {
        Some(e) => e.matrix_of(z, z)?,
        None => DMatrix::zeros(z, z),
    };
    DistributionModel::new(mean, cov)
}

pub fn read_model(path: &Path) -> Result<DistributionModel> {
    model_from_document(&read_document(path)?).map_err(|e| e.in_file(path))
}

pub fn write_model(path: &Path, model: &DistributionModel) -> Result<()> {
    write_document(path, &model_to_document(model))
}

pub fn gram_to_document(gram: &GramMatrix) -> Document {
    let mut s = Section::new("gram");
    s.set("n", gram.n())
        .set("m", gram.m())
        .set_matrix("matrix", gram.matrix());
    let mut doc = Document::new();
    doc.push(s).expect("fresh document");
    doc
}

pub fn gram_from_document(doc: &Document) -> Result<GramMatrix> {
    doc.check_sections(&["gram"])?;
    let s = doc.require("gram")?;
    s.check_keys(&["n", "m", "matrix"])?;
    let n: usize = s.parse("n")?;
    let m: usize = s.parse("m")?;
    let size = (n + m) * n;
    GramMatrix::new(n, m, s.require("matrix")?.matrix_of(size, size)?)
}

pub fn read_gram(path: &Path) -> Result<GramMatrix> {
    gram_from_document(&read_document(path)?).map_err(|e| e.in_file(path))
}

pub fn write_gram(path: &Path, gram: &GramMatrix) -> Result<()> {
    write_document(path, &gram_to_document(gram))
}

/// A bare gain, or a synthesis result when `result` is given.
pub fn gain_to_document(f: &DMatrix<f64>, result: Option<&SynthesisResult>) -> Document {
    let mut s = Section::new("gain");
    if let Some(r) = result {
        s.set("lambda", crate::textfmt::format_f64(r.lambda_star))
            .set("nbar", r.nbar)
            .set("lmi_margin", crate::textfmt::format_f64(r.lmi_margin))
            .set("x_condition", crate::textfmt::format_f64(r.x_condition));
    }
    s.set_matrix("F", f);
    if let Some(r) = result {
        s.set_matrix("X", &r.x).set_matrix("Y", &r.y);
    }
    let mut doc = Document::new();
    doc.push(s).expect("fresh document");
    doc
}

pub fn gain_from_document(doc: &Document) -> Result<DMatrix<f64>> {
    doc.check_sections(&["gain"])?;
    let s = doc.require("gain")?;
    s.check_keys(&["lambda", "nbar", "lmi_margin", "x_condition", "F", "X", "Y"])?;
    let f = s.require("F")?.matrix()?;
    if f.is_empty() {
        return Err(Error::Parse {
            line: s.require("F")?.line,
            msg: "F is empty".into(),
        });
    }
    Ok(f)
}

pub fn read_gain(path: &Path) -> Result<DMatrix<f64>> {
    gain_from_document(&read_document(path)?).map_err(|e| e.in_file(path))
}

pub fn write_gain(path: &Path, f: &DMatrix<f64>, result: Option<&SynthesisResult>) -> Result<()> {
    write_document(path, &gain_to_document(f, result))
}

pub fn analysis_to_document(result: &AnalysisResult) -> Document {
    let mut s = Section::new("analysis");
    s.set("lambda", crate::textfmt::format_f64(result.lambda_star))
        .set_matrix("P", &result.p);
    let mut doc = Document::new();
    doc.push(s).expect("fresh document");
    doc
}
