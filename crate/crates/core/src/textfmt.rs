//! Plain-text key/value documents with section headers.
//!
//! ```text
//! # comment
//! [section]
//! key = value
//! matrix = 1 2 3
//!     4 5 6
//! ```
//!
//! * `#` starts a comment that runs to the end of the line.
//! * `[name]` opens a section; every entry belongs to a section.
//! * `key = value` sets an entry. Keys are unique within a section and
//!   section names are unique within a document.
//! * An indented line without `=` continues the previous entry as a new row.
//!   Matrices are written row-major, one row per line, with entries
//!   separated by whitespace. A matrix may start on the line after `key =`.
//!
//! Numbers are written with the shortest representation that reads back to
//! the same `f64`, so parse -> serialize -> parse is exact.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    /// Value rows; the first is the text after `=` (possibly empty).
    pub rows: Vec<String>,
    /// 1-based source line of the key, 0 for entries built in code.
    pub line: usize,
}

impl Entry {
    /// Non-empty rows.
    fn data_rows(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().map(|r| r.trim()).filter(|r| !r.is_empty())
    }

    fn err(&self, msg: impl fmt::Display) -> Error {
        Error::Parse {
            line: self.line,
            msg: format!("{}: {msg}", self.key),
        }
    }

    /// The whole value as one line of text.
    pub fn text(&self) -> String {
        self.data_rows().collect::<Vec<_>>().join(" ")
    }

    pub fn parse<T: FromStr>(&self) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        let text = self.text();
        text.parse()
            .map_err(|e| self.err(format_args!("cannot parse {text:?}: {e}")))
    }

    pub fn numbers(&self) -> Result<Vec<f64>> {
        self.data_rows()
            .flat_map(str::split_whitespace)
            .map(|tok| parse_f64(tok).map_err(|e| self.err(e)))
            .collect()
    }

    pub fn vector(&self) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(self.numbers()?))
    }

    /// Row-major matrix, one row per line. Shape is taken from the rows.
    pub fn matrix(&self) -> Result<DMatrix<f64>> {
        let rows: Vec<Vec<f64>> = self
            .data_rows()
            .map(|r| r.split_whitespace().map(parse_f64).collect::<Result<Vec<_>, _>>())
            .collect::<Result<_, _>>()
            .map_err(|e| self.err(e))?;
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(self.err(format_args!(
                "row {} has {} entries, expected {cols}",
                bad + 1,
                rows[bad].len()
            )));
        }
        Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
    }

    /// Like [`Entry::matrix`] but checks the shape.
    pub fn matrix_of(&self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let mat = self.matrix()?;
        if mat.shape() != (rows, cols) {
            return Err(self.err(format_args!(
                "expected a {rows}x{cols} matrix, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        Ok(mat)
    }
}

fn parse_f64(tok: &str) -> std::result::Result<f64, String> {
    match tok {
        "inf" | "+inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => tok
            .parse::<f64>()
            .map_err(|_| format!("not a number: {tok:?}")),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub name: String,
    pub line: usize,
    entries: Vec<Entry>,
}

impl Section {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            line: 0,
            entries: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    pub fn require(&self, key: &str) -> Result<&Entry> {
        self.get(key).ok_or_else(|| Error::Parse {
            line: self.line,
            msg: format!("[{}] is missing required key {key:?}", self.name),
        })
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        self.require(key)?.parse()
    }

    /// Parsed value or `default` when the key is absent.
    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        self.get(key).map_or(Ok(default), Entry::parse)
    }

    pub fn text(&self, key: &str) -> Result<String> {
        Ok(self.require(key)?.text())
    }

    /// Rejects keys outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        match self.entries.iter().find(|e| !allowed.contains(&e.key.as_str())) {
            Some(e) => Err(Error::Parse {
                line: e.line,
                msg: format!(
                    "unknown key {:?} in [{}]; recognized keys: {}",
                    e.key,
                    self.name,
                    allowed.join(", ")
                ),
            }),
            None => Ok(()),
        }
    }

    fn put(&mut self, key: &str, rows: Vec<String>) {
        let entry = Entry {
            key: key.to_string(),
            rows,
            line: 0,
        };
        match self.entries.iter_mut().find(|e| e.key == key) {
            Some(e) => *e = entry,
            None => self.entries.push(entry),
        }
    }

    /// Sets (or replaces) a single-line value.
    pub fn set(&mut self, key: &str, value: impl fmt::Display) -> &mut Self {
        self.put(key, vec![value.to_string()]);
        self
    }

    pub fn set_vector(&mut self, key: &str, v: &DVector<f64>) -> &mut Self {
        self.put(key, vec![format_row(v.iter().copied())]);
        self
    }

    /// Multi-row matrices start on the line after the key.
    pub fn set_matrix(&mut self, key: &str, m: &DMatrix<f64>) -> &mut Self {
        let mut rows: Vec<String> = m
            .row_iter()
            .map(|r| format_row(r.iter().copied()))
            .collect();
        if rows.len() != 1 {
            rows.insert(0, String::new());
        }
        self.put(key, rows);
        self
    }

    pub fn remove(&mut self, key: &str) -> Option<Entry> {
        let i = self.entries.iter().position(|e| e.key == key)?;
        Some(self.entries.remove(i))
    }
}

/// Shortest round-trip representation, `inf`/`-inf`/`NaN` for non-finite values.
pub fn format_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:?}")
    } else {
        format!("{x}")
    }
}

pub fn format_row(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(format_f64)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Document {
    sections: Vec<Section>,
}

impl Document {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Section> {
        self.section(name).ok_or_else(|| Error::Parse {
            line: 0,
            msg: format!("missing section [{name}]"),
        })
    }

    /// Existing section or a new empty one appended at the end.
    pub fn section_mut(&mut self, name: &str) -> &mut Section {
        let i = match self.sections.iter().position(|s| s.name == name) {
            Some(i) => i,
            None => {
                self.sections.push(Section::new(name));
                self.sections.len() - 1
            }
        };
        &mut self.sections[i]
    }

    pub fn push(&mut self, section: Section) -> Result<()> {
        if self.section(&section.name).is_some() {
            return Err(Error::Input(format!("duplicate section [{}]", section.name)));
        }
        self.sections.push(section);
        Ok(())
    }

    /// Rejects sections outside `allowed`.
    pub fn check_sections(&self, allowed: &[&str]) -> Result<()> {
        match self
            .sections
            .iter()
            .find(|s| !allowed.contains(&s.name.as_str()))
        {
            Some(s) => Err(Error::Parse {
                line: s.line,
                msg: format!(
                    "unknown section [{}]; recognized sections: {}",
                    s.name,
                    allowed.join(", ")
                ),
            }),
            None => Ok(()),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = Document::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("");
            if content.trim().is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { line, msg };
            let indented = content.starts_with([' ', '\t']);
            let trimmed = content.trim();

            if let Some(rest) = trimmed.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(format!("unterminated section header {trimmed:?}")))?
                    .trim();
                if name.is_empty() {
                    return Err(err("empty section name".into()));
                }
                if doc.section(name).is_some() {
                    return Err(err(format!("duplicate section [{name}]")));
                }
                doc.sections.push(Section {
                    name: name.to_string(),
                    line,
                    entries: Vec::new(),
                });
                continue;
            }

            let section = doc
                .sections
                .last_mut()
                .ok_or_else(|| err("entry before the first [section] header".into()))?;

            if let Some((key, value)) = trimmed.split_once('=') {
                let key = key.trim();
                if key.is_empty() || key.contains(char::is_whitespace) {
                    return Err(err(format!("invalid key {key:?}")));
                }
                if section.get(key).is_some() {
                    return Err(err(format!("duplicate key {key:?} in [{}]", section.name)));
                }
                section.entries.push(Entry {
                    key: key.to_string(),
                    rows: vec![value.trim().to_string()],
                    line,
                });
            } else if indented {
                let entry = section
                    .entries
                    .last_mut()
                    .ok_or_else(|| err("continuation row without a preceding key".into()))?;
                entry.rows.push(trimmed.to_string());
            } else {
                return Err(err(format!("expected `key = value`, got {trimmed:?}")));
            }
        }
        Ok(doc)
    }
}

impl fmt::Display for Document {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        for (i, s) in self.sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            writeln!(out, "[{}]", s.name)?;
            for e in &s.entries {
                let first = e.rows.first().map_or("", |r| r.as_str());
                if first.is_empty() {
                    writeln!(out, "{} =", e.key)?;
                } else {
                    writeln!(out, "{} = {first}", e.key)?;
                }
                for row in e.rows.iter().skip(1) {
                    writeln!(out, "    {row}")?;
                }
            }
        }
        f.write_str(&out)
    }
}

impl FromStr for Document {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Document::parse(s)
    }
}
