//! Rendering of command results: stdout, artifact files and the run manifest.

use anyhow::{Context, Result};
use regdiag::ser::float_text;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::path::Path;

/// A flat table; every cell is already rendered.
#[derive(Debug, Clone)]
pub struct Table {
    pub name: &'static str,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &'static str, headers: &[&str]) -> Self {
        Self {
            name,
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }
}

/// What a subcommand produced.
#[derive(Debug)]
pub struct Report {
    /// Stem of the JSON artifact.
    pub name: &'static str,
    pub json: Value,
    /// The first table is the one printed for `--format csv`.
    pub tables: Vec<Table>,
    pub finding: bool,
    /// Printed to stdout instead of the JSON when present.
    pub text: Option<String>,
    /// Corpus id or path, with the digest of its canonical problem file.
    pub problem: Option<ProblemRef>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProblemRef {
    pub source: String,
    pub name: String,
    pub sha256: String,
}

impl ProblemRef {
    pub fn new(source: &str, problem: &regdiag::ParametricProblem) -> Result<Self> {
        let file = regdiag::problem::ProblemFile::from_problem(problem);
        let canonical = serde_json::to_vec(&file)?;
        Ok(Self {
            source: source.to_string(),
            name: problem.name.clone(),
            sha256: format!("{:x}", Sha256::digest(&canonical)),
        })
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'a str,
    pub options: Value,
    pub problem: Option<&'a ProblemRef>,
    pub seed: u64,
    pub tolerances: &'a regdiag::Tolerances,
    pub threads: usize,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub finding: bool,
    pub files: Vec<String>,
}

pub fn unix_now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

/// Writes `<name>.json`, one CSV per table and `manifest.json` into `dir`.
pub fn write_artifacts(dir: &Path, report: &Report, manifest: &mut Manifest<'_>) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let json_name = format!("{}.json", report.name);
    write(dir, &json_name, &serde_json::to_string_pretty(&report.json)?)?;
    manifest.files.push(json_name);
    for t in &report.tables {
        let name = format!("{}.csv", t.name);
        write(dir, &name, &t.to_csv()?)?;
        manifest.files.push(name);
    }
    manifest.finished_unix = unix_now();
    write(dir, "manifest.json", &serde_json::to_string_pretty(manifest)?)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn num(v: f64) -> String {
    float_text(v)
}

pub fn nums(v: &[f64]) -> String {
    v.iter().map(|x| float_text(*x)).collect::<Vec<_>>().join(" ")
}

pub fn set(v: &[usize]) -> String {
    regdiag::ser::index_set(v)
}
