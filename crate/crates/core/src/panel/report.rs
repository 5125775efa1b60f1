//! Deterministic report artifacts: model tables, curve grids and a JSON
//! manifest hashing every file written.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::amm::EffectCurve;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::selection::{CaicReport, CandidateResult};

/// Name of the manifest file in every output directory.
pub const MANIFEST: &str = "manifest.json";

/// One row of a model comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub label: String,
    pub group: String,
    pub stage: String,
    pub sample: String,
    pub effects: String,
    pub n_obs: usize,
    #[serde(with = "crate::serde_float")]
    pub cond_loglik: f64,
    #[serde(with = "crate::serde_float")]
    pub trace: f64,
    pub r: usize,
    #[serde(with = "crate::serde_float")]
    pub caic: f64,
    pub converged: bool,
    /// `;`-joined winner flags: `group`, `pool`, `overall`.
    pub winner: String,
    pub note: String,
}

impl ModelRow {
    pub fn from_report(rep: &CaicReport, group: &str, stage: &str, sample: &str, effects: &str) -> Self {
        Self {
            label: rep.label.clone(),
            group: group.into(),
            stage: stage.into(),
            sample: sample.into(),
            effects: effects.into(),
            n_obs: rep.n_obs,
            cond_loglik: rep.cond_loglik,
            trace: rep.trace_term,
            r: rep.r,
            caic: rep.caic,
            converged: rep.converged,
            winner: String::new(),
            note: rep.note.clone().unwrap_or_default(),
        }
    }

    pub fn from_candidate(c: &CandidateResult) -> Self {
        Self::from_report(
            &c.caic,
            &c.group,
            &c.stage,
            c.subsample.as_deref().unwrap_or("full"),
            c.effects.as_str(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputEntry {
    /// Path relative to the output directory, `/`-separated.
    pub path: String,
    pub kind: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Provenance of one run. Holds nothing time- or machine-dependent, so equal
/// inputs and seed give a byte-identical manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub software_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Decisions taken during the run, e.g. the chosen effects mode.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub decisions: BTreeMap<String, String>,
    pub inputs: Vec<FileHash>,
    pub configs: Vec<FileHash>,
    pub outputs: Vec<OutputEntry>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            software_version: env!("CARGO_PKG_VERSION").into(),
            seed: None,
            decisions: BTreeMap::new(),
            inputs: Vec::new(),
            configs: Vec::new(),
            outputs: Vec::new(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash entry for a file; only the file name is recorded so manifests do not
/// depend on where the inputs live.
pub fn hash_file(path: &Path) -> Result<FileHash> {
    let bytes = fs::read(path)?;
    let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
    Ok(FileHash { name, sha256: sha256_hex(&bytes) })
}

/// Shortest representation that parses back to the same value.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// Writes files below one directory and records them for the manifest.
#[derive(Debug)]
pub struct ReportWriter {
    root: PathBuf,
    manifest: RunManifest,
}

impl ReportWriter {
    pub fn new(root: &Path, manifest: RunManifest) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_bytes(&mut self, rel: &str, kind: &str, bytes: &[u8]) -> Result<()> {
        if rel == MANIFEST || self.manifest.outputs.iter().any(|o| o.path == rel) {
            return Err(Error::Config(format!("output {rel:?} written twice")));
        }
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.manifest.outputs.push(OutputEntry {
            path: rel.into(),
            kind: kind.into(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn write_json<S: Serialize>(&mut self, rel: &str, kind: &str, value: &S) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write_bytes(rel, kind, &bytes)
    }

    /// CSV from a header and string records.
    pub fn write_csv(&mut self, rel: &str, kind: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        self.write_bytes(rel, kind, &bytes)
    }

    /// Model table sorted ascending by cAIC; failed models last, ties kept in
    /// input order.
    pub fn write_model_table(&mut self, rel: &str, rows: &[ModelRow]) -> Result<()> {
        let mut sorted: Vec<&ModelRow> = rows.iter().collect();
        sorted.sort_by(|a, b| a.caic.total_cmp(&b.caic));
        let recs: Vec<Vec<String>> = sorted
            .iter()
            .map(|r| {
                vec![
                    r.label.clone(),
                    r.group.clone(),
                    r.stage.clone(),
                    r.sample.clone(),
                    r.effects.clone(),
                    r.n_obs.to_string(),
                    fmt_f64(r.cond_loglik),
                    fmt_f64(r.trace),
                    r.r.to_string(),
                    fmt_f64(r.caic),
                    r.converged.to_string(),
                    r.winner.clone(),
                    r.note.clone(),
                ]
            })
            .collect();
        self.write_csv(
            rel,
            "table",
            &["label", "group", "stage", "sample", "effects", "n_obs", "cond_loglik", "trace", "r", "caic", "converged", "winner", "note"],
            &recs,
        )
    }

    /// Curve grid: one column per covariate, then effect, se and the band.
    pub fn write_curve<T: Real>(&mut self, rel: &str, coords: &[String], curve: &EffectCurve<T>) -> Result<()> {
        let mut header: Vec<&str> = coords.iter().map(String::as_str).collect();
        header.extend(["effect", "se", "lower", "upper"]);
        let recs: Vec<Vec<String>> = (0..curve.effect.len())
            .map(|i| {
                let mut r: Vec<String> = curve.points[i].iter().map(|v| fmt_f64(v.as_f64())).collect();
                for v in [curve.effect[i], curve.se[i], curve.lower[i], curve.upper[i]] {
                    r.push(fmt_f64(v.as_f64()));
                }
                r
            })
            .collect();
        self.write_csv(rel, "curve", &header, &recs)
    }

    pub fn manifest_mut(&mut self) -> &mut RunManifest {
        &mut self.manifest
    }

    /// Writes the manifest (outputs sorted by path) and returns it.
    pub fn finish(mut self) -> Result<RunManifest> {
        self.manifest.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let mut bytes = serde_json::to_vec_pretty(&self.manifest)?;
        bytes.push(b'\n');
        fs::write(self.root.join(MANIFEST), bytes)?;
        Ok(self.manifest)
    }
}

/// A curve to be written, with the covariate names of its coordinates.
#[derive(Debug, Clone)]
pub struct NamedCurve<T> {
    pub coords: Vec<String>,
    pub curve: EffectCurve<T>,
}

/// File-system safe stem for a term name: `s(gdp)[pre]` becomes `s_gdp_pre`.
pub fn file_stem(term: &str) -> String {
    let mut s: String = term.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect();
    while s.contains("__") {
        s = s.replace("__", "_");
    }
    s.trim_matches('_').to_string()
}

/// Writes the model table (when there are models) and one grid per curve
/// under `curves/`, then the manifest.
pub fn emit_report<T: Real>(
    dir: &Path,
    manifest: RunManifest,
    models: &[ModelRow],
    curves: &[NamedCurve<T>],
) -> Result<RunManifest> {
    let mut w = ReportWriter::new(dir, manifest)?;
    if !models.is_empty() {
        w.write_model_table("table.csv", models)?;
    }
    for c in curves {
        w.write_curve(&format!("curves/{}.csv", file_stem(&c.curve.term)), &c.coords, &c.curve)?;
    }
    w.finish()
}
