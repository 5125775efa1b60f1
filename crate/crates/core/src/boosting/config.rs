use std::io::Write;

use serde::{Deserialize, Serialize};

use super::distill::{distill, DistilledSpec};
use super::learners::{make_base_learners, LearnerSet};
use super::mstop::{choose_mstop, MstopSearch};
use super::path::{boost, BoostOptions, BoostPath, DeltaRule};
use crate::error::{Error, Result};
use crate::panel::PanelDataset;
use crate::scalar::Real;

/// Boosting run configuration as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoostConfig {
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_m_max")]
    pub m_max: usize,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_df")]
    pub df_target: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tensor_pairs: Vec<(String, String)>,
}

fn default_nu() -> f64 {
    0.1
}
fn default_m_max() -> usize {
    1500
}
fn default_folds() -> usize {
    10
}
fn default_df() -> f64 {
    4.0
}
fn default_threshold() -> f64 {
    0.01
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self {
            nu: default_nu(),
            m_max: default_m_max(),
            folds: default_folds(),
            df_target: default_df(),
            threshold: default_threshold(),
            seed: 0,
            tensor_pairs: Vec::new(),
        }
    }
}

impl BoostConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("invalid boost config JSON: {e}")))
    }

    pub fn options(&self) -> BoostOptions {
        BoostOptions { nu: self.nu, m_max: self.m_max, delta: DeltaRule::Adaptive }
    }
}

/// Everything a boosting run produces.
#[derive(Debug, Clone)]
pub struct BoostRun<T> {
    pub learners: LearnerSet<T>,
    /// Full-sample path with `m_stop` and the fold risks filled in.
    pub path: BoostPath<T>,
    pub search: MstopSearch,
    pub distilled: DistilledSpec,
}

/// Learners, early stopping, the full-sample path and distillation.
pub fn run_boosting<T: Real>(panel: &PanelDataset<T>, config: &BoostConfig, label: &str) -> Result<BoostRun<T>> {
    let learners = make_base_learners(panel, &config.tensor_pairs, config.df_target)?;
    let opts = config.options();
    let search = choose_mstop(&learners, &opts, config.folds, config.seed)?;
    let mut path = boost(&learners, &opts)?;
    path.m_stop = Some(search.m_stop);
    path.fold_risks = search.fold_risks.clone();
    let distilled = distill(&path, config.threshold, label)?;
    Ok(BoostRun { learners, path, search, distilled })
}

/// `iteration,learner,delta,risk`; iteration 0 is the offset.
pub fn write_path_csv<T: Real, W: Write>(path: &BoostPath<T>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "learner", "delta", "risk"])?;
    w.write_record(["0", "(offset)", &fmt(path.initial_delta.as_f64()), &fmt(path.initial_risk.as_f64())])?;
    for r in &path.records {
        w.write_record([
            r.iteration.to_string(),
            path.learners[r.learner].id.clone(),
            fmt(r.delta.as_f64()),
            fmt(r.risk.as_f64()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `learner,kind,df,count,frequency,kept`, counted over `1..=m_stop`.
pub fn write_frequency_csv<T: Real, W: Write>(path: &BoostPath<T>, distilled: &DistilledSpec, out: W) -> Result<()> {
    let m_stop = distilled.m_stop;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["learner", "kind", "df", "count", "frequency", "kept"])?;
    for (info, c) in path.learners.iter().zip(path.selection_counts(m_stop)) {
        let kind = serde_json::to_value(info.kind)?.as_str().unwrap_or_default().to_string();
        let kept = distilled.kept.iter().any(|k| k.id == info.id);
        w.write_record([
            info.id.clone(),
            kind,
            fmt(info.df),
            c.to_string(),
            fmt(c as f64 / m_stop as f64),
            kept.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn fmt(x: f64) -> String {
    format!("{x:?}")
}
