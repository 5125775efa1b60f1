use serde::{Deserialize, Serialize};

use super::learners::LearnerKind;
use super::path::BoostPath;
use crate::amm::{EffectsMode, ModelSpec};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spline::{DEFAULT_BASIS_DIM, DEFAULT_TENSOR_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeptLearner {
    pub id: String,
    pub kind: LearnerKind,
    pub count: usize,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistilledSpec {
    pub kept: Vec<KeptLearner>,
    pub spec: ModelSpec,
    pub threshold: f64,
    pub m_stop: usize,
}

/// Keeps the learners selected in at least a `threshold` share of the first
/// `m_stop` iterations and turns them into a fixed-effects model spec:
/// categorical learners become linear terms, P-splines smooths and tensor
/// learners tensor smooths. Unit learners are absorbed by the fixed effects.
pub fn distill<T: Real>(path: &BoostPath<T>, threshold: f64, label: &str) -> Result<DistilledSpec> {
    let m_stop = path.m_stop.ok_or_else(|| Error::Precondition("path has no stopping iteration".into()))?;
    if m_stop == 0 || m_stop > path.iterations() {
        return Err(Error::Range(format!("m_stop {m_stop} outside 1..={}", path.iterations())));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Parameter(format!("threshold must lie in [0, 1], got {threshold}")));
    }
    let counts = path.selection_counts(m_stop);
    let mut kept = Vec::new();
    let mut spec = ModelSpec::new(label).effects(EffectsMode::Fixed);
    for (info, &count) in path.learners.iter().zip(&counts) {
        // count / m_stop ≥ threshold, compared in integers where possible
        if count == 0 || (count as f64) < threshold * m_stop as f64 * (1.0 - 1e-12) {
            continue;
        }
        kept.push(KeptLearner {
            id: info.id.clone(),
            kind: info.kind,
            count,
            frequency: count as f64 / m_stop as f64,
        });
        spec = match info.kind {
            LearnerKind::RidgeCategorical => spec.linear(&info.columns[0]),
            LearnerKind::Pspline => spec.smooth(&info.columns[0], DEFAULT_BASIS_DIM),
            LearnerKind::TensorPspline => {
                spec.tensor(&info.columns[0], &info.columns[1], DEFAULT_TENSOR_DIM, DEFAULT_TENSOR_DIM)
            }
            LearnerKind::RandomIntercept | LearnerKind::RandomSlope => spec,
        };
    }
    if kept.is_empty() {
        return Err(Error::EmptySpec(format!("no learner reaches selection share {threshold} within {m_stop} iterations")));
    }
    Ok(DistilledSpec { kept, spec, threshold, m_stop })
}
