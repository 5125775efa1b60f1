use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::learners::LearnerSet;
use super::path::{boost_weighted, BoostOptions};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Redraws allowed for a fold whose out-of-bag set came out empty.
pub const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MstopSearch {
    pub m_stop: usize,
    /// Out-of-bag risk per fold for iterations `0..=m_max`.
    pub fold_risks: Vec<Vec<f64>>,
    /// Across-fold mean of `fold_risks`.
    pub mean_risk: Vec<f64>,
    /// Total number of fold redraws.
    pub redraws: usize,
}

/// Bootstrap case weights drawn within every unit: each unit contributes as
/// many draws as it has observations, so every unit is in every training set.
///
/// Fold `b` uses ChaCha8 seeded with `seed` on stream `b`, which makes the
/// weights independent of thread scheduling and of the number of folds.
pub fn bootstrap_weights(unit_index: &[usize], n_units: usize, seed: u64, fold: usize) -> Result<(Vec<u32>, usize)> {
    let mut by_unit: Vec<Vec<usize>> = vec![Vec::new(); n_units];
    for (i, &u) in unit_index.iter().enumerate() {
        by_unit[u].push(i);
    }
    if let Some(u) = by_unit.iter().position(|r| r.len() == 1) {
        return Err(Error::Precondition(format!("unit {u} has a single observation; bootstrap within unit needs two")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fold as u64);
    for redraw in 0..=MAX_REDRAWS {
        let mut w = vec![0u32; unit_index.len()];
        for rows in by_unit.iter().filter(|r| !r.is_empty()) {
            for _ in 0..rows.len() {
                w[rows[rng.random_range(0..rows.len())]] += 1;
            }
        }
        if w.contains(&0) {
            return Ok((w, redraw));
        }
    }
    Err(Error::Numeric(format!("fold {fold}: out-of-bag set empty after {MAX_REDRAWS} redraws")))
}

/// Chooses the stopping iteration in `1..=m_max` minimizing the across-fold
/// mean out-of-bag Huber risk. Each fold's risk uses that fold's own
/// threshold sequence.
pub fn choose_mstop<T: Real>(set: &LearnerSet<T>, opts: &BoostOptions, folds: usize, seed: u64) -> Result<MstopSearch> {
    if folds == 0 {
        return Err(Error::Parameter("at least one fold is required".into()));
    }
    let draws: Vec<(Vec<u32>, usize)> = (0..folds)
        .map(|b| bootstrap_weights(&set.unit_index, set.n_units, seed, b))
        .collect::<Result<_>>()?;
    let fold_risks: Vec<Vec<f64>> = draws
        .par_iter()
        .map(|(w, _)| {
            let oob: Vec<bool> = w.iter().map(|&c| c == 0).collect();
            boost_weighted(set, opts, Some(w), Some(&oob)).map(|(_, curve)| curve)
        })
        .collect::<Result<_>>()?;
    let mean_risk: Vec<f64> =
        (0..=opts.m_max).map(|m| fold_risks.iter().map(|c| c[m]).sum::<f64>() / folds as f64).collect();
    let mut m_stop = 1;
    for m in 2..=opts.m_max {
        if mean_risk[m] < mean_risk[m_stop] {
            m_stop = m;
        }
    }
    Ok(MstopSearch { m_stop, fold_risks, mean_risk, redraws: draws.iter().map(|d| d.1).sum() })
}
