//! Two-stage model tournament: a winner per theory group, then a pooled
//! comparison with the boosted model and pairwise comparisons on subsamples.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::caic::{conditional_aic, CaicBackend, CaicReport};
use super::mundlak::{mundlak_lrt, MundlakOptions, MundlakResult};
use crate::amm::{build_design, fit_amm, DesignOptions, EffectsMode, FitSettings, ModelSpec};
use crate::error::{Error, Result};
use crate::panel::PanelDataset;
use crate::scalar::Real;

/// cAIC differences below this count as ties (the earlier spec wins).
pub const TIE_TOL: f64 = 1e-9;

/// Restriction of the panel to some units and/or a year range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subsample {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub years: Option<(i64, i64)>,
}

impl Subsample {
    pub fn apply<T: Real>(&self, panel: &PanelDataset<T>) -> Result<PanelDataset<T>> {
        if let Some(units) = &self.units {
            if let Some(u) = units.iter().find(|u| !panel.units().contains(u)) {
                return Err(Error::Config(format!("subsample {:?}: unknown unit {u:?}", self.id)));
            }
        }
        let out = panel.filter(self.units.as_deref(), self.years);
        if out.n_rows() == 0 {
            return Err(Error::Precondition(format!("subsample {:?} selects no observations", self.id)));
        }
        Ok(out)
    }
}

/// Candidate specs of one theory group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub label: String,
    pub specs: Vec<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsample: Option<Subsample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOptions {
    pub backend: CaicBackend,
    pub settings: FitSettings,
    pub mundlak: MundlakOptions,
    /// Overrides the effects mode of every spec.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub force_effects: Option<EffectsMode>,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        Self {
            backend: CaicBackend::PluginHat,
            settings: FitSettings::default(),
            mundlak: MundlakOptions::default(),
            force_effects: None,
        }
    }
}

/// One fitted candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub stage: String,
    pub group: String,
    pub spec: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsample: Option<String>,
    pub effects: EffectsMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mundlak: Option<MundlakResult>,
    pub caic: CaicReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupWinner {
    pub group: String,
    /// `None` when every spec of the group failed.
    pub spec: Option<String>,
    #[serde(with = "crate::serde_float")]
    pub caic: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsample: Option<String>,
}

/// A head-to-head comparison on a common set of observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub sample: String,
    pub n_obs: usize,
    pub champion: String,
    #[serde(with = "crate::serde_float")]
    pub champion_caic: f64,
    pub challenger: String,
    #[serde(with = "crate::serde_float")]
    pub challenger_caic: f64,
    pub winner: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub first_stage: Vec<GroupWinner>,
    pub candidates: Vec<CandidateResult>,
    /// Specs compared on the full panel (winners fit for it plus the boosted model).
    pub pool: Vec<String>,
    /// Subsample-only winners, with their subsample ids.
    pub deferred: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_winner: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overall_winner: Option<String>,
    pub comparisons: Vec<Comparison>,
    pub annotations: Vec<String>,
}

/// Fits one spec on a panel, deciding the effects mode by the Mundlak test
/// when the spec leaves it open. Failures become `+∞` reports.
pub fn evaluate_spec<T: Real>(
    panel: &PanelDataset<T>,
    spec: &ModelSpec,
    opts: &SelectionOptions,
) -> (EffectsMode, Option<MundlakResult>, CaicReport) {
    let mut mode = opts.force_effects.unwrap_or(spec.effects);
    let mut mundlak = None;
    if mode == EffectsMode::Auto {
        match mundlak_lrt(panel, spec, &opts.mundlak) {
            Ok(m) => {
                mode = m.decision;
                mundlak = Some(m);
            }
            Err(e) => return (EffectsMode::Fixed, None, CaicReport::failed(&spec.label, panel.n_rows(), e.to_string())),
        }
    }
    let report = build_design(panel, spec, &DesignOptions { mode: Some(mode), split: None })
        .and_then(|d| fit_amm(d, &opts.settings))
        .and_then(|f| conditional_aic(&f, opts.backend))
        .unwrap_or_else(|e| CaicReport::failed(&spec.label, panel.n_rows(), e.to_string()));
    (mode, mundlak, report)
}

/// Index of the minimal cAIC; ties within [`TIE_TOL`] go to the earlier entry.
/// `None` if every entry failed.
pub fn argmin_caic(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        match best {
            Some(b) if v >= values[b] - TIE_TOL => {}
            _ => best = Some(i),
        }
    }
    best
}

/// First stage: the winner of every group by minimal cAIC.
pub fn run_first_stage<T: Real>(
    groups: &[GroupSpec],
    panel: &PanelDataset<T>,
    opts: &SelectionOptions,
) -> Result<SelectionOutcome> {
    let mut panels = Vec::with_capacity(groups.len());
    for g in groups {
        if g.specs.is_empty() {
            return Err(Error::Config(format!("group {:?} has no specs", g.label)));
        }
        panels.push(match &g.subsample {
            Some(s) => s.apply(panel)?,
            None => panel.clone(),
        });
    }
    let jobs: Vec<(usize, usize)> =
        groups.iter().enumerate().flat_map(|(gi, g)| (0..g.specs.len()).map(move |si| (gi, si))).collect();
    let results: Vec<CandidateResult> = jobs
        .par_iter()
        .map(|&(gi, si)| {
            let g = &groups[gi];
            let (effects, mundlak, caic) = evaluate_spec(&panels[gi], &g.specs[si], opts);
            CandidateResult {
                stage: "first".into(),
                group: g.label.clone(),
                spec: g.specs[si].label.clone(),
                subsample: g.subsample.as_ref().map(|s| s.id.clone()),
                effects,
                mundlak,
                caic,
            }
        })
        .collect();
    let mut outcome = SelectionOutcome::default();
    for g in groups {
        let members: Vec<&CandidateResult> = results.iter().filter(|c| c.group == g.label).collect();
        let caics: Vec<f64> = members.iter().map(|c| c.caic.caic).collect();
        let winner = argmin_caic(&caics);
        if winner.is_none() {
            outcome.annotations.push(format!("group {:?}: every spec failed", g.label));
        }
        outcome.first_stage.push(GroupWinner {
            group: g.label.clone(),
            spec: winner.map(|i| members[i].spec.clone()),
            caic: winner.map_or(f64::INFINITY, |i| caics[i]),
            subsample: g.subsample.as_ref().map(|s| s.id.clone()),
        });
    }
    outcome.candidates = results;
    Ok(outcome)
}

fn spec_by_label<'a>(groups: &'a [GroupSpec], group: &str, label: &str) -> Option<&'a ModelSpec> {
    groups.iter().find(|g| g.label == group)?.specs.iter().find(|s| s.label == label)
}

/// Rows of `panel` complete for every spec in `specs`.
fn common_rows<T: Real>(panel: &PanelDataset<T>, specs: &[&ModelSpec]) -> Result<Vec<usize>> {
    let mut cols: Vec<String> = specs.iter().flat_map(|s| s.columns()).collect();
    cols.sort();
    cols.dedup();
    let refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    panel.complete_rows(&refs)
}

/// Second stage: pooled comparison on the full panel, then the pool winner
/// against every subsample-only winner on that winner's subsample.
pub fn run_second_stage<T: Real>(
    mut outcome: SelectionOutcome,
    groups: &[GroupSpec],
    boosted: Option<&ModelSpec>,
    full_panel: &PanelDataset<T>,
    opts: &SelectionOptions,
) -> Result<SelectionOutcome> {
    // Winners are full-panel capable when their covariates are complete on the full panel.
    let mut pool_specs: Vec<(String, ModelSpec)> = Vec::new();
    let mut deferred: Vec<(String, ModelSpec, Subsample)> = Vec::new();
    for w in &outcome.first_stage {
        let Some(label) = &w.spec else { continue };
        let spec = spec_by_label(groups, &w.group, label)
            .ok_or_else(|| Error::Lookup(format!("winner {label:?} not found in group {:?}", w.group)))?;
        let group = groups.iter().find(|g| g.label == w.group).expect("group exists");
        let capable = spec.columns().iter().all(|c| full_panel.column(c).is_ok())
            && common_rows(full_panel, &[spec])?.len() == full_panel.n_rows();
        match (&group.subsample, capable) {
            (Some(sub), false) => deferred.push((w.group.clone(), spec.clone(), sub.clone())),
            _ => pool_specs.push((w.group.clone(), spec.clone())),
        }
    }
    if let Some(b) = boosted {
        pool_specs.push(("boosting".into(), b.clone()));
    }
    outcome.pool = pool_specs.iter().map(|(_, s)| s.label.clone()).collect();
    outcome.deferred = deferred.iter().map(|(_, s, sub)| (s.label.clone(), sub.id.clone())).collect();
    if pool_specs.is_empty() {
        outcome.annotations.push("second stage: empty pool".into());
        return Ok(outcome);
    }

    // Pool comparison on the rows every pool member can use.
    let refs: Vec<&ModelSpec> = pool_specs.iter().map(|(_, s)| s).collect();
    let rows = common_rows(full_panel, &refs)?;
    let common = full_panel.select_rows(&rows);
    if rows.len() < full_panel.n_rows() {
        outcome.annotations.push(format!("pool compared on {} of {} rows", rows.len(), full_panel.n_rows()));
    }
    let evaluated: Vec<CandidateResult> = pool_specs
        .par_iter()
        .map(|(group, spec)| {
            let (effects, mundlak, caic) = evaluate_spec(&common, spec, opts);
            CandidateResult {
                stage: "pool".into(),
                group: group.clone(),
                spec: spec.label.clone(),
                subsample: None,
                effects,
                mundlak,
                caic,
            }
        })
        .collect();
    let caics: Vec<f64> = evaluated.iter().map(|c| c.caic.caic).collect();
    let pool_winner = argmin_caic(&caics);
    outcome.candidates.extend(evaluated.iter().cloned());
    let Some(pw) = pool_winner else {
        outcome.annotations.push("second stage: every pool member failed".into());
        return Ok(outcome);
    };
    for (i, c) in evaluated.iter().enumerate() {
        if i != pw {
            outcome.comparisons.push(Comparison {
                sample: "full".into(),
                n_obs: common.n_rows(),
                champion: evaluated[pw].spec.clone(),
                champion_caic: caics[pw],
                challenger: c.spec.clone(),
                challenger_caic: caics[i],
                winner: evaluated[pw].spec.clone(),
            });
        }
    }
    outcome.pool_winner = Some(evaluated[pw].spec.clone());
    let mut champion = pool_specs[pw].clone();

    // Pairwise comparisons on each deferred winner's subsample.
    for (group, spec, sub) in &deferred {
        let sub_panel = match sub.apply(full_panel) {
            Ok(p) => p,
            Err(e) => {
                outcome.annotations.push(format!("subsample {:?}: {e}", sub.id));
                continue;
            }
        };
        let rows = common_rows(&sub_panel, &[&champion.1, spec])?;
        let pair_panel = sub_panel.select_rows(&rows);
        let pair = [(champion.0.clone(), champion.1.clone()), (group.clone(), spec.clone())];
        let res: Vec<CandidateResult> = pair
            .par_iter()
            .map(|(g, s)| {
                let (effects, mundlak, caic) = evaluate_spec(&pair_panel, s, opts);
                CandidateResult {
                    stage: "subsample".into(),
                    group: g.clone(),
                    spec: s.label.clone(),
                    subsample: Some(sub.id.clone()),
                    effects,
                    mundlak,
                    caic,
                }
            })
            .collect();
        let (cc, ch) = (res[0].caic.caic, res[1].caic.caic);
        let challenger_wins = ch.is_finite() && ch < cc - TIE_TOL;
        outcome.comparisons.push(Comparison {
            sample: sub.id.clone(),
            n_obs: pair_panel.n_rows(),
            champion: champion.1.label.clone(),
            champion_caic: cc,
            challenger: spec.label.clone(),
            challenger_caic: ch,
            winner: if challenger_wins { spec.label.clone() } else { champion.1.label.clone() },
        });
        outcome.candidates.extend(res);
        if challenger_wins {
            champion = (group.clone(), spec.clone());
        }
    }
    outcome.overall_winner = Some(champion.1.label.clone());
    Ok(outcome)
}
