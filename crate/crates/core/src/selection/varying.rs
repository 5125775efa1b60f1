use serde::Serialize;

use super::mundlak::mundlak_lrt;
use super::tournament::SelectionOptions;
use crate::amm::inference::{effective_dof, term_significance};
use crate::amm::{build_design, fit_amm, DesignOptions, EffectsMode, FittedAmm, ModelSpec, Period, PeriodSplit};
use crate::error::{Error, Result};
use crate::panel::PanelDataset;
use crate::scalar::Real;

/// One term of the base spec estimated separately in one period.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodTerm {
    /// Term name without the period suffix.
    pub term: String,
    pub period: Period,
    pub edf: f64,
    pub p_value: f64,
    /// Coefficients and standard errors of parametric terms (empty for smooths).
    pub coefficients: Vec<(String, f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct VaryingCoefFit<T> {
    pub break_year: i64,
    pub effects: EffectsMode,
    pub fit: FittedAmm<T>,
    pub terms: Vec<PeriodTerm>,
    /// Period terms dropped because the regressor did not vary in that period.
    pub dropped: Vec<String>,
    pub pre_years: Vec<i64>,
    pub post_years: Vec<i64>,
}

impl<T> VaryingCoefFit<T> {
    pub fn term(&self, name: &str, period: Period) -> Option<&PeriodTerm> {
        self.terms.iter().find(|t| t.term == name && t.period == period)
    }
}

/// Refits `spec` with every term interacted with a pre/post indicator
/// (`pre` for years up to and including `break_year`), keeping the unit part
/// and all other settings of the base spec.
pub fn fit_varying_coefficients<T: Real>(
    spec: &ModelSpec,
    panel: &PanelDataset<T>,
    break_year: i64,
    opts: &SelectionOptions,
) -> Result<VaryingCoefFit<T>> {
    let years = panel.years();
    let pre_years: Vec<i64> = years.iter().copied().filter(|&y| y <= break_year).collect();
    let post_years: Vec<i64> = years.iter().copied().filter(|&y| y > break_year).collect();
    if pre_years.is_empty() || post_years.is_empty() {
        return Err(Error::Precondition(format!(
            "break year {break_year} leaves an empty period in {}..={}",
            years.first().copied().unwrap_or_default(),
            years.last().copied().unwrap_or_default()
        )));
    }
    let mut effects = opts.force_effects.unwrap_or(spec.effects);
    if effects == EffectsMode::Auto {
        effects = mundlak_lrt(panel, spec, &opts.mundlak)?.decision;
    }
    let design = build_design(
        panel,
        spec,
        &DesignOptions { mode: Some(effects), split: Some(PeriodSplit { break_year }) },
    )?;
    let dropped = design.annotations.dropped_terms.clone();
    let fit = fit_amm(design, &opts.settings)?;
    let edfs = effective_dof(&fit);
    let mut terms = Vec::new();
    for (i, t) in fit.design.terms.iter().enumerate() {
        let Some(period) = t.period else { continue };
        let base = t.name.strip_suffix(period.suffix()).unwrap_or(&t.name).to_string();
        let test = term_significance(&fit, &t.name)?;
        let coefficients = if t.is_smooth() {
            Vec::new()
        } else {
            t.cols
                .clone()
                .enumerate()
                .map(|(k, j)| {
                    let name = match &t.kind {
                        crate::amm::TermKind::Categorical { level_names, .. } => format!("{base}{}", level_names[k]),
                        _ => base.clone(),
                    };
                    (name, fit.coef[j].as_f64(), fit.vcov[(j, j)].as_f64().max(0.0).sqrt())
                })
                .collect()
        };
        terms.push(PeriodTerm { term: base, period, edf: edfs[i].edf, p_value: test.p_value, coefficients });
    }
    Ok(VaryingCoefFit { break_year, effects, fit, terms, dropped, pre_years, post_years })
}
