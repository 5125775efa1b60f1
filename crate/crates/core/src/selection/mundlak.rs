use serde::{Deserialize, Serialize};

use crate::amm::inference::chi2_sf;
use crate::amm::{build_design, fit_amm, DesignOptions, EffectsMode, FitSettings, FittedAmm, Method, ModelSpec};
use crate::error::Result;
use crate::panel::PanelDataset;
use crate::scalar::Real;

/// Which likelihood enters the likelihood-ratio statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrtLikelihood {
    /// Maximized marginal likelihood of both models (unit effects integrated out).
    #[default]
    Marginal,
    /// Conditional likelihood given the predicted unit effects.
    Conditional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MundlakOptions {
    pub likelihood: LrtLikelihood,
    pub level: f64,
    pub settings: FitSettings,
}

impl Default for MundlakOptions {
    fn default() -> Self {
        Self { likelihood: LrtLikelihood::Marginal, level: 0.05, settings: FitSettings::ml() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MundlakResult {
    #[serde(with = "crate::serde_float")]
    pub t_lrt: f64,
    pub df: usize,
    #[serde(with = "crate::serde_float")]
    pub p_value: f64,
    /// `Random` when the unit means add nothing at the chosen level, else `Fixed`.
    pub decision: EffectsMode,
    #[serde(with = "crate::serde_float")]
    pub loglik_null: f64,
    #[serde(with = "crate::serde_float")]
    pub loglik_alt: f64,
    pub likelihood: LrtLikelihood,
    /// A fit failed to converge; the decision then defaults to `Fixed`.
    pub inconclusive: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn loglik<T: Real>(fit: &FittedAmm<T>, kind: LrtLikelihood) -> f64 {
    match kind {
        LrtLikelihood::Marginal => -fit.objective,
        LrtLikelihood::Conditional => fit.cond_loglik.as_f64(),
    }
}

/// Likelihood-ratio test of the random-effects model against the same model
/// augmented with unit time-averages of its regressors.
pub fn mundlak_lrt<T: Real>(panel: &PanelDataset<T>, spec: &ModelSpec, opts: &MundlakOptions) -> Result<MundlakResult> {
    let mut settings = opts.settings.clone();
    if opts.likelihood == LrtLikelihood::Marginal {
        settings.method = Method::Ml;
    }
    let null_d = build_design(panel, spec, &DesignOptions { mode: Some(EffectsMode::Random), split: None })?;
    let alt_d = build_design(panel, spec, &DesignOptions { mode: Some(EffectsMode::Mundlak), split: None })?;
    let df = alt_d.n_unit_mean_cols();
    let null = fit_amm(null_d, &settings)?;
    let alt = fit_amm(alt_d, &settings)?;
    let (l0, la) = (loglik(&null, opts.likelihood), loglik(&alt, opts.likelihood));
    let mut warnings = Vec::new();
    let mut t = 2.0 * (la - l0);
    if t < 0.0 {
        if t < -1e-6 {
            warnings.push(format!("negative likelihood-ratio statistic {t:.3e} set to zero"));
        }
        t = 0.0;
    }
    let p = chi2_sf(t, df as f64);
    let inconclusive = !null.converged || !alt.converged;
    if inconclusive {
        warnings.push("a model in the test did not converge; defaulting to fixed effects".into());
    }
    let decision = if inconclusive || p < opts.level { EffectsMode::Fixed } else { EffectsMode::Random };
    Ok(MundlakResult {
        t_lrt: t,
        df,
        p_value: p,
        decision,
        loglik_null: l0,
        loglik_alt: la,
        likelihood: opts.likelihood,
        inconclusive,
        warnings,
    })
}
