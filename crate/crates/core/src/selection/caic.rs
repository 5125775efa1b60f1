use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::amm::fit::fit_amm_from;
use crate::amm::FittedAmm;
use crate::error::{Error, Result};
use crate::scalar::{sd, Real};

/// How the bias-correction trace `tr(∂ŷ/∂y)` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaicBackend {
    /// Trace of the hat operator at the estimated variance parameters.
    #[default]
    PluginHat,
    /// Central differences of the fitted values, re-estimating the variance
    /// parameters for every perturbed response (unless they are fixed).
    FiniteDifference,
}

/// Relative step of the finite-difference backend, in units of `sd(y)`.
pub const FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaicReport {
    pub label: String,
    pub n_obs: usize,
    #[serde(with = "crate::serde_float")]
    pub cond_loglik: f64,
    #[serde(with = "crate::serde_float")]
    pub trace_term: f64,
    /// Number of error-covariance parameters.
    pub r: usize,
    #[serde(with = "crate::serde_float")]
    pub caic: f64,
    pub backend: CaicBackend,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CaicReport {
    /// `−2 ℓ + 2 (trace + r)`
    pub fn recompute(&self) -> f64 {
        -2.0 * self.cond_loglik + 2.0 * (self.trace_term + self.r as f64)
    }

    /// Report for a model that could not be fitted: it compares worse than any fitted model.
    pub fn failed(label: &str, n_obs: usize, reason: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            n_obs,
            cond_loglik: f64::NAN,
            trace_term: f64::NAN,
            r: 0,
            caic: f64::INFINITY,
            backend: CaicBackend::PluginHat,
            converged: false,
            note: Some(reason.into()),
        }
    }

    pub fn is_failed(&self) -> bool {
        !self.caic.is_finite()
    }
}

/// Number of free parameters of the error covariance.
pub fn error_covariance_params<T: Real>(fit: &FittedAmm<T>) -> usize {
    if fit.design.heteroscedastic {
        fit.design.n_units()
    } else {
        1
    }
}

/// Conditional AIC. A non-converged fit gets `+∞` with the reason in `note`.
pub fn conditional_aic<T: Real>(fit: &FittedAmm<T>, backend: CaicBackend) -> Result<CaicReport> {
    let r = error_covariance_params(fit);
    let n = fit.n_obs();
    if !fit.converged {
        let mut rep = CaicReport::failed(fit.label(), n, format!("fit did not converge: {}", fit.warnings.join("; ")));
        rep.cond_loglik = fit.cond_loglik.as_f64();
        rep.r = r;
        rep.backend = backend;
        return Ok(rep);
    }
    let trace = match backend {
        CaicBackend::PluginHat => fit.edf_total().as_f64(),
        CaicBackend::FiniteDifference => fd_trace(fit)?,
    };
    let ll = fit.cond_loglik.as_f64();
    Ok(CaicReport {
        label: fit.label().into(),
        n_obs: n,
        cond_loglik: ll,
        trace_term: trace,
        r,
        caic: -2.0 * ll + 2.0 * (trace + r as f64),
        backend,
        converged: true,
        note: None,
    })
}

/// `Σ_i ∂ŷ_i/∂y_i` by central differences with step `FD_STEP · sd(y)`.
fn fd_trace<T: Real>(fit: &FittedAmm<T>) -> Result<f64> {
    let d = &fit.design;
    let h = T::lit(FD_STEP) * sd(&d.y);
    if !(h > T::zero()) {
        return Err(Error::Numeric("response has zero spread; finite differences undefined".into()));
    }
    let mut total = 0.0;
    for i in 0..d.n_obs() {
        let mut yhat = [T::zero(); 2];
        for (k, sign) in [T::one(), -T::one()].into_iter().enumerate() {
            let mut dd = (**d).clone();
            dd.y[i] = dd.y[i] + sign * h;
            let refit = fit_amm_from(Arc::new(dd), &fit.settings, Some(&fit.rho))?;
            yhat[k] = refit.fitted[i];
        }
        total += ((yhat[0] - yhat[1]) / (h + h)).as_f64();
    }
    Ok(total)
}
