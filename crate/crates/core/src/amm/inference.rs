//! Quantities derived from a fitted model: effective degrees of freedom, Wald
//! tests, effect curves with pointwise bands, and predictions.

use indexmap::IndexMap;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::design::{Period, TermKind};
use super::fit::FittedAmm;
use super::spec::EffectsMode;
use crate::error::{Error, Result};
use crate::linalg::{pinv_sym, Cholesky, Mat};
use crate::panel::PanelDataset;
use crate::scalar::Real;

/// Half-width multiplier of the pointwise 95% bands.
pub const BAND_Z: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermEdf {
    pub term: String,
    pub edf: f64,
    /// Number of coefficients of the term.
    pub width: usize,
    /// Unpenalized coefficients of the term.
    pub null_dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub period: Option<Period>,
}

/// Label of the pseudo-term collecting the unit intercepts and slopes.
pub const UNIT_TERM: &str = "(unit effects)";

/// Per-term effective degrees of freedom: the trace of each term's rows of the
/// influence operator. The unit part is reported as one extra entry.
pub fn effective_dof<T: Real>(fit: &FittedAmm<T>) -> Vec<TermEdf> {
    let d = &fit.design;
    let mut out: Vec<TermEdf> = d
        .terms
        .iter()
        .map(|t| TermEdf {
            term: t.name.clone(),
            edf: t.cols.clone().map(|j| fit.edf_coef[j].as_f64()).sum(),
            width: t.width(),
            null_dim: t.null_dim,
            period: t.period,
        })
        .collect();
    if let Some(u) = &d.unit_part {
        out.push(TermEdf {
            term: UNIT_TERM.into(),
            edf: u.cols().map(|j| fit.edf_coef[j].as_f64()).sum(),
            width: 2 * u.n_units,
            null_dim: if u.random { 0 } else { 2 * u.n_units },
            period: None,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermTest {
    pub term: String,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// The covariance block was singular and a pseudo-inverse of lower rank was used.
    pub rank_deficient: bool,
    pub code: &'static str,
}

/// Conventional significance codes for the thresholds 0.001, 0.01, 0.05, 0.1.
pub fn significance_code(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else if p < 0.1 {
        "."
    } else {
        ""
    }
}

/// Upper tail of the chi-square distribution.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    if df <= 0.0 {
        return if x > 0.0 { 0.0 } else { 1.0 };
    }
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df).map(|c| c.sf(x)).unwrap_or(f64::NAN)
}

/// Wald test that all coefficients of a term are zero. Smooth terms are
/// tested on the scale of their fitted values over the data, with the rounded
/// EDF as rank of the pseudo-inverse and as degrees of freedom.
pub fn term_significance<T: Real>(fit: &FittedAmm<T>, term: &str) -> Result<TermTest> {
    let d = &fit.design;
    let (ti, t) = d.term(term)?;
    let idx: Vec<usize> = t.cols.clone().collect();
    let mut beta: Vec<T> = idx.iter().map(|&j| fit.coef[j]).collect();
    let mut v = fit.vcov.select(&idx, &idx);
    let target = if t.is_smooth() {
        // Map to R β with RᵀR = X_jᵀ X_j so that truncation discards directions
        // of small fitted-value variance rather than small coefficient variance.
        let xj = d.x.select_cols(&idx);
        let (chol, _) = Cholesky::new_with_jitter(&xj.weighted_gram(None), T::lit(1e-10))?;
        let r = chol.factor().transpose();
        beta = r.matvec(&beta);
        v = r.matmul(&v).matmul(&r.transpose());
        v.symmetrize();
        let edf: f64 = effective_dof(fit)[ti].edf;
        Some((edf.round() as usize).clamp(1, idx.len()))
    } else {
        None
    };
    let (_, full_rank) = pinv_sym(&v, None, T::lit(1e-10))?;
    let rank = target.map_or(full_rank, |r| r.min(full_rank.max(1)));
    let (vinv, rank) = pinv_sym(&v, Some(rank), T::lit(1e-10))?;
    let vb = vinv.matvec(&beta);
    let stat: f64 = beta.iter().zip(&vb).map(|(&a, &b)| (a * b).as_f64()).sum::<f64>().max(0.0);
    let df = rank.max(1);
    let p = if beta.iter().all(|b| *b == T::zero()) { 1.0 } else { chi2_sf(stat, df as f64) };
    Ok(TermTest {
        term: term.into(),
        statistic: stat,
        df,
        p_value: p,
        rank_deficient: full_rank < idx.len(),
        code: significance_code(p),
    })
}

/// Estimated smooth effect with pointwise standard errors and 95% bands.
#[derive(Debug, Clone, Serialize)]
pub struct EffectCurve<T> {
    pub term: String,
    /// Evaluation points (one coordinate per covariate of the term).
    pub points: Vec<Vec<T>>,
    pub effect: Vec<T>,
    pub se: Vec<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    /// Observed covariate values, for rug marks.
    pub rug: Vec<Vec<T>>,
}

/// Evaluates a smooth term at arbitrary points of its covariate space.
pub fn effect_at<T: Real>(fit: &FittedAmm<T>, term: &str, points: &[Vec<T>]) -> Result<EffectCurve<T>> {
    let d = &fit.design;
    let (_, t) = d.term(term)?;
    let TermKind::Smooth { basis, support, .. } = &t.kind else {
        return Err(Error::Type(format!("term {term:?} is not a smooth")));
    };
    let idx: Vec<usize> = t.cols.clone().collect();
    let beta: Vec<T> = idx.iter().map(|&j| fit.coef[j]).collect();
    let v = fit.vcov.select(&idx, &idx);
    let z = T::lit(BAND_Z);
    let (mut effect, mut se, mut lower, mut upper) = (vec![], vec![], vec![], vec![]);
    for p in points {
        if p.len() != basis.margins.len() {
            return Err(Error::Dimension(format!("term {term:?} takes {} coordinates", basis.margins.len())));
        }
        if !basis.in_range(p) {
            return Err(Error::Range(format!("point {p:?} lies outside the support of {term:?}")));
        }
        let row = basis.mixed_row(p)?;
        let e: T = row.iter().zip(&beta).map(|(&a, &b)| a * b).sum();
        let vr = v.matvec(&row);
        let s = row.iter().zip(&vr).map(|(&a, &b)| a * b).sum::<T>().max(T::zero()).sqrt();
        effect.push(e);
        se.push(s);
        lower.push(e - z * s);
        upper.push(e + z * s);
    }
    let rug: Vec<Vec<T>> = (0..support.first().map_or(0, Vec::len))
        .map(|r| support.iter().map(|c| c[r]).collect())
        .collect();
    Ok(EffectCurve { term: term.into(), points: points.to_vec(), effect, se, lower, upper, rug })
}

/// Univariate effect curve over a grid.
pub fn smooth_effect_curve<T: Real>(fit: &FittedAmm<T>, term: &str, grid: &[T]) -> Result<EffectCurve<T>> {
    let pts: Vec<Vec<T>> = grid.iter().map(|&g| vec![g]).collect();
    effect_at(fit, term, &pts)
}

/// Tensor-product surface over the Cartesian grid `g1 × g2` (first coordinate varying slowest).
pub fn smooth_effect_surface<T: Real>(fit: &FittedAmm<T>, term: &str, g1: &[T], g2: &[T]) -> Result<EffectCurve<T>> {
    let pts: Vec<Vec<T>> = g1.iter().flat_map(|&a| g2.iter().map(move |&b| vec![a, b])).collect();
    effect_at(fit, term, &pts)
}

/// Equidistant grid over the knot range of every margin of a smooth term:
/// `n` points for curves, `n × n` for surfaces.
pub fn default_grid<T: Real>(fit: &FittedAmm<T>, term: &str, n: usize) -> Result<Vec<Vec<T>>> {
    let (_, t) = fit.design.term(term)?;
    let TermKind::Smooth { basis, .. } = &t.kind else {
        return Err(Error::Type(format!("term {term:?} is not a smooth")));
    };
    let axes: Vec<Vec<T>> = basis.margins.iter().map(|m| linspace(m.lower, m.upper, n)).collect();
    Ok(match axes.as_slice() {
        [a] => a.iter().map(|&x| vec![x]).collect(),
        [a, b] => a.iter().flat_map(|&x| b.iter().map(move |&y| vec![x, y])).collect(),
        _ => Vec::new(),
    })
}

pub fn linspace<T: Real>(lo: T, hi: T, n: usize) -> Vec<T> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * T::from_usize_lossy(i) / T::from_usize_lossy(n - 1)
                }
            })
            .collect(),
    }
}

/// Conditional Gaussian log-likelihood of the response given the predicted
/// unit effects and the estimated per-unit variances.
pub fn conditional_loglik<T: Real>(fit: &FittedAmm<T>) -> T {
    fit.cond_loglik
}

/// Predictions for the rows of `panel`. With `conditional` the unit effects of
/// known units are added; otherwise the population-level predictor is
/// returned (under fixed unit effects, the average unit intercept and slope).
pub fn predict<T: Real>(fit: &FittedAmm<T>, panel: &PanelDataset<T>, conditional: bool) -> Result<Vec<T>> {
    let d = &fit.design;
    let mut fallback: IndexMap<String, IndexMap<String, T>> = IndexMap::new();
    for term in &d.terms {
        if let TermKind::UnitMean { source, means } = &term.kind {
            let mut m = IndexMap::new();
            for (u, rows) in panel.unit_rows().iter().enumerate() {
                let label = &panel.units()[u];
                if means.contains_key(label) || rows.is_empty() {
                    continue;
                }
                let vals: Vec<T> = rows.iter().map(|&r| source.value(panel, r)).collect::<Result<_>>()?;
                m.insert(label.clone(), vals.iter().copied().sum::<T>() / T::from_usize_lossy(vals.len()));
            }
            fallback.insert(term.name.clone(), m);
        }
    }
    let effects = fit.unit_effects();
    let avg = if d.mode == EffectsMode::Fixed && !effects.is_empty() {
        let k = T::from_usize_lossy(effects.len());
        [effects.iter().map(|e| e[0]).sum::<T>() / k, effects.iter().map(|e| e[1]).sum::<T>() / k]
    } else {
        [T::zero(); 2]
    };
    let mut out = Vec::with_capacity(panel.n_rows());
    for r in 0..panel.n_rows() {
        let row = d.term_row(panel, r, &fallback)?;
        let mut v: T = row.iter().zip(&fit.coef).map(|(&a, &b)| a * b).sum();
        let t = T::lit((panel.time()[r] - d.first_year) as f64);
        if d.unit_part.is_some() {
            let b = if conditional {
                let label = &panel.units()[panel.unit_of(r)];
                let u = d
                    .units
                    .iter()
                    .position(|x| x == label)
                    .ok_or_else(|| Error::Lookup(format!("unit {label:?} was not in the training data")))?;
                effects[u]
            } else {
                avg
            };
            v = v + b[0] + b[1] * t;
        }
        out.push(v);
    }
    Ok(out)
}

/// Dense hat matrix `C F Cᵀ W` (for small problems and tests).
pub fn hat_matrix<T: Real>(fit: &FittedAmm<T>) -> Mat<T> {
    let d = &fit.design;
    let row_w: Vec<T> = d.unit_index.iter().map(|&u| fit.weights[u]).collect();
    let f = fit.vcov.scale(T::one() / fit.sigma2);
    let cf = d.x.matmul(&f);
    let n = d.n_obs();
    Mat::from_fn(n, n, |i, j| {
        let s: T = cf.row(i).iter().zip(d.x.row(j)).map(|(&a, &b)| a * b).sum();
        s * row_w[j]
    })
}
