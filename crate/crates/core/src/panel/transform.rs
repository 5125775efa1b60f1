//! Derived series: log shift, growth rates, rolling geometric means and the
//! Hodrick-Prescott cycle.

use serde::{Deserialize, Serialize};

use super::PanelDataset;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Shift that moves the inflation support to values ≥ 1 before taking logs.
pub const DEFAULT_LOG_SHIFT: f64 = 10.86;
/// Smoothing constant for annual data.
pub const DEFAULT_HP_LAMBDA: f64 = 6.25;

/// Elementwise `ln(x + shift)`; every `x + shift` must be at least 1.
pub fn log_shift<T: Real>(series: &[T], shift: T) -> Result<Vec<T>> {
    series
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let s = x + shift;
            if !(s >= T::one()) {
                Err(Error::Domain(format!("value {x} at position {i} plus shift {shift} is below 1")))
            } else {
                Ok(s.ln())
            }
        })
        .collect()
}

/// `100·(x_t − x_{t−1})/x_{t−1}`; the first entry is `None`. A zero
/// denominator yields a non-finite value, which callers flag as missing.
pub fn growth_rate<T: Real>(series: &[T]) -> Vec<Option<T>> {
    let hundred = T::lit(100.0);
    let mut out = Vec::with_capacity(series.len());
    if !series.is_empty() {
        out.push(None);
    }
    for w in series.windows(2) {
        out.push(Some(hundred * (w[1] - w[0]) / w[0]));
    }
    out
}

/// Geometric mean of `window` consecutive percentage rates:
/// `(Π (1 + x/100))^{1/w}·100 − 100`. The first `window − 1` entries are `None`.
pub fn rolling_geometric_mean<T: Real>(series: &[T], window: usize) -> Result<Vec<Option<T>>> {
    if window == 0 {
        return Err(Error::Parameter("window length must be at least 1".into()));
    }
    if window > series.len() {
        return Err(Error::Length(format!("window {window} longer than series of length {}", series.len())));
    }
    let hundred = T::lit(100.0);
    let inv_w = T::one() / T::from_usize_lossy(window);
    Ok((0..series.len())
        .map(|t| {
            if t + 1 < window {
                return None;
            }
            let log_sum: T = series[t + 1 - window..=t].iter().map(|&x| (T::one() + x / hundred).ln()).sum();
            Some((log_sum * inv_w).exp() * hundred - hundred)
        })
        .collect())
}

/// Trend/cycle split of a single series.
#[derive(Debug, Clone, PartialEq)]
pub struct HpFilter<T> {
    pub trend: Vec<T>,
    pub gap: Vec<T>,
}

/// Hodrick-Prescott filter: the trend minimizes `Σ(y−τ)² + λ Σ(Δ²τ)²`.
///
/// The optimality condition `y − τ = λ DᵀD τ` puts the gap in the range of
/// `Dᵀ`, so it is solved for as `g = Dᵀ w` with `(I + λ D Dᵀ) w = λ D y`, a
/// banded system. Since `D` annihilates constants the gap then sums to zero
/// up to rounding in `w` alone, however ill-conditioned the trend system is.
pub fn hp_filter<T: Real>(series: &[T], lambda: T) -> Result<HpFilter<T>> {
    let n = series.len();
    if n < 4 {
        return Err(Error::Length(format!("HP filter needs at least 4 observations, got {n}")));
    }
    if !(lambda >= T::zero()) {
        return Err(Error::Parameter(format!("HP smoothing constant must be non-negative, got {lambda}")));
    }
    let m = n - 2;
    // bands of I + λ D Dᵀ: diagonal, first and second super-diagonal
    let d0 = vec![T::one() + lambda * T::lit(6.0); m];
    let d1 = vec![lambda * T::lit(-4.0); m];
    let d2 = vec![lambda; m];
    let dy: Vec<T> = (0..m).map(|j| lambda * (series[j] - T::lit(2.0) * series[j + 1] + series[j + 2])).collect();
    let w = banded_spd_solve(&d0, &d1, &d2, &dy)?;
    let gap: Vec<T> = (0..n)
        .map(|i| {
            let mut g = T::zero();
            if i < m {
                g = g + w[i];
            }
            if (1..=m).contains(&i) {
                g = g - T::lit(2.0) * w[i - 1];
            }
            if i >= 2 {
                g = g + w[i - 2];
            }
            g
        })
        .collect();
    let trend = series.iter().zip(&gap).map(|(&y, &g)| y - g).collect();
    Ok(HpFilter { trend, gap })
}

/// Solves a symmetric positive definite pentadiagonal system given its
/// diagonal and two super-diagonals.
fn banded_spd_solve<T: Real>(d0: &[T], d1: &[T], d2: &[T], b: &[T]) -> Result<Vec<T>> {
    let n = d0.len();
    // L has diagonal l0, sub-diagonals l1 (i, i-1) and l2 (i, i-2)
    let mut l0 = vec![T::zero(); n];
    let mut l1 = vec![T::zero(); n];
    let mut l2 = vec![T::zero(); n];
    for i in 0..n {
        if i >= 2 {
            l2[i] = d2[i - 2] / l0[i - 2];
        }
        if i >= 1 {
            let mut s = d1[i - 1];
            if i >= 2 {
                s = s - l2[i] * l1[i - 1];
            }
            l1[i] = s / l0[i - 1];
        }
        let s = d0[i] - l1[i] * l1[i] - l2[i] * l2[i];
        if !(s > T::zero()) {
            return Err(Error::Numeric("banded system is not positive definite".into()));
        }
        l0[i] = s.sqrt();
    }
    let mut z = vec![T::zero(); n];
    for i in 0..n {
        let mut s = b[i];
        if i >= 1 {
            s = s - l1[i] * z[i - 1];
        }
        if i >= 2 {
            s = s - l2[i] * z[i - 2];
        }
        z[i] = s / l0[i];
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let mut s = z[i];
        if i + 1 < n {
            s = s - l1[i + 1] * x[i + 1];
        }
        if i + 2 < n {
            s = s - l2[i + 2] * x[i + 2];
        }
        x[i] = s / l0[i];
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    LogShift,
    GrowthRate,
    RollingGeometricMean,
    HpGap,
    HpTrend,
}

/// One derived column. Parameters not relevant to `kind` are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformRecipe {
    pub kind: TransformKind,
    pub source: String,
    pub target: String,
    #[serde(default = "default_shift")]
    pub shift: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

fn default_shift() -> f64 {
    DEFAULT_LOG_SHIFT
}
fn default_window() -> usize {
    3
}
fn default_lambda() -> f64 {
    DEFAULT_HP_LAMBDA
}

impl TransformRecipe {
    pub fn new(kind: TransformKind, source: &str, target: &str) -> Self {
        Self {
            kind,
            source: source.into(),
            target: target.into(),
            shift: DEFAULT_LOG_SHIFT,
            window: 3,
            lambda: DEFAULT_HP_LAMBDA,
        }
    }

    /// Number of leading time points per unit left undefined by the transform.
    pub fn leading_undefined(&self) -> usize {
        match self.kind {
            TransformKind::GrowthRate => 1,
            TransformKind::RollingGeometricMean => self.window.saturating_sub(1),
            _ => 0,
        }
    }
}

/// Summary of a derivation: entries flagged non-finite and time points trimmed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeriveReport {
    pub non_finite: usize,
    pub dropped_times: Vec<i64>,
}

/// Applies a recipe unit by unit and appends the target column. Leading
/// undefined entries are trimmed from every unit and every column so the
/// panel stays rectangular.
pub fn derive_series<T: Real>(recipe: &TransformRecipe, panel: &PanelDataset<T>) -> Result<(PanelDataset<T>, DeriveReport)> {
    if recipe.target == panel.response_name() || panel.columns().contains_key(&recipe.target) {
        return Err(Error::Config(format!("target column {:?} already exists", recipe.target)));
    }
    if recipe.kind == TransformKind::RollingGeometricMean && recipe.window == 0 {
        return Err(Error::Parameter("window length must be at least 1".into()));
    }
    if matches!(recipe.kind, TransformKind::HpGap | TransformKind::HpTrend) && !(recipe.lambda >= 0.0) {
        return Err(Error::Parameter("HP smoothing constant must be non-negative".into()));
    }
    let source = panel.numeric(&recipe.source)?;
    let mut out = vec![T::nan(); panel.n_rows()];
    let mut report = DeriveReport::default();
    for rows in panel.unit_rows() {
        let series: Vec<T> = rows.iter().map(|&r| source[r]).collect();
        let derived: Vec<Option<T>> = match recipe.kind {
            TransformKind::LogShift => {
                let shift = T::lit(recipe.shift);
                series
                    .iter()
                    .map(|&x| if x.is_finite() { log_shift(&[x], shift).map(|v| Some(v[0])) } else { Ok(None) })
                    .collect::<Result<_>>()?
            }
            TransformKind::GrowthRate => growth_rate(&series),
            TransformKind::RollingGeometricMean => rolling_geometric_mean(&series, recipe.window)?,
            TransformKind::HpGap | TransformKind::HpTrend => {
                if series.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Domain(format!("HP filter source {:?} has missing values", recipe.source)));
                }
                let hp = hp_filter(&series, T::lit(recipe.lambda))?;
                let v = if recipe.kind == TransformKind::HpGap { hp.gap } else { hp.trend };
                v.into_iter().map(Some).collect()
            }
        };
        for (&r, v) in rows.iter().zip(derived) {
            out[r] = v.unwrap_or_else(T::nan);
        }
    }
    let lead = recipe.leading_undefined();
    let years = panel.years();
    let kept_from = years.get(lead).copied();
    report.dropped_times = years[..lead.min(years.len())].to_vec();
    let with_col = panel.with_numeric(&recipe.target, out)?;
    let keep: Vec<usize> = (0..with_col.n_rows())
        .filter(|&r| kept_from.is_some_and(|y0| with_col.time()[r] >= y0))
        .collect();
    let trimmed = with_col.select_rows(&keep);
    report.non_finite = trimmed.numeric(&recipe.target)?.iter().filter(|v| !v.is_finite()).count();
    Ok((trimmed, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_shift_examples() {
        assert!(log_shift(&[-9.86f64], 10.86).unwrap()[0].abs() < 1e-12);
        let v = log_shift(&[21.0f64], 10.86).unwrap()[0];
        assert!((v - 31.86f64.ln()).abs() < 1e-15);
        assert!((v - 3.461).abs() < 1e-3);
        assert!(matches!(log_shift(&[-10.0], 10.86), Err(Error::Domain(_))));
    }

    #[test]
    fn growth_and_geometric_mean_examples() {
        assert!((growth_rate(&[100.0f64, 110.0])[1].unwrap() - 10.0).abs() < 1e-12);
        let c = rolling_geometric_mean(&[5.0f64, 5.0, 5.0], 3).unwrap();
        assert!((c[2].unwrap() - 5.0f64).abs() < 1e-12);
        assert!(c[0].is_none() && c[1].is_none());
        let g = rolling_geometric_mean(&[2.0f64, 4.0, 6.0], 3).unwrap()[2].unwrap();
        let direct = 100.0 * ((1.02f64 * 1.04 * 1.06).powf(1.0 / 3.0) - 1.0);
        assert!((g - direct).abs() < 1e-12);
        assert!(matches!(rolling_geometric_mean(&[1.0, 2.0], 3), Err(Error::Length(_))));
    }

    #[test]
    fn zero_denominator_is_non_finite() {
        let g = growth_rate(&[0.0f64, 1.0]);
        assert!(!g[1].unwrap().is_finite());
    }

    #[test]
    fn hp_identity_and_linear() {
        let y = [1.0f64, 3.0, 2.0, 5.0, 4.0];
        let hp = hp_filter(&y, 0.0).unwrap();
        assert!(hp.gap.iter().all(|g| g.abs() < 1e-14));
        let lin: Vec<f64> = (0..8).map(|t| 2.0 + 0.5 * t as f64).collect();
        let hp = hp_filter(&lin, 1e4).unwrap();
        assert!(hp.gap.iter().all(|g| g.abs() < 1e-9));
        assert!(matches!(hp_filter(&[1.0, 2.0, 3.0], 1.0), Err(Error::Length(_))));
    }

    #[test]
    fn hp_works_in_single_precision() {
        let hp = hp_filter(&[1.0f32, 2.0, 4.0, 8.0, 16.0], 6.25).unwrap();
        let s: f32 = hp.gap.iter().sum();
        assert!(s.abs() < 1e-4);
    }
}
