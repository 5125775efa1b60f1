//! Assembly of the model matrix from a [`ModelSpec`] and a panel.

use std::ops::Range;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::spec::{EffectsMode, ModelSpec};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::panel::{transform::log_shift, PanelDataset};
use crate::scalar::Real;
use crate::spline::{SmoothBasis, DEFAULT_PENALTY_ORDER};

/// Which side of a structural break a varying-coefficient term belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Period {
    Pre,
    Post,
}

impl Period {
    pub fn suffix(self) -> &'static str {
        match self {
            Period::Pre => "[pre]",
            Period::Post => "[post]",
        }
    }
}

/// Split of the observations at a break year: `Pre` for `year <= break_year`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodSplit {
    pub break_year: i64,
}

impl PeriodSplit {
    pub fn period_of(&self, year: i64) -> Period {
        if year <= self.break_year {
            Period::Pre
        } else {
            Period::Post
        }
    }
}

#[derive(Debug, Clone)]
pub enum TermKind<T> {
    Intercept,
    Linear { col: String },
    /// Treatment contrasts: one column per non-reference level in `levels`.
    Categorical { col: String, levels: Vec<usize>, level_names: Vec<String>, reference: String },
    LinearPair { a: String, b: String },
    /// `support` holds the observed covariate values of the rows the term is active on.
    Smooth { cols: Vec<String>, basis: SmoothBasis<T>, support: Vec<Vec<T>> },
    /// Unit time-average of a regressor.
    UnitMean { source: MeanSource, means: IndexMap<String, T> },
}

/// The regressor a unit mean is taken of.
#[derive(Debug, Clone, PartialEq)]
pub enum MeanSource {
    Column(String),
    /// Indicator of one level (code) of a categorical column.
    Level(String, usize),
    Product(String, String),
}

impl MeanSource {
    /// Value of the regressor at one row of a panel.
    pub fn value<T: Real>(&self, panel: &PanelDataset<T>, row: usize) -> Result<T> {
        match self {
            MeanSource::Column(c) => finite_value(panel, c, row),
            MeanSource::Product(a, b) => Ok(finite_value(panel, a, row)? * finite_value(panel, b, row)?),
            MeanSource::Level(c, l) => {
                let code = panel.categorical(c)?.codes[row];
                Ok(if code == Some(*l) { T::one() } else { T::zero() })
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Term<T> {
    pub name: String,
    pub kind: TermKind<T>,
    pub cols: Range<usize>,
    /// Leading unpenalized columns (all columns for parametric terms).
    pub null_dim: usize,
    pub penalty: Option<usize>,
    pub period: Option<Period>,
}

impl<T> Term<T> {
    pub fn is_smooth(&self) -> bool {
        matches!(self.kind, TermKind::Smooth { .. })
    }

    pub fn width(&self) -> usize {
        self.cols.len()
    }
}

/// Penalized columns of one smooth term with one smoothing parameter per matrix.
#[derive(Debug, Clone)]
pub struct PenaltyGroup<T> {
    pub term: usize,
    pub start: usize,
    pub size: usize,
    pub matrices: Vec<Mat<T>>,
}

impl<T> PenaltyGroup<T> {
    pub fn cols(&self) -> Range<usize> {
        self.start..self.start + self.size
    }
}

/// Columns `(1, t)` per unit, laid out unit by unit.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitPart {
    pub start: usize,
    pub n_units: usize,
    pub random: bool,
}

impl UnitPart {
    pub fn cols(&self) -> Range<usize> {
        self.start..self.start + 2 * self.n_units
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignAnnotations {
    pub rows_dropped_missing: usize,
    pub dropped_terms: Vec<String>,
}

/// Model matrix, penalties and bookkeeping for one fit.
#[derive(Debug, Clone)]
pub struct DesignBundle<T> {
    pub label: String,
    pub mode: EffectsMode,
    pub heteroscedastic: bool,
    pub response_shift: Option<f64>,
    pub x: Mat<T>,
    pub y: Vec<T>,
    pub unit_index: Vec<usize>,
    pub units: Vec<String>,
    pub years: Vec<i64>,
    pub t: Vec<T>,
    pub first_year: i64,
    pub terms: Vec<Term<T>>,
    pub penalties: Vec<PenaltyGroup<T>>,
    pub unit_part: Option<UnitPart>,
    pub split: Option<PeriodSplit>,
    pub panel_rows: Vec<usize>,
    pub annotations: DesignAnnotations,
}

impl<T: Real> DesignBundle<T> {
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_coef(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    /// Indices of penalized coefficients (smooth range parts and random unit effects).
    pub fn penalized_indices(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = self.penalties.iter().flat_map(|g| g.cols()).collect();
        if let Some(u) = self.unit_part.as_ref().filter(|u| u.random) {
            idx.extend(u.cols());
        }
        idx.sort_unstable();
        idx
    }

    pub fn unpenalized_indices(&self) -> Vec<usize> {
        let pen = self.penalized_indices();
        (0..self.n_coef()).filter(|i| pen.binary_search(i).is_err()).collect()
    }

    /// Number of unpenalized columns.
    pub fn n_fixed(&self) -> usize {
        self.n_coef() - self.penalized_indices().len()
    }

    pub fn term(&self, name: &str) -> Result<(usize, &Term<T>)> {
        self.terms
            .iter()
            .enumerate()
            .find(|(_, t)| t.name == name)
            .ok_or_else(|| Error::Lookup(format!("model {:?} has no term {name:?}", self.label)))
    }

    /// Number of appended unit-mean columns (Mundlak augmentation).
    pub fn n_unit_mean_cols(&self) -> usize {
        self.terms.iter().filter(|t| matches!(t.kind, TermKind::UnitMean { .. })).map(|t| t.width()).sum()
    }

    pub fn unit_rows(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.units.len()];
        for (r, &u) in self.unit_index.iter().enumerate() {
            out[u].push(r);
        }
        out
    }

    /// Design row of a new observation with the unit part left at zero.
    /// `fallback_means` (term name, then unit label) supplies unit averages for
    /// units unseen in training.
    pub fn term_row(
        &self,
        panel: &PanelDataset<T>,
        row: usize,
        fallback_means: &IndexMap<String, IndexMap<String, T>>,
    ) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.n_coef()];
        let period = self.split.as_ref().map(|s| s.period_of(panel.time()[row]));
        let unit_label = &panel.units()[panel.unit_of(row)];
        for term in &self.terms {
            if term.period.is_some() && term.period != period {
                continue;
            }
            let slot = &mut out[term.cols.clone()];
            match &term.kind {
                TermKind::Intercept => slot[0] = T::one(),
                TermKind::Linear { col } => slot[0] = finite_value(panel, col, row)?,
                TermKind::LinearPair { a, b } => slot[0] = finite_value(panel, a, row)? * finite_value(panel, b, row)?,
                TermKind::Categorical { col, levels, .. } => {
                    let code = panel.categorical(col)?.codes[row]
                        .ok_or_else(|| Error::Domain(format!("missing level in column {col:?} at row {row}")))?;
                    if let Some(j) = levels.iter().position(|&l| l == code) {
                        slot[j] = T::one();
                    }
                }
                TermKind::Smooth { cols, basis, .. } => {
                    let point: Vec<T> = cols
                        .iter()
                        .map(|c| if c == YEAR_COL { Ok(T::lit(panel.time()[row] as f64)) } else { finite_value(panel, c, row) })
                        .collect::<Result<_>>()?;
                    if !basis.in_range(&point) {
                        return Err(Error::Range(format!("term {:?}: value {:?} outside the fitted range", term.name, point)));
                    }
                    slot.copy_from_slice(&basis.mixed_row(&point)?);
                }
                TermKind::UnitMean { means, .. } => {
                    let v = means
                        .get(unit_label)
                        .or_else(|| fallback_means.get(&term.name).and_then(|m| m.get(unit_label)))
                        .copied()
                        .ok_or_else(|| Error::Lookup(format!("no unit mean for {unit_label:?} in {:?}", term.name)))?;
                    slot[0] = v;
                }
            }
        }
        Ok(out)
    }
}

pub(crate) const YEAR_COL: &str = "__year__";

fn finite_value<T: Real>(panel: &PanelDataset<T>, col: &str, row: usize) -> Result<T> {
    let v = panel.numeric(col)?[row];
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Domain(format!("missing value in column {col:?} at row {row}")))
    }
}

/// Options beyond the spec itself.
#[derive(Debug, Clone, Default)]
pub struct DesignOptions {
    /// Overrides the spec's effects mode (must not be `Auto`).
    pub mode: Option<EffectsMode>,
    /// Interacts every term with a pre/post indicator.
    pub split: Option<PeriodSplit>,
}

/// Builds the model matrix: intercept (except under fixed unit effects),
/// linear and categorical terms, linear pairs, centered smooths and tensor
/// smooths in mixed form, optional unit means, and the unit part.
pub fn build_design<T: Real>(panel: &PanelDataset<T>, spec: &ModelSpec, opts: &DesignOptions) -> Result<DesignBundle<T>> {
    spec.validate(panel)?;
    let mode = opts.mode.unwrap_or(spec.effects);
    let mode = if mode == EffectsMode::Auto { EffectsMode::Random } else { mode };
    let cols = spec.columns();
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let rows = panel.complete_rows(&col_refs)?;
    if rows.is_empty() {
        return Err(Error::Precondition(format!("spec {:?}: no complete observations", spec.label)));
    }
    let sub = panel.select_rows(&rows);
    let n = sub.n_rows();
    let mut annotations = DesignAnnotations { rows_dropped_missing: panel.n_rows() - n, dropped_terms: Vec::new() };

    let y: Vec<T> = match spec.response_shift {
        Some(s) => log_shift(sub.response(), T::lit(s))?,
        None => sub.response().to_vec(),
    };
    let first_year = *sub.time().iter().min().expect("non-empty");
    let t: Vec<T> = sub.time().iter().map(|&yr| T::lit((yr - first_year) as f64)).collect();

    let periods: Vec<Option<Period>> = match &opts.split {
        None => vec![None],
        Some(s) => {
            let pre = sub.time().iter().any(|&yr| s.period_of(yr) == Period::Pre);
            let post = sub.time().iter().any(|&yr| s.period_of(yr) == Period::Post);
            if !pre || !post {
                return Err(Error::Precondition(format!(
                    "break year {} leaves an empty period ({} to {})",
                    s.break_year,
                    sub.years().first().unwrap(),
                    sub.years().last().unwrap()
                )));
            }
            vec![Some(Period::Pre), Some(Period::Post)]
        }
    };
    let mask_for = |p: Option<Period>| -> Option<Vec<bool>> {
        p.map(|p| sub.time().iter().map(|&yr| opts.split.as_ref().unwrap().period_of(yr) == p).collect())
    };

    let mut builder = Builder::new(n);
    if !matches!(mode, EffectsMode::Fixed) {
        builder.push_parametric("(Intercept)", TermKind::Intercept, vec![vec![T::one(); n]], None);
    }

    for &period in &periods {
        let mask = mask_for(period);
        let active = |r: usize| mask.as_ref().is_none_or(|m| m[r]);
        let sfx = period.map_or("", Period::suffix);
        for col in &spec.linear {
            let name = format!("{col}{sfx}");
            if sub.is_categorical(col) {
                let cat = sub.categorical(col)?;
                let present: Vec<usize> = (0..cat.levels.len())
                    .filter(|&l| (0..n).any(|r| active(r) && cat.codes[r] == Some(l)))
                    .collect();
                if present.len() < 2 {
                    annotations.dropped_terms.push(name);
                    continue;
                }
                let levels = present[1..].to_vec();
                let columns: Vec<Vec<T>> = levels
                    .iter()
                    .map(|&l| (0..n).map(|r| if active(r) && cat.codes[r] == Some(l) { T::one() } else { T::zero() }).collect())
                    .collect();
                let kind = TermKind::Categorical {
                    col: col.clone(),
                    level_names: levels.iter().map(|&l| cat.levels[l].clone()).collect(),
                    reference: cat.levels[present[0]].clone(),
                    levels,
                };
                builder.push_parametric(&name, kind, columns, period);
            } else {
                let x = sub.numeric(col)?;
                let v: Vec<T> = (0..n).map(|r| if active(r) { x[r] } else { T::zero() }).collect();
                if period.is_some() && !varies((0..n).filter(|&r| active(r)).map(|r| x[r])) {
                    annotations.dropped_terms.push(name);
                    continue;
                }
                builder.push_parametric(&name, TermKind::Linear { col: col.clone() }, vec![v], period);
            }
        }
        for (a, b) in &spec.linear_pairs {
            let name = format!("{a}:{b}{sfx}");
            let (xa, xb) = (sub.numeric(a)?, sub.numeric(b)?);
            let v: Vec<T> = (0..n).map(|r| if active(r) { xa[r] * xb[r] } else { T::zero() }).collect();
            if period.is_some() && !varies((0..n).filter(|&r| active(r)).map(|r| v[r])) {
                annotations.dropped_terms.push(name);
                continue;
            }
            builder.push_parametric(&name, TermKind::LinearPair { a: a.clone(), b: b.clone() }, vec![v], period);
        }
        let mut smooths: Vec<(String, Vec<String>, Vec<usize>)> =
            spec.smooth.iter().map(|s| (format!("s({})", s.col), vec![s.col.clone()], vec![s.k])).collect();
        smooths.extend(spec.tensor_pairs.iter().map(|tp| {
            (format!("te({},{})", tp.col1, tp.col2), vec![tp.col1.clone(), tp.col2.clone()], vec![tp.k1, tp.k2])
        }));
        if spec.include_year_smooth {
            smooths.push(("s(year)".into(), vec![YEAR_COL.into()], vec![crate::spline::DEFAULT_BASIS_DIM.min(sub.years().len().max(4))]));
        }
        for (base, cols_, dims) in smooths {
            let name = format!("{base}{sfx}");
            let years_t: Vec<T> = sub.time().iter().map(|&yr| T::lit(yr as f64)).collect();
            let values = |c: &str| -> Result<Vec<T>> {
                if c == YEAR_COL {
                    Ok(years_t.clone())
                } else {
                    Ok(sub.numeric(c)?.to_vec())
                }
            };
            if period.is_some() {
                let degenerate = cols_
                    .iter()
                    .map(|c| values(c).map(|v| !varies((0..n).filter(|&r| active(r)).map(|r| v[r]))))
                    .collect::<Result<Vec<bool>>>()?
                    .into_iter()
                    .any(|d| d);
                if degenerate {
                    annotations.dropped_terms.push(name);
                    continue;
                }
            }
            let (basis, mixed) = if cols_.len() == 1 {
                let x = values(&cols_[0])?;
                SmoothBasis::univariate(&x, mask.as_deref(), None, dims[0], DEFAULT_PENALTY_ORDER, true)
            } else {
                let (x1, x2) = (values(&cols_[0])?, values(&cols_[1])?);
                SmoothBasis::tensor(&x1, &x2, mask.as_deref(), None, (dims[0], dims[1]), DEFAULT_PENALTY_ORDER, true)
            }
            .map_err(|e| match e {
                Error::Domain(m) => Error::Domain(format!("term {name:?}: degenerate basis ({m})")),
                other => other,
            })?;
            let support = cols_
                .iter()
                .map(|c| values(c).map(|v| (0..n).filter(|&r| active(r)).map(|r| v[r]).collect()))
                .collect::<Result<Vec<Vec<T>>>>()?;
            builder.push_smooth(&name, cols_, basis, mixed, support, period);
        }
    }

    if mode == EffectsMode::Mundlak {
        let unit_rows = sub.unit_rows();
        let mut sources: Vec<(String, MeanSource)> = Vec::new();
        for col in &cols {
            if sub.is_categorical(col) {
                let cat = sub.categorical(col)?;
                let present: Vec<usize> =
                    (0..cat.levels.len()).filter(|&l| cat.codes.contains(&Some(l))).collect();
                for &l in present.iter().skip(1) {
                    sources.push((format!("mean({col}={})", cat.levels[l]), MeanSource::Level(col.clone(), l)));
                }
            } else {
                sources.push((format!("mean({col})"), MeanSource::Column(col.clone())));
            }
        }
        for (a, b) in &spec.linear_pairs {
            sources.push((format!("mean({a}:{b})"), MeanSource::Product(a.clone(), b.clone())));
        }
        for (name, source) in sources {
            let v: Vec<T> = (0..n).map(|r| source.value(&sub, r)).collect::<Result<_>>()?;
            let mut per_row = vec![T::zero(); n];
            let mut means = IndexMap::new();
            for (u, rows_u) in unit_rows.iter().enumerate() {
                let m = rows_u.iter().map(|&r| v[r]).sum::<T>() / T::from_usize_lossy(rows_u.len());
                for &r in rows_u {
                    per_row[r] = m;
                }
                means.insert(sub.units()[u].clone(), m);
            }
            builder.push_parametric(&name, TermKind::UnitMean { source, means }, vec![per_row], None);
        }
    }

    let unit_part = match mode {
        EffectsMode::Random | EffectsMode::Mundlak | EffectsMode::Fixed => {
            let random = mode != EffectsMode::Fixed;
            if !random {
                for (u, rows_u) in sub.unit_rows().iter().enumerate() {
                    let mut ts: Vec<i64> = rows_u.iter().map(|&r| sub.time()[r]).collect();
                    ts.dedup();
                    if ts.len() < 2 {
                        return Err(Error::Rank(format!(
                            "unit {:?} has fewer than 2 time points; its fixed intercept and slope are not identified",
                            sub.units()[u]
                        )));
                    }
                }
            }
            let start = builder.width();
            let n_units = sub.n_units();
            let mut cols_u = vec![vec![T::zero(); n]; 2 * n_units];
            for r in 0..n {
                let u = sub.unit_of(r);
                cols_u[2 * u][r] = T::one();
                cols_u[2 * u + 1][r] = t[r];
            }
            builder.columns.extend(cols_u);
            Some(UnitPart { start, n_units, random })
        }
        EffectsMode::None => None,
        EffectsMode::Auto => unreachable!(),
    };

    let x = builder.matrix();
    Ok(DesignBundle {
        label: spec.label.clone(),
        mode,
        heteroscedastic: spec.heteroscedastic,
        response_shift: spec.response_shift,
        x,
        y,
        unit_index: sub.unit_indices().to_vec(),
        units: sub.units().to_vec(),
        years: sub.time().to_vec(),
        t,
        first_year,
        terms: builder.terms,
        penalties: builder.penalties,
        unit_part,
        split: opts.split.clone(),
        panel_rows: rows,
        annotations,
    })
}

fn varies<T: Real>(mut it: impl Iterator<Item = T>) -> bool {
    match it.next() {
        None => false,
        Some(first) => it.any(|v| v != first),
    }
}

struct Builder<T> {
    n: usize,
    columns: Vec<Vec<T>>,
    terms: Vec<Term<T>>,
    penalties: Vec<PenaltyGroup<T>>,
}

impl<T: Real> Builder<T> {
    fn new(n: usize) -> Self {
        Self { n, columns: Vec::new(), terms: Vec::new(), penalties: Vec::new() }
    }

    fn width(&self) -> usize {
        self.columns.len()
    }

    fn push_parametric(&mut self, name: &str, kind: TermKind<T>, cols: Vec<Vec<T>>, period: Option<Period>) {
        let start = self.width();
        let w = cols.len();
        self.columns.extend(cols);
        self.terms.push(Term { name: name.into(), kind, cols: start..start + w, null_dim: w, penalty: None, period });
    }

    fn push_smooth(
        &mut self,
        name: &str,
        cols: Vec<String>,
        basis: SmoothBasis<T>,
        mixed: Mat<T>,
        support: Vec<Vec<T>>,
        period: Option<Period>,
    ) {
        let start = self.width();
        let w = mixed.ncols();
        for j in 0..w {
            self.columns.push(mixed.col(j));
        }
        let null_dim = basis.null_dim;
        let penalty = if w > null_dim {
            self.penalties.push(PenaltyGroup {
                term: self.terms.len(),
                start: start + null_dim,
                size: w - null_dim,
                matrices: basis.penalties.clone(),
            });
            Some(self.penalties.len() - 1)
        } else {
            None
        };
        self.terms.push(Term {
            name: name.into(),
            kind: TermKind::Smooth { cols, basis, support },
            cols: start..start + w,
            null_dim,
            penalty,
            period,
        });
    }

    fn matrix(&self) -> Mat<T> {
        Mat::from_fn(self.n, self.columns.len(), |i, j| self.columns[j][i])
    }
}
