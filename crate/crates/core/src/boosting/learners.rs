use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Mat};
use crate::panel::{Column, PanelDataset};
use crate::scalar::Real;
use crate::spline::{difference_penalty, BSplineBasis, DEFAULT_DEGREE, DEFAULT_PENALTY_ORDER};

/// Basis dimension of univariate P-spline learners.
pub const LEARNER_SPLINE_DIM: usize = 20;
/// Basis dimension of each margin of tensor learners.
pub const LEARNER_TENSOR_DIM: usize = 6;
/// Difference order of tensor learner margins.
pub const TENSOR_PENALTY_ORDER: usize = 1;
/// Calibrated traces are matched to this absolute tolerance.
pub const DF_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    RidgeCategorical,
    Pspline,
    TensorPspline,
    RandomIntercept,
    RandomSlope,
}

/// Row-compressed design: few nonzeros per row for every learner kind.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDesign<T> {
    ncols: usize,
    row_ptr: Vec<usize>,
    idx: Vec<usize>,
    val: Vec<T>,
}

impl<T: Real> SparseDesign<T> {
    pub fn from_rows(ncols: usize, rows: impl IntoIterator<Item = Vec<(usize, T)>>) -> Self {
        let mut out = Self { ncols, row_ptr: vec![0], idx: Vec::new(), val: Vec::new() };
        for r in rows {
            for (j, v) in r {
                debug_assert!(j < ncols);
                if v != T::zero() {
                    out.idx.push(j);
                    out.val.push(v);
                }
            }
            out.row_ptr.push(out.idx.len());
        }
        out
    }

    pub fn nrows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.idx[r.clone()], &self.val[r])
    }

    pub fn matvec(&self, beta: &[T]) -> Vec<T> {
        (0..self.nrows())
            .map(|i| {
                let (ix, vs) = self.row(i);
                ix.iter().zip(vs).map(|(&j, &v)| v * beta[j]).sum()
            })
            .collect()
    }

    /// `Xᵀ W u`
    pub fn weighted_tmatvec(&self, w: Option<&[T]>, u: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.ncols];
        for (i, &ui) in u.iter().enumerate() {
            let wu = w.map_or(ui, |w| w[i] * ui);
            if wu == T::zero() {
                continue;
            }
            let (ix, vs) = self.row(i);
            for (&j, &v) in ix.iter().zip(vs) {
                out[j] = out[j] + v * wu;
            }
        }
        out
    }

    /// `Xᵀ W X`
    pub fn weighted_gram(&self, w: Option<&[T]>) -> Mat<T> {
        let mut g = Mat::zeros(self.ncols, self.ncols);
        for i in 0..self.nrows() {
            let wi = w.map_or(T::one(), |w| w[i]);
            if wi == T::zero() {
                continue;
            }
            let (ix, vs) = self.row(i);
            for (a, (&j, &vj)) in ix.iter().zip(vs).enumerate() {
                for (&k, &vk) in ix[a..].iter().zip(&vs[a..]) {
                    let (r, c) = (j.min(k), j.max(k));
                    g[(r, c)] = g[(r, c)] + wi * vj * vk;
                }
            }
        }
        for j in 0..self.ncols {
            for k in 0..j {
                g[(j, k)] = g[(k, j)];
            }
        }
        g
    }

    pub fn to_dense(&self) -> Mat<T> {
        let mut m = Mat::zeros(self.nrows(), self.ncols);
        for i in 0..self.nrows() {
            let (ix, vs) = self.row(i);
            for (&j, &v) in ix.iter().zip(vs) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

/// A penalized least-squares component competing at every boosting iteration.
#[derive(Debug, Clone)]
pub struct BaseLearner<T> {
    /// Stable identifier, e.g. `bbs(x)`, `btens(a,b)`, `bols(c)`, `brandom(unit)`.
    pub id: String,
    pub kind: LearnerKind,
    pub columns: Vec<String>,
    pub design: SparseDesign<T>,
    pub penalty: Mat<T>,
    pub lambda: T,
    /// Hat-matrix trace at the calibrated `lambda`.
    pub df: T,
    /// Basis dimension per margin for spline learners.
    pub dims: Vec<usize>,
}

impl<T: Real> BaseLearner<T> {
    pub fn n_coef(&self) -> usize {
        self.design.ncols()
    }

    /// Penalized normal matrix `Xᵀ W X + λ P`.
    pub fn normal_matrix(&self, w: Option<&[T]>) -> Mat<T> {
        let mut a = self.design.weighted_gram(w);
        a.add_scaled_in_place(&self.penalty, self.lambda);
        a
    }

    /// Penalized least-squares coefficients for response `u`.
    pub fn fit(&self, w: Option<&[T]>, u: &[T]) -> Result<Vec<T>> {
        let (c, _) = Cholesky::new_with_jitter(&self.normal_matrix(w), T::lit(1e-10))?;
        Ok(c.solve(&self.design.weighted_tmatvec(w, u)))
    }
}

/// Learners over the complete rows of a panel, with the response restricted
/// to the same rows.
#[derive(Debug, Clone)]
pub struct LearnerSet<T> {
    pub learners: Vec<BaseLearner<T>>,
    pub y: Vec<T>,
    /// Panel row of every observation used.
    pub rows: Vec<usize>,
    pub unit_index: Vec<usize>,
    pub n_units: usize,
    pub df_target: f64,
    pub annotations: Vec<String>,
}

impl<T: Real> LearnerSet<T> {
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.learners.iter().position(|l| l.id == id)
    }
}

/// `tr((XᵀX + λP)⁻¹ XᵀX)`
fn hat_trace<T: Real>(gram: &Mat<T>, penalty: &Mat<T>, lambda: T) -> Result<T> {
    let mut a = gram.clone();
    a.add_scaled_in_place(penalty, lambda);
    let (c, _) = Cholesky::new_with_jitter(&a, T::lit(1e-12))?;
    Ok(c.solve_mat(gram).trace())
}

/// Smoothing parameter giving hat trace `df`, with the achieved trace. When
/// even the smallest admissible penalty leaves the trace below `df` (too few
/// columns), the learner stays (almost) unpenalized.
pub fn calibrate_lambda<T: Real>(design: &SparseDesign<T>, penalty: &Mat<T>, df: f64) -> Result<(T, T)> {
    let gram = design.weighted_gram(None);
    let scale = (gram.trace() / penalty.trace().max(T::lit(1e-300))).as_f64().max(1e-300);
    let tr = |log_l: f64| -> Result<f64> { Ok(hat_trace(&gram, penalty, T::lit(scale * log_l.exp()))?.as_f64()) };
    let (mut lo, mut hi) = (-25.0f64, 25.0f64);
    if tr(lo)? <= df {
        let lambda = if gram_is_regular(&gram) { T::zero() } else { T::lit(scale * lo.exp()) };
        return Ok((lambda, hat_trace(&gram, penalty, lambda)?));
    }
    let mut hi_tr = tr(hi)?;
    while hi_tr > df && hi < 200.0 {
        hi += 25.0;
        hi_tr = tr(hi)?;
    }
    if hi_tr > df {
        return Err(Error::Numeric(format!("cannot reduce learner trace to {df}: null space too large")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let t = tr(mid)?;
        if (t - df).abs() < DF_TOL {
            lo = mid;
            hi = mid;
            break;
        }
        if t > df {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda = T::lit(scale * (0.5 * (lo + hi)).exp());
    Ok((lambda, hat_trace(&gram, penalty, lambda)?))
}

fn gram_is_regular<T: Real>(g: &Mat<T>) -> bool {
    Cholesky::new(g).is_ok()
}

fn distinct_count<T: Real>(v: &[T]) -> usize {
    let mut s: Vec<T> = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    s.dedup();
    s.len()
}

fn pspline_design<T: Real>(x: &[T], dim: usize) -> Result<(SparseDesign<T>, BSplineBasis<T>)> {
    let basis = BSplineBasis::for_data(x, dim, DEFAULT_DEGREE)?;
    let mut rows = Vec::with_capacity(x.len());
    for &xi in x {
        let (first, vals) = basis.evaluate_nonzero(xi)?;
        rows.push(vals.into_iter().enumerate().map(|(k, v)| (first + k, v)).collect());
    }
    Ok((SparseDesign::from_rows(dim, rows), basis))
}

fn learner<T: Real>(
    id: String,
    kind: LearnerKind,
    columns: Vec<String>,
    design: SparseDesign<T>,
    penalty: Mat<T>,
    dims: Vec<usize>,
    df_target: f64,
    notes: &mut Vec<String>,
) -> Result<BaseLearner<T>> {
    let (lambda, df) = calibrate_lambda(&design, &penalty, df_target)?;
    if (df.as_f64() - df_target).abs() > 1e-6 {
        notes.push(format!("learner {id}: trace {:.4} cannot reach df target {df_target}", df.as_f64()));
    }
    Ok(BaseLearner { id, kind, columns, design, penalty, lambda, df, dims })
}

/// Builds one learner per covariate column (ridge for categorical, P-spline
/// for numeric), one tensor P-spline per declared pair, and the unit-specific
/// intercept and slope learners. The global intercept is the boosting offset.
///
/// Rows with a missing value in any used column are dropped; constant
/// columns are skipped. Both are recorded in `annotations`.
pub fn make_base_learners<T: Real>(
    panel: &PanelDataset<T>,
    pairs: &[(String, String)],
    df_target: f64,
) -> Result<LearnerSet<T>> {
    if !(df_target > 0.0) {
        return Err(Error::Parameter(format!("df_target must be positive, got {df_target}")));
    }
    for (a, b) in pairs {
        for c in [a, b] {
            if panel.is_categorical(c) {
                return Err(Error::Type(format!("tensor pair column {c:?} is categorical")));
            }
            panel.column(c)?;
        }
    }
    let mut annotations = Vec::new();
    let names: Vec<&str> = panel.columns().keys().map(String::as_str).collect();
    let rows = panel.complete_rows(&names)?;
    if rows.len() < panel.n_rows() {
        annotations.push(format!("{} rows with missing covariates dropped", panel.n_rows() - rows.len()));
    }
    if rows.is_empty() {
        return Err(Error::Precondition("no complete rows for boosting".into()));
    }
    let mut learners = Vec::new();
    for (name, col) in panel.columns() {
        match col {
            Column::Categorical(c) => {
                let codes: Vec<usize> = rows.iter().map(|&r| c.codes[r].expect("complete row")).collect();
                let mut used: Vec<usize> = codes.clone();
                used.sort_unstable();
                used.dedup();
                if used.len() < 2 {
                    annotations.push(format!("column {name:?} is constant; learner skipped"));
                    continue;
                }
                let pos = |code: usize| used.binary_search(&code).expect("observed level");
                let design = SparseDesign::from_rows(used.len(), codes.iter().map(|&c| vec![(pos(c), T::one())]));
                learners.push(learner(
                    format!("bols({name})"),
                    LearnerKind::RidgeCategorical,
                    vec![name.clone()],
                    design,
                    Mat::identity(used.len()),
                    vec![used.len()],
                    df_target,
                    &mut annotations,
                )?);
            }
            Column::Numeric(c) => {
                let x: Vec<T> = rows.iter().map(|&r| c.values[r]).collect();
                if distinct_count(&x) < 2 {
                    annotations.push(format!("column {name:?} is constant; learner skipped"));
                    continue;
                }
                let (design, _) = pspline_design(&x, LEARNER_SPLINE_DIM)?;
                let (_, p) = difference_penalty(LEARNER_SPLINE_DIM, DEFAULT_PENALTY_ORDER)?;
                learners.push(learner(
                    format!("bbs({name})"),
                    LearnerKind::Pspline,
                    vec![name.clone()],
                    design,
                    p,
                    vec![LEARNER_SPLINE_DIM],
                    df_target,
                    &mut annotations,
                )?);
            }
        }
    }
    for (a, b) in pairs {
        let xa: Vec<T> = rows.iter().map(|&r| panel.numeric(a).map(|v| v[r])).collect::<Result<_>>()?;
        let xb: Vec<T> = rows.iter().map(|&r| panel.numeric(b).map(|v| v[r])).collect::<Result<_>>()?;
        if distinct_count(&xa) < 2 || distinct_count(&xb) < 2 {
            annotations.push(format!("tensor pair ({a}, {b}) has a constant margin; learner skipped"));
            continue;
        }
        let k = LEARNER_TENSOR_DIM;
        let ba = BSplineBasis::for_data(&xa, k, DEFAULT_DEGREE)?;
        let bb = BSplineBasis::for_data(&xb, k, DEFAULT_DEGREE)?;
        let mut drows = Vec::with_capacity(xa.len());
        for (&u, &v) in xa.iter().zip(&xb) {
            let (fa, va) = ba.evaluate_nonzero(u)?;
            let (fb, vb) = bb.evaluate_nonzero(v)?;
            let mut row = Vec::with_capacity(va.len() * vb.len());
            for (i, &p) in va.iter().enumerate() {
                for (j, &q) in vb.iter().enumerate() {
                    row.push(((fa + i) * k + fb + j, p * q));
                }
            }
            drows.push(row);
        }
        // First differences: the null space is the constant surface only.
        let (_, p) = difference_penalty::<T>(k, TENSOR_PENALTY_ORDER)?;
        let pen = crate::spline::kron(&p, &Mat::identity(k)).add(&crate::spline::kron(&Mat::identity(k), &p));
        learners.push(learner(
            format!("btens({a},{b})"),
            LearnerKind::TensorPspline,
            vec![a.clone(), b.clone()],
            SparseDesign::from_rows(k * k, drows),
            pen,
            vec![k, k],
            df_target,
            &mut annotations,
        )?);
    }

    let unit_index: Vec<usize> = rows.iter().map(|&r| panel.unit_of(r)).collect();
    let n_units = panel.n_units();
    let t0 = panel.time().iter().copied().min().unwrap_or(0);
    let t: Vec<T> = rows.iter().map(|&r| T::lit((panel.time()[r] - t0) as f64)).collect();
    let unit_col = panel.unit_name().to_string();
    let intercept = SparseDesign::from_rows(n_units, unit_index.iter().map(|&u| vec![(u, T::one())]));
    learners.push(learner(
        format!("brandom({unit_col})"),
        LearnerKind::RandomIntercept,
        vec![unit_col.clone()],
        intercept,
        Mat::identity(n_units),
        vec![n_units],
        df_target,
        &mut annotations,
    )?);
    if distinct_count(&t) >= 2 {
        let slope = SparseDesign::from_rows(n_units, unit_index.iter().zip(&t).map(|(&u, &ti)| vec![(u, ti)]));
        learners.push(learner(
            format!("brandom({unit_col}, by = time)"),
            LearnerKind::RandomSlope,
            vec![unit_col.clone(), panel.time_name().to_string()],
            slope,
            Mat::identity(n_units),
            vec![n_units],
            df_target,
            &mut annotations,
        )?);
    } else {
        annotations.push("single time point; unit slope learner skipped".into());
    }
    let y = rows.iter().map(|&r| panel.response()[r]).collect();
    Ok(LearnerSet { learners, y, rows, unit_index, n_units, df_target, annotations })
}
