//! Penalized likelihood estimation of additive mixed models.
//!
//! Coefficients are obtained by penalized weighted least squares for given
//! smoothing and variance parameters; those parameters are estimated by
//! minimizing the profiled restricted (or full) negative log-likelihood with
//! a box-constrained BFGS on log scale. Per-unit error variances are updated
//! by fixed-point iteration between optimizer runs.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::design::DesignBundle;
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Mat};
use crate::optim::{minimize_bfgs, BfgsOptions, BfgsResult};
use crate::scalar::Real;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const RHO_BOUNDS: (f64, f64) = (-15.0, 15.0);
const LOG_SD_BOUNDS: (f64, f64) = (-7.0, 7.0);
const OFFDIAG_BOUNDS: (f64, f64) = (-20.0, 20.0);
/// Floor for per-unit variances relative to the overall variance.
const UNIT_VAR_FLOOR: f64 = 1e-8;
const SIGMA2_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Restricted likelihood: unpenalized coefficients integrated out.
    #[default]
    Reml,
    /// Full likelihood (needed to compare models with different fixed parts).
    Ml,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitSettings {
    pub method: Method,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub hetero_max_iter: usize,
    pub hetero_tol: f64,
    /// Evaluate at these variance parameters instead of estimating them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed: Option<VarianceParams>,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self { method: Method::Reml, max_iter: 200, grad_tol: 1e-6, hetero_max_iter: 200, hetero_tol: 1e-7, fixed: None }
    }
}

impl FitSettings {
    pub fn ml() -> Self {
        Self { method: Method::Ml, ..Self::default() }
    }

    pub fn with_fixed(mut self, params: VarianceParams) -> Self {
        self.fixed = Some(params);
        self
    }
}

/// Smoothing and variance parameters on their natural scale, relative to the
/// error variance: penalty `Σ λ_j θᵀ S_j θ` against weighted residuals, and the
/// unit effect covariance `Ψ = G / σ²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceParams {
    pub lambda: Vec<f64>,
    pub psi: Option<[[f64; 2]; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unit_sigma2: Option<Vec<f64>>,
}

/// A fitted additive mixed model.
#[derive(Debug, Clone)]
pub struct FittedAmm<T> {
    pub design: Arc<DesignBundle<T>>,
    pub settings: FitSettings,
    pub coef: Vec<T>,
    /// Covariance of the coefficient estimates (Bayesian posterior form).
    pub vcov: Mat<T>,
    /// Smoothing parameters per penalty group, one per penalty matrix.
    pub lambdas: Vec<Vec<T>>,
    /// Covariance of the unit intercept and slope effects.
    pub g: Option<[[T; 2]; 2]>,
    pub sigma2: T,
    /// Error variance of each unit (all equal to `sigma2` when homoscedastic).
    pub unit_sigma2: Vec<T>,
    /// `w_i = σ² / σ_i²`
    pub weights: Vec<T>,
    pub fitted: Vec<T>,
    pub residuals: Vec<T>,
    pub hat: Vec<T>,
    /// Effective degrees of freedom of every coefficient.
    pub edf_coef: Vec<T>,
    pub cond_loglik: T,
    /// Final value of the minimized negative profiled log-likelihood.
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    /// Objective after each accepted optimizer step of the final run.
    pub objective_trace: Vec<f64>,
    pub hetero_rounds: usize,
    pub variance: VarianceParams,
    pub warnings: Vec<String>,
    pub(crate) rho: Vec<f64>,
}

impl<T: Real> FittedAmm<T> {
    pub fn n_obs(&self) -> usize {
        self.design.n_obs()
    }

    pub fn label(&self) -> &str {
        &self.design.label
    }

    /// Trace of the hat operator.
    pub fn edf_total(&self) -> T {
        self.hat.iter().copied().sum()
    }

    /// Per-row error variance `σ² / w`.
    pub fn row_sigma2(&self) -> Vec<T> {
        self.design.unit_index.iter().map(|&u| self.unit_sigma2[u]).collect()
    }

    /// Predicted unit intercept and slope deviations (zero rows without a unit part).
    pub fn unit_effects(&self) -> Vec<[T; 2]> {
        match &self.design.unit_part {
            Some(u) => (0..u.n_units).map(|i| [self.coef[u.start + 2 * i], self.coef[u.start + 2 * i + 1]]).collect(),
            None => vec![[T::zero(); 2]; self.design.n_units()],
        }
    }
}

/// Fits the model. Non-convergence is reported through `converged`, not as an
/// error; errors are reserved for ill-posed designs.
pub fn fit_amm<T: Real>(design: impl Into<Arc<DesignBundle<T>>>, settings: &FitSettings) -> Result<FittedAmm<T>> {
    fit_amm_from(design.into(), settings, None)
}

pub(crate) fn fit_amm_from<T: Real>(
    d: Arc<DesignBundle<T>>,
    settings: &FitSettings,
    start: Option<&[f64]>,
) -> Result<FittedAmm<T>> {
    let n = d.n_obs();
    let n_fixed = d.n_fixed();
    if settings.method == Method::Reml && n <= n_fixed {
        return Err(Error::Precondition(format!(
            "model {:?}: {n} observations for {n_fixed} unpenalized coefficients",
            d.label
        )));
    }
    if let Some(fixed) = &settings.fixed {
        return fit_fixed(d, settings, fixed);
    }
    let prob = Problem::new(&d, None, settings.method, false, None);
    let x0 = match start {
        Some(s) if s.len() == prob.n_params() => s.to_vec(),
        _ => vec![0.0; prob.n_params()],
    };
    let res = optimize(&prob, &x0, settings)?;
    if !d.heteroscedastic {
        let ev = prob.eval(&res.x, Need::Full)?;
        return Ok(finalize(&d, &prob, &res, ev, settings, None, 0, true));
    }

    let ev0 = prob.eval(&res.x, Need::Full)?;
    let sigma0 = ev0.sigma2;
    let mut unit_var = unit_variances(&d, &ev0, None, sigma0);
    let abs_scales: Vec<T> = prob.scales.iter().map(|&s| s / sigma0).collect();
    let abs_unit_d = [prob.unit_d[0] / sigma0.sqrt(), prob.unit_d[1] / sigma0.sqrt()];
    let mut rho = res.x.clone();
    for round in 1..=settings.hetero_max_iter {
        let w: Vec<T> = d.unit_index.iter().map(|&u| T::one() / unit_var[u]).collect();
        let prob_h = Problem::new(&d, Some(w), settings.method, true, Some((abs_scales.clone(), abs_unit_d)));
        let res_h = optimize(&prob_h, &rho, settings)?;
        let ev = prob_h.eval(&res_h.x, Need::Full)?;
        let sigma2 = harmonic_sigma2(&d, &unit_var);
        let next = unit_variances(&d, &ev, prob_h.w.as_deref(), sigma2);
        let change = unit_var
            .iter()
            .zip(&next)
            .map(|(&a, &b)| ((a - b) / a).abs().as_f64())
            .fold(0.0, f64::max);
        rho = res_h.x.clone();
        if change < settings.hetero_tol || round == settings.hetero_max_iter {
            let ok = change < settings.hetero_tol;
            let mut fit = finalize(&d, &prob_h, &res_h, ev, settings, Some(&unit_var), round, ok);
            if !ok {
                fit.warnings.push(format!("unit variance iteration stopped after {round} rounds (change {change:.2e})"));
            }
            return Ok(fit);
        }
        unit_var = next;
    }
    unreachable!("heteroscedastic loop always returns")
}

/// Harmonic mean of the per-row variances: `σ² = n / Σ 1/σ_i²`.
fn harmonic_sigma2<T: Real>(d: &DesignBundle<T>, unit_var: &[T]) -> T {
    let s: T = d.unit_index.iter().map(|&u| T::one() / unit_var[u]).sum();
    T::from_usize_lossy(d.n_obs()) / s
}

/// `σ_i² = RSS_i / (n_i − Σ_{t∈i} h_tt)`, floored relative to `scale`.
fn unit_variances<T: Real>(d: &DesignBundle<T>, ev: &Eval<T>, w: Option<&[T]>, scale: T) -> Vec<T> {
    let finv = ev.finv.as_ref().expect("full evaluation");
    let nu = d.n_units();
    let mut rss = vec![T::zero(); nu];
    let mut df = vec![T::zero(); nu];
    for r in 0..d.n_obs() {
        let u = d.unit_index[r];
        let row = d.x.row(r);
        let wr = w.map_or(T::one(), |w| w[r]);
        rss[u] = rss[u] + ev.resid[r] * ev.resid[r];
        df[u] = df[u] + T::one() - wr * quad_form_sparse(finv, row);
    }
    let floor = T::lit(UNIT_VAR_FLOOR) * scale;
    rss.iter()
        .zip(&df)
        .map(|(&r, &f)| (r / f.max(T::lit(1e-2))).max(floor))
        .collect()
}

/// `cᵀ F c` for a sparse row `c`.
pub(crate) fn quad_form_sparse<T: Real>(f: &Mat<T>, c: &[T]) -> T {
    let nz: Vec<usize> = (0..c.len()).filter(|&j| c[j] != T::zero()).collect();
    let mut s = T::zero();
    for &a in &nz {
        let fa = f.row(a);
        let mut t = T::zero();
        for &b in &nz {
            t = t + fa[b] * c[b];
        }
        s = s + c[a] * t;
    }
    s
}

fn optimize<T: Real>(prob: &Problem<'_, T>, x0: &[f64], settings: &FitSettings) -> Result<BfgsResult> {
    let (lo, hi) = prob.bounds();
    if prob.n_params() == 0 {
        let ev = prob.eval(&[], Need::Value)?;
        return Ok(BfgsResult {
            x: vec![],
            f: ev.v,
            grad: vec![],
            iterations: 0,
            converged: true,
            projected_grad_norm: 0.0,
            trace: vec![ev.v],
        });
    }
    let opts = BfgsOptions { max_iter: settings.max_iter, grad_tol: settings.grad_tol, ..Default::default() };
    minimize_bfgs(
        |x| {
            let ev = prob.eval(x, Need::Gradient)?;
            Ok((ev.v, ev.grad))
        },
        x0,
        &lo,
        &hi,
        &opts,
    )
}

fn fit_fixed<T: Real>(d: Arc<DesignBundle<T>>, settings: &FitSettings, fixed: &VarianceParams) -> Result<FittedAmm<T>> {
    let w = match (&fixed.unit_sigma2, d.heteroscedastic) {
        (Some(v), _) => {
            if v.len() != d.n_units() {
                return Err(Error::Parameter(format!("{} unit variances for {} units", v.len(), d.n_units())));
            }
            let uv: Vec<T> = v.iter().map(|&x| T::lit(x)).collect();
            let s2 = harmonic_sigma2(&d, &uv);
            Some(d.unit_index.iter().map(|&u| s2 / uv[u]).collect())
        }
        (None, true) => return Err(Error::Parameter("heteroscedastic fit needs fixed unit variances".into())),
        (None, false) => None,
    };
    let prob = Problem::new(&d, w, settings.method, false, None);
    let rho = prob.params_from(fixed)?;
    let ev = prob.eval(&rho, Need::Full)?;
    let res = BfgsResult {
        x: rho,
        f: ev.v,
        grad: vec![],
        iterations: 0,
        converged: true,
        projected_grad_norm: 0.0,
        trace: vec![ev.v],
    };
    let uv: Option<Vec<T>> = fixed.unit_sigma2.as_ref().map(|v| v.iter().map(|&x| T::lit(x)).collect());
    Ok(finalize(&d, &prob, &res, ev, settings, uv.as_deref(), 0, true))
}

#[allow(clippy::too_many_arguments)]
fn finalize<T: Real>(
    d: &Arc<DesignBundle<T>>,
    prob: &Problem<'_, T>,
    res: &BfgsResult,
    ev: Eval<T>,
    settings: &FitSettings,
    unit_var: Option<&[T]>,
    hetero_rounds: usize,
    hetero_ok: bool,
) -> FittedAmm<T> {
    let n = d.n_obs();
    let mut warnings = Vec::new();
    let finv = ev.finv.as_ref().expect("full evaluation");
    let mut sigma2 = match unit_var {
        Some(v) => harmonic_sigma2(d, v),
        None => ev.sigma2,
    };
    if !(sigma2 > T::lit(SIGMA2_FLOOR)) {
        warnings.push(format!("error variance {sigma2} floored at {SIGMA2_FLOOR:e}"));
        sigma2 = T::lit(SIGMA2_FLOOR);
    }
    let unit_sigma2: Vec<T> = match unit_var {
        Some(v) => v.to_vec(),
        None => vec![sigma2; d.n_units()],
    };
    let weights: Vec<T> = unit_sigma2.iter().map(|&v| sigma2 / v).collect();
    let w_row = prob.w.as_deref();
    let hat: Vec<T> = (0..n)
        .map(|r| w_row.map_or(T::one(), |w| w[r]) * quad_form_sparse(finv, d.x.row(r)))
        .collect();
    let edf_coef: Vec<T> = {
        let p = d.n_coef();
        (0..p).map(|j| (0..p).map(|k| finv[(j, k)] * prob.xtwx[(k, j)]).sum()).collect()
    };
    let cov_scale = if prob.fixed_scale { T::one() } else { sigma2 };
    let vcov = finv.scale(cov_scale);
    let fitted: Vec<T> = d.y.iter().zip(&ev.resid).map(|(&y, &r)| y - r).collect();
    let cond_loglik = conditional_loglik_parts(&ev.resid, &d.unit_index, &unit_sigma2);

    // Natural-scale parameters relative to σ².
    let to_rel = if prob.fixed_scale { sigma2 } else { T::one() };
    let mut lambdas = Vec::new();
    let mut flat = Vec::new();
    let mut k = 0;
    for grp in &d.penalties {
        let mut l = Vec::new();
        for _ in &grp.matrices {
            let v = T::lit(res.x[k].exp()) * prob.scales[k] * to_rel;
            l.push(v);
            flat.push(v.as_f64());
            k += 1;
        }
        lambdas.push(l);
    }
    let (g, psi) = if prob.random_units() {
        let cov = prob.unit_cov(&res.x[k..k + 3]);
        let g_abs = if prob.fixed_scale { cov } else { scale2(cov, sigma2) };
        let psi = scale2(g_abs, T::one() / sigma2);
        (Some(g_abs), Some(psi.map(|r| r.map(|v| v.as_f64()))))
    } else {
        (None, None)
    };
    let converged = res.converged && hetero_ok;
    if !res.converged {
        warnings.push(format!(
            "optimizer stopped after {} iterations with projected gradient {:.3e}",
            res.iterations, res.projected_grad_norm
        ));
    }
    if ev.ridge > T::zero() {
        warnings.push(format!("penalized normal equations needed a ridge of {:.3e}", ev.ridge.as_f64()));
    }
    FittedAmm {
        design: Arc::clone(d),
        settings: settings.clone(),
        coef: ev.theta.clone(),
        vcov,
        lambdas,
        g,
        sigma2,
        variance: VarianceParams {
            lambda: flat,
            psi,
            unit_sigma2: unit_var.map(|v| v.iter().map(|x| x.as_f64()).collect()),
        },
        unit_sigma2,
        weights,
        fitted,
        residuals: ev.resid.clone(),
        hat,
        edf_coef,
        cond_loglik,
        objective: res.f,
        converged,
        iterations: res.iterations,
        grad_norm: res.projected_grad_norm,
        objective_trace: res.trace.clone(),
        hetero_rounds,
        warnings,
        rho: res.x.clone(),
    }
}

fn scale2<T: Real>(m: [[T; 2]; 2], s: T) -> [[T; 2]; 2] {
    m.map(|r| r.map(|v| v * s))
}

/// Gaussian log-density of residuals with per-unit variances.
pub(crate) fn conditional_loglik_parts<T: Real>(resid: &[T], unit_index: &[usize], unit_sigma2: &[T]) -> T {
    let half = T::lit(0.5);
    let ln2pi = T::lit(LN_2PI);
    resid
        .iter()
        .zip(unit_index)
        .map(|(&r, &u)| {
            let s2 = unit_sigma2[u].max(T::lit(SIGMA2_FLOOR));
            -half * (ln2pi + s2.ln() + r * r / s2)
        })
        .sum()
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Need {
    Value,
    Gradient,
    Full,
}

struct Eval<T> {
    v: f64,
    grad: Vec<f64>,
    theta: Vec<T>,
    resid: Vec<T>,
    finv: Option<Mat<T>>,
    sigma2: T,
    ridge: T,
}

/// The objective for one fixed set of observation weights.
struct Problem<'a, T> {
    d: &'a DesignBundle<T>,
    w: Option<Vec<T>>,
    xtwx: Mat<T>,
    xtwy: Vec<T>,
    method: Method,
    /// Weights are absolute precisions and σ² is not profiled.
    fixed_scale: bool,
    /// Scale of each penalty matrix (flattened over groups).
    scales: Vec<T>,
    /// Square roots of the unit-part scales (intercept, slope).
    unit_d: [T; 2],
    n_fixed: usize,
    pen_pos: Vec<Option<usize>>,
    log_det_w: T,
}

impl<'a, T: Real> Problem<'a, T> {
    fn new(
        d: &'a DesignBundle<T>,
        w: Option<Vec<T>>,
        method: Method,
        fixed_scale: bool,
        scales: Option<(Vec<T>, [T; 2])>,
    ) -> Self {
        let xtwx = d.x.weighted_gram(w.as_deref());
        let xtwy = d.x.weighted_tmatvec(w.as_deref(), &d.y);
        let (scales, unit_d) = scales.unwrap_or_else(|| default_scales(d, &xtwx));
        let pen = d.penalized_indices();
        let mut pen_pos = vec![None; d.n_coef()];
        for (i, &j) in pen.iter().enumerate() {
            pen_pos[j] = Some(i);
        }
        let log_det_w = w.as_ref().map_or(T::zero(), |w| w.iter().map(|v| v.ln()).sum());
        Self { d, w, xtwx, xtwy, method, fixed_scale, scales, unit_d, n_fixed: d.n_fixed(), pen_pos, log_det_w }
    }

    fn random_units(&self) -> bool {
        self.d.unit_part.as_ref().is_some_and(|u| u.random)
    }

    fn n_params(&self) -> usize {
        self.scales.len() + if self.random_units() { 3 } else { 0 }
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![RHO_BOUNDS.0; self.scales.len()];
        let mut hi = vec![RHO_BOUNDS.1; self.scales.len()];
        if self.random_units() {
            lo.extend([LOG_SD_BOUNDS.0, OFFDIAG_BOUNDS.0, LOG_SD_BOUNDS.0]);
            hi.extend([LOG_SD_BOUNDS.1, OFFDIAG_BOUNDS.1, LOG_SD_BOUNDS.1]);
        }
        (lo, hi)
    }

    /// Scaled unit covariance `Ψ̃ = L Lᵀ` and its inverse.
    fn psi_tilde(g: &[f64]) -> ([[f64; 2]; 2], [[f64; 2]; 2]) {
        let (l00, l10, l11) = (g[0].exp(), g[1], g[2].exp());
        let psi = [[l00 * l00, l00 * l10], [l00 * l10, l10 * l10 + l11 * l11]];
        let det = l00 * l00 * l11 * l11;
        let inv = [[psi[1][1] / det, -psi[0][1] / det], [-psi[1][0] / det, psi[0][0] / det]];
        (psi, inv)
    }

    /// Unit covariance on the working scale: `D⁻¹ Ψ̃ D⁻¹`.
    fn unit_cov(&self, g: &[f64]) -> [[T; 2]; 2] {
        let (psi, _) = Self::psi_tilde(g);
        let dd = [self.unit_d[0].as_f64(), self.unit_d[1].as_f64()];
        let mut out = [[T::zero(); 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                out[a][b] = T::lit(psi[a][b] / (dd[a] * dd[b]));
            }
        }
        out
    }

    /// Unit precision block `D Ψ̃⁻¹ D` and its derivatives in the three parameters.
    fn unit_precision(&self, g: &[f64]) -> ([[T; 2]; 2], [[[T; 2]; 2]; 3]) {
        let (_, inv) = Self::psi_tilde(g);
        let (l00, l10, l11) = (g[0].exp(), g[1], g[2].exp());
        let dpsi = [
            [[2.0 * l00 * l00, l00 * l10], [l00 * l10, 0.0]],
            [[0.0, l00], [l00, 2.0 * l10]],
            [[0.0, 0.0], [0.0, 2.0 * l11 * l11]],
        ];
        let dd = [self.unit_d[0].as_f64(), self.unit_d[1].as_f64()];
        let mul = |a: [[f64; 2]; 2], b: [[f64; 2]; 2]| {
            let mut c = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
                }
            }
            c
        };
        let scale = |m: [[f64; 2]; 2]| {
            let mut out = [[T::zero(); 2]; 2];
            for a in 0..2 {
                for b in 0..2 {
                    out[a][b] = T::lit(m[a][b] * dd[a] * dd[b]);
                }
            }
            out
        };
        let derivs = dpsi.map(|dp| {
            let m = mul(mul(inv, dp), inv);
            scale(m.map(|r| r.map(|v| -v)))
        });
        (scale(inv), derivs)
    }

    /// Converts natural-scale parameters into optimizer coordinates.
    fn params_from(&self, p: &VarianceParams) -> Result<Vec<f64>> {
        if p.lambda.len() != self.scales.len() {
            return Err(Error::Parameter(format!(
                "{} smoothing parameters given for {} penalties",
                p.lambda.len(),
                self.scales.len()
            )));
        }
        let mut x: Vec<f64> = p.lambda.iter().zip(&self.scales).map(|(&l, &s)| (l / s.as_f64()).ln()).collect();
        if self.random_units() {
            let psi = p.psi.ok_or_else(|| Error::Parameter("unit covariance missing".into()))?;
            let dd = [self.unit_d[0].as_f64(), self.unit_d[1].as_f64()];
            let pt = [
                [psi[0][0] * dd[0] * dd[0], psi[0][1] * dd[0] * dd[1]],
                [psi[1][0] * dd[1] * dd[0], psi[1][1] * dd[1] * dd[1]],
            ];
            let l00 = pt[0][0].sqrt();
            let l10 = pt[1][0] / l00;
            let l11 = (pt[1][1] - l10 * l10).sqrt();
            if !(l00 > 0.0 && l11 > 0.0) {
                return Err(Error::Parameter("unit covariance must be positive definite".into()));
            }
            x.extend([l00.ln(), l10, l11.ln()]);
        }
        Ok(x)
    }

    fn eval(&self, p: &[f64], need: Need) -> Result<Eval<T>> {
        let d = self.d;
        let n = d.n_obs();
        let mut a = self.xtwx.clone();
        let mut lams: Vec<T> = Vec::with_capacity(self.scales.len());
        let mut k = 0;
        for grp in &d.penalties {
            for s in &grp.matrices {
                let lam = T::lit(p[k].exp()) * self.scales[k];
                add_block(&mut a, grp.start, s, lam);
                lams.push(lam);
                k += 1;
            }
        }
        let unit = d.unit_part.as_ref().filter(|u| u.random);
        let prec = unit.map(|_| self.unit_precision(&p[k..k + 3]));
        if let (Some(u), Some((pm, _))) = (unit, &prec) {
            for i in 0..u.n_units {
                let c = u.start + 2 * i;
                for (x, row) in pm.iter().enumerate() {
                    for (y, &v) in row.iter().enumerate() {
                        a[(c + x, c + y)] = a[(c + x, c + y)] + v;
                    }
                }
            }
        }
        let jitter = T::lit(1e-10).max(T::epsilon() * T::lit(100.0));
        let (chol, ridge) = Cholesky::new_with_jitter(&a, jitter)?;
        let theta = chol.solve(&self.xtwy);
        let fitted = d.x.matvec(&theta);
        let resid: Vec<T> = d.y.iter().zip(&fitted).map(|(&y, &f)| y - f).collect();
        let rss_w: T = match &self.w {
            Some(w) => resid.iter().zip(w).map(|(&r, &w)| w * r * r).sum(),
            None => resid.iter().map(|&r| r * r).sum(),
        };

        // Penalty quadratic forms and log-determinants.
        let mut quad_parts: Vec<T> = Vec::with_capacity(self.n_params());
        let mut logdet_s = T::zero();
        let mut dlogdet_s: Vec<T> = Vec::with_capacity(self.n_params());
        k = 0;
        for grp in &d.penalties {
            let th = &theta[grp.cols()];
            let first = k;
            for s in &grp.matrices {
                quad_parts.push(lams[k] * quad(s, th));
                k += 1;
            }
            if grp.matrices.len() == 1 {
                logdet_s = logdet_s + T::from_usize_lossy(grp.size) * lams[first].ln();
                dlogdet_s.push(T::from_usize_lossy(grp.size));
            } else {
                let mut m = Mat::zeros(grp.size, grp.size);
                for (j, s) in grp.matrices.iter().enumerate() {
                    m.add_scaled_in_place(s, lams[first + j]);
                }
                let c = Cholesky::new(&m)?;
                logdet_s = logdet_s + c.logdet();
                let minv = c.inverse();
                for (j, s) in grp.matrices.iter().enumerate() {
                    dlogdet_s.push(lams[first + j] * trace_prod(&minv, s));
                }
            }
        }
        if let (Some(u), Some((pm, dpm))) = (unit, &prec) {
            let nu = T::from_usize_lossy(u.n_units);
            let det = pm[0][0] * pm[1][1] - pm[0][1] * pm[1][0];
            logdet_s = logdet_s + nu * det.ln();
            let mut dq = [T::zero(); 3];
            for i in 0..u.n_units {
                let b = [theta[u.start + 2 * i], theta[u.start + 2 * i + 1]];
                for (j, m) in dpm.iter().enumerate() {
                    dq[j] = dq[j] + quad2(m, b);
                }
            }
            quad_parts.extend(dq);
            let two = T::lit(2.0);
            dlogdet_s.extend([-two * nu, T::zero(), -two * nu]);
        }
        let pen_total: T = {
            let mut s = T::zero();
            let mut k2 = 0;
            for grp in &d.penalties {
                for _ in &grp.matrices {
                    s = s + quad_parts[k2];
                    k2 += 1;
                }
            }
            if let (Some(u), Some((pm, _))) = (unit, &prec) {
                for i in 0..u.n_units {
                    s = s + quad2(pm, [theta[u.start + 2 * i], theta[u.start + 2 * i + 1]]);
                }
            }
            s
        };
        let dp = rss_w + pen_total;

        let pen_idx = d.penalized_indices();
        let (logdet_a, ml_chol) = match self.method {
            Method::Reml => (chol.logdet(), None),
            Method::Ml => {
                if pen_idx.is_empty() {
                    (T::zero(), None)
                } else {
                    let arr = a.select(&pen_idx, &pen_idx);
                    let (c, _) = Cholesky::new_with_jitter(&arr, jitter)?;
                    (c.logdet(), Some(c))
                }
            }
        };
        let n_eff = match self.method {
            Method::Reml => n - self.n_fixed,
            Method::Ml => n,
        };
        let n_eff_t = T::from_usize_lossy(n_eff);
        let ln2pi = T::lit(LN_2PI);
        let half = T::lit(0.5);
        let (v, sigma2) = if self.fixed_scale {
            (half * (dp + n_eff_t * ln2pi + logdet_a - logdet_s - self.log_det_w), T::one())
        } else {
            let s2 = (dp / n_eff_t).max(T::min_positive_value());
            (half * (n_eff_t * (T::one() + ln2pi + s2.ln()) + logdet_a - logdet_s - self.log_det_w), s2)
        };

        let mut grad = Vec::new();
        let mut finv = None;
        if need >= Need::Gradient {
            let f = chol.inverse();
            let f_pen = ml_chol.as_ref().map(|c| c.inverse());
            let fget = |i: usize, j: usize| -> T {
                match &f_pen {
                    Some(fp) => fp[(self.pen_pos[i].unwrap(), self.pen_pos[j].unwrap())],
                    None => f[(i, j)],
                }
            };
            let mut k = 0;
            for grp in &d.penalties {
                for s in &grp.matrices {
                    let mut tr = T::zero();
                    for a_ in 0..grp.size {
                        for b_ in 0..grp.size {
                            let sv = s[(b_, a_)];
                            if sv != T::zero() {
                                tr = tr + fget(grp.start + a_, grp.start + b_) * sv;
                            }
                        }
                    }
                    let g = half * (quad_parts[k] / sigma2 + lams[k] * tr - dlogdet_s[k]);
                    grad.push(g.as_f64());
                    k += 1;
                }
            }
            if let (Some(u), Some((_, dpm))) = (unit, &prec) {
                for (j, m) in dpm.iter().enumerate() {
                    let mut tr = T::zero();
                    for i in 0..u.n_units {
                        let c = u.start + 2 * i;
                        for x in 0..2 {
                            for y in 0..2 {
                                tr = tr + fget(c + x, c + y) * m[y][x];
                            }
                        }
                    }
                    let g = half * (quad_parts[k + j] / sigma2 + tr - dlogdet_s[k + j]);
                    grad.push(g.as_f64());
                }
            }
            if need == Need::Full {
                finv = Some(f);
            }
        }
        Ok(Eval { v: v.as_f64(), grad, theta, resid, finv, sigma2, ridge })
    }
}

fn default_scales<T: Real>(d: &DesignBundle<T>, xtwx: &Mat<T>) -> (Vec<T>, [T; 2]) {
    let mut scales = Vec::new();
    for grp in &d.penalties {
        let tr_x: T = grp.cols().map(|j| xtwx[(j, j)]).sum();
        for s in &grp.matrices {
            let tr_s = s.trace();
            let v = if tr_s > T::zero() && tr_x > T::zero() { tr_x / tr_s } else { T::one() };
            scales.push(v);
        }
    }
    let unit_d = match &d.unit_part {
        Some(u) if u.n_units > 0 => {
            let nu = T::from_usize_lossy(u.n_units);
            let s0: T = (0..u.n_units).map(|i| xtwx[(u.start + 2 * i, u.start + 2 * i)]).sum::<T>() / nu;
            let s1: T = (0..u.n_units).map(|i| xtwx[(u.start + 2 * i + 1, u.start + 2 * i + 1)]).sum::<T>() / nu;
            [s0.max(T::lit(1e-12)).sqrt(), s1.max(T::lit(1e-12)).sqrt()]
        }
        _ => [T::one(), T::one()],
    };
    (scales, unit_d)
}

fn add_block<T: Real>(a: &mut Mat<T>, start: usize, s: &Mat<T>, lam: T) {
    for i in 0..s.nrows() {
        for j in 0..s.ncols() {
            let v = s[(i, j)];
            if v != T::zero() {
                a[(start + i, start + j)] = a[(start + i, start + j)] + lam * v;
            }
        }
    }
}

fn quad<T: Real>(s: &Mat<T>, x: &[T]) -> T {
    let sx = s.matvec(x);
    x.iter().zip(&sx).map(|(&a, &b)| a * b).sum()
}

fn quad2<T: Real>(m: &[[T; 2]; 2], b: [T; 2]) -> T {
    b[0] * (m[0][0] * b[0] + m[0][1] * b[1]) + b[1] * (m[1][0] * b[0] + m[1][1] * b[1])
}

/// `tr(A B)` for square matrices of equal size.
fn trace_prod<T: Real>(a: &Mat<T>, b: &Mat<T>) -> T {
    let n = a.nrows();
    let mut s = T::zero();
    for i in 0..n {
        for j in 0..n {
            s = s + a[(i, j)] * b[(j, i)];
        }
    }
    s
}

/// Objective and analytic gradient at optimizer coordinates, for testing the
/// gradient against finite differences.
#[doc(hidden)]
pub fn objective_and_gradient<T: Real>(d: &DesignBundle<T>, method: Method, rho: &[f64]) -> Result<(f64, Vec<f64>)> {
    let prob = Problem::new(d, None, method, false, None);
    let ev = prob.eval(rho, Need::Gradient)?;
    Ok((ev.v, ev.grad))
}

/// Objective and gradient of the fixed-scale (heteroscedastic) objective for
/// given per-row precisions.
#[doc(hidden)]
pub fn objective_and_gradient_weighted<T: Real>(
    d: &DesignBundle<T>,
    method: Method,
    precisions: Vec<T>,
    rho: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let prob = Problem::new(d, Some(precisions), method, true, None);
    let ev = prob.eval(rho, Need::Gradient)?;
    Ok((ev.v, ev.grad))
}
