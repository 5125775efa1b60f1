use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::huber::{huber_gradient_weighted, huber_risk};
use super::learners::{LearnerKind, LearnerSet};
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::scalar::{weighted_median, Real};

/// How the Huber threshold is set at every iteration.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaRule {
    /// Median absolute residual, never increasing along the path: the running
    /// minimum keeps the in-sample risk monotone (the loss grows with δ).
    #[default]
    Adaptive,
    /// A fixed threshold; `f64::INFINITY` gives squared-error boosting.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostOptions {
    /// Step length ν in (0, 1].
    pub nu: f64,
    pub m_max: usize,
    pub delta: DeltaRule,
}

impl Default for BoostOptions {
    fn default() -> Self {
        Self { nu: 0.1, m_max: 1500, delta: DeltaRule::Adaptive }
    }
}

impl BoostOptions {
    fn validate(&self) -> Result<()> {
        if self.m_max == 0 {
            return Err(Error::Parameter("m_max must be positive".into()));
        }
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(Error::Parameter(format!("step length must lie in (0, 1], got {}", self.nu)));
        }
        if let DeltaRule::Fixed(d) = self.delta {
            if !(d > 0.0) {
                return Err(Error::Parameter(format!("fixed Huber threshold must be positive, got {d}")));
            }
        }
        Ok(())
    }
}

/// Learner metadata kept with a path so it can be distilled on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerInfo {
    pub id: String,
    pub kind: LearnerKind,
    pub columns: Vec<String>,
    pub df: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord<T> {
    pub iteration: usize,
    /// Index into [`BoostPath::learners`].
    pub learner: usize,
    pub delta: T,
    /// In-sample risk after the update.
    pub risk: T,
    /// `ν β̂` of the selected learner.
    pub step: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostPath<T> {
    pub learners: Vec<LearnerInfo>,
    pub nu: f64,
    pub offset: T,
    pub initial_delta: T,
    pub initial_risk: T,
    pub records: Vec<IterationRecord<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_stop: Option<usize>,
    /// Out-of-bag risk per fold for iterations `0..=m_max`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fold_risks: Vec<Vec<f64>>,
}

impl<T: Real> BoostPath<T> {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    /// Risk at iterations `0..=m`.
    pub fn risk_trajectory(&self) -> Vec<T> {
        std::iter::once(self.initial_risk).chain(self.records.iter().map(|r| r.risk)).collect()
    }

    /// Selection counts per learner over iterations `1..=m`.
    pub fn selection_counts(&self, m: usize) -> Vec<usize> {
        let mut c = vec![0; self.learners.len()];
        for r in self.records.iter().take(m) {
            c[r.learner] += 1;
        }
        c
    }

    /// Accumulated coefficients per learner after `m` iterations.
    pub fn coefficients(&self, set: &LearnerSet<T>, m: usize) -> Vec<Vec<T>> {
        let mut out: Vec<Vec<T>> = set.learners.iter().map(|l| vec![T::zero(); l.n_coef()]).collect();
        for r in self.records.iter().take(m) {
            for (a, &s) in out[r.learner].iter_mut().zip(&r.step) {
                *a = *a + s;
            }
        }
        out
    }

    /// In-sample fitted values after `m` iterations.
    pub fn fitted(&self, set: &LearnerSet<T>, m: usize) -> Vec<T> {
        let mut f = vec![self.offset; set.n_obs()];
        for (l, beta) in set.learners.iter().zip(self.coefficients(set, m)) {
            if beta.iter().all(|&b| b == T::zero()) {
                continue;
            }
            for (fi, v) in f.iter_mut().zip(l.design.matvec(&beta)) {
                *fi = *fi + v;
            }
        }
        f
    }
}

/// Boosting on the full sample.
pub fn boost<T: Real>(set: &LearnerSet<T>, opts: &BoostOptions) -> Result<BoostPath<T>> {
    Ok(boost_weighted(set, opts, None, None)?.0)
}

/// Boosting with integer case weights; when `oob` is given, also returns the
/// risk on the rows it marks for iterations `0..=m_max`. That risk uses the
/// threshold of iteration 0 throughout: the shrinking training thresholds
/// would otherwise lower the out-of-bag loss merely by shrinking.
pub(crate) fn boost_weighted<T: Real>(
    set: &LearnerSet<T>,
    opts: &BoostOptions,
    weights: Option<&[u32]>,
    oob: Option<&[bool]>,
) -> Result<(BoostPath<T>, Vec<f64>)> {
    opts.validate()?;
    if set.learners.is_empty() {
        return Err(Error::Precondition("no base learners".into()));
    }
    let n = set.n_obs();
    let counts: Vec<u32> = weights.map_or_else(|| vec![1; n], <[u32]>::to_vec);
    let wt: Vec<T> = counts.iter().map(|&c| T::lit(c as f64)).collect();
    let w = weights.map(|_| wt.as_slice());
    let oob_w: Option<Vec<T>> = oob.map(|m| m.iter().map(|&b| if b { T::one() } else { T::zero() }).collect());

    let factors: Vec<Cholesky<T>> = set
        .learners
        .par_iter()
        .map(|l| Cholesky::new_with_jitter(&l.normal_matrix(w), T::lit(1e-10)).map(|(c, _)| c))
        .collect::<std::result::Result<_, _>>()?;

    let y = &set.y;
    let offset = weighted_median(y, &counts);
    let mut f = vec![offset; n];
    let abs_res = |f: &[T]| -> Vec<T> { y.iter().zip(f).map(|(&a, &b)| (a - b).abs()).collect() };
    let mut delta = match opts.delta {
        DeltaRule::Adaptive => weighted_median(&abs_res(&f), &counts),
        DeltaRule::Fixed(d) => T::lit(d),
    };
    let initial_risk = huber_risk(y, &f, delta, w);
    let mut oob_curve = Vec::new();
    if let Some(ow) = &oob_w {
        oob_curve.push(huber_risk(y, &f, delta, Some(ow)).as_f64());
    }
    let initial_delta = delta;
    let nu = T::lit(opts.nu);
    let mut records = Vec::with_capacity(opts.m_max);
    for m in 1..=opts.m_max {
        let u: Vec<T> = match opts.delta {
            DeltaRule::Adaptive => {
                let (g, d) = huber_gradient_weighted(y, &f, &counts);
                delta = delta.min(d);
                g.into_iter().map(|v| v.max(-delta).min(delta)).collect()
            }
            DeltaRule::Fixed(_) => y.iter().zip(&f).map(|(&a, &b)| (a - b).max(-delta).min(delta)).collect(),
        };
        let fits: Vec<(T, Vec<T>, Vec<T>)> = set
            .learners
            .par_iter()
            .zip(&factors)
            .map(|(l, c)| {
                let beta = c.solve(&l.design.weighted_tmatvec(w, &u));
                let fit = l.design.matvec(&beta);
                let sse = (0..n)
                    .map(|i| {
                        let e = u[i] - fit[i];
                        wt[i] * e * e
                    })
                    .sum();
                (sse, beta, fit)
            })
            .collect();
        let best = fits
            .iter()
            .enumerate()
            .filter(|(_, (s, _, _))| s.is_finite())
            .fold(None::<(usize, T)>, |acc, (i, (s, _, _))| match acc {
                Some((_, b)) if *s >= b => acc,
                _ => Some((i, *s)),
            })
            .map(|(i, _)| i)
            .ok_or_else(|| Error::Numeric(format!("iteration {m}: every learner fit is non-finite")))?;
        let (_, beta, fit) = &fits[best];
        for (fi, &v) in f.iter_mut().zip(fit) {
            *fi = *fi + nu * v;
        }
        let risk = huber_risk(y, &f, delta, w);
        if let Some(ow) = &oob_w {
            oob_curve.push(huber_risk(y, &f, initial_delta, Some(ow)).as_f64());
        }
        records.push(IterationRecord {
            iteration: m,
            learner: best,
            delta,
            risk,
            step: beta.iter().map(|&b| nu * b).collect(),
        });
    }
    let learners = set
        .learners
        .iter()
        .map(|l| LearnerInfo {
            id: l.id.clone(),
            kind: l.kind,
            columns: l.columns.clone(),
            df: l.df.as_f64(),
            lambda: l.lambda.as_f64(),
        })
        .collect();
    Ok((
        BoostPath {
            learners,
            nu: opts.nu,
            offset,
            initial_delta,
            initial_risk,
            records,
            m_stop: None,
            fold_risks: Vec::new(),
        },
        oob_curve,
    ))
}
