//! Box-constrained quasi-Newton minimization used for variance and smoothing
//! parameters.

use crate::error::Result;

#[derive(Debug, Clone)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Convergence when the projected gradient's sup-norm falls below this.
    pub grad_tol: f64,
    /// A line search that cannot decrease the objective (after a retry along
    /// the steepest descent direction) counts as convergence at numerical
    /// precision when the projected gradient is below `stall_tol · max(1, |f|)`,
    /// or when it is below `flat_grad_tol · max(1, |f|)` and the last three
    /// accepted steps changed the objective by less than `flat_f_tol · max(1, |f|)`.
    pub stall_tol: f64,
    pub flat_grad_tol: f64,
    pub flat_f_tol: f64,
    /// Longest first step along any coordinate.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iter: 200, grad_tol: 1e-6, stall_tol: 1e-5, flat_grad_tol: 1e-3, flat_f_tol: 1e-9, max_step: 4.0 }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub projected_grad_norm: f64,
    /// Objective after every accepted step, starting with the initial value.
    pub trace: Vec<f64>,
}

fn projected_grad(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((&xi, &gi), (&l, &h))| if (xi <= l && gi > 0.0) || (xi >= h && gi < 0.0) { 0.0 } else { gi })
        .collect()
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes `f` (returning value and gradient) over the box `[lo, hi]`.
/// Every accepted step strictly decreases the objective. Evaluation errors
/// during the line search are treated as infinite objective values.
pub fn minimize_bfgs<F>(mut f: F, x0: &[f64], lo: &[f64], hi: &[f64], opts: &BfgsOptions) -> Result<BfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x: Vec<f64> = x0.iter().zip(lo.iter().zip(hi)).map(|(&v, (&l, &h))| v.clamp(l, h)).collect();
    let (mut fx, mut g) = f(&x)?;
    let mut trace = vec![fx];
    let mut h_inv = identity(n);
    let mut fresh = true;
    let mut iterations = 0;
    let mut converged = false;
    let mut free_prev: Vec<bool> = vec![true; n];

    while iterations < opts.max_iter {
        let pg = projected_grad(&x, &g, lo, hi);
        if sup_norm(&pg) < opts.grad_tol {
            converged = true;
            break;
        }
        let free: Vec<bool> = pg.iter().map(|&v| v != 0.0).collect();
        if free != free_prev {
            h_inv = identity(n);
            fresh = true;
            free_prev = free.clone();
        }
        let mut d = vec![0.0; n];
        for i in (0..n).filter(|&i| free[i]) {
            d[i] = -(0..n).filter(|&j| free[j]).map(|j| h_inv[i][j] * g[j]).sum::<f64>();
        }
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if slope >= 0.0 || !slope.is_finite() {
            h_inv = identity(n);
            fresh = true;
            d = pg.iter().map(|v| -v).collect();
            slope = -pg.iter().map(|v| v * v).sum::<f64>();
        }
        if fresh {
            let m = sup_norm(&d);
            if m > opts.max_step {
                let s = opts.max_step / m;
                d.iter_mut().for_each(|v| *v *= s);
                slope *= s;
            }
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let xn: Vec<f64> = (0..n).map(|i| (x[i] + alpha * d[i]).clamp(lo[i], hi[i])).collect();
            if xn == x {
                break;
            }
            let step_slope: f64 = (0..n).map(|i| (xn[i] - x[i]) * g[i]).sum();
            if let Ok((fn_, gn)) = f(&xn) {
                if fn_.is_finite() && fn_ < fx && fn_ <= fx + 1e-4 * step_slope.min(alpha * slope).min(0.0) {
                    accepted = Some((xn, fn_, gn));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            if !fresh {
                h_inv = identity(n);
                fresh = true;
                continue;
            }
            let scale = fx.abs().max(1.0);
            let pgn = sup_norm(&pg);
            let flat = trace.len() >= 4 && (trace[trace.len() - 4] - fx).abs() <= opts.flat_f_tol * scale;
            converged = pgn < opts.stall_tol * scale || (flat && pgn < opts.flat_grad_tol * scale);
            break;
        };
        iterations += 1;
        let s: Vec<f64> = (0..n).map(|i| xn[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| gn[i] - g[i]).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 * sup_norm(&s) * sup_norm(&y) && sy > 0.0 {
            if fresh {
                let yy: f64 = y.iter().map(|v| v * v).sum();
                let scale = sy / yy;
                h_inv = identity(n).into_iter().map(|r| r.into_iter().map(|v| v * scale).collect()).collect();
                fresh = false;
            }
            bfgs_update(&mut h_inv, &s, &y, sy);
        }
        x = xn;
        fx = fn_;
        g = gn;
        trace.push(fx);
    }
    let pg = projected_grad(&x, &g, lo, hi);
    if !converged && sup_norm(&pg) < opts.grad_tol {
        converged = true;
    }
    Ok(BfgsResult { projected_grad_norm: sup_norm(&pg), x, f: fx, grad: g, iterations, converged, trace })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

/// `H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ`
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i][j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock_minimum() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            Ok((v, g))
        };
        let opts = BfgsOptions { max_iter: 500, ..Default::default() };
        let r = minimize_bfgs(f, &[-1.2, 1.0], &[-10.0; 2], &[10.0; 2], &opts).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5);
        assert!(r.trace.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn active_bound() {
        let f = |x: &[f64]| Ok(((x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2), vec![2.0 * (x[0] - 3.0), 2.0 * (x[1] + 1.0)]));
        let r = minimize_bfgs(f, &[0.0, 0.0], &[-1.0, -1.0], &[1.0, 1.0], &BfgsOptions::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.x[0], 1.0);
        assert!((r.x[1] + 1.0).abs() < 1e-8);
    }
}
