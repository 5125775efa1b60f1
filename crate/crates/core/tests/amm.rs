mod common;

use common::{normals, ols, panel, rng, uniforms};
use panelamm::amm::inference::hat_matrix;
use panelamm::amm::{
    build_design, effect_at, effective_dof, fit_amm, predict, smooth_effect_curve, term_significance, DesignOptions,
    EffectsMode, FitSettings, Method, ModelSpec,
};
use panelamm::amm::fit::{objective_and_gradient, objective_and_gradient_weighted};
use panelamm::Error;

fn linear_panel(seed: u64, n_units: usize, n_years: usize) -> panelamm::Panel {
    let mut r = rng(seed);
    let n = n_units * n_years;
    let x1 = normals(&mut r, n, 1.0);
    let x2 = uniforms(&mut r, n, -2.0, 2.0);
    let e = normals(&mut r, n, 0.5);
    let y: Vec<f64> = (0..n).map(|i| 1.0 + 2.0 * x1[i] - 0.7 * x2[i] + e[i]).collect();
    panel(n_units, n_years, y, vec![("x1", x1), ("x2", x2)])
}

#[test]
fn pooled_linear_model_is_ols() {
    let p = linear_panel(1, 8, 12);
    let spec = ModelSpec::new("lin").linear("x1").linear("x2").effects(EffectsMode::None);
    let d = build_design(&p, &spec, &DesignOptions::default()).unwrap();
    let fit = fit_amm(d, &FitSettings::default()).unwrap();
    let rows: Vec<Vec<f64>> =
        (0..p.n_rows()).map(|i| vec![1.0, p.numeric("x1").unwrap()[i], p.numeric("x2").unwrap()[i]]).collect();
    let b = ols(&rows, p.response());
    for (a, e) in fit.coef.iter().zip(&b) {
        assert!((a - e).abs() < 1e-10, "{a} vs {e}");
    }
    assert!((fit.edf_total() - 3.0).abs() < 1e-10);
    assert!(fit.converged);
}

#[test]
fn fixed_effects_with_one_unit_is_ols() {
    let p = linear_panel(2, 1, 30);
    let spec = ModelSpec::new("fe").linear("x1").effects(EffectsMode::Fixed);
    let d = build_design(&p, &spec, &DesignOptions::default()).unwrap();
    assert!(d.terms.iter().all(|t| t.name != "(Intercept)"));
    let fit = fit_amm(d, &FitSettings::default()).unwrap();
    let rows: Vec<Vec<f64>> =
        (0..p.n_rows()).map(|i| vec![p.numeric("x1").unwrap()[i], 1.0, (p.time()[i] - 2000) as f64]).collect();
    let b = ols(&rows, p.response());
    assert!((fit.coef[0] - b[0]).abs() < 1e-10);
    assert!((fit.coef[1] - b[1]).abs() < 1e-10);
    assert!((fit.coef[2] - b[2]).abs() < 1e-10);
}

#[test]
fn fixed_mode_rejects_single_observation_units() {
    let p = linear_panel(3, 5, 1);
    let spec = ModelSpec::new("fe").linear("x1").effects(EffectsMode::Fixed);
    assert!(matches!(build_design(&p, &spec, &DesignOptions::default()), Err(Error::Rank(_))));
}

fn smooth_panel(seed: u64, n_units: usize, n_years: usize, sd_b: f64, sd_e: f64) -> panelamm::Panel {
    let mut r = rng(seed);
    let n = n_units * n_years;
    let x = uniforms(&mut r, n, -3.0, 3.0);
    let z = uniforms(&mut r, n, 0.0, 1.0);
    let w = uniforms(&mut r, n, 0.0, 1.0);
    let b0 = normals(&mut r, n_units, sd_b);
    let b1 = normals(&mut r, n_units, sd_b * 0.1);
    let e = normals(&mut r, n, sd_e);
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let u = i / n_years;
            let t = (i % n_years) as f64;
            x[i].sin() + z[i] * w[i] + b0[u] + b1[u] * t + e[i]
        })
        .collect();
    panel(n_units, n_years, y, vec![("x", x), ("z", z), ("w", w)])
}

fn fd_check(d: &panelamm::Design, method: Method, rho: &[f64], weights: Option<Vec<f64>>) {
    let f = |r: &[f64]| match &weights {
        Some(w) => objective_and_gradient_weighted(d, method, w.clone(), r).unwrap(),
        None => objective_and_gradient(d, method, r).unwrap(),
    };
    let (_, g) = f(rho);
    for k in 0..rho.len() {
        let h = 1e-5;
        let mut a = rho.to_vec();
        let mut b = rho.to_vec();
        a[k] += h;
        b[k] -= h;
        let fd = (f(&a).0 - f(&b).0) / (2.0 * h);
        assert!((fd - g[k]).abs() < 1e-5 * (1.0 + g[k].abs()), "param {k}: analytic {} vs fd {fd}", g[k]);
    }
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let p = smooth_panel(4, 6, 10, 1.0, 0.3);
    let spec = ModelSpec::new("m").smooth("x", 8).tensor("z", "w", 4, 4).effects(EffectsMode::Random);
    let d = build_design(&p, &spec, &DesignOptions::default()).unwrap();
    let rho = [0.3, -0.5, 1.0, -0.2, 0.4, 0.1];
    fd_check(&d, Method::Reml, &rho, None);
    fd_check(&d, Method::Ml, &rho, None);
    let w: Vec<f64> = (0..d.n_obs()).map(|i| 1.0 + (d.unit_index[i] as f64) * 0.5).collect();
    fd_check(&d, Method::Reml, &rho, Some(w.clone()));
    fd_check(&d, Method::Ml, &rho, Some(w));
}

#[test]
fn random_effects_fit_recovers_structure() {
    let p = smooth_panel(5, 30, 15, 1.0, 0.3);
    let spec = ModelSpec::new("m").smooth("x", 10).tensor("z", "w", 5, 5).effects(EffectsMode::Random);
    let d = build_design(&p, &spec, &DesignOptions::default()).unwrap();
    let fit = fit_amm(d, &FitSettings::default()).unwrap();
    assert!(fit.converged, "{:?}", fit.warnings);
    assert!(fit.objective_trace.windows(2).all(|w| w[1] <= w[0]));
    // Smooth effect close to the centered sine.
    let x = p.numeric("x").unwrap();
    let mean_sin = x.iter().map(|v| v.sin()).sum::<f64>() / x.len() as f64;
    let grid: Vec<f64> = (0..41).map(|i| -2.8 + 5.6 * i as f64 / 40.0).collect();
    let c = smooth_effect_curve(&fit, "s(x)", &grid).unwrap();
    let rmse =
        (grid.iter().zip(&c.effect).map(|(g, e)| (g.sin() - mean_sin - e).powi(2)).sum::<f64>() / 41.0).sqrt();
    assert!(rmse < 0.1, "rmse {rmse}");
    let g = fit.g.unwrap();
    assert!(g[0][0] > 0.3 && g[0][0] < 3.0, "var b0 {}", g[0][0]);
    assert!((fit.sigma2 - 0.09).abs() < 0.03, "sigma2 {}", fit.sigma2);

    // Residual orthogonality to unpenalized columns.
    let d = &fit.design;
    for j in d.unpenalized_indices() {
        let s: f64 = (0..d.n_obs()).map(|r| d.x[(r, j)] * fit.residuals[r]).sum();
        assert!(s.abs() < 1e-6, "column {j}: {s}");
    }
    // EDFs against the dense hat matrix.
    let h = hat_matrix(&fit);
    let edf: f64 = effective_dof(&fit).iter().map(|t| t.edf).sum();
    assert!((h.trace() - edf).abs() < 1e-6);
    assert!((fit.edf_total() - edf).abs() < 1e-6);
    // Sum-to-zero over observed values.
    let pts: Vec<Vec<f64>> = x.iter().map(|&v| vec![v]).collect();
    let e = effect_at(&fit, "s(x)", &pts).unwrap();
    assert!(e.effect.iter().sum::<f64>().abs() < 1e-8 * x.len() as f64);
    // In-sample prediction.
    let pr = predict(&fit, &p, true).unwrap();
    for (a, b) in pr.iter().zip(&fit.fitted) {
        assert!((a - b).abs() < 1e-9);
    }
    // Smooth term is significant.
    let t = term_significance(&fit, "s(x)").unwrap();
    assert!(t.p_value < 1e-6);
    assert_eq!(t.code, "***");
}

#[test]
fn heteroscedastic_weights_track_unit_variances() {
    let n_units = 6;
    let n_years = 40;
    let mut r = rng(6);
    let n = n_units * n_years;
    let x = uniforms(&mut r, n, -2.0, 2.0);
    let b = normals(&mut r, n_units, 1.0);
    let e = normals(&mut r, n, 1.0);
    let y: Vec<f64> = (0..n).map(|i| x[i] + b[i / n_years] + (1.0 + (i / n_years) as f64) * 0.3 * e[i]).collect();
    let p = panel(n_units, n_years, y, vec![("x", x)]);
    let spec = ModelSpec::new("h").linear("x").effects(EffectsMode::Random).heteroscedastic(true);
    let d = build_design(&p, &spec, &DesignOptions::default()).unwrap();
    let fit = fit_amm(d, &FitSettings::default()).unwrap();
    assert!(fit.converged, "{:?}", fit.warnings);
    assert!(fit.weights.windows(2).all(|w| w[1] < w[0]), "{:?}", fit.weights);
    // Fixed point: σ_i² = RSS_i / (n_i - Σ h).
    let d = &fit.design;
    for u in 0..n_units {
        let rows: Vec<usize> = (0..d.n_obs()).filter(|&r| d.unit_index[r] == u).collect();
        let rss: f64 = rows.iter().map(|&r| fit.residuals[r].powi(2)).sum();
        let df: f64 = rows.len() as f64 - rows.iter().map(|&r| fit.hat[r]).sum::<f64>();
        let rel = (rss / df - fit.unit_sigma2[u]).abs() / fit.unit_sigma2[u];
        assert!(rel < 1e-4, "unit {u}: {rel}");
    }
}

#[test]
fn fixed_effects_invariant_to_response_shift() {
    let p = smooth_panel(7, 5, 12, 1.0, 0.3);
    let spec = ModelSpec::new("fe").smooth("x", 8).effects(EffectsMode::Fixed);
    let d = build_design(&p, &spec, &DesignOptions::default()).unwrap();
    let a = fit_amm(d, &FitSettings::default()).unwrap();
    let shifted: Vec<f64> = p.response().iter().map(|v| v + 3.5).collect();
    let p2 = panel(5, 12, shifted, vec![("x", p.numeric("x").unwrap().to_vec())]);
    let d2 = build_design(&p2, &spec, &DesignOptions::default()).unwrap();
    let b = fit_amm(d2, &FitSettings::default()).unwrap();
    for (u, v) in a.fitted.iter().zip(&b.fitted) {
        assert!((u + 3.5 - v).abs() < 1e-6);
    }
}

#[test]
fn mundlak_design_counts_means() {
    let p = smooth_panel(8, 6, 8, 1.0, 0.3);
    let spec = ModelSpec::new("m").linear("x").smooth("z", 6).linear_pair("x", "w").effects(EffectsMode::Mundlak);
    let d = build_design(&p, &spec, &DesignOptions::default()).unwrap();
    // x, w, z and the product x:w.
    assert_eq!(d.n_unit_mean_cols(), 4);
}
