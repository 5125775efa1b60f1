mod common;

use common::{normals, ols, panel, rng, uniforms};
use panelamm::amm::{build_design, fit_amm, DesignOptions, EffectsMode, FitSettings, ModelSpec, Period};
use panelamm::selection::{
    argmin_caic, conditional_aic, fit_varying_coefficients, mundlak_lrt, run_first_stage, run_second_stage,
    CaicBackend, CaicReport, GroupSpec, MundlakOptions, SelectionOptions, Subsample,
};
use panelamm::Panel;

fn smooth_panel(seed: u64, n_units: usize, n_years: usize) -> Panel {
    let mut r = rng(seed);
    let n = n_units * n_years;
    let x = uniforms(&mut r, n, -2.0, 2.0);
    let z = normals(&mut r, n, 1.0);
    let b = normals(&mut r, n_units, 0.7);
    let e = normals(&mut r, n, 0.3);
    let y: Vec<f64> = (0..n).map(|i| x[i].sin() + 0.5 * z[i] + b[i / n_years] + e[i]).collect();
    panel(n_units, n_years, y, vec![("x", x), ("z", z)])
}

#[test]
fn plugin_trace_matches_finite_differences_at_fixed_variance() {
    for seed in 0..3 {
        let p = smooth_panel(seed, 8, 6);
        let spec = ModelSpec::new("m").smooth("x", 6).linear("z").effects(EffectsMode::Random);
        let d = build_design(&p, &spec, &DesignOptions::default()).unwrap();
        let fit = fit_amm(d.clone(), &FitSettings::default()).unwrap();
        let plug = conditional_aic(&fit, CaicBackend::PluginHat).unwrap();
        let frozen = fit_amm(d, &FitSettings::default().with_fixed(fit.variance.clone())).unwrap();
        let fd = conditional_aic(&frozen, CaicBackend::FiniteDifference).unwrap();
        let rel = (plug.trace_term - fd.trace_term).abs() / plug.trace_term;
        assert!(rel < 1e-3, "seed {seed}: plugin {} fd {}", plug.trace_term, fd.trace_term);
        assert!((plug.caic - fd.caic).abs() < 1e-2 * plug.caic.abs().max(1.0));
    }
}

#[test]
fn linear_pooled_model_reduces_to_classical_aic() {
    let mut r = rng(11);
    let n = 60;
    let x1 = normals(&mut r, n, 1.0);
    let x2 = uniforms(&mut r, n, 0.0, 3.0);
    let y: Vec<f64> = (0..n).map(|i| 0.3 + x1[i] - 0.5 * x2[i] + 0.2 * normals(&mut r, 1, 1.0)[0]).collect();
    let p = panel(10, 6, y.clone(), vec![("x1", x1.clone()), ("x2", x2.clone())]);
    let spec = ModelSpec::new("ols").linear("x1").linear("x2").effects(EffectsMode::None);
    let fit = fit_amm(build_design(&p, &spec, &DesignOptions::default()).unwrap(), &FitSettings::default()).unwrap();
    let rep = conditional_aic(&fit, CaicBackend::PluginHat).unwrap();
    assert!((rep.trace_term - 3.0).abs() < 1e-10);
    assert_eq!(rep.r, 1);
    let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![1.0, x1[i], x2[i]]).collect();
    let beta = ols(&rows, &y);
    for (a, b) in fit.coef.iter().zip(&beta) {
        assert!((a - b).abs() < 1e-10);
    }
    let rss: f64 = fit.residuals.iter().map(|e| e * e).sum();
    // The error variance enters at its restricted-likelihood estimate.
    let s2 = rss / (n - 3) as f64;
    assert!((fit.sigma2 - s2).abs() < 1e-10);
    let ll = -0.5 * n as f64 * (2.0 * std::f64::consts::PI * s2).ln() - 0.5 * rss / s2;
    assert!((rep.cond_loglik - ll).abs() < 1e-8);
    assert!((rep.caic - (-2.0 * ll + 2.0 * 4.0)).abs() < 1e-8);
}

#[test]
fn failed_models_never_win_and_ties_go_first() {
    assert_eq!(argmin_caic(&[f64::INFINITY, 3.0, 3.0 + 1e-12, 2.0 + 1e-10, 2.0]), Some(3));
    assert_eq!(argmin_caic(&[f64::INFINITY, f64::NAN]), None);
    assert_eq!(argmin_caic(&[]), None);
    let f = CaicReport::failed("bad", 10, "boom");
    assert!(f.is_failed() && f.caic > 1e300);
}

#[test]
fn identical_groups_pick_identical_winners() {
    let p = smooth_panel(3, 10, 6);
    let specs = vec![
        ModelSpec::new("null").effects(EffectsMode::Random),
        ModelSpec::new("lin").linear("x").linear("z").effects(EffectsMode::Random),
        ModelSpec::new("smooth").smooth("x", 6).linear("z").effects(EffectsMode::Random),
    ];
    let groups = vec![
        GroupSpec { label: "a".into(), specs: specs.clone(), subsample: None },
        GroupSpec { label: "b".into(), specs, subsample: None },
    ];
    let out = run_first_stage(&groups, &p, &SelectionOptions::default()).unwrap();
    assert_eq!(out.first_stage[0].spec.as_deref(), Some("smooth"));
    assert_eq!(out.first_stage[0].spec, out.first_stage[1].spec);
    assert_eq!(out.first_stage[0].caic, out.first_stage[1].caic);
    // Identical labels in the pool: the first entry keeps the title.
    let out = run_second_stage(out, &groups, None, &p, &SelectionOptions::default()).unwrap();
    assert_eq!(out.pool.len(), 2);
    assert_eq!(out.overall_winner.as_deref(), Some("smooth"));
}

#[test]
fn subsample_winner_is_compared_on_its_subsample() {
    let mut p = smooth_panel(5, 12, 6);
    // A covariate observed only for the first six units.
    let w: Vec<f64> = (0..p.n_rows()).map(|i| if p.unit_of(i) < 6 { (i % 7) as f64 } else { f64::NAN }).collect();
    p = p.with_numeric("w", w).unwrap();
    let units: Vec<String> = p.units()[..6].to_vec();
    let groups = vec![
        GroupSpec {
            label: "full".into(),
            specs: vec![ModelSpec::new("sx").smooth("x", 6).linear("z").effects(EffectsMode::Random)],
            subsample: None,
        },
        GroupSpec {
            label: "part".into(),
            specs: vec![ModelSpec::new("w").linear("w").effects(EffectsMode::Random)],
            subsample: Some(Subsample { id: "first6".into(), units: Some(units), years: None }),
        },
    ];
    let opts = SelectionOptions::default();
    let out = run_first_stage(&groups, &p, &opts).unwrap();
    let out = run_second_stage(out, &groups, None, &p, &opts).unwrap();
    assert_eq!(out.pool, vec!["sx".to_string()]);
    assert_eq!(out.deferred, vec![("w".to_string(), "first6".to_string())]);
    let cmp = out.comparisons.iter().find(|c| c.sample == "first6").unwrap();
    assert_eq!(cmp.n_obs, 36);
    assert_eq!(out.overall_winner.as_deref(), Some("sx"));
}

#[test]
fn mundlak_detects_correlated_unit_effects() {
    let (n_units, n_years) = (40, 8);
    let mut r = rng(21);
    let a = normals(&mut r, n_units, 1.0);
    let x: Vec<f64> = (0..n_units * n_years).map(|i| a[i / n_years] + normals(&mut r, 1, 1.0)[0]).collect();
    let e = normals(&mut r, x.len(), 0.5);
    let y: Vec<f64> = (0..x.len()).map(|i| 1.0 + 0.5 * x[i] + a[i / n_years] + e[i]).collect();
    let p = panel(n_units, n_years, y, vec![("x", x)]);
    let m = mundlak_lrt(&p, &ModelSpec::new("m").linear("x"), &MundlakOptions::default()).unwrap();
    assert_eq!(m.df, 1);
    assert!(m.p_value < 1e-4, "{m:?}");
    assert_eq!(m.decision, EffectsMode::Fixed);
}

#[test]
fn mundlak_keeps_random_effects_without_correlation() {
    let (n_units, n_years) = (40, 8);
    let mut r = rng(22);
    let x = normals(&mut r, n_units * n_years, 1.0);
    let b = normals(&mut r, n_units, 1.0);
    let e = normals(&mut r, x.len(), 0.5);
    let y: Vec<f64> = (0..x.len()).map(|i| 1.0 + 0.5 * x[i] + b[i / n_years] + e[i]).collect();
    let p = panel(n_units, n_years, y, vec![("x", x)]);
    let m = mundlak_lrt(&p, &ModelSpec::new("m").linear("x"), &MundlakOptions::default()).unwrap();
    assert!(m.t_lrt >= 0.0);
    assert!(m.p_value > 0.05, "{m:?}");
    assert_eq!(m.decision, EffectsMode::Random);
}

#[test]
fn duplicated_periods_give_equal_estimates() {
    let (n_units, half) = (10, 5);
    let mut r = rng(31);
    let x0 = normals(&mut r, n_units * half, 1.0);
    let y0: Vec<f64> = x0.iter().map(|&x| 0.8 * x + 0.3 * normals(&mut r, 1, 1.0)[0]).collect();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for u in 0..n_units {
        for _ in 0..2 {
            x.extend_from_slice(&x0[u * half..(u + 1) * half]);
            y.extend_from_slice(&y0[u * half..(u + 1) * half]);
        }
    }
    let p = panel(n_units, 2 * half, y, vec![("x", x)]);
    let spec = ModelSpec::new("v").linear("x").effects(EffectsMode::None);
    let v = fit_varying_coefficients(&spec, &p, 2004, &SelectionOptions::default()).unwrap();
    assert_eq!(v.pre_years.len(), 5);
    assert_eq!(v.post_years.len(), 5);
    let pre = &v.term("x", Period::Pre).unwrap().coefficients[0];
    let post = &v.term("x", Period::Post).unwrap().coefficients[0];
    assert!((pre.1 - post.1).abs() < 1e-6 && (pre.2 - post.2).abs() < 1e-6);
}

#[test]
fn varying_coefficients_recover_a_slope_break() {
    let (n_units, n_years) = (30, 10);
    let mut r = rng(41);
    let n = n_units * n_years;
    let x = normals(&mut r, n, 1.0);
    let b = normals(&mut r, n_units, 0.5);
    let e = normals(&mut r, n, 0.5);
    let y: Vec<f64> =
        (0..n).map(|i| 1.0 + if i % n_years <= 4 { 0.5 } else { 1.5 } * x[i] + b[i / n_years] + e[i]).collect();
    let p = panel(n_units, n_years, y, vec![("x", x)]);
    let spec = ModelSpec::new("v").linear("x").effects(EffectsMode::Random);
    let v = fit_varying_coefficients(&spec, &p, 2004, &SelectionOptions::default()).unwrap();
    let (_, pre, pre_se) = v.term("x", Period::Pre).unwrap().coefficients[0].clone();
    let (_, post, post_se) = v.term("x", Period::Post).unwrap().coefficients[0].clone();
    assert!((pre - 0.5).abs() < 3.0 * pre_se, "{pre} ± {pre_se}");
    assert!((post - 1.5).abs() < 3.0 * post_se, "{post} ± {post_se}");
    assert!(fit_varying_coefficients(&spec, &p, 2009, &SelectionOptions::default()).is_err());
}
