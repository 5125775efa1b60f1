mod common;

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use panelamm::panel::{
    derive_series, hp_filter, load_panel, log_shift, write_panel_csv, Column, PanelDataset, PanelSchema,
    TransformKind, TransformRecipe,
};
use panelamm::Error;
use proptest::prelude::*;

fn schema(numeric: &[&str]) -> PanelSchema {
    let mut cols = vec![
        r#"{"column":"country","role":"unit"}"#.to_string(),
        r#"{"column":"year","role":"time"}"#.to_string(),
        r#"{"column":"y","role":"response"}"#.to_string(),
    ];
    cols.extend(numeric.iter().map(|c| format!(r#"{{"column":"{c}","role":"numeric"}}"#)));
    PanelSchema::from_json(&format!("[{}]", cols.join(","))).unwrap()
}

#[test]
fn full_size_panel_loads() {
    let names: Vec<String> = (0..37).map(|j| format!("x{j}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut csv = format!("country,year,y,{}\n", names.join(","));
    let mut r = common::rng(1);
    for u in 0..122 {
        for t in 1997..=2015 {
            let vals = common::normals(&mut r, 38, 1.0);
            let cells: Vec<String> = vals.iter().map(|v| format!("{v}")).collect();
            csv.push_str(&format!("c{u:03},{t},{}\n", cells.join(",")));
        }
    }
    let p: PanelDataset<f64> = load_panel(csv.as_bytes(), &schema(&refs)).unwrap();
    assert_eq!(p.n_rows(), 2318);
    assert_eq!(p.n_units(), 122);
    assert_eq!(p.columns().len(), 37);
}

#[test]
fn duplicate_row_names_unit_and_time() {
    let csv = "country,year,y\nA,3,1\nA,3,2\n";
    let e = load_panel::<f64, _>(csv.as_bytes(), &schema(&[])).unwrap_err();
    let Error::Structural(msg) = e else { panic!("expected a structural error, got {e:?}") };
    assert!(msg.contains("\"A\"") && msg.contains('3'), "{msg}");
}

#[test]
fn hp_trend_matches_dense_solve() {
    let y = [1.0f64, 2.0, 4.0, 8.0, 16.0];
    let lambda = 6.25;
    let hp = hp_filter(&y, lambda).unwrap();
    let n = y.len();
    let d = DMatrix::from_fn(n - 2, n, |i, j| match j as i64 - i as i64 {
        0 | 2 => 1.0,
        1 => -2.0,
        _ => 0.0,
    });
    let a = DMatrix::identity(n, n) + d.transpose() * &d * lambda;
    let tau = a.lu().solve(&DVector::from_column_slice(&y)).unwrap();
    for i in 0..n {
        assert!((hp.trend[i] - tau[i]).abs() < 1e-12);
        assert!((hp.gap[i] - (y[i] - tau[i])).abs() < 1e-12);
    }
}

#[test]
fn derived_columns_trim_leading_years() {
    let y: Vec<f64> = (0..12).map(|i| i as f64).collect();
    let x: Vec<f64> = (0..12).map(|i| 100.0 + i as f64).collect();
    let p = common::panel(3, 4, y, vec![("x", x)]);
    let mut recipe = TransformRecipe::new(TransformKind::RollingGeometricMean, "x", "gx");
    recipe.window = 3;
    let (out, report) = derive_series(&recipe, &p).unwrap();
    assert_eq!(out.n_rows(), 6);
    assert_eq!(report.dropped_times, vec![2000, 2001]);
    let taken = derive_series(&recipe, &out).unwrap_err();
    assert!(matches!(taken, Error::Config(_)));
}

fn unit_panel(labels: &[String], series: &[Vec<f64>]) -> PanelDataset<f64> {
    let mut units = Vec::new();
    let mut time = Vec::new();
    let mut y = Vec::new();
    let mut x = Vec::new();
    for (l, s) in labels.iter().zip(series) {
        for (t, v) in s.iter().enumerate() {
            units.push(l.clone());
            time.push(2000 + t as i64);
            y.push(0.0);
            x.push(*v);
        }
    }
    let mut cols = IndexMap::new();
    cols.insert("x".to_string(), Column::numeric(x));
    PanelDataset::from_rows(units, time, y, cols).unwrap()
}

fn derived_by_unit(p: &PanelDataset<f64>, col: &str) -> IndexMap<String, Vec<f64>> {
    let v = p.numeric(col).unwrap();
    let mut out: IndexMap<String, Vec<f64>> = IndexMap::new();
    for r in 0..p.n_rows() {
        out.entry(p.units()[p.unit_of(r)].clone()).or_default().push(v[r]);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn csv_round_trip_is_bit_exact(
        vals in prop::collection::vec((any::<f64>().prop_filter("finite", |v| v.is_finite()), prop::option::of(-1e300f64..1e300)), 1..40)
    ) {
        let mut csv = String::from("country,year,y,x\n");
        for (i, (y, x)) in vals.iter().enumerate() {
            let xs = x.map_or(String::new(), |v| format!("{v:?}"));
            csv.push_str(&format!("u{i},1,{y:?},{xs}\n"));
        }
        let s = schema(&["x"]);
        let p: PanelDataset<f64> = load_panel(csv.as_bytes(), &s).unwrap();
        let mut out = Vec::new();
        write_panel_csv(&p, &mut out).unwrap();
        let q: PanelDataset<f64> = load_panel(out.as_slice(), &s).unwrap();
        prop_assert_eq!(p.response().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        q.response().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        let (a, b) = (p.numeric("x").unwrap(), q.numeric("x").unwrap());
        for (u, v) in a.iter().zip(b) {
            prop_assert!(u.to_bits() == v.to_bits() || (u.is_nan() && v.is_nan()));
        }
        let mut again = Vec::new();
        write_panel_csv(&q, &mut again).unwrap();
        prop_assert_eq!(out, again);
    }

    #[test]
    fn derivation_is_per_unit(
        series in prop::collection::vec(prop::collection::vec(1.0f64..50.0, 6), 2..6),
        kind in prop::sample::select(vec![
            TransformKind::GrowthRate, TransformKind::RollingGeometricMean, TransformKind::HpGap,
            TransformKind::HpTrend, TransformKind::LogShift,
        ]),
        rot in 1usize..5,
    ) {
        let n = series.len();
        let labels: Vec<String> = (0..n).map(|i| format!("u{i}")).collect();
        // Same series under rotated labels, so the row order differs.
        let rotated: Vec<String> = (0..n).map(|i| format!("u{}", (i + rot) % n)).collect();
        let recipe = TransformRecipe::new(kind, "x", "d");
        let (a, _) = derive_series(&recipe, &unit_panel(&labels, &series)).unwrap();
        let (b, _) = derive_series(&recipe, &unit_panel(&rotated, &series)).unwrap();
        let (da, db) = (derived_by_unit(&a, "d"), derived_by_unit(&b, "d"));
        for i in 0..n {
            let (va, vb) = (&da[&labels[i]], &db[&rotated[i]]);
            prop_assert_eq!(va.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), vb.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn hp_gap_sums_to_zero(y in prop::collection::vec(-100.0f64..100.0, 4..30), log_lambda in -3.0f64..6.0) {
        let hp = hp_filter(&y, 10f64.powf(log_lambda)).unwrap();
        let s: f64 = hp.gap.iter().sum();
        prop_assert!(s.abs() < 1e-8, "sum of gaps {}", s);
    }

    #[test]
    fn hp_trend_approaches_series(y in prop::collection::vec(-100.0f64..100.0, 4..30)) {
        let hp = hp_filter(&y, 1e-9).unwrap();
        for (t, v) in hp.trend.iter().zip(&y) {
            prop_assert!((t - v).abs() < 1e-5);
        }
    }

    #[test]
    fn log_shift_is_strictly_monotone(a in -9.0f64..1e6, rel in 1e-9f64..1.0) {
        // Gaps well above the rounding of ln near its argument.
        let d = rel * (a + 10.86);
        let v = log_shift(&[a, a + d], 10.86).unwrap();
        prop_assert!(v[0] < v[1]);
    }
}
