mod common;

use std::collections::BTreeSet;
use std::path::Path;

use panelamm::amm::inference::{default_grid, effect_at};
use panelamm::amm::{build_design, fit_amm, DesignOptions, EffectsMode, FitSettings, ModelSpec};
use panelamm::panel::report::{emit_report, file_stem, sha256_hex, ModelRow, NamedCurve, ReportWriter, RunManifest, MANIFEST};
use panelamm::selection::{CaicBackend, CaicReport};
use proptest::prelude::*;

fn row(label: &str, caic: f64) -> ModelRow {
    let rep = CaicReport {
        label: label.into(),
        n_obs: 100,
        cond_loglik: -caic / 2.0,
        trace_term: 0.0,
        r: 1,
        caic,
        backend: CaicBackend::PluginHat,
        converged: caic.is_finite(),
        note: None,
    };
    ModelRow::from_report(&rep, "g", "first", "full", "random")
}

fn files_under(dir: &Path) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/"));
            }
        }
    }
    out
}

fn read_manifest(dir: &Path) -> RunManifest {
    serde_json::from_slice(&std::fs::read(dir.join(MANIFEST)).unwrap()).unwrap()
}

/// Every file but the manifest is listed exactly once, with its hash.
fn assert_manifest_covers(dir: &Path) {
    let m = read_manifest(dir);
    let listed: Vec<&str> = m.outputs.iter().map(|o| o.path.as_str()).collect();
    let unique: BTreeSet<String> = listed.iter().map(|s| s.to_string()).collect();
    assert_eq!(unique.len(), listed.len());
    let mut on_disk = files_under(dir);
    assert!(on_disk.remove(MANIFEST));
    assert_eq!(on_disk, unique);
    for o in &m.outputs {
        let bytes = std::fs::read(dir.join(&o.path)).unwrap();
        assert_eq!(sha256_hex(&bytes), o.sha256);
        assert_eq!(bytes.len() as u64, o.bytes);
    }
}

#[test]
fn table_is_sorted_by_caic_with_failures_last() {
    let caics = [12.5, f64::INFINITY, -3.0, 40.0, 12.5, 7.25];
    let rows: Vec<ModelRow> = caics.iter().enumerate().map(|(i, &c)| row(&format!("m{i}"), c)).collect();
    let dir = tempfile::tempdir().unwrap();
    emit_report::<f64>(dir.path(), RunManifest::new("test"), &rows, &[]).unwrap();
    let mut rdr = csv::Reader::from_path(dir.path().join("table.csv")).unwrap();
    let labels: Vec<String> = rdr.records().map(|r| r.unwrap()[0].to_string()).collect();
    assert_eq!(labels, ["m2", "m5", "m0", "m4", "m3", "m1"]);
    assert_manifest_covers(dir.path());
}

#[test]
fn two_smooths_give_two_curve_files() {
    let mut r = common::rng(3);
    let n = 8 * 10;
    let x = common::uniforms(&mut r, n, -2.0, 2.0);
    let z = common::uniforms(&mut r, n, 0.0, 1.0);
    let e = common::normals(&mut r, n, 0.2);
    let y: Vec<f64> = (0..n).map(|i| x[i].sin() + (3.0 * z[i]).cos() + e[i]).collect();
    let p = common::panel(8, 10, y, vec![("x", x), ("z", z)]);
    let spec = ModelSpec::new("two").smooth("x", 8).smooth("z", 8).effects(EffectsMode::None);
    let d = build_design(&p, &spec, &DesignOptions::default()).unwrap();
    let fit = fit_amm(d, &FitSettings::default()).unwrap();
    let curves: Vec<NamedCurve<f64>> = ["s(x)", "s(z)"]
        .iter()
        .zip(["x", "z"])
        .map(|(t, c)| NamedCurve {
            coords: vec![c.to_string()],
            curve: effect_at(&fit, t, &default_grid(&fit, t, 30).unwrap()).unwrap(),
        })
        .collect();
    let rows = vec![row("two", 1.0)];
    let dir = tempfile::tempdir().unwrap();
    let m = emit_report(dir.path(), RunManifest::new("test"), &rows, &curves).unwrap();
    assert_eq!(m.outputs.len(), 3);
    let curve_files: Vec<&str> =
        m.outputs.iter().filter(|o| o.kind == "curve").map(|o| o.path.as_str()).collect();
    assert_eq!(curve_files, ["curves/s_x.csv", "curves/s_z.csv"]);
    let text = std::fs::read_to_string(dir.path().join("curves/s_x.csv")).unwrap();
    assert!(text.starts_with("x,effect,se,lower,upper\n"));
    assert_eq!(text.lines().count(), 31);
    assert_manifest_covers(dir.path());

    // A second run over the same results is byte-identical.
    let again = tempfile::tempdir().unwrap();
    emit_report(again.path(), RunManifest::new("test"), &rows, &curves).unwrap();
    for f in files_under(dir.path()) {
        assert_eq!(std::fs::read(dir.path().join(&f)).unwrap(), std::fs::read(again.path().join(&f)).unwrap());
    }
}

#[test]
fn empty_results_give_an_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m = emit_report::<f64>(dir.path(), RunManifest::new("test"), &[], &[]).unwrap();
    assert!(m.outputs.is_empty());
    assert!(!dir.path().join("table.csv").exists());
    assert_eq!(files_under(dir.path()), BTreeSet::from([MANIFEST.to_string()]));
}

#[test]
fn writer_rejects_duplicates_and_the_manifest_name() {
    let dir = tempfile::tempdir().unwrap();
    let mut w = ReportWriter::new(dir.path(), RunManifest::new("test")).unwrap();
    w.write_bytes("a.txt", "text", b"x").unwrap();
    assert!(w.write_bytes("a.txt", "text", b"y").is_err());
    assert!(w.write_bytes(MANIFEST, "text", b"{}").is_err());
}

#[test]
fn stems_are_file_system_safe() {
    assert_eq!(file_stem("s(gdp)[pre]"), "s_gdp_pre");
    assert_eq!(file_stem("te(a, b)"), "te_a_b");
    assert_eq!(file_stem("s(x-1)"), "s_x-1");
}

proptest! {
    #[test]
    fn reports_survive_json_round_trip(
        caic in prop::sample::select(vec![f64::INFINITY, f64::NEG_INFINITY, f64::NAN, 0.0, -1544.34, 1e-300]),
        ll in -1e6f64..1e6,
    ) {
        let mut rep = CaicReport::failed("m", 10, "reason");
        rep.caic = caic;
        rep.cond_loglik = ll;
        let text = serde_json::to_string(&rep).unwrap();
        let back: CaicReport = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back.cond_loglik.to_bits(), ll.to_bits());
        prop_assert!(back.caic.to_bits() == caic.to_bits() || (caic.is_nan() && back.caic.is_nan()));
        prop_assert!(back.trace_term.is_nan());
    }
}
