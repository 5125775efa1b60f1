//! End-to-end runs behind the command-line tool: every run parses its inputs
//! first, then writes its artifacts through one [`ReportWriter`] so that each
//! output lands in exactly one manifest.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::amm::design::DesignAnnotations;
use crate::amm::inference::{default_grid, effect_at, effective_dof, term_significance};
use crate::amm::{build_design, fit_amm, DesignOptions, EffectsMode, FittedAmm, Method, ModelSpec, TermKind};
use crate::boosting::{run_boosting, write_frequency_csv, write_path_csv, BoostConfig, KeptLearner};
use crate::error::{Error, Result};
use crate::panel::transform::DeriveReport;
use crate::panel::report::{fmt_f64, hash_file, file_stem, FileHash, ModelRow, ReportWriter, RunManifest};
use crate::panel::{derive_series, write_panel_csv, PanelDataset, PanelSchema, TransformRecipe};
use crate::scalar::Real;
use crate::spline::DEFAULT_PENALTY_ORDER;
use crate::selection::{
    conditional_aic, fit_varying_coefficients, mundlak_lrt, run_first_stage, run_second_stage, CaicReport,
    GroupSpec, MundlakResult, SelectionOptions, SelectionOutcome, Subsample,
};

/// Break year used when none is given.
pub const DEFAULT_BREAK_YEAR: i64 = 2007;
/// Grid points of a curve; surfaces use this many per axis squared.
pub const CURVE_POINTS: usize = 50;
pub const SURFACE_POINTS: usize = 25;

/// Label of the distilled boosting model.
pub const BOOSTED_LABEL: &str = "boosted";

/// Reads and parses a JSON file, mapping syntax errors to configuration errors.
pub fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<(D, FileHash)> {
    let text = std::fs::read_to_string(path)?;
    let value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok((value, hash_file(path)?))
}

/// Loads a schema and a panel, returning their hashes for the manifest.
pub fn load_inputs<T: Real>(panel: &Path, schema: &Path) -> Result<(PanelDataset<T>, Vec<FileHash>)> {
    let text = std::fs::read_to_string(schema)?;
    let schema_v = PanelSchema::from_json(&text)?;
    let data = crate::panel::load_panel_from_path(panel, &schema_v)?;
    Ok((data, vec![hash_file(panel)?, hash_file(schema)?]))
}

// ---------------------------------------------------------------- fit outputs

#[derive(Debug, Clone, Serialize)]
struct MarginInfo {
    knots: Vec<f64>,
    degree: usize,
    dim: usize,
    penalty_order: usize,
}

#[derive(Debug, Clone, Serialize)]
struct SmoothInfo {
    term: String,
    columns: Vec<String>,
    margins: Vec<MarginInfo>,
    sum_to_zero: bool,
}

/// Contents of `fit_summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub label: String,
    pub effects: EffectsMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mundlak: Option<MundlakResult>,
    pub method: Method,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    pub objective: f64,
    pub n_obs: usize,
    pub n_units: usize,
    pub sigma2: f64,
    pub lambdas: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unit_covariance: Option<[[f64; 2]; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unit_sigma2: Option<Vec<f64>>,
    pub edf_total: f64,
    pub caic: CaicReport,
    smooths: Vec<SmoothInfo>,
    pub annotations: DesignAnnotations,
    pub warnings: Vec<String>,
}

/// A fit together with how its effects mode was chosen.
#[derive(Debug, Clone)]
pub struct FitResult<T> {
    pub effects: EffectsMode,
    pub mundlak: Option<MundlakResult>,
    pub fit: FittedAmm<T>,
    pub caic: CaicReport,
}

/// Runs the Mundlak test when the effects mode is open, then fits and scores.
pub fn fit_spec<T: Real>(
    panel: &PanelDataset<T>,
    spec: &ModelSpec,
    force: Option<EffectsMode>,
    opts: &SelectionOptions,
) -> Result<FitResult<T>> {
    let mut effects = force.unwrap_or(spec.effects);
    let mut mundlak = None;
    if effects == EffectsMode::Auto {
        let m = mundlak_lrt(panel, spec, &opts.mundlak)?;
        effects = m.decision;
        mundlak = Some(m);
    }
    let design = build_design(panel, spec, &DesignOptions { mode: Some(effects), split: None })?;
    let fit = fit_amm(design, &opts.settings)?;
    let caic = conditional_aic(&fit, opts.backend)?;
    Ok(FitResult { effects, mundlak, fit, caic })
}

fn smooth_infos<T: Real>(fit: &FittedAmm<T>) -> Vec<SmoothInfo> {
    fit.design
        .terms
        .iter()
        .filter_map(|t| match &t.kind {
            TermKind::Smooth { cols, basis, .. } => Some(SmoothInfo {
                term: t.name.clone(),
                columns: cols.clone(),
                margins: basis
                    .margins
                    .iter()
                    .map(|m| MarginInfo {
                        knots: m.knots.iter().map(|k| k.as_f64()).collect(),
                        degree: m.degree,
                        dim: m.dim,
                        penalty_order: DEFAULT_PENALTY_ORDER.min(m.dim - 1),
                    })
                    .collect(),
                sum_to_zero: basis.constraint.is_some(),
            }),
            _ => None,
        })
        .collect()
}

/// Names of the coefficients of every term, in column order.
pub fn coefficient_names<T>(fit: &FittedAmm<T>) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for t in &fit.design.terms {
        for k in 0..t.width() {
            let name = match &t.kind {
                TermKind::Categorical { level_names, .. } => format!("{}={}", t.name, level_names[k]),
                TermKind::Smooth { .. } => format!("{}.{}", t.name, k + 1),
                _ => t.name.clone(),
            };
            out.push((t.name.clone(), name));
        }
    }
    out
}

/// Writes the full report of one fit below `prefix` (empty or ending in `/`).
pub fn write_fit<T: Real>(w: &mut ReportWriter, prefix: &str, res: &FitResult<T>) -> Result<()> {
    let fit = &res.fit;
    let d = &fit.design;
    let summary = FitSummary {
        label: fit.label().to_string(),
        effects: res.effects,
        mundlak: res.mundlak.clone(),
        method: fit.settings.method,
        converged: fit.converged,
        iterations: fit.iterations,
        grad_norm: fit.grad_norm,
        objective: fit.objective,
        n_obs: fit.n_obs(),
        n_units: d.n_units(),
        sigma2: fit.sigma2.as_f64(),
        lambdas: fit.lambdas.iter().map(|l| l.iter().map(|v| v.as_f64()).collect()).collect(),
        unit_covariance: fit.g.map(|g| [[g[0][0].as_f64(), g[0][1].as_f64()], [g[1][0].as_f64(), g[1][1].as_f64()]]),
        unit_sigma2: d.heteroscedastic.then(|| fit.unit_sigma2.iter().map(|v| v.as_f64()).collect()),
        edf_total: fit.edf_total().as_f64(),
        caic: res.caic.clone(),
        smooths: smooth_infos(fit),
        annotations: d.annotations.clone(),
        warnings: fit.warnings.clone(),
    };
    w.write_json(&format!("{prefix}fit_summary.json"), "fit", &summary)?;

    let coef_rows: Vec<Vec<String>> = coefficient_names(fit)
        .into_iter()
        .zip(d.terms.iter().flat_map(|t| t.cols.clone()))
        .map(|((term, name), j)| {
            vec![term, name, fmt_f64(fit.coef[j].as_f64()), fmt_f64(fit.vcov[(j, j)].as_f64().max(0.0).sqrt())]
        })
        .collect();
    w.write_csv(&format!("{prefix}coefficients.csv"), "coefficients", &["term", "name", "estimate", "se"], &coef_rows)?;

    let edf_rows: Vec<Vec<String>> = effective_dof(fit)
        .into_iter()
        .map(|e| {
            vec![
                e.term,
                fmt_f64(e.edf),
                e.width.to_string(),
                e.null_dim.to_string(),
                e.period.map_or(String::new(), |p| p.suffix().trim_matches(['[', ']']).to_string()),
            ]
        })
        .collect();
    w.write_csv(&format!("{prefix}edf.csv"), "edf", &["term", "edf", "width", "null_dim", "period"], &edf_rows)?;

    let mut test_rows = Vec::new();
    for t in d.terms.iter().filter(|t| !matches!(t.kind, TermKind::Intercept)) {
        let tt = term_significance(fit, &t.name)?;
        test_rows.push(vec![
            tt.term,
            fmt_f64(tt.statistic),
            tt.df.to_string(),
            fmt_f64(tt.p_value),
            tt.code.to_string(),
            tt.rank_deficient.to_string(),
        ]);
    }
    w.write_csv(
        &format!("{prefix}term_tests.csv"),
        "term_tests",
        &["term", "statistic", "df", "p_value", "code", "rank_deficient"],
        &test_rows,
    )?;

    if d.unit_part.is_some() {
        let rows: Vec<Vec<String>> = fit
            .unit_effects()
            .iter()
            .enumerate()
            .map(|(u, e)| {
                vec![
                    d.units[u].clone(),
                    fmt_f64(e[0].as_f64()),
                    fmt_f64(e[1].as_f64()),
                    fmt_f64(fit.unit_sigma2[u].as_f64()),
                ]
            })
            .collect();
        w.write_csv(&format!("{prefix}unit_effects.csv"), "unit_effects", &["unit", "intercept", "slope", "sigma2"], &rows)?;
    }
    write_curves(w, &format!("{prefix}curves/"), fit)
}

/// One grid per smooth term.
pub fn write_curves<T: Real>(w: &mut ReportWriter, dir: &str, fit: &FittedAmm<T>) -> Result<()> {
    for t in fit.design.terms.iter() {
        let TermKind::Smooth { cols, .. } = &t.kind else { continue };
        let n = if cols.len() == 1 { CURVE_POINTS } else { SURFACE_POINTS };
        let grid = default_grid(fit, &t.name, n)?;
        let curve = effect_at(fit, &t.name, &grid)?;
        w.write_curve(&format!("{dir}{}.csv", file_stem(&t.name)), cols, &curve)?;
    }
    Ok(())
}

/// Result of the `fit` run; a non-converged fit still writes its outputs.
#[derive(Debug, Clone)]
pub struct FitRun {
    pub manifest: RunManifest,
    pub converged: bool,
}

pub fn run_fit<T: Real>(
    panel: &PanelDataset<T>,
    spec: &ModelSpec,
    force: Option<EffectsMode>,
    opts: &SelectionOptions,
    out_dir: &Path,
    mut manifest: RunManifest,
) -> Result<FitRun> {
    let res = fit_spec(panel, spec, force, opts)?;
    manifest.decisions.insert("effects".into(), res.effects.as_str().into());
    if let Some(m) = &res.mundlak {
        manifest.decisions.insert("mundlak_p_value".into(), fmt_f64(m.p_value));
    }
    let mut w = ReportWriter::new(out_dir, manifest)?;
    write_fit(&mut w, "", &res)?;
    let row = ModelRow::from_report(&res.caic, "", "fit", "full", res.effects.as_str());
    w.write_model_table("table.csv", &[row])?;
    let converged = res.fit.converged;
    Ok(FitRun { manifest: w.finish()?, converged })
}

// ----------------------------------------------------------------- tournament

/// A spec given inline or as a path relative to the groups file.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum SpecSource {
    Path(String),
    Inline(ModelSpec),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupEntry {
    label: String,
    specs: Vec<SpecSource>,
    #[serde(default)]
    subsample: Option<Subsample>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupsFile {
    groups: Vec<GroupEntry>,
    #[serde(default)]
    boost: Option<BoostConfig>,
}

/// Parsed tournament configuration.
#[derive(Debug, Clone)]
pub struct TournamentConfig {
    pub groups: Vec<GroupSpec>,
    pub boost: BoostConfig,
    /// Hashes of the groups file and every referenced spec file.
    pub configs: Vec<FileHash>,
}

/// Reads a groups file. Spec entries are inline objects or paths resolved
/// against the directory of the groups file.
pub fn load_tournament_config(path: &Path) -> Result<TournamentConfig> {
    let (file, hash): (GroupsFile, _) = read_json(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut configs = vec![hash];
    let mut groups = Vec::new();
    for g in file.groups {
        if groups.iter().any(|x: &GroupSpec| x.label == g.label) {
            return Err(Error::Config(format!("duplicate group label {:?}", g.label)));
        }
        let mut specs: Vec<ModelSpec> = Vec::new();
        for s in g.specs {
            let spec = match s {
                SpecSource::Inline(spec) => spec,
                SpecSource::Path(p) => {
                    let (spec, h): (ModelSpec, _) = read_json(&base.join(&p))?;
                    configs.push(FileHash { name: p, sha256: h.sha256 });
                    spec
                }
            };
            if specs.iter().any(|x| x.label == spec.label) {
                return Err(Error::Config(format!("group {:?}: duplicate spec label {:?}", g.label, spec.label)));
            }
            specs.push(spec);
        }
        groups.push(GroupSpec { label: g.label, specs, subsample: g.subsample });
    }
    if groups.is_empty() {
        return Err(Error::Config("groups file lists no groups".into()));
    }
    Ok(TournamentConfig { groups, boost: file.boost.unwrap_or_default(), configs })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoostSummary {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_stop: Option<usize>,
    #[serde(default)]
    pub kept: Vec<KeptLearner>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Contents of `outcome.json`; the `report` run re-renders tables from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TournamentRecord {
    pub outcome: SelectionOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boosting: Option<BoostSummary>,
}

#[derive(Debug, Clone, Default)]
pub struct TournamentOptions {
    pub skip_boost: bool,
    /// Overrides the seed of the boost config.
    pub seed: Option<u64>,
    pub selection: SelectionOptions,
}

/// Table rows of every candidate with winner flags.
pub fn candidate_rows(outcome: &SelectionOutcome) -> Vec<ModelRow> {
    outcome
        .candidates
        .iter()
        .map(|c| {
            let mut row = ModelRow::from_candidate(c);
            let mut flags = Vec::new();
            let group_won =
                outcome.first_stage.iter().any(|w| w.group == c.group && w.spec.as_deref() == Some(c.spec.as_str()));
            if c.stage == "first" && group_won {
                flags.push("group");
            }
            if c.stage == "pool" && outcome.pool_winner.as_deref() == Some(c.spec.as_str()) {
                flags.push("pool");
            }
            if c.stage != "first" && outcome.overall_winner.as_deref() == Some(c.spec.as_str()) {
                flags.push("overall");
            }
            row.winner = flags.join(";");
            row
        })
        .collect()
}

/// Selection tables derived from an outcome: `table.csv`, `first_stage.csv`
/// and `comparisons.csv`.
pub fn write_selection_tables(w: &mut ReportWriter, outcome: &SelectionOutcome) -> Result<()> {
    w.write_model_table("table.csv", &candidate_rows(outcome))?;
    let first: Vec<Vec<String>> = outcome
        .first_stage
        .iter()
        .map(|g| {
            vec![
                g.group.clone(),
                g.spec.clone().unwrap_or_default(),
                fmt_f64(g.caic),
                g.subsample.clone().unwrap_or_default(),
            ]
        })
        .collect();
    w.write_csv("first_stage.csv", "first_stage", &["group", "winner", "caic", "subsample"], &first)?;
    let comps: Vec<Vec<String>> = outcome
        .comparisons
        .iter()
        .map(|c| {
            vec![
                c.sample.clone(),
                c.n_obs.to_string(),
                c.champion.clone(),
                fmt_f64(c.champion_caic),
                c.challenger.clone(),
                fmt_f64(c.challenger_caic),
                c.winner.clone(),
            ]
        })
        .collect();
    w.write_csv(
        "comparisons.csv",
        "comparisons",
        &["sample", "n_obs", "champion", "champion_caic", "challenger", "challenger_caic", "winner"],
        &comps,
    )
}

/// Both stages with boosting in between, then a full report of the overall
/// winner under `winner/`.
pub fn run_tournament<T: Real>(
    panel: &PanelDataset<T>,
    config: &TournamentConfig,
    opts: &TournamentOptions,
    out_dir: &Path,
    mut manifest: RunManifest,
) -> Result<(RunManifest, TournamentRecord)> {
    let sel = &opts.selection;
    let first = run_first_stage(&config.groups, panel, sel)?;

    let mut boost_cfg = config.boost.clone();
    if let Some(s) = opts.seed {
        boost_cfg.seed = s;
    }
    let mut annotations = Vec::new();
    let run = if opts.skip_boost {
        None
    } else {
        manifest.seed = Some(boost_cfg.seed);
        match run_boosting(panel, &boost_cfg, BOOSTED_LABEL) {
            Ok(r) => Some(r),
            Err(e) => {
                annotations.push(format!("boosting failed: {e}"));
                None
            }
        }
    };
    let boosted = run.as_ref().map(|r| &r.distilled.spec);
    let mut outcome = run_second_stage(first, &config.groups, boosted, panel, sel)?;
    outcome.annotations.extend(annotations);
    let boosting = (!opts.skip_boost).then(|| match &run {
        Some(r) => BoostSummary {
            m_stop: Some(r.distilled.m_stop),
            kept: r.distilled.kept.clone(),
            spec: Some(r.distilled.spec.clone()),
            error: None,
        },
        None => BoostSummary {
            error: outcome.annotations.iter().find(|a| a.starts_with("boosting failed")).cloned(),
            ..BoostSummary::default()
        },
    });
    let record = TournamentRecord { outcome, boosting };

    // Refit of the overall winner on the sample it won on.
    let winner = record.outcome.overall_winner.as_ref().and_then(|label| {
        if run.as_ref().is_some_and(|r| &r.distilled.spec.label == label) {
            return Some((run.as_ref().unwrap().distilled.spec.clone(), None));
        }
        let group = config.groups.iter().find(|g| {
            record.outcome.first_stage.iter().any(|w| w.group == g.label && w.spec.as_deref() == Some(label.as_str()))
        })?;
        let spec = group.specs.iter().find(|s| &s.label == label)?.clone();
        let deferred = record.outcome.deferred.iter().any(|(l, _)| l == label);
        Some((spec, deferred.then(|| group.subsample.clone()).flatten()))
    });
    let winner_fit = match &winner {
        Some((spec, sub)) => {
            let p = match sub {
                Some(s) => s.apply(panel)?,
                None => panel.clone(),
            };
            Some(fit_spec(&p, spec, sel.force_effects, sel)?)
        }
        None => None,
    };
    if let Some(w) = &record.outcome.overall_winner {
        manifest.decisions.insert("overall_winner".into(), w.clone());
    }

    let mut w = ReportWriter::new(out_dir, manifest)?;
    w.write_json("outcome.json", "outcome", &record)?;
    write_selection_tables(&mut w, &record.outcome)?;
    if let Some(r) = &run {
        let mut buf = Vec::new();
        write_path_csv(&r.path, &mut buf)?;
        w.write_bytes("boosting/path.csv", "boost_path", &buf)?;
        let mut buf = Vec::new();
        write_frequency_csv(&r.path, &r.distilled, &mut buf)?;
        w.write_bytes("boosting/frequencies.csv", "boost_frequencies", &buf)?;
        w.write_json("boosting/distilled_spec.json", "spec", &r.distilled.spec)?;
    }
    if let Some(res) = &winner_fit {
        write_fit(&mut w, "winner/", res)?;
    }
    Ok((w.finish()?, record))
}

/// Re-renders the selection tables of a stored tournament record.
pub fn run_report(record: &TournamentRecord, out_dir: &Path, manifest: RunManifest) -> Result<RunManifest> {
    let mut w = ReportWriter::new(out_dir, manifest)?;
    write_selection_tables(&mut w, &record.outcome)?;
    w.finish()
}

// ------------------------------------------------------------------- boosting

pub fn run_boost<T: Real>(
    panel: &PanelDataset<T>,
    config: &BoostConfig,
    out_dir: &Path,
    mut manifest: RunManifest,
) -> Result<RunManifest> {
    let run = run_boosting(panel, config, BOOSTED_LABEL)?;
    manifest.seed = Some(config.seed);
    manifest.decisions.insert("m_stop".into(), run.distilled.m_stop.to_string());
    let mut w = ReportWriter::new(out_dir, manifest)?;
    let mut buf = Vec::new();
    write_path_csv(&run.path, &mut buf)?;
    w.write_bytes("path.csv", "boost_path", &buf)?;
    let mut buf = Vec::new();
    write_frequency_csv(&run.path, &run.distilled, &mut buf)?;
    w.write_bytes("frequencies.csv", "boost_frequencies", &buf)?;
    let oob: Vec<Vec<String>> = run
        .search
        .mean_risk
        .iter()
        .enumerate()
        .map(|(m, r)| vec![m.to_string(), fmt_f64(*r)])
        .collect();
    w.write_csv("oob_risk.csv", "oob_risk", &["iteration", "mean_oob_risk"], &oob)?;
    w.write_json("distilled_spec.json", "spec", &run.distilled.spec)?;
    w.write_json("distillation.json", "distillation", &run.distilled)?;
    w.finish()
}

// ---------------------------------------------------------------------- break

#[derive(Debug, Clone, Serialize)]
struct VaryingSummary<'a> {
    label: &'a str,
    break_year: i64,
    effects: EffectsMode,
    pre_years: &'a [i64],
    post_years: &'a [i64],
    converged: bool,
    dropped: &'a [String],
    terms: &'a [crate::selection::PeriodTerm],
}

pub fn run_break<T: Real>(
    panel: &PanelDataset<T>,
    spec: &ModelSpec,
    break_year: i64,
    opts: &SelectionOptions,
    out_dir: &Path,
    mut manifest: RunManifest,
) -> Result<(RunManifest, bool)> {
    let v = fit_varying_coefficients(spec, panel, break_year, opts)?;
    manifest.decisions.insert("effects".into(), v.effects.as_str().into());
    manifest.decisions.insert("break_year".into(), break_year.to_string());
    let mut w = ReportWriter::new(out_dir, manifest)?;
    let summary = VaryingSummary {
        label: &spec.label,
        break_year,
        effects: v.effects,
        pre_years: &v.pre_years,
        post_years: &v.post_years,
        converged: v.fit.converged,
        dropped: &v.dropped,
        terms: &v.terms,
    };
    w.write_json("varying.json", "varying", &summary)?;
    let period = |p: crate::amm::Period| p.suffix().trim_matches(['[', ']']).to_string();
    let rows: Vec<Vec<String>> = v
        .terms
        .iter()
        .map(|t| vec![t.term.clone(), period(t.period), fmt_f64(t.edf), fmt_f64(t.p_value)])
        .collect();
    w.write_csv("period_terms.csv", "period_terms", &["term", "period", "edf", "p_value"], &rows)?;
    let coefs: Vec<Vec<String>> = v
        .terms
        .iter()
        .flat_map(|t| {
            t.coefficients
                .iter()
                .map(|(n, b, se)| vec![t.term.clone(), period(t.period), n.clone(), fmt_f64(*b), fmt_f64(*se)])
        })
        .collect();
    w.write_csv("period_coefficients.csv", "period_coefficients", &["term", "period", "name", "estimate", "se"], &coefs)?;
    write_curves(&mut w, "curves/", &v.fit)?;
    let converged = v.fit.converged;
    Ok((w.finish()?, converged))
}

// ------------------------------------------------------------------ transform

#[derive(Debug, Clone, Serialize)]
struct TransformEntry<'a> {
    recipe: &'a TransformRecipe,
    report: DeriveReport,
}

/// Applies recipes in order and writes the derived panel with its schema.
pub fn run_transform<T: Real>(
    panel: &PanelDataset<T>,
    recipes: &[TransformRecipe],
    out_dir: &Path,
    manifest: RunManifest,
) -> Result<RunManifest> {
    let mut current = panel.clone();
    let mut entries = Vec::with_capacity(recipes.len());
    for r in recipes {
        let (next, report) = derive_series(r, &current)?;
        current = next;
        entries.push(TransformEntry { recipe: r, report });
    }
    let mut w = ReportWriter::new(out_dir, manifest)?;
    let mut buf = Vec::new();
    write_panel_csv(&current, &mut buf)?;
    w.write_bytes("panel.csv", "panel", &buf)?;
    w.write_json("schema.json", "schema", &PanelSchema::from_panel(&current))?;
    let mut missing = BTreeMap::new();
    for (k, v) in current.missing_counts() {
        missing.insert(k, v);
    }
    w.write_json(
        "transform_report.json",
        "transform_report",
        &serde_json::json!({ "rows": current.n_rows(), "transforms": entries, "missing": missing }),
    )?;
    w.finish()
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RecipeFile {
    List(Vec<TransformRecipe>),
    Wrapped { transforms: Vec<TransformRecipe> },
}

/// Reads transform recipes: a JSON list or `{"transforms": [...]}`.
pub fn load_recipes(path: &Path) -> Result<(Vec<TransformRecipe>, FileHash)> {
    let (file, hash): (RecipeFile, _) = read_json(path)?;
    let (RecipeFile::List(r) | RecipeFile::Wrapped { transforms: r }) = file;
    Ok((r, hash))
}
