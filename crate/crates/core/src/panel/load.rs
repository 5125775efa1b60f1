use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use super::{CategoricalColumn, Column, ColumnRole, NumericColumn, PanelDataset, PanelSchema};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Reads a panel from CSV (header row, comma separated, `.` decimal, empty
/// cell = missing). Columns not named in the schema are ignored.
pub fn load_panel<T: Real, R: Read>(source: R, schema: &PanelSchema) -> Result<PanelDataset<T>> {
    let unit_decl = schema.single(ColumnRole::Unit)?;
    let time_decl = schema.single(ColumnRole::Time)?;
    let resp_decl = schema.single(ColumnRole::Response)?;

    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let position = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("declared column {name:?} not found in CSV header")))
    };
    let unit_pos = position(&unit_decl.column)?;
    let time_pos = position(&time_decl.column)?;
    let resp_pos = position(&resp_decl.column)?;

    struct Pending<T> {
        name: String,
        pos: usize,
        kind: PendingKind<T>,
    }
    enum PendingKind<T> {
        Numeric(Vec<T>, Vec<bool>),
        Categorical { declared: bool, levels: Vec<String>, codes: Vec<Option<usize>> },
    }

    let mut pending: Vec<Pending<T>> = Vec::new();
    for decl in &schema.columns {
        let kind = match decl.role {
            ColumnRole::Numeric => PendingKind::Numeric(Vec::new(), Vec::new()),
            ColumnRole::Categorical => PendingKind::Categorical {
                declared: decl.levels.is_some(),
                levels: decl.levels.clone().unwrap_or_default(),
                codes: Vec::new(),
            },
            _ => continue,
        };
        if pending.iter().any(|p| p.name == decl.column) {
            return Err(Error::Schema(format!("column {:?} declared twice", decl.column)));
        }
        pending.push(Pending { name: decl.column.clone(), pos: position(&decl.column)?, kind });
    }

    let mut units = Vec::new();
    let mut times = Vec::new();
    let mut response = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let field = |pos: usize| record.get(pos).unwrap_or("");
        let unit = field(unit_pos);
        if unit.is_empty() {
            return Err(Error::Parse { row, column: unit_decl.column.clone(), message: "missing unit label".into() });
        }
        units.push(unit.to_string());
        let t = field(time_pos);
        times.push(t.parse::<i64>().map_err(|_| Error::Parse {
            row,
            column: time_decl.column.clone(),
            message: format!("time value {t:?} is not an integer"),
        })?);
        let y = field(resp_pos);
        if y.is_empty() {
            return Err(Error::Parse { row, column: resp_decl.column.clone(), message: "missing response".into() });
        }
        response.push(parse_real::<T>(y, row, &resp_decl.column)?);
        for p in pending.iter_mut() {
            let raw = field(p.pos);
            match &mut p.kind {
                PendingKind::Numeric(values, missing) => {
                    if raw.is_empty() {
                        values.push(T::nan());
                        missing.push(true);
                    } else {
                        values.push(parse_real::<T>(raw, row, &p.name)?);
                        missing.push(false);
                    }
                }
                PendingKind::Categorical { declared, levels, codes } => {
                    if raw.is_empty() {
                        codes.push(None);
                    } else if let Some(k) = levels.iter().position(|l| l == raw) {
                        codes.push(Some(k));
                    } else if *declared {
                        return Err(Error::Schema(format!(
                            "undeclared level {raw:?} in categorical column {:?} at data row {row}",
                            p.name
                        )));
                    } else {
                        levels.push(raw.to_string());
                        codes.push(Some(levels.len() - 1));
                    }
                }
            }
        }
    }

    let mut columns = IndexMap::new();
    for p in pending {
        let col = match p.kind {
            PendingKind::Numeric(values, missing) => Column::Numeric(NumericColumn { values, missing }),
            PendingKind::Categorical { levels, codes, .. } => Column::Categorical(CategoricalColumn { levels, codes }),
        };
        columns.insert(p.name, col);
    }
    PanelDataset::from_parts(
        unit_decl.column.clone(),
        time_decl.column.clone(),
        resp_decl.column.clone(),
        units,
        times,
        response,
        columns,
    )
}

pub fn load_panel_from_path<T: Real>(path: &Path, schema: &PanelSchema) -> Result<PanelDataset<T>> {
    let f = std::fs::File::open(path)?;
    load_panel(std::io::BufReader::new(f), schema)
}

fn parse_real<T: Real>(s: &str, row: usize, column: &str) -> Result<T> {
    let v: f64 = s.parse().map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        message: format!("{s:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse { row, column: column.to_string(), message: format!("{s:?} is not finite") });
    }
    T::from_f64(v).ok_or_else(|| Error::Parse { row, column: column.to_string(), message: "value out of range".into() })
}

/// Writes the panel back as CSV: unit, time, response, then every covariate
/// in load order. Floats use the shortest representation that parses back
/// to the same value, so a load/write cycle is lossless.
pub fn write_panel_csv<T: Real, W: Write>(panel: &PanelDataset<T>, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let mut header = vec![panel.unit_name.clone(), panel.time_name.clone(), panel.response_name.clone()];
    header.extend(panel.columns.keys().cloned());
    w.write_record(&header)?;
    for r in 0..panel.n_rows() {
        let mut rec = vec![panel.units[panel.unit_idx[r]].clone(), panel.time[r].to_string(), panel.response[r].to_string()];
        for c in panel.columns.values() {
            rec.push(match c {
                Column::Numeric(c) if c.missing[r] => String::new(),
                Column::Numeric(c) => c.values[r].to_string(),
                Column::Categorical(c) => c.codes[r].map(|k| c.levels[k].clone()).unwrap_or_default(),
            });
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> PanelSchema {
        PanelSchema::from_json(
            r#"[{"column":"country","role":"unit"},{"column":"year","role":"time"},
                {"column":"infl","role":"response"},{"column":"gdp","role":"numeric"},
                {"column":"era","role":"categorical","levels":["none","target"]}]"#,
        )
        .unwrap()
    }

    #[test]
    fn loads_and_reports_missing() {
        let csv = "country,year,infl,gdp,era,extra\nB,1,2.5,,none,x\nA,1,1.5,3,target,y\nA,2,0.5,4,,z\nB,2,1,5,none,w\n";
        let p: PanelDataset<f64> = load_panel(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(p.n_rows(), 4);
        assert_eq!(p.units(), ["A", "B"]);
        assert_eq!(p.missing_counts()["gdp"], 1);
        assert_eq!(p.missing_counts()["era"], 1);
        assert!(p.columns().get("extra").is_none());
    }

    #[test]
    fn single_row_panel() {
        let s = PanelSchema::from_json(
            r#"{"columns":[{"column":"c","role":"unit"},{"column":"t","role":"time"},{"column":"y","role":"response"}]}"#,
        )
        .unwrap();
        let p: PanelDataset<f64> = load_panel("c,t,y\nX,1997,21\n".as_bytes(), &s).unwrap();
        assert_eq!(p.n_rows(), 1);
    }

    #[test]
    fn duplicate_is_structural_error_naming_unit_and_time() {
        let csv = "country,year,infl,gdp,era\nA,3,1,1,none\nA,3,2,2,none\n";
        let e = load_panel::<f64, _>(csv.as_bytes(), &schema()).unwrap_err();
        let msg = e.to_string();
        assert!(matches!(e, Error::Structural(_)));
        assert!(msg.contains("\"A\"") && msg.contains("time 3"), "{msg}");
    }

    #[test]
    fn undeclared_level_is_schema_error() {
        let csv = "country,year,infl,gdp,era\nA,1,1,1,peg\n";
        assert!(matches!(load_panel::<f64, _>(csv.as_bytes(), &schema()), Err(Error::Schema(_))));
    }

    #[test]
    fn non_numeric_token_reports_row() {
        let csv = "country,year,infl,gdp,era\nA,1,1,1,none\nA,2,1,abc,none\n";
        match load_panel::<f64, _>(csv.as_bytes(), &schema()) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "gdp");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_response_rejected() {
        let csv = "country,year,infl,gdp,era\nA,1,,1,none\n";
        assert!(matches!(load_panel::<f64, _>(csv.as_bytes(), &schema()), Err(Error::Parse { .. })));
    }
}
