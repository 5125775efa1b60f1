//! Longitudinal panel data: loading, validation, subsetting and derived series.

mod load;
pub mod report;
pub mod transform;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub use load::{load_panel, load_panel_from_path, write_panel_csv};
pub use transform::{derive_series, growth_rate, hp_filter, log_shift, rolling_geometric_mean, HpFilter, TransformKind, TransformRecipe};

/// Role a CSV column plays in the panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnRole {
    Unit,
    Time,
    Response,
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDecl {
    pub column: String,
    pub role: ColumnRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
}

/// Column-role declarations for a panel CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "SchemaRepr", into = "Vec<ColumnDecl>")]
pub struct PanelSchema {
    pub columns: Vec<ColumnDecl>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SchemaRepr {
    List(Vec<ColumnDecl>),
    Wrapped { columns: Vec<ColumnDecl> },
}

impl From<SchemaRepr> for PanelSchema {
    fn from(r: SchemaRepr) -> Self {
        match r {
            SchemaRepr::List(columns) | SchemaRepr::Wrapped { columns } => Self { columns },
        }
    }
}

impl From<PanelSchema> for Vec<ColumnDecl> {
    fn from(s: PanelSchema) -> Self {
        s.columns
    }
}

impl PanelSchema {
    /// Schema describing an in-memory panel, e.g. one carrying derived columns.
    pub fn from_panel<T>(panel: &PanelDataset<T>) -> Self {
        let decl = |column: &str, role, levels| ColumnDecl { column: column.into(), role, levels };
        let mut columns = vec![
            decl(&panel.unit_name, ColumnRole::Unit, None),
            decl(&panel.time_name, ColumnRole::Time, None),
            decl(&panel.response_name, ColumnRole::Response, None),
        ];
        for (name, col) in &panel.columns {
            columns.push(match col {
                Column::Numeric(_) => decl(name, ColumnRole::Numeric, None),
                Column::Categorical(c) => decl(name, ColumnRole::Categorical, Some(c.levels.clone())),
            });
        }
        Self { columns }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Schema(format!("invalid schema JSON: {e}")))
    }

    fn single(&self, role: ColumnRole) -> Result<&ColumnDecl> {
        let mut it = self.columns.iter().filter(|c| c.role == role);
        let first = it.next().ok_or_else(|| Error::Schema(format!("no column declared with role {role:?}")))?;
        if it.next().is_some() {
            return Err(Error::Schema(format!("more than one column declared with role {role:?}")));
        }
        Ok(first)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NumericColumn<T> {
    /// Missing entries hold NaN and are flagged in `missing`.
    pub values: Vec<T>,
    pub missing: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalColumn {
    pub levels: Vec<String>,
    pub codes: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Column<T> {
    Numeric(NumericColumn<T>),
    Categorical(CategoricalColumn),
}

impl<T: Real> Column<T> {
    /// Numeric column; non-finite values count as missing.
    pub fn numeric(values: Vec<T>) -> Self {
        let missing = values.iter().map(|v| !v.is_finite()).collect();
        Column::Numeric(NumericColumn { values, missing })
    }
}

impl<T> Column<T> {
    /// Categorical column from level names and per-row level codes.
    pub fn categorical(levels: Vec<String>, codes: Vec<usize>) -> Self {
        Column::Categorical(CategoricalColumn { levels, codes: codes.into_iter().map(Some).collect() })
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            Column::Numeric(c) => c.missing[row],
            Column::Categorical(c) => c.codes[row].is_none(),
        }
    }

    pub fn missing_count(&self) -> usize {
        match self {
            Column::Numeric(c) => c.missing.iter().filter(|&&m| m).count(),
            Column::Categorical(c) => c.codes.iter().filter(|c| c.is_none()).count(),
        }
    }

    fn select(&self, rows: &[usize]) -> Self
    where
        T: Copy,
    {
        match self {
            Column::Numeric(c) => Column::Numeric(NumericColumn {
                values: rows.iter().map(|&r| c.values[r]).collect(),
                missing: rows.iter().map(|&r| c.missing[r]).collect(),
            }),
            Column::Categorical(c) => Column::Categorical(CategoricalColumn {
                levels: c.levels.clone(),
                codes: rows.iter().map(|&r| c.codes[r]).collect(),
            }),
        }
    }
}

/// Country × year observations with a response and named covariates.
///
/// Rows are sorted by (unit label, time). Units are indexed in sorted label
/// order; `unit_of(row)` gives that index.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset<T> {
    pub(crate) unit_name: String,
    pub(crate) time_name: String,
    pub(crate) response_name: String,
    pub(crate) units: Vec<String>,
    pub(crate) unit_idx: Vec<usize>,
    pub(crate) time: Vec<i64>,
    pub(crate) response: Vec<T>,
    pub(crate) columns: IndexMap<String, Column<T>>,
}

impl<T: Real> PanelDataset<T> {
    /// Builds a panel from in-memory rows; rows are sorted by (unit, time) and validated
    /// the same way as the CSV loader.
    pub fn from_rows(
        unit_labels: Vec<String>,
        time: Vec<i64>,
        response: Vec<T>,
        columns: IndexMap<String, Column<T>>,
    ) -> Result<Self> {
        Self::from_parts("unit".into(), "time".into(), "y".into(), unit_labels, time, response, columns)
    }

    /// Balanced panel with rows in unit-major order: row `i * n_years + t` is
    /// unit `i` (labelled `u000`, `u001`, ...) in year `first_year + t`.
    pub fn balanced(
        n_units: usize,
        first_year: i64,
        n_years: usize,
        response: Vec<T>,
        columns: Vec<(String, Column<T>)>,
    ) -> Result<Self> {
        let labels = (0..n_units).flat_map(|i| std::iter::repeat_n(format!("u{i:03}"), n_years)).collect();
        let time = (0..n_units).flat_map(|_| (0..n_years as i64).map(|t| first_year + t)).collect();
        Self::from_rows(labels, time, response, columns.into_iter().collect())
    }

    pub(crate) fn from_parts(
        unit_name: String,
        time_name: String,
        response_name: String,
        unit_labels: Vec<String>,
        time: Vec<i64>,
        response: Vec<T>,
        columns: IndexMap<String, Column<T>>,
    ) -> Result<Self> {
        let n = unit_labels.len();
        if time.len() != n || response.len() != n {
            return Err(Error::Dimension("unit, time and response lengths differ".into()));
        }
        for (name, c) in &columns {
            let len = match c {
                Column::Numeric(c) => c.values.len(),
                Column::Categorical(c) => c.codes.len(),
            };
            if len != n {
                return Err(Error::Dimension(format!("column {name:?} has {len} rows, expected {n}")));
            }
        }
        if let Some(i) = response.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parse {
                row: i + 1,
                column: response_name,
                message: "response must be present and finite".into(),
            });
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| unit_labels[a].cmp(&unit_labels[b]).then(time[a].cmp(&time[b])));
        for w in order.windows(2) {
            if unit_labels[w[0]] == unit_labels[w[1]] && time[w[0]] == time[w[1]] {
                return Err(Error::Structural(format!(
                    "duplicate observation for unit {:?} at time {}",
                    unit_labels[w[0]], time[w[0]]
                )));
            }
        }
        let mut units: Vec<String> = Vec::new();
        let mut unit_idx = Vec::with_capacity(n);
        for &r in &order {
            if units.last() != Some(&unit_labels[r]) {
                units.push(unit_labels[r].clone());
            }
            unit_idx.push(units.len() - 1);
        }
        let panel = Self {
            unit_name,
            time_name,
            response_name,
            units,
            unit_idx,
            time: order.iter().map(|&r| time[r]).collect(),
            response: order.iter().map(|&r| response[r]).collect(),
            columns: columns.into_iter().map(|(k, c)| (k, c.select(&order))).collect(),
        };
        panel.check_rectangular()?;
        Ok(panel)
    }

    fn check_rectangular(&self) -> Result<()> {
        let years = self.unit_years(0);
        for u in 1..self.units.len() {
            let other = self.unit_years(u);
            if other != years {
                return Err(Error::Structural(format!(
                    "panel is not rectangular: unit {:?} has time points {:?}, unit {:?} has {:?}",
                    self.units[0], years, self.units[u], other
                )));
            }
        }
        Ok(())
    }

    fn unit_years(&self, u: usize) -> Vec<i64> {
        self.unit_idx.iter().zip(&self.time).filter(|(&i, _)| i == u).map(|(_, &t)| t).collect()
    }

    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn unit_of(&self, row: usize) -> usize {
        self.unit_idx[row]
    }

    pub fn unit_indices(&self) -> &[usize] {
        &self.unit_idx
    }

    pub fn time(&self) -> &[i64] {
        &self.time
    }

    /// Sorted distinct time points.
    pub fn years(&self) -> Vec<i64> {
        let mut y = self.time.clone();
        y.sort_unstable();
        y.dedup();
        y
    }

    pub fn response(&self) -> &[T] {
        &self.response
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    pub fn unit_name(&self) -> &str {
        &self.unit_name
    }

    pub fn time_name(&self) -> &str {
        &self.time_name
    }

    pub fn columns(&self) -> &IndexMap<String, Column<T>> {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Result<&Column<T>> {
        self.columns.get(name).ok_or_else(|| Error::Lookup(format!("unknown column {name:?}")))
    }

    /// Values of a numeric column (NaN where missing). The response is also
    /// addressable by its name.
    pub fn numeric(&self, name: &str) -> Result<&[T]> {
        if name == self.response_name {
            return Ok(&self.response);
        }
        match self.column(name)? {
            Column::Numeric(c) => Ok(&c.values),
            Column::Categorical(_) => Err(Error::Type(format!("column {name:?} is categorical, numeric required"))),
        }
    }

    pub fn categorical(&self, name: &str) -> Result<&CategoricalColumn> {
        match self.column(name)? {
            Column::Categorical(c) => Ok(c),
            Column::Numeric(_) => Err(Error::Type(format!("column {name:?} is numeric, categorical required"))),
        }
    }

    pub fn is_categorical(&self, name: &str) -> bool {
        matches!(self.columns.get(name), Some(Column::Categorical(_)))
    }

    /// Per-column missing counts, in column order.
    pub fn missing_counts(&self) -> IndexMap<String, usize> {
        self.columns.iter().map(|(k, c)| (k.clone(), c.missing_count())).collect()
    }

    /// Rows with no missing value in any of `cols`.
    pub fn complete_rows(&self, cols: &[&str]) -> Result<Vec<usize>> {
        let cs: Vec<&Column<T>> = cols
            .iter()
            .filter(|&&c| c != self.response_name)
            .map(|c| self.column(c))
            .collect::<Result<_>>()?;
        Ok((0..self.n_rows()).filter(|&r| cs.iter().all(|c| !c.is_missing(r))).collect())
    }

    /// Keeps the given rows (in the given order, which must remain sorted by
    /// unit and time). The result need not be rectangular.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut units = Vec::new();
        let mut unit_idx = Vec::with_capacity(rows.len());
        let mut last = usize::MAX;
        for &r in rows {
            let u = self.unit_idx[r];
            if u != last {
                units.push(self.units[u].clone());
                last = u;
            }
            unit_idx.push(units.len() - 1);
        }
        Self {
            unit_name: self.unit_name.clone(),
            time_name: self.time_name.clone(),
            response_name: self.response_name.clone(),
            units,
            unit_idx,
            time: rows.iter().map(|&r| self.time[r]).collect(),
            response: rows.iter().map(|&r| self.response[r]).collect(),
            columns: self.columns.iter().map(|(k, c)| (k.clone(), c.select(rows))).collect(),
        }
    }

    /// Restricts to a unit list and/or an inclusive year range.
    pub fn filter(&self, units: Option<&[String]>, years: Option<(i64, i64)>) -> Self {
        let rows: Vec<usize> = (0..self.n_rows())
            .filter(|&r| units.is_none_or(|us| us.iter().any(|u| *u == self.units[self.unit_idx[r]])))
            .filter(|&r| years.is_none_or(|(a, b)| self.time[r] >= a && self.time[r] <= b))
            .collect();
        self.select_rows(&rows)
    }

    /// Replaces the response with a numeric column (used after transforming it).
    pub fn with_response(&self, name: &str) -> Result<Self> {
        let values = self.numeric(name)?.to_vec();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("column {name:?} has a missing or non-finite value at row {}", i + 1)));
        }
        let mut out = self.clone();
        out.response = values;
        out.response_name = name.to_string();
        Ok(out)
    }

    /// Adds or replaces a numeric column.
    pub fn with_numeric(&self, name: &str, values: Vec<T>) -> Result<Self> {
        if values.len() != self.n_rows() {
            return Err(Error::Dimension(format!("column {name:?} length mismatch")));
        }
        let mut out = self.clone();
        let missing = values.iter().map(|v| !v.is_finite()).collect();
        out.columns.insert(name.to_string(), Column::Numeric(NumericColumn { values, missing }));
        Ok(out)
    }

    /// Row ranges of each unit (rows are grouped by unit).
    pub fn unit_rows(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.units.len()];
        for (r, &u) in self.unit_idx.iter().enumerate() {
            out[u].push(r);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric(v: Vec<f64>) -> Column<f64> {
        let missing = v.iter().map(|x| x.is_nan()).collect();
        Column::Numeric(NumericColumn { values: v, missing })
    }

    #[test]
    fn rows_are_sorted_by_unit_then_time() {
        let mut cols = IndexMap::new();
        cols.insert("x".to_string(), numeric(vec![1.0, 2.0, 3.0, 4.0]));
        let p = PanelDataset::from_rows(
            vec!["B".into(), "A".into(), "B".into(), "A".into()],
            vec![2, 2, 1, 1],
            vec![10.0, 20.0, 30.0, 40.0],
            cols,
        )
        .unwrap();
        assert_eq!(p.units(), ["A", "B"]);
        assert_eq!(p.time(), &[1, 2, 1, 2]);
        assert_eq!(p.response(), &[40.0, 20.0, 30.0, 10.0]);
        assert_eq!(p.numeric("x").unwrap(), &[4.0, 2.0, 3.0, 1.0]);
    }

    #[test]
    fn duplicate_unit_time_is_structural() {
        let err = PanelDataset::<f64>::from_rows(
            vec!["A".into(), "A".into()],
            vec![3, 3],
            vec![1.0, 2.0],
            IndexMap::new(),
        )
        .unwrap_err();
        match err {
            Error::Structural(m) => assert!(m.contains("\"A\"") && m.contains('3')),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn ragged_panel_is_rejected() {
        let err = PanelDataset::<f64>::from_rows(
            vec!["A".into(), "A".into(), "B".into()],
            vec![1, 2, 1],
            vec![1.0, 2.0, 3.0],
            IndexMap::new(),
        );
        assert!(matches!(err, Err(Error::Structural(_))));
    }

    #[test]
    fn filter_by_units_and_years() {
        let p = PanelDataset::<f64>::from_rows(
            vec!["A".into(), "A".into(), "B".into(), "B".into()],
            vec![1, 2, 1, 2],
            vec![1.0, 2.0, 3.0, 4.0],
            IndexMap::new(),
        )
        .unwrap();
        let f = p.filter(Some(&["B".to_string()]), Some((2, 5)));
        assert_eq!(f.response(), &[4.0]);
        assert_eq!(f.units(), ["B"]);
    }
}
