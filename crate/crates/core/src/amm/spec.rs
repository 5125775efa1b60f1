use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::PanelDataset;
use crate::scalar::Real;
use crate::spline::{DEFAULT_BASIS_DIM, DEFAULT_TENSOR_DIM};

/// How unit heterogeneity enters the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EffectsMode {
    /// Decide between `Random` and `Fixed` with the Mundlak test.
    #[default]
    Auto,
    /// Correlated random intercept and slope per unit, `Z_t = (1, t)`.
    Random,
    /// Unpenalized unit intercepts and slopes; no global intercept.
    Fixed,
    /// `Random` plus unit time-averages of every regressor.
    Mundlak,
    /// No unit effects (pooled model).
    None,
}

impl EffectsMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EffectsMode::Auto => "auto",
            EffectsMode::Random => "random",
            EffectsMode::Fixed => "fixed",
            EffectsMode::Mundlak => "mundlak",
            EffectsMode::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothSpec {
    pub col: String,
    #[serde(default = "default_k")]
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub col1: String,
    pub col2: String,
    #[serde(default = "default_tensor_k")]
    pub k1: usize,
    #[serde(default = "default_tensor_k")]
    pub k2: usize,
}

fn default_k() -> usize {
    DEFAULT_BASIS_DIM
}
fn default_tensor_k() -> usize {
    DEFAULT_TENSOR_DIM
}

/// One candidate model: linear terms, smooths, linear and smooth interactions,
/// and the unit-effects structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub label: String,
    #[serde(default)]
    pub linear: Vec<String>,
    #[serde(default)]
    pub smooth: Vec<SmoothSpec>,
    #[serde(default)]
    pub linear_pairs: Vec<(String, String)>,
    #[serde(default)]
    pub tensor_pairs: Vec<TensorSpec>,
    #[serde(default)]
    pub effects: EffectsMode,
    #[serde(default)]
    pub heteroscedastic: bool,
    #[serde(default)]
    pub include_year_smooth: bool,
    /// When set, the response is modelled as `ln(y + shift)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_shift: Option<f64>,
}

impl ModelSpec {
    pub fn new(label: &str) -> Self {
        Self {
            label: label.into(),
            linear: Vec::new(),
            smooth: Vec::new(),
            linear_pairs: Vec::new(),
            tensor_pairs: Vec::new(),
            effects: EffectsMode::Auto,
            heteroscedastic: false,
            include_year_smooth: false,
            response_shift: None,
        }
    }

    pub fn linear(mut self, col: &str) -> Self {
        self.linear.push(col.into());
        self
    }

    pub fn smooth(mut self, col: &str, k: usize) -> Self {
        self.smooth.push(SmoothSpec { col: col.into(), k });
        self
    }

    pub fn linear_pair(mut self, a: &str, b: &str) -> Self {
        self.linear_pairs.push((a.into(), b.into()));
        self
    }

    pub fn tensor(mut self, a: &str, b: &str, k1: usize, k2: usize) -> Self {
        self.tensor_pairs.push(TensorSpec { col1: a.into(), col2: b.into(), k1, k2 });
        self
    }

    pub fn effects(mut self, mode: EffectsMode) -> Self {
        self.effects = mode;
        self
    }

    pub fn heteroscedastic(mut self, on: bool) -> Self {
        self.heteroscedastic = on;
        self
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("invalid model spec JSON: {e}")))
    }

    /// Every covariate the spec reads, in first-use order without duplicates.
    pub fn columns(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut push = |c: &String| {
            if !out.contains(c) {
                out.push(c.clone());
            }
        };
        self.linear.iter().for_each(&mut push);
        for (a, b) in &self.linear_pairs {
            push(a);
            push(b);
        }
        self.smooth.iter().for_each(|s| push(&s.col));
        for t in &self.tensor_pairs {
            push(&t.col1);
            push(&t.col2);
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.linear.is_empty()
            && self.smooth.is_empty()
            && self.linear_pairs.is_empty()
            && self.tensor_pairs.is_empty()
            && !self.include_year_smooth
    }

    /// Checks the term sets against the panel: columns exist, linear and
    /// smooth sets are disjoint, smooth and pair columns are numeric.
    pub fn validate<T: Real>(&self, panel: &PanelDataset<T>) -> Result<()> {
        for c in self.columns() {
            panel.column(&c).map_err(|_| Error::Config(format!("spec {:?}: unknown column {c:?}", self.label)))?;
        }
        for s in &self.smooth {
            if self.linear.contains(&s.col) {
                return Err(Error::Config(format!(
                    "spec {:?}: column {:?} is both linear and smooth",
                    self.label, s.col
                )));
            }
            if panel.is_categorical(&s.col) {
                return Err(Error::Type(format!("spec {:?}: categorical column {:?} cannot be smooth", self.label, s.col)));
            }
        }
        for (a, b) in &self.linear_pairs {
            for c in [a, b] {
                if panel.is_categorical(c) {
                    return Err(Error::Type(format!("spec {:?}: linear pair column {c:?} must be numeric", self.label)));
                }
            }
        }
        for t in &self.tensor_pairs {
            for c in [&t.col1, &t.col2] {
                if panel.is_categorical(c) {
                    return Err(Error::Type(format!("spec {:?}: tensor column {c:?} must be numeric", self.label)));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_config_json() {
        let s = ModelSpec::from_json(
            r#"{"label":"M_{6,1}","linear":["era"],"smooth":[{"col":"gdp_pc","k":8},{"col":"credit"}],
                "linear_pairs":[["a","b"]],"tensor_pairs":[{"col1":"en_price","col2":"en_rent"}],
                "effects":"random","heteroscedastic":true}"#,
        )
        .unwrap();
        assert_eq!(s.smooth[1].k, DEFAULT_BASIS_DIM);
        assert_eq!(s.tensor_pairs[0].k1, 5);
        assert_eq!(s.effects, EffectsMode::Random);
        assert_eq!(s.columns(), ["era", "a", "b", "gdp_pc", "credit", "en_price", "en_rent"]);
        assert!(ModelSpec::from_json("{\"linear\":[]}").is_err());
    }
}
