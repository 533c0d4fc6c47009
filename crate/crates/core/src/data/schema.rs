//! Covariate schema: declared categorical levels and continuous bucket edges.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a covariate is declared in the schema file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CovariateKind {
    Categorical {
        levels: Vec<String>,
    },
    /// Buckets are `[edge_i, edge_{i+1})`; the lowest is open below and the
    /// highest is closed above, so `edges.len() + 1` buckets in total.
    Continuous {
        edges: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        labels: Option<Vec<String>>,
        /// Smallest plausible value; only used to name the lowest bucket.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lower: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawSpec {
    name: String,
    #[serde(flatten)]
    kind: CovariateKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawSchema {
    #[serde(rename = "covariate", default)]
    covariates: Vec<RawSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateSpec {
    name: String,
    kind: CovariateKind,
    levels: Vec<String>,
}

impl CovariateSpec {
    pub fn categorical<S: Into<String>>(name: impl Into<String>, levels: impl IntoIterator<Item = S>) -> Result<Self> {
        Self::new(name.into(), CovariateKind::Categorical { levels: levels.into_iter().map(Into::into).collect() })
    }

    pub fn continuous(name: impl Into<String>, edges: Vec<f64>, lower: Option<f64>) -> Result<Self> {
        Self::new(name.into(), CovariateKind::Continuous { edges, labels: None, lower })
    }

    pub fn new(name: String, kind: CovariateKind) -> Result<Self> {
        if name.is_empty() {
            return Err(Error::Schema("covariate name is empty".into()));
        }
        let levels = match &kind {
            CovariateKind::Categorical { levels } => {
                if levels.is_empty() {
                    return Err(Error::Schema(format!("`{name}` declares no levels")));
                }
                levels.clone()
            }
            CovariateKind::Continuous { edges, labels, lower } => {
                if edges.iter().any(|e| !e.is_finite()) {
                    return Err(Error::Schema(format!("`{name}` has a non-finite bucket edge")));
                }
                if edges.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Schema(format!("`{name}` bucket edges are not strictly increasing")));
                }
                if let (Some(lo), Some(first)) = (lower, edges.first()) {
                    if !(lo < first) {
                        return Err(Error::Schema(format!("`{name}` lower bound must lie below the first edge")));
                    }
                }
                match labels {
                    Some(labels) if labels.len() != edges.len() + 1 => {
                        return Err(Error::Schema(format!(
                            "`{name}` needs {} bucket labels, got {}",
                            edges.len() + 1,
                            labels.len()
                        )))
                    }
                    Some(labels) => labels.clone(),
                    None => bucket_labels(edges, *lower),
                }
            }
        };
        let mut seen = HashSet::new();
        for level in &levels {
            if level.is_empty() {
                return Err(Error::Schema(format!("`{name}` has an empty level label")));
            }
            if !seen.insert(level.as_str()) {
                return Err(Error::Schema(format!("`{name}` repeats level `{level}`")));
            }
        }
        Ok(CovariateSpec { name, kind, levels })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &CovariateKind {
        &self.kind
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.kind, CovariateKind::Continuous { .. })
    }

    /// Category labels; for continuous covariates these are the bucket names.
    pub fn levels(&self) -> &[String] {
        &self.levels
    }

    pub fn level_index(&self, label: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == label)
    }

    pub fn bucket_index(&self, raw_value: f64) -> Result<usize> {
        let CovariateKind::Continuous { edges, .. } = &self.kind else {
            return Err(Error::InvalidInput(format!("`{}` is categorical, not continuous", self.name)));
        };
        if !raw_value.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite value {raw_value} for `{}`", self.name)));
        }
        Ok(edges.partition_point(|&e| e <= raw_value))
    }

    pub fn bucketize(&self, raw_value: f64) -> Result<&str> {
        self.bucket_index(raw_value).map(|i| self.levels[i].as_str())
    }

    /// Resolves a raw cell from an input file to a level index. Continuous
    /// covariates accept either a number or an existing bucket label.
    pub fn parse_value(&self, raw: &str) -> std::result::Result<usize, String> {
        if let Some(i) = self.level_index(raw) {
            return Ok(i);
        }
        if self.is_continuous() {
            let value: f64 = raw
                .trim()
                .parse()
                .map_err(|_| format!("`{raw}` is neither a number nor a bucket of `{}`", self.name))?;
            return self.bucket_index(value).map_err(|e| e.to_string());
        }
        Err(format!("unknown level `{raw}` for covariate `{}`", self.name))
    }
}

fn fmt_edge(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{x:.0}")
    } else {
        format!("{x}")
    }
}

fn range_label(lo: f64, hi: f64) -> String {
    if lo.fract() == 0.0 && hi.fract() == 0.0 {
        format!("{}-{}", fmt_edge(lo), fmt_edge(hi - 1.0))
    } else {
        format!("[{},{})", fmt_edge(lo), fmt_edge(hi))
    }
}

/// Default bucket names: edges [25,45,65] with lower 18 give
/// `18-24, 25-44, 45-64, 65+`.
fn bucket_labels(edges: &[f64], lower: Option<f64>) -> Vec<String> {
    let Some((&first, _)) = edges.split_first() else {
        return vec!["all".to_string()];
    };
    let mut labels = Vec::with_capacity(edges.len() + 1);
    labels.push(match lower {
        Some(lo) => range_label(lo, first),
        None => format!("<{}", fmt_edge(first)),
    });
    for w in edges.windows(2) {
        labels.push(range_label(w[0], w[1]));
    }
    labels.push(format!("{}+", fmt_edge(*edges.last().unwrap())));
    labels
}

/// Ordered covariate declarations. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateSchema {
    covariates: Vec<CovariateSpec>,
}

impl CovariateSchema {
    pub fn new(covariates: Vec<CovariateSpec>) -> Result<Self> {
        let mut seen = HashSet::new();
        for c in &covariates {
            if !seen.insert(c.name()) {
                return Err(Error::Schema(format!("covariate `{}` declared twice", c.name())));
            }
            if is_reserved_column(c.name()) {
                return Err(Error::Schema(format!("`{}` is a reserved column name", c.name())));
            }
        }
        Ok(CovariateSchema { covariates })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawSchema = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        let specs =
            raw.covariates.into_iter().map(|r| CovariateSpec::new(r.name, r.kind)).collect::<Result<Vec<_>>>()?;
        Self::new(specs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        let raw = RawSchema {
            covariates: self
                .covariates
                .iter()
                .map(|c| RawSpec { name: c.name.clone(), kind: c.kind.clone() })
                .collect(),
        };
        toml::to_string(&raw).expect("schema serializes")
    }

    pub fn covariates(&self) -> &[CovariateSpec] {
        &self.covariates
    }

    pub fn len(&self) -> usize {
        self.covariates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covariates.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.covariates.iter().position(|c| c.name() == name)
    }

    pub fn get(&self, name: &str) -> Option<&CovariateSpec> {
        self.index_of(name).map(|i| &self.covariates[i])
    }

    /// Label of level `code` of covariate `index`.
    pub fn label(&self, index: usize, code: usize) -> &str {
        &self.covariates[index].levels()[code]
    }
}

pub(crate) fn is_reserved_column(name: &str) -> bool {
    matches!(
        name,
        "respondent_id" | "unit_id" | "region" | "answered_count" | "sampled" | "responded" | "design_weight"
    ) || name.starts_with("y_")
}
