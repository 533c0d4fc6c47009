use std::collections::BTreeMap;

use super::schema::CovariateSchema;

/// Anything carrying a region and schema-coded covariates.
pub trait Classified {
    fn region(&self) -> &str;

    /// Level index per schema covariate, in schema order.
    fn codes(&self) -> &[usize];

    /// Value of a benchmark dimension: `region` or a covariate name.
    fn dimension_value<'a>(&'a self, schema: &'a CovariateSchema, dimension: &str) -> Option<&'a str> {
        if dimension == "region" {
            return Some(self.region());
        }
        let index = schema.index_of(dimension)?;
        Some(schema.label(index, self.codes()[index]))
    }
}

/// One survey respondent in a daily cross-section.
#[derive(Debug, Clone, PartialEq)]
pub struct RespondentRecord {
    pub respondent_id: String,
    pub region: String,
    /// Level codes, post-bucketing.
    pub covariates: Vec<usize>,
    /// Outcome columns keyed by their full `y_` name.
    pub outcomes: BTreeMap<String, f64>,
    pub answered_count: u32,
    /// Inverse inclusion probability, when the sampling design supplies one.
    pub design_weight: Option<f64>,
}

impl RespondentRecord {
    pub fn outcome(&self, name: &str) -> Option<f64> {
        self.outcomes.get(name).copied()
    }

    pub fn covariate_label<'a>(&self, schema: &'a CovariateSchema, name: &str) -> Option<&'a str> {
        let index = schema.index_of(name)?;
        Some(schema.label(index, self.covariates[index]))
    }
}

impl Classified for RespondentRecord {
    fn region(&self) -> &str {
        &self.region
    }

    fn codes(&self) -> &[usize] {
        &self.covariates
    }
}

/// One member of the sampling frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameUnit {
    pub unit_id: String,
    pub region: String,
    pub covariates: Vec<usize>,
    pub sampled: bool,
    pub responded: bool,
}

impl Classified for FrameUnit {
    fn region(&self) -> &str {
        &self.region
    }

    fn codes(&self) -> &[usize] {
        &self.covariates
    }
}

/// Keeps respondents who answered at least `min_answered` questions.
pub fn filter_eligible(records: &[RespondentRecord], min_answered: u32) -> Vec<RespondentRecord> {
    records.iter().filter(|r| r.answered_count >= min_answered).cloned().collect()
}

/// Default minimum number of answered questions.
pub const DEFAULT_MIN_ANSWERED: u32 = 2;
