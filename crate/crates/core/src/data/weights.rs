use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;

use super::records::RespondentRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ipsw,
    Final,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Ipsw => "ipsw",
            Stage::Final => "final",
        })
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ipsw" => Ok(Stage::Ipsw),
            "final" => Ok(Stage::Final),
            other => Err(Error::InvalidInput(format!("unknown weight stage `{other}`"))),
        }
    }
}

/// Respondent weights in respondent order. Every weight is positive and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    stage: Stage,
    ids: Vec<String>,
    values: Vec<f64>,
}

impl WeightVector {
    pub fn new(stage: Stage, ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if ids.len() != values.len() {
            return Err(Error::InvalidInput(format!("{} ids for {} weights", ids.len(), values.len())));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for (id, &w) in ids.iter().zip(&values) {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidInput(format!("weight for `{id}` must be positive and finite, got {w}")));
            }
        }
        Ok(WeightVector { stage, ids, values })
    }

    /// Weights with synthetic ids `0..n`, for in-memory use.
    pub fn from_values(stage: Stage, values: Vec<f64>) -> Result<Self> {
        let ids = (0..values.len()).map(|i| i.to_string()).collect();
        Self::new(stage, ids, values)
    }

    /// Weights aligned with `respondents`.
    pub fn for_respondents(stage: Stage, respondents: &[RespondentRecord], values: Vec<f64>) -> Result<Self> {
        let ids = respondents.iter().map(|r| r.respondent_id.clone()).collect();
        Self::new(stage, ids, values)
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> f64 {
        pairwise_sum(&self.values)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.ids.iter().map(String::as_str).zip(self.values.iter().copied())
    }

    /// Reorders to follow `respondents`; every respondent must have a weight.
    pub fn aligned_to(&self, respondents: &[RespondentRecord]) -> Result<WeightVector> {
        let index: HashMap<&str, f64> = self.iter().collect();
        let values = respondents
            .iter()
            .map(|r| {
                index
                    .get(r.respondent_id.as_str())
                    .copied()
                    .ok_or_else(|| Error::InvalidInput(format!("no weight for respondent `{}`", r.respondent_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::for_respondents(self.stage, respondents, values)
    }

    /// Checks the ids line up with `respondents` position by position.
    pub(crate) fn check_aligned(&self, respondents: &[RespondentRecord]) -> Result<()> {
        if self.len() != respondents.len() {
            return Err(Error::InvalidInput(format!("{} weights for {} respondents", self.len(), respondents.len())));
        }
        for (id, r) in self.ids.iter().zip(respondents) {
            if *id != r.respondent_id {
                return Err(Error::InvalidInput(format!(
                    "weight id `{id}` does not match respondent `{}`",
                    r.respondent_id
                )));
            }
        }
        Ok(())
    }
}
