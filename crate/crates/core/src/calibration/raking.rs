use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::{CovariateSchema, MarginTable, RespondentRecord, WeightVector};
use crate::error::{Error, Result};
use crate::numeric::{pairwise_sum, relative_error};
use crate::propensity::TrimPolicy;

use super::{finish, Calibrated, CalibrationReport, OmittedStratum};

pub const DEFAULT_MAX_ITERATIONS: usize = 1000;
pub const DEFAULT_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RakingConfig {
    /// Margins to rake, in sweep order. Empty means `region` first, then the
    /// remaining margins in file order.
    pub margin_order: Vec<String>,
    pub max_iterations: usize,
    /// Maximum relative error over all margin categories.
    pub tolerance: f64,
    pub include_region_margin: bool,
    pub trim: TrimPolicy,
}

impl Default for RakingConfig {
    fn default() -> Self {
        RakingConfig {
            margin_order: Vec::new(),
            max_iterations: DEFAULT_MAX_ITERATIONS,
            tolerance: DEFAULT_TOLERANCE,
            include_region_margin: true,
            trim: TrimPolicy::default(),
        }
    }
}

impl RakingConfig {
    fn resolve_order(&self, table: &MarginTable) -> Result<Vec<String>> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be positive".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("raking tolerance must be positive".into()));
        }
        let order: Vec<String> = if self.margin_order.is_empty() {
            let mut names: Vec<String> = table.margins().iter().map(|m| m.name().to_string()).collect();
            if let Some(pos) = names.iter().position(|n| n == "region") {
                let region = names.remove(pos);
                names.insert(0, region);
            }
            names.into_iter().filter(|n| self.include_region_margin || n != "region").collect()
        } else {
            self.margin_order.clone()
        };
        for (i, name) in order.iter().enumerate() {
            if order[..i].contains(name) {
                return Err(Error::Config(format!("margin `{name}` listed twice in margin_order")));
            }
            if table.margin(name).is_none() {
                return Err(Error::Config(format!("margin `{name}` is not in the benchmark table")));
            }
            if name == "region" && !self.include_region_margin {
                return Err(Error::Config("margin_order names `region` but include_region_margin is false".into()));
            }
        }
        if order.is_empty() {
            return Err(Error::Config("no margins left to rake".into()));
        }
        Ok(order)
    }
}

struct Target {
    /// Respondent indices per retained category.
    members: Vec<Vec<usize>>,
    totals: Vec<f64>,
}

impl Target {
    fn weighted_totals(&self, w: &[f64]) -> Vec<f64> {
        self.members
            .iter()
            .map(|rows| {
                let v: Vec<f64> = rows.iter().map(|&j| w[j]).collect();
                pairwise_sum(&v)
            })
            .collect()
    }

    fn max_error(&self, w: &[f64]) -> f64 {
        self.weighted_totals(w)
            .iter()
            .zip(&self.totals)
            .map(|(&cur, &target)| relative_error(cur, target))
            .fold(0.0, f64::max)
    }

    fn sweep(&self, w: &mut [f64]) {
        let current = self.weighted_totals(w);
        for ((rows, &target), cur) in self.members.iter().zip(&self.totals).zip(current) {
            let factor = target / cur;
            for &j in rows {
                w[j] *= factor;
            }
        }
    }
}

/// Iterative proportional fitting. Categories without respondents are
/// dropped from their margin, and every margin is renormalized to the
/// smallest remaining margin total so all margins agree.
pub fn rake_untrimmed(
    weights: &WeightVector,
    respondents: &[RespondentRecord],
    schema: &CovariateSchema,
    table: &MarginTable,
    config: &RakingConfig,
) -> Result<Calibrated> {
    weights.check_aligned(respondents)?;
    if respondents.is_empty() {
        return Err(Error::EmptySample);
    }
    let order = config.resolve_order(table)?;

    let mut omitted = Vec::new();
    let mut raw_targets = Vec::with_capacity(order.len());
    for name in &order {
        let margin = table.margin(name).expect("checked by resolve_order");
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); margin.categories().len()];
        for (j, r) in respondents.iter().enumerate() {
            let category = margin.category_of(r, schema).ok_or_else(|| {
                Error::InvalidInput(format!("margin `{name}` uses a dimension unknown to the schema"))
            })?;
            let index = margin.category_index(&category).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "respondent `{}` has {name}=`{category}`, absent from the benchmarks",
                    r.respondent_id
                ))
            })?;
            members[index].push(j);
        }
        let mut kept_members = Vec::new();
        let mut kept_totals = Vec::new();
        for ((category, population), rows) in margin.categories().iter().zip(members) {
            if rows.is_empty() {
                if *population > 0.0 {
                    omitted.push(OmittedStratum {
                        source: name.clone(),
                        category: category.clone(),
                        population: *population,
                    });
                }
                continue;
            }
            if *population == 0.0 {
                return Err(Error::InvalidInput(format!("{name}=`{category}` has respondents but zero population")));
            }
            kept_members.push(rows);
            kept_totals.push(*population);
        }
        raw_targets.push((kept_members, kept_totals));
    }

    let remaining: Vec<f64> = raw_targets.iter().map(|(_, t)| pairwise_sum(t)).collect();
    let represented = remaining.iter().copied().fold(f64::INFINITY, f64::min);
    let targets: Vec<Target> = raw_targets
        .into_iter()
        .zip(&remaining)
        .map(|((members, totals), &sum)| {
            let totals =
                if sum == represented { totals } else { totals.into_iter().map(|t| t * (represented / sum)).collect() };
            Target { members, totals }
        })
        .collect();

    let mut w = weights.values().to_vec();
    let max_error = |w: &[f64]| targets.iter().map(|t| t.max_error(w)).fold(0.0, f64::max);
    let mut iterations = 0;
    let mut error = max_error(&w);
    while error >= config.tolerance && iterations < config.max_iterations {
        for target in &targets {
            target.sweep(&mut w);
        }
        iterations += 1;
        error = max_error(&w);
    }
    let converged = error < config.tolerance;
    if !converged {
        warn!("raking stopped after {iterations} sweeps with margin error {error:e}");
    }

    Ok(Calibrated {
        weights: w,
        omitted,
        population_total: table.population_total(),
        represented_population: represented,
        achieved_margin_error: error,
        iterations,
        converged,
    })
}

pub fn rake(
    weights: &WeightVector,
    respondents: &[RespondentRecord],
    schema: &CovariateSchema,
    table: &MarginTable,
    config: &RakingConfig,
) -> Result<(WeightVector, CalibrationReport)> {
    let calibrated = rake_untrimmed(weights, respondents, schema, table, config)?;
    finish("margins", calibrated, respondents, &config.trim)
}
