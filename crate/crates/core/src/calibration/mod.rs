//! Stage 2: calibrate nonresponse weights to population benchmarks, either
//! by exact post-stratification over cells or by raking over margins, then
//! trim and rescale to the represented population.

mod poststrat;
mod raking;

use serde::{Deserialize, Serialize};

use crate::data::{BenchmarkTable, CovariateSchema, RespondentRecord, Stage, WeightVector};
use crate::error::{Error, Result};
use crate::numeric::{pairwise_sum, relative_error};
use crate::propensity::{TrimOutcome, TrimPolicy};

pub use poststrat::{post_stratify, post_stratify_untrimmed};
pub use raking::{rake, rake_untrimmed, RakingConfig, DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE};

/// Relative tolerance on the final weight sum against the represented population.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmittedStratum {
    /// Margin name, or the cell dimensions joined by `:`.
    pub source: String,
    pub category: String,
    pub population: f64,
}

/// Calibrated weights before the final trim.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibrated {
    pub weights: Vec<f64>,
    pub omitted: Vec<OmittedStratum>,
    pub population_total: f64,
    pub represented_population: f64,
    pub achieved_margin_error: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub mode: String,
    pub population_total: f64,
    pub represented_population: f64,
    /// `population_total - represented_population`.
    pub omitted_population: f64,
    pub achieved_margin_error: f64,
    pub iterations_used: usize,
    pub converged: bool,
    pub trimmed_low_count: usize,
    pub trimmed_high_count: usize,
    pub trim_floor: f64,
    pub trim_cap: f64,
    pub trim_scale: f64,
    pub final_weight_sum: f64,
    pub omitted_strata: Vec<OmittedStratum>,
}

impl CalibrationReport {
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidInput(format!("calibration report: {e}")))
    }
}

/// Clamps to `[mean / lower_divisor, mean * upper_multiplier]` of the input
/// weights, then scales everything so the sum equals `target`.
pub fn trim_and_rescale(weights: &[f64], policy: &TrimPolicy, target: f64) -> Result<TrimOutcome> {
    if !(target.is_finite() && target > 0.0) {
        return Err(Error::InvalidInput(format!("rescale target must be positive, got {target}")));
    }
    policy.with_rescale(target).apply(weights)
}

/// Calibration mode picked from the benchmark table.
pub fn calibrate(
    weights: &WeightVector,
    respondents: &[RespondentRecord],
    schema: &CovariateSchema,
    benchmarks: &BenchmarkTable,
    config: &RakingConfig,
) -> Result<(WeightVector, CalibrationReport)> {
    match benchmarks {
        BenchmarkTable::Cells(cells) => post_stratify(weights, respondents, schema, cells, &config.trim),
        BenchmarkTable::Margins(margins) => rake(weights, respondents, schema, margins, config),
    }
}

fn finish(
    mode: &str,
    calibrated: Calibrated,
    respondents: &[RespondentRecord],
    policy: &TrimPolicy,
) -> Result<(WeightVector, CalibrationReport)> {
    let trimmed = trim_and_rescale(&calibrated.weights, policy, calibrated.represented_population)?;
    let final_weight_sum = pairwise_sum(&trimmed.weights);
    if relative_error(final_weight_sum, calibrated.represented_population) > SUM_TOLERANCE {
        return Err(Error::Numerical(format!(
            "final weights sum to {final_weight_sum}, expected {}",
            calibrated.represented_population
        )));
    }
    let report = CalibrationReport {
        mode: mode.to_string(),
        population_total: calibrated.population_total,
        represented_population: calibrated.represented_population,
        omitted_population: calibrated.population_total - calibrated.represented_population,
        achieved_margin_error: calibrated.achieved_margin_error,
        iterations_used: calibrated.iterations,
        converged: calibrated.converged,
        trimmed_low_count: trimmed.trimmed_low,
        trimmed_high_count: trimmed.trimmed_high,
        trim_floor: trimmed.floor,
        trim_cap: trimmed.cap,
        trim_scale: trimmed.scale,
        final_weight_sum,
        omitted_strata: calibrated.omitted,
    };
    let weights = WeightVector::for_respondents(Stage::Final, respondents, trimmed.weights)?;
    Ok((weights, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trim_and_rescale_hand_examples() {
        let policy = TrimPolicy::default();
        // mean 1110: floor 37 clamps 30, cap 11100 clamps nothing
        let out = trim_and_rescale(&[30.0, 300.0, 3000.0], &policy, 3330.0).unwrap();
        let s = 3330.0 / 3337.0;
        let expected = [37.0 * s, 300.0 * s, 3000.0 * s];
        for (a, e) in out.weights.iter().zip(expected) {
            assert!(relative_error(*a, e) < 1e-14);
        }
        assert_eq!(out.trimmed_low, 1);

        let out = trim_and_rescale(&[5.0; 4], &policy, 20.0).unwrap();
        assert_eq!(out.weights, vec![5.0; 4]);

        let out = trim_and_rescale(&[1.0, 1.0, 1.0, 397.0], &policy, 400.0).unwrap();
        let s = 400.0 / 407.0;
        let third = 10.0 / 3.0;
        let expected = [third * s, third * s, third * s, 397.0 * s];
        for (a, e) in out.weights.iter().zip(expected) {
            assert!(relative_error(*a, e) < 1e-12);
        }
        assert!(relative_error(pairwise_sum(&out.weights), 400.0) < 1e-14);
    }

    #[test]
    fn trim_and_rescale_rejects_bad_target() {
        assert!(trim_and_rescale(&[1.0], &TrimPolicy::default(), 0.0).is_err());
    }

    #[test]
    fn report_round_trips_through_toml() {
        let report = CalibrationReport {
            mode: "margins".into(),
            population_total: 1000.0,
            represented_population: 500.0,
            omitted_population: 500.0,
            achieved_margin_error: 1e-12,
            iterations_used: 4,
            converged: true,
            trimmed_low_count: 0,
            trimmed_high_count: 1,
            trim_floor: 0.5,
            trim_cap: 150.0,
            trim_scale: 1.01,
            final_weight_sum: 500.0,
            omitted_strata: vec![OmittedStratum {
                source: "region".into(),
                category: "east".into(),
                population: 500.0,
            }],
        };
        let text = report.to_toml_string();
        assert_eq!(CalibrationReport::from_toml_str(&text).unwrap(), report);
    }
}
