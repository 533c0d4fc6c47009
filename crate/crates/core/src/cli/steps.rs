//! The weighting stages as file-to-file steps. `pipeline` chains the same
//! functions the individual subcommands call, so artifacts are identical.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use log::info;

use crate::calibration::calibrate;
use crate::data::io::{load_benchmarks, load_frame, load_respondents, load_weights, write_file, write_weights};
use crate::data::{filter_eligible, BenchmarkTable, Classified, CovariateSchema, RespondentRecord, WeightVector};
use crate::error::{Error, Result};
use crate::estimation::{
    estimate_domain_ratio, estimate_mean, estimate_ratio, estimate_total, outcome_column, EstimateResult,
};
use crate::numeric::pairwise_sum;
use crate::propensity::{fit_propensity, ipsw_weights, PropensityModel};
use crate::simulator::CalibrationMode;

use super::config::RunConfig;

pub const MODEL_FILE: &str = "propensity_model.csv";
pub const IPSW_FILE: &str = "ipsw_weights.csv";
pub const WEIGHTS_FILE: &str = "weights.csv";
pub const REPORT_FILE: &str = "calibration_report.toml";
pub const ESTIMATES_FILE: &str = "estimates.csv";

pub fn fit_step(config: &RunConfig, out: &Path) -> Result<Vec<&'static str>> {
    let schema = CovariateSchema::load(config.require(&config.schema, "schema")?)?;
    let frame = load_frame(config.require(&config.frame, "frame")?, &schema)?;
    let model = fit_propensity(&frame, &schema, config.l2_strength)?;
    info!("propensity fit: {} iterations, converged={}", model.iterations, model.converged);
    write_file(out.join(MODEL_FILE), |w| model.write_csv(w))?;
    Ok(vec![MODEL_FILE])
}

fn check_mode(config: &RunConfig, benchmarks: &BenchmarkTable) -> Result<()> {
    let expected = match benchmarks {
        BenchmarkTable::Cells(_) => CalibrationMode::Cells,
        BenchmarkTable::Margins(_) => CalibrationMode::Margins,
    };
    match config.mode {
        Some(mode) if mode != expected => Err(Error::Config(format!(
            "mode `{}` does not match the {} benchmark file",
            mode_name(mode),
            benchmarks.mode_name()
        ))),
        _ => Ok(()),
    }
}

fn mode_name(mode: CalibrationMode) -> &'static str {
    match mode {
        CalibrationMode::Cells => "cells",
        CalibrationMode::Margins => "margins",
    }
}

pub fn weigh_step(config: &RunConfig, model_path: &Path, out: &Path) -> Result<Vec<&'static str>> {
    let schema = CovariateSchema::load(config.require(&config.schema, "schema")?)?;
    let respondents = load_respondents(config.require(&config.respondents, "respondents")?, &schema)?;
    let benchmarks = load_benchmarks(config.require(&config.benchmarks, "benchmarks")?)?;
    check_mode(config, &benchmarks)?;
    let file = std::fs::File::open(model_path).map_err(|e| Error::io(model_path, e))?;
    let model = PropensityModel::read_csv(file, &schema).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(model_path, source),
        Error::Csv { source, .. } => Error::csv(model_path, source),
        other => other,
    })?;

    let eligible = filter_eligible(&respondents, config.min_answered);
    if eligible.is_empty() {
        return Err(Error::EmptySample);
    }
    info!("{} of {} respondents eligible", eligible.len(), respondents.len());
    let ipsw = ipsw_weights(&model, &eligible, &config.stage1_trim, config.use_design_weights)?;
    let (weights, report) = calibrate(&ipsw, &eligible, &schema, &benchmarks, &config.raking)?;
    for stratum in &report.omitted_strata {
        log::warn!("omitted {} `{}` (population {})", stratum.source, stratum.category, stratum.population);
    }

    write_file(out.join(IPSW_FILE), |w| write_weights(w, &ipsw))?;
    write_file(out.join(WEIGHTS_FILE), |w| write_weights(w, &weights))?;
    let report_path = out.join(REPORT_FILE);
    std::fs::write(&report_path, report.to_toml_string()).map_err(|e| Error::io(&report_path, e))?;
    Ok(vec![IPSW_FILE, WEIGHTS_FILE, REPORT_FILE])
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub outcome: String,
    /// `dimension=category`, empty for whole-population estimands.
    pub domain: String,
    pub result: EstimateResult,
}

/// Expands `dimension` to every observed category; `dimension=category`
/// passes through.
fn expand_domains(
    specs: &[String],
    respondents: &[RespondentRecord],
    schema: &CovariateSchema,
) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for spec in specs {
        let (dimension, category) = match spec.split_once('=') {
            Some((d, c)) => (d.trim(), Some(c.trim())),
            None => (spec.trim(), None),
        };
        if dimension != "region" && schema.get(dimension).is_none() {
            return Err(Error::Config(format!("domain dimension `{dimension}` is neither `region` nor a covariate")));
        }
        match category {
            Some(c) => out.push((dimension.to_string(), c.to_string())),
            None => {
                let seen: BTreeSet<&str> =
                    respondents.iter().filter_map(|r| r.dimension_value(schema, dimension)).collect();
                out.extend(seen.into_iter().map(|c| (dimension.to_string(), c.to_string())));
            }
        }
    }
    Ok(out)
}

pub fn compute_estimates(
    respondents: &[RespondentRecord],
    schema: &CovariateSchema,
    weights: &WeightVector,
    outcomes: &[String],
    domains: &[String],
    alpha: f64,
) -> Result<Vec<EstimateRow>> {
    let outcomes: Vec<String> = if outcomes.is_empty() {
        respondents.first().map(|r| r.outcomes.keys().cloned().collect()).unwrap_or_default()
    } else {
        outcomes.to_vec()
    };
    let domains = expand_domains(domains, respondents, schema)?;
    let mut rows = Vec::new();
    for outcome in &outcomes {
        let y = outcome_column(respondents, outcome)?;
        let whole = |result| EstimateRow { outcome: outcome.clone(), domain: String::new(), result };
        rows.push(whole(estimate_mean(weights, &y, alpha)?));
        rows.push(whole(estimate_total(weights, &y, alpha)?));
        for (dimension, category) in &domains {
            let z: Vec<f64> = respondents
                .iter()
                .map(|r| if r.dimension_value(schema, dimension) == Some(category.as_str()) { 1.0 } else { 0.0 })
                .collect();
            let result = if y.iter().all(|&v| v == 0.0 || v == 1.0) {
                estimate_domain_ratio(weights, &y, &z, alpha)?
            } else {
                domain_mean(weights, &y, &z, alpha)?
            };
            rows.push(EstimateRow { outcome: outcome.clone(), domain: format!("{dimension}={category}"), result });
        }
    }
    Ok(rows)
}

/// Domain mean of a non-indicator outcome: the ratio of `y*z` to `z`, with
/// counts reported for the domain as for indicator outcomes.
fn domain_mean(weights: &WeightVector, y: &[f64], z: &[f64], alpha: f64) -> Result<EstimateResult> {
    let yz: Vec<f64> = y.iter().zip(z).map(|(y, z)| y * z).collect();
    let mut result = estimate_ratio(weights, &yz, z, alpha)?;
    let wz: Vec<f64> = weights.values().iter().zip(z).map(|(w, z)| w * z).collect();
    result.n_respondents = z.iter().filter(|&&v| v == 1.0).count();
    result.weight_sum = pairwise_sum(&wz);
    Ok(result)
}

pub fn write_estimates<W: Write>(out: W, rows: &[EstimateRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let err = |e| Error::csv("<estimates>", e);
    wtr.write_record(["estimand", "outcome", "domain", "point", "variance", "ci_low", "ci_high", "n", "weight_sum"])
        .map_err(err)?;
    for row in rows {
        let r = &row.result;
        wtr.write_record([
            r.kind.as_str().to_string(),
            row.outcome.clone(),
            row.domain.clone(),
            r.point.to_string(),
            r.variance.to_string(),
            r.ci_low.to_string(),
            r.ci_high.to_string(),
            r.n_respondents.to_string(),
            r.weight_sum.to_string(),
        ])
        .map_err(err)?;
    }
    wtr.flush().map_err(|e| Error::io("<estimates>", e))
}

pub fn estimate_step(config: &RunConfig, weights_path: &Path, out: &Path) -> Result<Vec<&'static str>> {
    let schema = CovariateSchema::load(config.require(&config.schema, "schema")?)?;
    let respondents = load_respondents(config.require(&config.respondents, "respondents")?, &schema)?;
    let eligible = filter_eligible(&respondents, config.min_answered);
    let weights = load_weights(weights_path)?.aligned_to(&eligible)?;
    let rows =
        compute_estimates(&eligible, &schema, &weights, &config.outcomes, &config.domains, config.alpha_multiplier)?;
    write_file(out.join(ESTIMATES_FILE), |w| write_estimates(w, &rows))?;
    Ok(vec![ESTIMATES_FILE])
}
