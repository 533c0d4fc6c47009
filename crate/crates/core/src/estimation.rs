//! Weighted estimators of a population mean, total and ratio, with their
//! variance estimators and symmetric confidence intervals.
//!
//! With weights `w`, outcomes `y`, `z`:
//!
//! * mean: `ŷ = Σ w y / Σ w`, `V = Σ w² (y − ŷ)² / (Σ w)²`
//! * total: `t = Σ w y`, `V = Σ w² (y − ŷ)²`
//! * ratio: `r = Σ w y / Σ w z`, `V = Σ w² (y − r z)² / (Σ w z)²`
//!
//! Intervals are `point ± alpha · sqrt(V)`.

use serde::{Deserialize, Serialize};

use crate::data::{RespondentRecord, WeightVector};
use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;

pub const DEFAULT_ALPHA: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimateKind {
    Mean,
    Total,
    Ratio,
}

impl EstimateKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimateKind::Mean => "mean",
            EstimateKind::Total => "total",
            EstimateKind::Ratio => "ratio",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub kind: EstimateKind,
    pub point: f64,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub alpha_multiplier: f64,
    pub n_respondents: usize,
    pub weight_sum: f64,
}

impl EstimateResult {
    fn new(kind: EstimateKind, point: f64, variance: f64, alpha: f64, n: usize, weight_sum: f64) -> Self {
        let margin = alpha * variance.sqrt();
        EstimateResult {
            kind,
            point,
            variance,
            ci_low: point - margin,
            ci_high: point + margin,
            alpha_multiplier: alpha,
            n_respondents: n,
            weight_sum,
        }
    }

    pub fn standard_error(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.ci_low <= truth && truth <= self.ci_high
    }
}

fn check_inputs(weights: &WeightVector, columns: &[&[f64]], alpha: f64) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::InvalidInput(format!("alpha multiplier must be nonnegative, got {alpha}")));
    }
    for column in columns {
        if column.len() != weights.len() {
            return Err(Error::InvalidInput(format!("{} outcomes for {} weights", column.len(), weights.len())));
        }
        if let Some(j) = column.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteOutcome(weights.ids()[j].clone()));
        }
    }
    Ok(())
}

struct RatioParts {
    point: f64,
    denominator: f64,
    variance: f64,
}

fn ratio_parts(w: &[f64], y: &[f64], z: &[f64]) -> Result<RatioParts> {
    let wy: Vec<f64> = w.iter().zip(y).map(|(w, y)| w * y).collect();
    let wz: Vec<f64> = w.iter().zip(z).map(|(w, z)| w * z).collect();
    let numerator = pairwise_sum(&wy);
    let denominator = pairwise_sum(&wz);
    if denominator == 0.0 {
        return Err(Error::UndefinedRatio);
    }
    let point = numerator / denominator;
    let sq: Vec<f64> = w
        .iter()
        .zip(y)
        .zip(z)
        .map(|((w, y), z)| {
            let e = y - point * z;
            w * w * (e * e)
        })
        .collect();
    let variance = pairwise_sum(&sq) / (denominator * denominator);
    Ok(RatioParts { point, denominator, variance })
}

pub fn estimate_mean(weights: &WeightVector, y: &[f64], alpha: f64) -> Result<EstimateResult> {
    check_inputs(weights, &[y], alpha)?;
    let ones = vec![1.0; y.len()];
    let parts = ratio_parts(weights.values(), y, &ones)?;
    Ok(EstimateResult::new(EstimateKind::Mean, parts.point, parts.variance, alpha, y.len(), parts.denominator))
}

/// Variance is centered at the weighted mean `ŷ`.
pub fn estimate_total(weights: &WeightVector, y: &[f64], alpha: f64) -> Result<EstimateResult> {
    check_inputs(weights, &[y], alpha)?;
    let w = weights.values();
    let mean = estimate_mean(weights, y, alpha)?.point;
    let wy: Vec<f64> = w.iter().zip(y).map(|(w, y)| w * y).collect();
    let sq: Vec<f64> = w
        .iter()
        .zip(y)
        .map(|(w, y)| {
            let e = y - mean;
            w * w * (e * e)
        })
        .collect();
    Ok(EstimateResult::new(EstimateKind::Total, pairwise_sum(&wy), pairwise_sum(&sq), alpha, y.len(), weights.sum()))
}

pub fn estimate_ratio(weights: &WeightVector, y: &[f64], z: &[f64], alpha: f64) -> Result<EstimateResult> {
    check_inputs(weights, &[y, z], alpha)?;
    let parts = ratio_parts(weights.values(), y, z)?;
    Ok(EstimateResult::new(EstimateKind::Ratio, parts.point, parts.variance, alpha, y.len(), weights.sum()))
}

/// Weighted prevalence of a 0/1 indicator `y` within the domain flagged by
/// the 0/1 indicator `in_domain`.
pub fn estimate_domain_ratio(
    weights: &WeightVector,
    y: &[f64],
    in_domain: &[f64],
    alpha: f64,
) -> Result<EstimateResult> {
    check_inputs(weights, &[y, in_domain], alpha)?;
    for (j, (&yj, &zj)) in y.iter().zip(in_domain).enumerate() {
        if !matches!(yj, 0.0 | 1.0) || !matches!(zj, 0.0 | 1.0) {
            return Err(Error::InvalidInput(format!(
                "domain estimates need 0/1 indicators; respondent `{}` has y={yj}, z={zj}",
                weights.ids()[j]
            )));
        }
    }
    let yz: Vec<f64> = y.iter().zip(in_domain).map(|(y, z)| y * z).collect();
    let parts = ratio_parts(weights.values(), &yz, in_domain)?;
    let n = in_domain.iter().filter(|&&z| z == 1.0).count();
    Ok(EstimateResult::new(EstimateKind::Ratio, parts.point, parts.variance, alpha, n, parts.denominator))
}

/// Outcome column aligned with `respondents`.
pub fn outcome_column(respondents: &[RespondentRecord], name: &str) -> Result<Vec<f64>> {
    respondents
        .iter()
        .map(|r| {
            r.outcome(name)
                .ok_or_else(|| Error::InvalidInput(format!("respondent `{}` has no outcome `{name}`", r.respondent_id)))
        })
        .collect()
}

/// 0/1 membership in `region`.
pub fn region_indicator(respondents: &[RespondentRecord], region: &str) -> Vec<f64> {
    respondents.iter().map(|r| if r.region == region { 1.0 } else { 0.0 }).collect()
}
