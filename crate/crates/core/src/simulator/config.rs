use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::RakingConfig;
use crate::data::schema::is_reserved_column;
use crate::data::DEFAULT_MIN_ANSWERED;
use crate::error::{Error, Result};
use crate::estimation::DEFAULT_ALPHA;
use crate::propensity::{TrimPolicy, DEFAULT_L2_STRENGTH};

const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Density {
    Low,
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub name: String,
    pub share: f64,
    pub density: Density,
    /// Daily sampling fraction. Defaults to `sampling_rate` spread inversely
    /// to the region's population share.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inclusion_probability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateGenerator {
    pub name: String,
    pub levels: Vec<String>,
    pub probabilities: Vec<f64>,
    /// Region-specific level probabilities overriding `probabilities`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_region: BTreeMap<String, Vec<f64>>,
}

/// Linear predictor `intercept + Σ coefficients[key]` over matching keys
/// `covariate=level` or `region=name`. An intercept of `inf` means certainty.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearSpec {
    pub intercept: f64,
    pub coefficients: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResponseSpec {
    #[serde(flatten)]
    pub linear: LinearSpec,
    /// Not-missing-at-random strength: added to the response logit times the
    /// unit's `y_value`. Nonzero values leave bias the covariates cannot explain.
    pub outcome_dependence: f64,
    /// Probability that a responder answers only one question.
    pub partial_rate: f64,
}

impl Default for ResponseSpec {
    fn default() -> Self {
        ResponseSpec { linear: LinearSpec::default(), outcome_dependence: 0.0, partial_rate: 0.0 }
    }
}

/// `y_value = linear + N(0, noise_sd)`, `y_flag = 1{y_value > threshold}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutcomeSpec {
    #[serde(flatten)]
    pub linear: LinearSpec,
    pub noise_sd: f64,
    pub threshold: f64,
}

impl Default for OutcomeSpec {
    fn default() -> Self {
        OutcomeSpec { linear: LinearSpec::default(), noise_sd: 1.0, threshold: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CooldownSpec {
    pub low: u32,
    pub high: u32,
}

impl Default for CooldownSpec {
    fn default() -> Self {
        CooldownSpec { low: 30, high: 90 }
    }
}

impl CooldownSpec {
    pub fn days(&self, density: Density) -> u32 {
        match density {
            Density::Low => self.low,
            Density::High => self.high,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationMode {
    Cells,
    Margins,
}

/// How each simulated cross-section is weighted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSpec {
    pub l2_strength: f64,
    pub use_design_weights: bool,
    pub min_answered: u32,
    pub calibration: CalibrationMode,
    /// Covariates with population benchmarks; empty means all of them.
    pub benchmark_covariates: Vec<String>,
    /// One joint margin over the benchmark covariates, rather than one each.
    pub joint_margin: bool,
    pub stage1_trim: TrimPolicy,
    pub raking: RakingConfig,
}

impl Default for PipelineSpec {
    fn default() -> Self {
        PipelineSpec {
            l2_strength: DEFAULT_L2_STRENGTH,
            use_design_weights: true,
            min_answered: DEFAULT_MIN_ANSWERED,
            calibration: CalibrationMode::Margins,
            benchmark_covariates: Vec::new(),
            joint_margin: true,
            stage1_trim: TrimPolicy::default(),
            raking: RakingConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub population_size: usize,
    pub replications: usize,
    pub n_days: u32,
    pub alpha_multiplier: f64,
    /// Expected overall daily sampling fraction, used for regions without an
    /// explicit inclusion probability.
    pub sampling_rate: f64,
    #[serde(rename = "region")]
    pub regions: Vec<RegionSpec>,
    #[serde(rename = "covariate")]
    pub covariates: Vec<CovariateGenerator>,
    pub coverage: LinearSpec,
    pub response: ResponseSpec,
    pub outcome: OutcomeSpec,
    pub cooldown: CooldownSpec,
    pub pipeline: PipelineSpec,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            population_size: 100_000,
            replications: 500,
            n_days: 1,
            alpha_multiplier: DEFAULT_ALPHA,
            sampling_rate: 0.05,
            regions: Vec::new(),
            covariates: Vec::new(),
            coverage: LinearSpec { intercept: f64::INFINITY, coefficients: BTreeMap::new() },
            response: ResponseSpec::default(),
            outcome: OutcomeSpec::default(),
            cooldown: CooldownSpec::default(),
            pipeline: PipelineSpec::default(),
        }
    }
}

fn check_distribution(what: &str, probs: &[f64], len: usize) -> Result<()> {
    if probs.len() != len {
        return Err(Error::Config(format!("{what}: {} probabilities for {len} levels", probs.len())));
    }
    if probs.iter().any(|p| !(p.is_finite() && *p > 0.0 && *p <= 1.0)) {
        return Err(Error::Config(format!("{what}: every category needs a probability in (0, 1]")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::Config(format!("{what}: probabilities sum to {sum}, not 1")));
    }
    Ok(())
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.population_size == 0 {
            return Err(Error::Config("population_size must be positive".into()));
        }
        if self.n_days == 0 {
            return Err(Error::Config("n_days must be at least 1".into()));
        }
        if !(self.alpha_multiplier.is_finite() && self.alpha_multiplier >= 0.0) {
            return Err(Error::Config("alpha_multiplier must be nonnegative".into()));
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return Err(Error::Config("sampling_rate must lie in (0, 1]".into()));
        }
        if self.regions.is_empty() {
            return Err(Error::Config("at least one region is required".into()));
        }
        let mut names = HashSet::new();
        for r in &self.regions {
            if r.name.is_empty() || !names.insert(r.name.as_str()) {
                return Err(Error::Config(format!("region name `{}` is empty or repeated", r.name)));
            }
            if let Some(p) = r.inclusion_probability {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(Error::Config(format!(
                        "region `{}`: inclusion probability must lie in (0, 1]",
                        r.name
                    )));
                }
            }
        }
        let shares: Vec<f64> = self.regions.iter().map(|r| r.share).collect();
        check_distribution("region shares", &shares, shares.len())?;

        let mut cov_names = HashSet::new();
        for c in &self.covariates {
            if c.name.is_empty() || !cov_names.insert(c.name.as_str()) || is_reserved_column(&c.name) {
                return Err(Error::Config(format!("covariate name `{}` is empty, repeated or reserved", c.name)));
            }
            let distinct: HashSet<&String> = c.levels.iter().collect();
            if c.levels.is_empty() || distinct.len() != c.levels.len() {
                return Err(Error::Config(format!("covariate `{}` needs distinct levels", c.name)));
            }
            check_distribution(&format!("covariate `{}`", c.name), &c.probabilities, c.levels.len())?;
            for (region, probs) in &c.by_region {
                if !names.contains(region.as_str()) {
                    return Err(Error::Config(format!("covariate `{}`: unknown region `{region}`", c.name)));
                }
                check_distribution(&format!("covariate `{}` in `{region}`", c.name), probs, c.levels.len())?;
            }
        }
        if self.cooldown.low == 0 || self.cooldown.high == 0 {
            return Err(Error::Config("cooldowns must be positive".into()));
        }

        for (what, spec) in
            [("coverage", &self.coverage), ("response", &self.response.linear), ("outcome", &self.outcome.linear)]
        {
            if spec.intercept.is_nan() || spec.intercept == f64::NEG_INFINITY {
                return Err(Error::Config(format!("{what} intercept must be finite or +inf")));
            }
            for (key, value) in &spec.coefficients {
                if !value.is_finite() {
                    return Err(Error::Config(format!("{what} coefficient `{key}` is not finite")));
                }
                self.resolve_key(key).map_err(|e| Error::Config(format!("{what}: {e}")))?;
            }
        }
        if !self.outcome.linear.intercept.is_finite() {
            return Err(Error::Config("outcome intercept must be finite".into()));
        }
        if !(self.outcome.noise_sd.is_finite() && self.outcome.noise_sd >= 0.0) {
            return Err(Error::Config("outcome noise_sd must be nonnegative".into()));
        }
        if !self.outcome.threshold.is_finite() || !self.response.outcome_dependence.is_finite() {
            return Err(Error::Config("outcome threshold and response outcome_dependence must be finite".into()));
        }
        if !(0.0..1.0).contains(&self.response.partial_rate) {
            return Err(Error::Config("response partial_rate must lie in [0, 1)".into()));
        }
        if !(self.pipeline.l2_strength.is_finite() && self.pipeline.l2_strength >= 0.0) {
            return Err(Error::Config("pipeline l2_strength must be nonnegative".into()));
        }
        for name in &self.pipeline.benchmark_covariates {
            if !cov_names.contains(name.as_str()) {
                return Err(Error::Config(format!("benchmark covariate `{name}` is not generated")));
            }
        }
        self.pipeline.stage1_trim.validate()?;
        self.pipeline.raking.trim.validate()?;
        Ok(())
    }

    /// `covariate=level` → `(Some(covariate index), level index)`;
    /// `region=name` → `(None, region index)`.
    pub(crate) fn resolve_key(&self, key: &str) -> std::result::Result<(Option<usize>, usize), String> {
        let (name, value) =
            key.split_once('=').ok_or_else(|| format!("coefficient key `{key}` must be `name=level`"))?;
        if name == "region" {
            let index =
                self.regions.iter().position(|r| r.name == value).ok_or_else(|| format!("unknown region `{value}`"))?;
            return Ok((None, index));
        }
        let ci =
            self.covariates.iter().position(|c| c.name == name).ok_or_else(|| format!("unknown covariate `{name}`"))?;
        let li = self.covariates[ci]
            .levels
            .iter()
            .position(|l| l == value)
            .ok_or_else(|| format!("unknown level `{value}` of `{name}`"))?;
        Ok((Some(ci), li))
    }

    /// Per-region daily inclusion probabilities.
    pub fn inclusion_probabilities(&self) -> Vec<f64> {
        let n = self.regions.len() as f64;
        self.regions
            .iter()
            .map(|r| r.inclusion_probability.unwrap_or_else(|| (self.sampling_rate / (n * r.share)).min(1.0)))
            .collect()
    }

    pub fn benchmark_covariates(&self) -> Vec<String> {
        if self.pipeline.benchmark_covariates.is_empty() {
            self.covariates.iter().map(|c| c.name.clone()).collect()
        } else {
            self.pipeline.benchmark_covariates.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn minimal() -> SimConfig {
        SimConfig {
            population_size: 1000,
            replications: 2,
            regions: vec![
                RegionSpec { name: "a".into(), share: 0.6, density: Density::High, inclusion_probability: None },
                RegionSpec { name: "b".into(), share: 0.4, density: Density::Low, inclusion_probability: None },
            ],
            covariates: vec![CovariateGenerator {
                name: "g".into(),
                levels: vec!["f".into(), "m".into()],
                probabilities: vec![0.5, 0.5],
                by_region: BTreeMap::new(),
            }],
            ..SimConfig::default()
        }
    }

    #[test]
    fn minimal_config_is_valid() {
        minimal().validate().unwrap();
    }

    #[test]
    fn degenerate_configs_are_rejected() {
        let mut c = minimal();
        c.replications = 0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));

        let mut c = minimal();
        c.regions[0].share = 0.0;
        c.regions[1].share = 1.0;
        assert!(c.validate().is_err());

        let mut c = minimal();
        c.covariates[0].probabilities = vec![1.0, 0.0];
        assert!(c.validate().is_err());

        let mut c = minimal();
        c.response.linear.coefficients.insert("g=x".into(), 1.0);
        assert!(c.validate().is_err());

        let mut c = minimal();
        c.cooldown.low = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn inclusion_defaults_oversample_small_regions() {
        let p = minimal().inclusion_probabilities();
        // 0.05 / (2 * share)
        assert!((p[0] - 0.05 / 1.2).abs() < 1e-15);
        assert!((p[1] - 0.05 / 0.8).abs() < 1e-15);
        assert!(p[1] > p[0]);
    }

    #[test]
    fn toml_round_trip() {
        let c = minimal();
        let text = c.to_toml_string();
        assert_eq!(SimConfig::from_toml_str(&text).unwrap(), c);
    }
}
