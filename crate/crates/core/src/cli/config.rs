use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::RakingConfig;
use crate::data::DEFAULT_MIN_ANSWERED;
use crate::error::{Error, Result};
use crate::estimation::DEFAULT_ALPHA;
use crate::propensity::{TrimPolicy, DEFAULT_L2_STRENGTH};
use crate::simulator::CalibrationMode;

/// Settings for `pipeline` and `validate`. Relative paths resolve against
/// the config file's directory; command-line flags override every field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema: Option<PathBuf>,
    pub frame: Option<PathBuf>,
    pub respondents: Option<PathBuf>,
    pub benchmarks: Option<PathBuf>,
    /// Must agree with the benchmark file layout when set.
    pub mode: Option<CalibrationMode>,
    pub min_answered: u32,
    pub l2_strength: f64,
    pub use_design_weights: bool,
    pub alpha_multiplier: f64,
    /// Recorded for reproducibility; the weighting pipeline draws nothing.
    pub seed: u64,
    /// Outcome columns to estimate; empty means every `y_` column.
    pub outcomes: Vec<String>,
    /// `dimension` (every category) or `dimension=category`.
    pub domains: Vec<String>,
    pub stage1_trim: TrimPolicy,
    pub raking: RakingConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema: None,
            frame: None,
            respondents: None,
            benchmarks: None,
            mode: None,
            min_answered: DEFAULT_MIN_ANSWERED,
            l2_strength: DEFAULT_L2_STRENGTH,
            use_design_weights: true,
            alpha_multiplier: DEFAULT_ALPHA,
            seed: 0,
            outcomes: Vec::new(),
            domains: Vec::new(),
            stage1_trim: TrimPolicy::default(),
            raking: RakingConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for slot in [&mut config.schema, &mut config.frame, &mut config.respondents, &mut config.benchmarks] {
            if let Some(p) = slot.as_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l2_strength >= 0.0 && self.l2_strength.is_finite()) {
            return Err(Error::Config(format!("l2_strength must be non-negative, got {}", self.l2_strength)));
        }
        if !(self.alpha_multiplier > 0.0 && self.alpha_multiplier.is_finite()) {
            return Err(Error::Config(format!("alpha_multiplier must be positive, got {}", self.alpha_multiplier)));
        }
        self.stage1_trim.validate()?;
        self.raking.trim.validate()
    }

    pub fn require<'a>(&self, field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
        field.as_deref().ok_or_else(|| Error::Config(format!("`{name}` path is not set")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml_str("minanswered = 3"), Err(Error::Config(_))));
    }

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig {
            schema: Some("s.toml".into()),
            mode: Some(CalibrationMode::Cells),
            domains: vec!["region".into()],
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }
}
