use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{mean, pairwise_sum};

pub const DEFAULT_LOWER_DIVISOR: f64 = 30.0;
pub const DEFAULT_UPPER_MULTIPLIER: f64 = 10.0;

/// Weights below `mean / lower_divisor` or above `mean * upper_multiplier`
/// are clamped to those bounds. The mean comes from the untrimmed weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrimPolicy {
    pub lower_divisor: f64,
    pub upper_multiplier: f64,
    /// When set, the clamped weights are rescaled to sum to this value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rescale_target: Option<f64>,
}

impl Default for TrimPolicy {
    fn default() -> Self {
        TrimPolicy {
            lower_divisor: DEFAULT_LOWER_DIVISOR,
            upper_multiplier: DEFAULT_UPPER_MULTIPLIER,
            rescale_target: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrimOutcome {
    pub weights: Vec<f64>,
    pub floor: f64,
    pub cap: f64,
    /// Factor applied after clamping (1 when no rescale was requested).
    pub scale: f64,
    pub trimmed_low: usize,
    pub trimmed_high: usize,
}

impl TrimPolicy {
    pub fn new(lower_divisor: f64, upper_multiplier: f64) -> Result<Self> {
        let policy = TrimPolicy { lower_divisor, upper_multiplier, rescale_target: None };
        policy.validate()?;
        Ok(policy)
    }

    pub fn with_rescale(mut self, target: f64) -> Self {
        self.rescale_target = Some(target);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.lower_divisor) || !positive(self.upper_multiplier) {
            return Err(Error::Config("trim bounds must be positive and finite".into()));
        }
        // floor < cap for every positive mean
        if self.lower_divisor * self.upper_multiplier <= 1.0 {
            return Err(Error::Config(format!(
                "trim floor 1/{} is not below cap {}",
                self.lower_divisor, self.upper_multiplier
            )));
        }
        if let Some(t) = self.rescale_target {
            if !positive(t) {
                return Err(Error::Config(format!("rescale target must be positive, got {t}")));
            }
        }
        Ok(())
    }

    pub fn bounds(&self, mean_weight: f64) -> (f64, f64) {
        (mean_weight / self.lower_divisor, mean_weight * self.upper_multiplier)
    }

    /// Single-pass clamp, followed by the optional rescale.
    pub fn apply(&self, weights: &[f64]) -> Result<TrimOutcome> {
        self.validate()?;
        if weights.is_empty() {
            return Err(Error::EmptySample);
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidInput(format!("cannot trim non-positive weight {w}")));
        }
        let (floor, cap) = self.bounds(mean(weights));
        let mut trimmed_low = 0;
        let mut trimmed_high = 0;
        let mut clamped: Vec<f64> = weights
            .iter()
            .map(|&w| {
                if w < floor {
                    trimmed_low += 1;
                    floor
                } else if w > cap {
                    trimmed_high += 1;
                    cap
                } else {
                    w
                }
            })
            .collect();
        let scale = match self.rescale_target {
            Some(target) => target / pairwise_sum(&clamped),
            None => 1.0,
        };
        if scale != 1.0 {
            clamped.iter_mut().for_each(|w| *w *= scale);
        }
        Ok(TrimOutcome { weights: clamped, floor, cap, scale, trimmed_low, trimmed_high })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clamps_the_low_tail() {
        let out = TrimPolicy::default().apply(&[1.0, 1.0, 1.0, 397.0]).unwrap();
        let third = 100.0 / 30.0;
        assert_eq!(out.floor, third);
        assert_eq!(out.cap, 1000.0);
        assert_eq!(out.weights, vec![third, third, third, 397.0]);
        assert_eq!((out.trimmed_low, out.trimmed_high), (3, 0));
        assert_eq!(out.scale, 1.0);
    }

    #[test]
    fn uniform_weights_are_untouched() {
        let out = TrimPolicy::default().apply(&[2.0; 5]).unwrap();
        assert_eq!(out.weights, vec![2.0; 5]);
    }

    #[test]
    fn rejects_inverted_bounds() {
        assert!(TrimPolicy::new(0.5, 1.5).is_err());
        assert!(TrimPolicy::new(30.0, -1.0).is_err());
        assert!(TrimPolicy::new(30.0, 10.0).is_ok());
        assert!(TrimPolicy::default().apply(&[]).is_err());
    }

    proptest! {
        #[test]
        fn output_lies_within_bounds(ws in proptest::collection::vec(1e-3f64..1e4, 1..50)) {
            let policy = TrimPolicy::default();
            let m = mean(&ws);
            let out = policy.apply(&ws).unwrap();
            for w in &out.weights {
                prop_assert!(*w >= m / 30.0 && *w <= m * 10.0);
            }
        }
    }
}
