//! Stage 1: response propensity and inverse-propensity nonresponse weights.

mod model;
mod trim;

pub use model::{
    fit_propensity, ipsw_weights, raw_ipsw_weights, CovariateEffects, PropensityModel, DEFAULT_L2_STRENGTH,
    MAX_NEWTON_ITERATIONS, MIN_PROPENSITY, SCORE_TOLERANCE,
};
pub use trim::{TrimOutcome, TrimPolicy, DEFAULT_LOWER_DIVISOR, DEFAULT_UPPER_MULTIPLIER};
