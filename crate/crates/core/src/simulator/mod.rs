//! Monte-Carlo harness: synthetic population with coverage, sampling and
//! nonresponse error, pushed through the full weighting pipeline and scored
//! against the realized truth.

mod config;
mod evaluate;
mod population;
mod sampling;
mod seeds;

pub use config::{
    CalibrationMode, CooldownSpec, CovariateGenerator, Density, LinearSpec, OutcomeSpec, PipelineSpec, RegionSpec,
    ResponseSpec, SimConfig,
};
pub use evaluate::{
    estimands, export_cross_section, run_replications, weigh_cross_section, CrossSection, Estimand, EvaluationReport,
    Method, ReplicationRow, SummaryRow, WeightedSection,
};
pub use population::{generate_population, Population, SimTruth, SimWorld, FLAG_OUTCOME, VALUE_OUTCOME};
pub use sampling::{draw_daily_sample, simulate_response, CooldownState, Response, SamplingDesign};
pub use seeds::derive_seed;
