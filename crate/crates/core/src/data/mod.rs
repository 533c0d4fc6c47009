//! Data model, covariate schema and file ingestion.

pub mod benchmark;
pub mod io;
pub mod records;
pub mod schema;
pub mod weights;

pub use benchmark::{BenchmarkTable, Cell, CellTable, Margin, MarginTable};
pub use records::{filter_eligible, Classified, FrameUnit, RespondentRecord, DEFAULT_MIN_ANSWERED};
pub use schema::{CovariateKind, CovariateSchema, CovariateSpec};
pub use weights::{Stage, WeightVector};
