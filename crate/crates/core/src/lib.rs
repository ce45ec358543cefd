//! Mendelian randomization with many correlated genetic instruments from
//! summarized data: inverse-variance weighted estimation under correlation,
//! principal-component and two-stage least squares estimators, instrument
//! selection (pruning, conditional, PCA), matrix diagnostics, and a
//! reproducible simulation harness.

pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod io;
pub mod model;
pub mod selection;
pub mod simulation;

pub use error::{Error, Result};
pub use estimators::{CausalEstimate, IndividualData};
pub use model::{CorrelationMatrix, SummarySet, VariantSummary, WeightKind, WeightMatrix};
pub use selection::{SelectionMethod, SelectionResult};
pub use simulation::{Design, ExperimentConfig, ExperimentResult, SelectionSpec};
