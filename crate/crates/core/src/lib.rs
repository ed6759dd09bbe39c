//! Linear, nonlinear and separable Fréchet regression for distribution- and
//! SPD-matrix-valued responses, with a simulation harness.

pub mod error;
pub mod estimators;
pub mod evaluate;
pub mod kernel;
pub mod metric;
pub mod simgen;
pub mod weights;

pub use error::{Error, Result};
pub use estimators::{
    fit_lfr, fit_nlfr_fixed, fit_nlfr_profile, fit_snlfr, predict, predict_many, Covariates, Dataset, FittedModel,
    HTransform, MomentEstimates,
};
pub use metric::{MetricObject, QuantileFunction, RawObject, SpaceKind, SpaceSpec, SpdMatrix};
pub use simgen::{ModelId, SimulationSpec};
pub use weights::{LinkSpec, ScalarLink, WeightFlavor};
pub use evaluate::{run_experiment, ExperimentOptions, ExperimentResult, Method};
