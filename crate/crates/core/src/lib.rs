//! Optimal multiple-testing policies in the two-group model.
//!
//! The pipeline is: build a [`TwoGroupModel`], compute locFDR values with
//! [`locfdr::locfdr`], calibrate a [`CalibratedPolicy`] by Monte Carlo, and
//! apply it with [`policy::decide`]. [`simulate`] runs the full comparison
//! against baseline procedures; [`estimate`] fits the model from data.

pub mod error;
pub mod estimate;
pub mod locfdr;
pub mod model;
pub mod policy;
pub mod simulate;
pub mod stream;

pub use error::{OmtError, Result};
pub use locfdr::LocFdrVector;
pub use policy::{CalibratedPolicy, Criterion};
pub use model::{
    BlockSpec, DependenceSpec, EquicorrSpec, MarginalMixture, ModelSpec, NormalComponent, Sample, State,
    TwoGroupModel,
};
pub use simulate::{run_experiment, ExperimentConfig, ProcedureVariant, SimulationReport};
pub use stream::StreamFactory;
