//! Data-driven controller synthesis from bilinear Koopman-generator surrogates.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod config;
pub mod controller;
pub mod domain;
pub mod edmd;
pub mod error;
pub mod figures;
pub mod lifting;
pub mod linalg;
pub mod lmi;
pub mod plants;
pub mod scenarios;
pub mod sdp;
pub mod synthesis;
pub mod uncertainty;
pub mod verify;

pub use error::{Error, Result};
pub use config::{Pipeline, RegionConfig, RunConfig};
pub use controller::DesignResult;
pub use domain::AxisBox;
pub use edmd::Surrogate;
pub use lifting::{Lifting, Observable};
pub use linalg::{Mat, MatrixData, Vector};
pub use lmi::Theorem;
pub use plants::{Plant, PlantSpec, SampleSet, SamplingOptions};
pub use sdp::{Goal, SolveOptions, SolveStatus};
pub use uncertainty::UncertaintyRegion;
pub use verify::{SimOptions, Termination, Trajectory};
