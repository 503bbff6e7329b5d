// Indexed loops and `!(a < b)` guards are deliberate in this numerical
// code: the former keeps paired-matrix arithmetic readable, the latter
// rejects NaN bounds.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

//! Functional mediation analysis for a point treatment, an intensively
//! measured longitudinal mediator, and a distal (possibly binary)
//! outcome.
//!
//! The pipeline has two stages. A time-varying effect model regresses the
//! mediator on treatment and covariates with penalized-B-spline
//! coefficient functions and subject-clustered sandwich standard errors
//! ([`tvem`]). Subject trajectories are then presmoothed onto a common
//! grid and a scalar-on-function regression relates the outcome to the
//! integrated mediator curve ([`funreg`]). The integrated product of the
//! two stage-specific effect functions is the indirect effect, tested
//! with a subject-level nonparametric bootstrap ([`mediation`]). A
//! simulation engine reproduces the accompanying Monte Carlo performance
//! study ([`simulate`]).

pub mod data;
pub mod error;
pub mod funreg;
pub mod glm;
pub mod mediation;
pub mod simulate;
pub mod spline;
pub mod tvem;

mod linalg;
mod stats;

pub use data::{ColumnSpec, LongDataset, MediatorRecord, Subject};
pub use error::{Error, Result};
pub use funreg::{FunregFit, PresmoothMethod, SubjectCurves};
pub use glm::Link;
pub use mediation::{BootstrapResult, MediationConfig, MediationResult};
pub use simulate::{Scenario, StudyReport};
pub use spline::{BasisSpec, TimeGrid};
pub use tvem::TvemFit;
