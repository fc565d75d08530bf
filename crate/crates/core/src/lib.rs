//! Simulators and estimators for propagation of chaos in exchangeable particle
//! systems.
//!
//! The crate covers mean-field diffusions ([`mckean`]), mean-field jump and
//! PDMP processes ([`jumps`]), Boltzmann/Kac collision processes
//! ([`boltzmann`]), exact finite-state computations ([`oracle`]), metrics
//! between empirical measures ([`metrics`]) and the chaos estimators built on
//! top of them ([`chaos`]).
//!
//! Everything is generic over the scalar type; the aliases at the crate root
//! fix it to `f64`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod boltzmann;
pub mod chaos;
pub mod coupling;
pub mod error;
pub mod jumps;
pub mod mckean;
pub mod metrics;
pub mod oracle;
pub mod model;
pub mod real;
mod recorder;
pub mod rng;
pub mod state;
pub mod stats;

pub use error::{Error, Result};
pub use model::{CollisionModel, Conservation, DiffusionModel, JumpModel, MeasureSummary, ModelSpec, Noise};
pub use real::Real;
pub use rng::{RngStream, StreamRng};
pub use state::{
    empirical_of, Canonical, Domain, EmpiricalMeasure, JumpRecord, MeasureView, ParticleState, TrajectoryBundle,
};

pub type State = ParticleState<f64>;
pub type Bundle = TrajectoryBundle<f64>;
pub type Empirical = EmpiricalMeasure<f64>;
pub type Spec = ModelSpec<f64>;
