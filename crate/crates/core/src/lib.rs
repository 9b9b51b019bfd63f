//! Fusion of pre-trained score-based diffusion models through KL barycenters.
//!
//! Given `k` frozen auxiliary score fields and a small target dataset, the
//! crate learns simplex weights `λ` so that the λ-weighted score drives a
//! reverse Ornstein-Uhlenbeck SDE towards the target. Two weight-learning
//! routes are provided: score matching on the diffusion path
//! ([`fusion`]) and distribution-level KL minimization with Frank-Wolfe
//! ([`vanilla`]). A from-scratch MLP score model ([`net`]) serves as the
//! baseline, and [`harness`] runs the low-data comparison end to end.

pub mod barycenter;
pub mod error;
pub mod field;
pub mod fusion;
pub mod grid;
pub mod harness;
pub mod metrics;
pub mod mixture;
pub mod net;
pub mod ou;
pub mod rng;
pub mod sampler;
pub mod samples;
pub mod schedule;
pub mod simplex;
pub mod vanilla;

pub use error::{Error, Result};
pub use field::{FieldHandle, ScoreField};
pub use grid::{Axis, Grid};
pub use mixture::{Component, GaussianMixture, LogDensity};
pub use samples::SampleSet;
pub use schedule::OuSchedule;
pub use simplex::SimplexWeights;
