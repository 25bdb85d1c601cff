//! Event-triggered learning for networked state estimation.
//!
//! A sender transmits its state only when the receiver's model-based
//! prediction drifts by more than `δ`. The times between communications are
//! stopping times of the prediction-error process; their distribution is a
//! function of the model. Learning triggers compare observed stopping times
//! against model-induced ones and fire when the model no longer explains the
//! communication pattern.
//!
//! - [`linsys`]: linear Gaussian models, simulation, discretization
//! - [`etse`]: the state trigger and the sender/receiver loop
//! - [`stopping`]: Monte Carlo stopping times, empirical means and CDFs
//! - [`triggers`]: confidence radii and the four learning triggers
//! - [`kalman`]: output measurements with a steady-state Kalman filter
//! - [`sysid`]: least-squares model learning
//! - [`harness`]: closed-loop experiments and figure data

pub mod config;
pub mod error;
pub mod etse;
pub mod harness;
pub mod kalman;
pub mod linalg;
pub mod linsys;
pub mod rng;
pub mod stopping;
pub mod sysid;
pub mod triggers;

pub use error::{Error, Result};
pub use etse::{CommunicationLog, EtseLoop, TriggerConfig};
pub use kalman::{OutputModel, SteadyStateFilter};
pub use linalg::{Matrix, Vector};
pub use linsys::{ContinuousLinearModel, DiscreteLinearModel, Trajectory};
pub use stopping::{EmpiricalCdf, StoppingSample, TimeMode, Workers};
pub use triggers::{BufferPolicy, TriggerBuffer, TriggerKind, TriggerVerdict};
