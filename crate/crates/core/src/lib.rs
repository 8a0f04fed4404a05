//! Geosteering decision engine.
//!
//! A faulted three-layer reservoir is generated at random, a well is steered
//! through it in ten decision intervals, and gamma-ray readings along the way
//! are turned into boundary estimates by a bootstrap particle filter. Policies
//! range from a greedy look-ahead rule to DQN agents fed either raw log values
//! or filter estimates, with truth-fed oracles as upper benchmarks.
//!
//! Module map:
//!
//! - [`stratigraphy`]: realizations, offset log, forward observation operator.
//! - [`trajectory`]: inclination clamping and constant-curvature interval integration.
//! - [`environment`]: the episodic decision process and its reward.
//! - [`particle_filter`]: boundary tracking from gamma observations.
//! - [`neuralnet`]: the Q-network and its SGD update.
//! - [`dqn`]: replay buffer, target network, epsilon schedule, episode loop.
//! - [`policies`]: state encoders and the rule-based decision procedure.
//! - [`harness`]: training, evaluation, sweeps, benchmarks and reports.

pub mod dqn;
pub mod environment;
pub mod error;
pub mod harness;
pub mod neuralnet;
pub mod particle_filter;
pub mod policies;
pub mod rng;
pub mod stratigraphy;
pub mod trajectory;

pub use error::{Error, Result};
