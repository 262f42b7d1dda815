//! Receiver models for optical on-off keyed links that use Channelrhodopsin-2
//! photoreceptors as the detector.
//!
//! - [`kinetics`]: the three-state photocycle, its discretisations and
//!   stationary distributions.
//! - [`ensemble`]: lumped chains for several identical receptors and
//!   trajectory sampling.
//! - [`detector`]: observation likelihoods, MAP posteriors and the
//!   a-posteriori table.
//! - [`photon_noise`]: Poisson photon statistics of the source.
//! - [`analysis`]: exact and Monte Carlo error rates, data rate and sweeps.
//! - [`config`]: the flat `key = value` experiment format.

pub mod analysis;
pub mod config;
pub mod detector;
pub mod ensemble;
mod error;
pub mod kinetics;
pub mod photon_noise;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
