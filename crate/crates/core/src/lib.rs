//! Optimal stopping times and dimension selection for the backward diffusion of a
//! linear (projected Gaussian) latent diffusion model.
//!
//! The crate evaluates the squared Fréchet distance between a centered Gaussian target
//! and the output of an Ornstein-Uhlenbeck backward diffusion run in a `d`-dimensional
//! latent space, finds the times at which increasing the latent dimension starts to pay
//! off, and quantifies how sampling error in the estimated spectrum shifts those times.

pub mod config;
pub mod erm;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod format;
pub mod gauss;
pub mod linalg;
pub mod partition;
pub mod rng;
pub mod schedule;
pub mod sim;

pub use error::{Error, Result};
pub use gauss::{Flavor, GaussianModel, Spectrum};
pub use schedule::{make_ou_schedule, NoiseSchedule, OuSchedule};
