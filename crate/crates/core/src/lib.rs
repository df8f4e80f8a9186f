//! Variational gradient flows on probability spaces.
//!
//! Particles drawn from a reference distribution are transported toward a
//! target along the vector field `h(x) = -f''(r(x)) ∇r(x)`, where `r = q/p`
//! is the density ratio between the current particle distribution and the
//! target. The ratio comes either from analytic densities or from a logistic
//! classifier (`r = exp(-D(x))`). A generator network is refit to the moved
//! particles after every flow phase.

pub mod cli;
pub mod config;
pub mod density;
pub mod divergence;
pub mod ensemble;
pub mod error;
pub mod flow;
pub mod generator;
pub mod io;
pub mod metrics;
pub mod net;
pub mod quadrature;
pub mod ratio;
pub mod rng;
pub mod suites;

pub use density::DensityModel;
pub use divergence::{make_divergence, FDivergence};
pub use ensemble::ParticleEnsemble;
pub use error::{Error, Result};
pub use net::{Activation, InputNorm, Mlp, RmsPropConfig};
