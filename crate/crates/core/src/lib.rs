//! Particle approximation of gradient flows of internal energies on the
//! one-dimensional `L^p`-Wasserstein space.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod energy;
pub mod experiments;
pub mod flow;
pub mod io;
pub mod error;
pub mod par;
pub mod particles;
pub mod pde;
pub mod quad;
pub mod transport;

pub use energy::{power_law_model, EnergyDensity, EnergyModel, FlowParams};
pub use error::{Error, Result};
pub use par::Execution;
pub use particles::{DomainSpec, ParticleConfig};
