//! Mean-field models of interacting spiking neurons.
//!
//! Each neuron carries a potential that follows `dx/dt = b(x)` between spikes, fires at rate
//! `f(x)`, is reset to 0 when it fires, and kicks every other neuron by `J/N`. In the
//! large-network limit the jump rate solves a Volterra equation. This crate computes that rate,
//! the steady states, the exponential convergence rate and a Fokker-Planck cross-check, and it
//! simulates the finite network exactly.

pub mod error;
pub mod fokkerplanck;
pub mod invariant;
pub mod measures;
pub mod model;
pub mod orbit;
pub mod particle;
pub mod quadrature;
pub mod spectral;
pub mod volterra;

pub use error::{Error, Result};
pub use measures::{l1_distance, Atom, GridMeasure, SpatialGrid};
pub use model::{Current, Drift, ModelSpec, RateFn, Table, TimeGrid};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod book_introduction {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/model.md")]
mod book_model {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/rates.md")]
mod book_rates {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/invariant.md")]
mod book_invariant {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/spectral.md")]
mod book_spectral {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/particles.md")]
mod book_particles {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/fokkerplanck.md")]
mod book_fokkerplanck {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
