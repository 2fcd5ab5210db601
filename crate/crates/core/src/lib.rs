//! Numerical laboratory for linear wave equations on globally hyperbolic
//! slab spacetimes `[t_min, t_max] x T^d` with metric `-beta(t) dt^2 + f(t)^2 dx^2`.
//!
//! The crate is organised around the objects of the continuum theory: causal
//! structure (`causal`), test sections and discrete distributions (`sections`),
//! normally hyperbolic operators (`operators`), the Cauchy problem (`cauchy`)
//! and Green operators / fundamental solutions (`green`). `scenario` and `io`
//! drive everything from JSON configs and serialise fields.

pub mod causal;
pub mod cauchy;
pub mod error;
pub mod green;
pub mod io;
pub mod linalg;
pub mod manifold;
pub mod operators;
pub mod scenario;
pub mod sections;
pub mod suite;
pub mod tolerances;

pub use error::{Error, Result};
pub use manifold::{Grid, SpacetimeSpec, SpatialManifold, TimeFunction};
