//! Numerical laboratory for large area-constrained Willmore spheres in
//! asymptotically Schwarzschild 3-manifolds.
//!
//! Module map:
//! - [`metric`]: conformally flat ambient metrics with analytic jets.
//! - [`harmonics`]: real spherical-harmonic transforms and Legendre tools.
//! - [`surface`]: graph surfaces over coordinate spheres and their geometry.
//! - [`reduction`]: the Lyapunov–Schmidt solve for `u_{ξ,λ}` and `κ_{ξ,λ}`.
//! - [`energy`]: the reduced functional `G_λ`, its expansions and critical points.
//! - [`scenarios`]: configuration-driven experiment runner.

pub mod energy;
pub mod error;
pub mod harmonics;
pub mod metric;
pub mod reduction;
pub mod scenarios;
pub mod surface;

pub use error::{Error, Result};
