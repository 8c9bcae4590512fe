//! Numerical laboratory for a rate-independent elasto-plastic damage
//! system and its viscous regularizations.
//!
//! The crate simulates the regularized system on small Galerkin
//! discretizations, reparameterizes trajectories by arclength, and
//! verifies the structures expected of the vanishing-viscosity,
//! vanishing-hardening and multi-rate limits: energy-dissipation
//! balances, contact-potential residuals, switching conditions, jump
//! transients, and the commutation of the limit paths.

pub mod config;
pub mod contact;
pub mod discretization;
pub mod dissipation;
pub mod energy;
pub mod error;
pub mod material;
pub mod oracle;
pub mod reparam;
pub mod report;
pub mod solver;
pub mod tensor;

pub mod analysis;

pub use error::CoreError;
