//! Effective-mass laboratory for particle-field models at finite truncation.

pub mod bounds;
pub mod config;
pub mod dense;
pub mod dispersion;
pub mod eigensolve;
pub mod fock;
pub mod model;
pub mod operators;
pub mod oracle;
pub mod pipeline;
pub mod report;
pub mod sparse;
pub mod staticmass;
pub mod trialstate;
