//! Batch front end for the delay-factor simulator: instance generation,
//! online-versus-offline comparisons, parameter sweeps and trace checks.

pub mod check;
pub mod experiment;
pub mod gen;
pub mod sweep;
