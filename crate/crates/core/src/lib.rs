//! Simulation laboratory for diffusion processes as computers.
//!
//! Two halves live here. [`groove`] and [`sde`] compile a counter-machine
//! program into a smooth force field whose noisy gradient flow executes the
//! program ("pinball"). [`diffusion`] samples Gaussian-mixture data with the
//! exact score and measures how fast the reverse process converges, and
//! [`circuits`] provides the threshold-gate gadgets used to reason about
//! constant-depth computation.

pub mod circuits;
pub mod counter_machine;
pub mod diffusion;
pub mod experiments;
pub mod groove;
pub mod par;
pub mod sde;
pub mod seeds;
