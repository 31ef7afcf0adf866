//! Controllability certificates, planning, and Diophantine lifting for the
//! two-trapped-ions bilinear Schrödinger model in Fock coordinates.

pub mod cli;
pub mod closure;
pub mod decoupling;
pub mod error;
pub mod frequency;
pub mod lift;
pub mod operators;
pub mod planner;
pub mod winding;

pub use error::{Error, Result};
