//! Energy-based modeling of three-phase AC machines.
//!
//! One scalar energy function H(φs, φr, θ, ρ) defines a machine completely:
//! currents are ∂H/∂φ, torque comes from ∂H/∂θ, and the state equations
//! couple those derivatives to voltages and load. This crate provides the
//! energy models (linear and saturated, sinusoidal and not), exact
//! second-order differentiation, frame transformations, winding-connection
//! constraints, fixed-step simulation, and the analysis/verification suite
//! built on top.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod dual;
pub mod dynamics;
pub mod energy;
pub mod frames;
pub mod sim;

pub use cli::run;
