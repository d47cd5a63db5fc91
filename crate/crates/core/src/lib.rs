//! Bayesian material flow analysis.
//!
//! A system of processes, stocks, and flows is described by a
//! [`graph::SystemGraph`]; data and mass-balance constraints compile into a
//! regression model ([`observations::CompiledModel`]) whose posterior is
//! either computed in closed form ([`gaussian`]) or sampled with NUTS
//! ([`sampler`]) under truncated-normal flow priors ([`density`]).

pub mod density;
pub mod error;
pub mod experiments;
pub mod fixtures;
pub mod gaussian;
pub mod graph;
pub mod observations;
pub mod ppc;
pub mod priors;
pub mod project;
pub mod sampler;
pub mod special;

pub use error::{Error, Result};
