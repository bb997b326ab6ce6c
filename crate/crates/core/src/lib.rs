//! Batch Pareto-optimal Thompson sampling (qPOTS) for expensive, noisy,
//! constrained multiobjective black-box optimization.
//!
//! The crate is organized bottom-up:
//!
//! * [`pareto`] dominance, nondominated sorting, hypervolume and IGD;
//! * [`gp`] exact Gaussian-process regression, consistent posterior sample
//!   paths and the Nyström square root;
//! * [`nsga2`] the evolutionary inner solver;
//! * [`acquisition`] sample-path Pareto sets and maximin batch selection;
//! * [`problems`] the benchmark registry;
//! * [`harness`] the outer optimization loop, the Sobol baseline and the
//!   experiment outputs.

pub mod acquisition;
pub mod error;
pub mod gp;
pub mod harness;
pub mod nsga2;
pub mod pareto;
pub mod problems;
pub mod sobol;

pub use error::{Error, Result};
