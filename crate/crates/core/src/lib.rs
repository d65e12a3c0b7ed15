//! Preference elicitation under a population prior.
//!
//! A belief model fitted on complete profiles from many users guides which
//! criterion to ask a new user about next; after a short budget of questions
//! the session commits to a predicted profile that a solver can condition on.

pub mod acquisition;
pub mod baselines;
pub mod belief;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod population;
pub mod seed;
pub mod types;

pub use error::{Error, Result};
