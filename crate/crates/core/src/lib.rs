//! Model predictive actor-critic on desk-scale tasks.
//!
//! The crate is organised bottom-up: [`approx`] provides the networks,
//! [`envs`] the environments and exactly solvable MDPs, [`replay`] the two
//! experience buffers, [`model`] the probabilistic dynamics ensemble, [`mpr`]
//! the sampling-based trajectory optimizer that fills the model buffer,
//! [`sac`] the soft actor-critic learner, [`bounds`] the exact-DP checks of
//! the MPC performance bound, and [`cli`] the experiment loop.

pub mod approx;
pub mod bounds;
pub mod cli;
pub mod envs;
pub mod error;
pub mod model;
pub mod mpr;
pub mod replay;
pub mod sac;

pub use error::{Error, Result};
