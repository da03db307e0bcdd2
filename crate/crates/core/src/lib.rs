#![no_std]

//! Coordination-promoting policy regularizers for centralized-training,
//! decentralized-execution multi-agent actor-critic.
//!
//! Everything in this crate is pure computation over explicit state and only
//! needs `alloc`: a small reverse-mode autodiff over dense matrices, the
//! chain and particle environments, tabular Q-learning for the chain game,
//! the MADDPG family of learners (including TeamReg and CoachReg) and the
//! coordination metrics. File formats, the CLI and process fan-out live in
//! the `marl-harness` crate.
//!
//! # Features
//! - `std`: runtime CPU feature detection for the matrix kernels.

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod agents;
pub mod analysis;
pub mod autograd;
pub mod envs;
mod error;
pub mod seed;
pub mod tabular;

pub use crate::error::{Error, Result};
