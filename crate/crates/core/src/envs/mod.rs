//! Environments behind a common Markov-game interface.

use alloc::vec::Vec;

use rand::RngCore;

mod chain;
mod particle;
mod physics;

pub use chain::{chain_step, coordination_map, ChainGame};
pub use particle::{
    observation_layout,
    prey_repulsion, BounceParams, ChaseParams, ParticleEnv, SpringParams, Task, TaskConfig,
};
pub use physics::{overlap, Entity, Physics, Spring, Vec2, World};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionSpace {
    /// Index in `0..n`, passed as a single-element action vector.
    Discrete(usize),
    /// Box `[-1, 1]^dim`.
    Continuous(usize),
}

impl ActionSpace {
    /// Length of the action vector handed to `step`.
    pub fn dim(&self) -> usize {
        match *self {
            ActionSpace::Discrete(_) => 1,
            ActionSpace::Continuous(d) => d,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub obs: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    /// The episode is over (termination or step budget).
    pub done: bool,
    /// The episode ended in a terminal state; bootstrapping stops here.
    /// Time-limit truncation sets `done` without `terminal`.
    pub terminal: bool,
}

pub trait MarkovGame {
    fn n_agents(&self) -> usize;
    fn obs_dim(&self, agent: usize) -> usize;
    fn action_space(&self, agent: usize) -> ActionSpace;
    fn max_steps(&self) -> usize;
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<Vec<f64>>;
    /// Advances one timestep. Any randomness (e.g. relocations) is drawn
    /// from `rng`.
    fn step(&mut self, actions: &[Vec<f64>], rng: &mut dyn RngCore) -> crate::Result<Step>;
}
