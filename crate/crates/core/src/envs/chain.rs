use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;

use super::{ActionSpace, MarkovGame, Step};
use crate::{Error, Result};

/// Agent 2's action becomes "agree" (1) or "disagree" (0) with agent 1:
/// `a2' = a1 a2 + (1 - a1)(1 - a2)`.
pub fn coordination_map(a1: u8, a2: u8) -> (u8, u8) {
    debug_assert!(a1 <= 1 && a2 <= 1);
    (a1, a1 * a2 + (1 - a1) * (1 - a2))
}

/// Moves along the chain when both (mapped) actions agree: 0 pushes right,
/// 1 pushes left (clamped at 0). Returns the new position and whether it is
/// the terminal cell `length`.
pub fn chain_step(position: usize, length: usize, a1: u8, a2: u8, coordinated: bool) -> (usize, bool) {
    let (a1, a2) = if coordinated { coordination_map(a1, a2) } else { (a1, a2) };
    let next = match (a1, a2) {
        (0, 0) => (position + 1).min(length),
        (1, 1) => position.saturating_sub(1),
        _ => position,
    };
    (next, next == length)
}

/// Two-agent chain of length `L`; both agents receive -1 per step until the
/// terminal cell is reached.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainGame {
    pub length: usize,
    pub coordinated: bool,
    pub max_steps: usize,
    position: usize,
    t: usize,
}

impl ChainGame {
    pub fn new(length: usize, coordinated: bool, max_steps: usize) -> Result<Self> {
        if length == 0 || max_steps == 0 {
            return Err(Error::InvalidArgument("chain length and step budget must be positive".into()));
        }
        Ok(Self { length, coordinated, max_steps, position: 0, t: 0 })
    }

    pub fn position(&self) -> usize {
        self.position
    }

    fn observe(&self) -> Vec<Vec<f64>> {
        let mut o = vec![0.0; self.length + 1];
        o[self.position] = 1.0;
        vec![o.clone(), o]
    }
}

impl MarkovGame for ChainGame {
    fn n_agents(&self) -> usize {
        2
    }

    fn obs_dim(&self, _agent: usize) -> usize {
        self.length + 1
    }

    fn action_space(&self, _agent: usize) -> ActionSpace {
        ActionSpace::Discrete(2)
    }

    fn max_steps(&self) -> usize {
        self.max_steps
    }

    fn reset(&mut self, _rng: &mut dyn RngCore) -> Vec<Vec<f64>> {
        self.position = 0;
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, actions: &[Vec<f64>], _rng: &mut dyn RngCore) -> Result<Step> {
        let bit = |a: &Vec<f64>| match a.as_slice() {
            [x] if *x == 0.0 => Ok(0u8),
            [x] if *x == 1.0 => Ok(1u8),
            _ => Err(Error::InvalidArgument("chain actions are single bits".into())),
        };
        if actions.len() != 2 {
            return Err(Error::shape("chain actions", 2, actions.len()));
        }
        let (next, terminal) = chain_step(self.position, self.length, bit(&actions[0])?, bit(&actions[1])?, self.coordinated);
        self.position = next;
        self.t += 1;
        Ok(Step {
            obs: self.observe(),
            rewards: vec![-1.0, -1.0],
            done: terminal || self.t >= self.max_steps,
            terminal,
        })
    }
}
