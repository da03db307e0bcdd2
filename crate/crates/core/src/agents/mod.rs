//! Centralized-critic actor-critic learners: DDPG, MADDPG, parameter
//! sharing, TeamReg, CoachReg and their ablations.

pub mod config;
pub mod learner;
pub mod nets;
pub mod noise;
pub mod objectives;
pub mod replay;
pub mod train;

pub use config::{TrainConfig, Variant};
pub use learner::{ActMode, Learner, UpdateStats};
pub use nets::{Actor, CriticView, Policy, TeamShape};
pub use noise::{noise_schedule, OuNoise};
pub use replay::{Batch, ReplayBuffer, Transition};
pub use train::{evaluate, eval_seeds, run_eval_episode, team_shape, train_run, EvalResult, LogRow, RunLog, TrainOutcome};

#[cfg(test)]
pub(crate) mod fixtures {
    use alloc::vec;
    use alloc::vec::Vec;

    use rand::Rng;

    use super::{Batch, Learner, TeamShape, TrainConfig, Variant};
    use crate::autograd::Matrix;
    use crate::seed;

    pub fn tiny_config(variant: Variant) -> TrainConfig {
        let mut c = TrainConfig::new(variant);
        c.hidden_dims = vec![8, 8];
        c.n_masks = 4;
        c.mask_repeats = 2;
        c.batch_size = 16;
        c.actor_lr = 1e-2;
        c.critic_lr_ratio = 2.0;
        c.tau = 0.1;
        c
    }

    pub fn shape(n: usize) -> TeamShape {
        TeamShape { obs_dims: vec![3; n], act_dims: vec![2; n] }
    }

    pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    pub fn random_batch(shape: &TeamShape, b: usize, seed_label: &str) -> Batch {
        let mut rng = seed::stream(11, seed_label);
        let n = shape.n_agents();
        let obs: Vec<Matrix> = shape.obs_dims.iter().map(|&d| random_matrix(b, d, &mut rng)).collect();
        let actions = shape.act_dims.iter().map(|&d| random_matrix(b, d, &mut rng)).collect();
        let rewards = (0..n).map(|_| random_matrix(b, 1, &mut rng)).collect();
        let next_obs = shape.obs_dims.iter().map(|&d| random_matrix(b, d, &mut rng)).collect();
        let not_terminal = Matrix::from_vec(b, 1, (0..b).map(|k| if k % 5 == 4 { 0.0 } else { 1.0 }).collect());
        Batch { obs, actions, rewards, next_obs, not_terminal }
    }

    pub fn learner(cfg: &TrainConfig, n: usize) -> Learner {
        Learner::new(cfg, shape(n)).unwrap()
    }
}
