use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Independent learners; each critic sees only its own observation and
    /// action.
    Ddpg,
    Maddpg,
    /// One actor and one centralized critic shared by all agents.
    Sharing,
    #[serde(rename = "teamreg", alias = "team_reg")]
    TeamReg,
    /// TeamReg with the predictability weight forced to zero.
    AgentModelling,
    #[serde(rename = "coachreg", alias = "coach_reg")]
    CoachReg,
    /// CoachReg's masked policies with all regularizers off and the coach
    /// never trained.
    PolicyMask,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Ddpg,
        Variant::Maddpg,
        Variant::Sharing,
        Variant::TeamReg,
        Variant::AgentModelling,
        Variant::CoachReg,
        Variant::PolicyMask,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Ddpg => "ddpg",
            Variant::Maddpg => "maddpg",
            Variant::Sharing => "sharing",
            Variant::TeamReg => "teamreg",
            Variant::AgentModelling => "agent_modelling",
            Variant::CoachReg => "coachreg",
            Variant::PolicyMask => "policy_mask",
        }
    }

    /// Actors carry a mask layer and a maskable first hidden layer.
    pub fn is_masked(self) -> bool {
        matches!(self, Variant::CoachReg | Variant::PolicyMask)
    }

    pub fn reads_lambda1(self) -> bool {
        matches!(self, Variant::TeamReg | Variant::AgentModelling | Variant::CoachReg)
    }

    pub fn reads_lambda2(self) -> bool {
        matches!(self, Variant::TeamReg | Variant::CoachReg)
    }

    pub fn reads_lambda3(self) -> bool {
        self == Variant::CoachReg
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub seed: u64,
    pub episodes: usize,
    pub max_steps: usize,
    /// Actor learning rate; the coach uses the same rate.
    pub actor_lr: f64,
    /// Critic learning rate relative to the actor's.
    pub critic_lr_ratio: f64,
    pub tau: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Initial exploration noise scale.
    pub noise_scale: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Environment transitions collected per learning update.
    pub steps_per_update: usize,
    pub grad_clip: f64,
    pub n_masks: usize,
    pub mask_repeats: usize,
    pub hidden_dims: Vec<usize>,
    pub layer_norm: bool,
    pub ou_theta: f64,
    pub ou_sigma: f64,
    /// Learning updates between evaluations.
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub final_eval_episodes: usize,
    /// Keep the coach's parameters fixed (CoachReg only).
    pub freeze_coach: bool,
}

impl TrainConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            seed: 0,
            episodes: 15_000,
            max_steps: 100,
            actor_lr: 1e-4,
            critic_lr_ratio: 10.0,
            tau: 0.01,
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            noise_scale: 1.0,
            gamma: 0.95,
            batch_size: 1024,
            buffer_capacity: 1_000_000,
            steps_per_update: 100,
            grad_clip: 0.5,
            n_masks: 4,
            mask_repeats: 32,
            hidden_dims: vec![128, 128],
            layer_norm: true,
            ou_theta: 0.15,
            ou_sigma: 0.2,
            eval_every: 100,
            eval_episodes: 10,
            final_eval_episodes: 100,
            freeze_coach: false,
        }
    }

    pub fn critic_lr(&self) -> f64 {
        self.critic_lr_ratio * self.actor_lr
    }

    pub fn coach_lr(&self) -> f64 {
        self.actor_lr
    }

    /// `(lambda1, lambda2, lambda3)` as read by this variant.
    pub fn effective_lambdas(&self) -> (f64, f64, f64) {
        let v = self.variant;
        let pick = |on: bool, x: f64| if on { x } else { 0.0 };
        (pick(v.reads_lambda1(), self.lambda1), pick(v.reads_lambda2(), self.lambda2), pick(v.reads_lambda3(), self.lambda3))
    }

    /// The coach receives gradient steps.
    pub fn coach_trains(&self) -> bool {
        self.variant == Variant::CoachReg && !self.freeze_coach
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.actor_lr, self.critic_lr_ratio, self.tau, self.gamma, self.grad_clip];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument("learning rates, tau, gamma and clip must be positive".into()));
        }
        let lambdas = [self.lambda1, self.lambda2, self.lambda3, self.noise_scale, self.ou_sigma, self.ou_theta];
        if lambdas.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("regularizer weights and noise parameters must be non-negative".into()));
        }
        if self.tau > 1.0 || self.gamma > 1.0 {
            return Err(Error::InvalidArgument("tau and gamma must not exceed 1".into()));
        }
        let counts = [
            self.episodes,
            self.max_steps,
            self.batch_size,
            self.buffer_capacity,
            self.steps_per_update,
            self.n_masks,
            self.mask_repeats,
            self.eval_every,
            self.eval_episodes,
            self.final_eval_episodes,
        ];
        if counts.contains(&0) || self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidArgument("counts and layer widths must be positive".into()));
        }
        if self.variant.is_masked() && self.hidden_dims[0] != self.n_masks * self.mask_repeats {
            return Err(Error::InvalidArgument(format!(
                "masked policies need a first hidden width of C*K = {}, got {}",
                self.n_masks * self.mask_repeats,
                self.hidden_dims[0]
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("Agent-Modelling".parse::<Variant>().unwrap(), Variant::AgentModelling);
        assert!("maddpg2".parse::<Variant>().is_err());
    }

    #[test]
    fn lambdas_are_variant_gated() {
        let mut c = TrainConfig::new(Variant::AgentModelling);
        c.lambda1 = 0.1;
        c.lambda2 = 0.2;
        c.lambda3 = 0.3;
        assert_eq!(c.effective_lambdas(), (0.1, 0.0, 0.0));
        c.variant = Variant::PolicyMask;
        assert_eq!(c.effective_lambdas(), (0.0, 0.0, 0.0));
        c.variant = Variant::CoachReg;
        assert_eq!(c.effective_lambdas(), (0.1, 0.2, 0.3));
    }

    #[test]
    fn defaults_validate() {
        for v in Variant::ALL {
            TrainConfig::new(v).validate().unwrap();
        }
        let mut c = TrainConfig::new(Variant::CoachReg);
        c.hidden_dims = vec![100, 128];
        assert!(c.validate().is_err());
    }
}
