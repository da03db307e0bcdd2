//! Run configuration files and hyper-parameter presets.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use marl_core::agents::{TrainConfig, Variant};
use marl_core::envs::{ParticleEnv, Task, TaskConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Which environment a run trains on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub task: Task,
    pub n_agents: usize,
}

impl EnvSpec {
    pub fn new(task: Task) -> Self {
        Self { task, n_agents: TaskConfig::new(task).n_agents }
    }

    pub fn task_config(&self) -> TaskConfig {
        TaskConfig::new(self.task).with_agents(self.n_agents)
    }

    pub fn build(&self) -> Result<ParticleEnv> {
        Ok(ParticleEnv::new(self.task_config())?)
    }
}

/// One run: environment plus every training setting, written out in full.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub env: EnvSpec,
    pub train: TrainConfig,
}

impl RunSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let spec: RunSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        spec.train.validate()?;
        spec.env.task_config().validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).with_context(|| format!("writing {}", path.display()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// First 16 hex digits of SHA-256 over the compact JSON form.
    pub fn hash(&self) -> String {
        let compact = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&compact);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Training length of a preset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Scale {
    /// 30,000 episodes.
    Full,
    /// 4,000 episodes.
    Desk,
}

impl Scale {
    pub fn episodes(self) -> usize {
        match self {
            Scale::Full => 30_000,
            Scale::Desk => 4_000,
        }
    }
}

/// `(actor_lr, critic_lr_ratio, tau, lambda1, lambda2, lambda3, noise)`.
type Row = (f64, f64, f64, f64, f64, f64, f64);

/// Best configurations found by the original random searches.
fn tuned(task: Task, variant: Variant) -> Row {
    use Task::*;
    use Variant::*;
    match (task, variant) {
        (Spread, Ddpg) => (5.3e-5, 53.0, 0.05, 0.0, 0.0, 0.0, 1.0),
        (Spread, Maddpg) => (2.1e-5, 79.0, 0.083, 0.0, 0.0, 0.0, 0.5),
        (Spread, Sharing) => (9.0e-4, 0.71, 0.076, 0.0, 0.0, 0.0, 0.7),
        (Spread, TeamReg) => (2.5e-5, 42.0, 0.098, 0.054, 0.29, 0.0, 1.2),
        (Spread, CoachReg) => (1.2e-5, 82.0, 0.0077, 0.13, 0.24, 8.4, 1.6),
        (Spread, AgentModelling) => (1.3e-5, 85.0, 0.055, 0.06, 0.0, 0.0, 1.0),
        (Spread, PolicyMask) => (6.8e-5, 9.4, 0.02, 0.0, 0.0, 0.0, 1.1),

        (Bounce, Ddpg) => (8.1e-4, 2.4, 0.089, 0.0, 0.0, 0.0, 1.2),
        (Bounce, Maddpg) => (3.8e-5, 87.0, 0.016, 0.0, 0.0, 0.0, 0.9),
        (Bounce, Sharing) => (1.2e-4, 0.47, 0.06, 0.0, 0.0, 0.0, 1.2),
        (Bounce, TeamReg) => (1.3e-5, 85.0, 0.055, 0.06, 0.0026, 0.0, 1.0),
        (Bounce, CoachReg) => (6.8e-5, 9.4, 0.02, 0.0066, 0.23, 0.34, 1.1),
        (Bounce, AgentModelling) => (1.3e-5, 85.0, 0.055, 0.06, 0.0, 0.0, 1.0),
        (Bounce, PolicyMask) => (2.5e-4, 0.52, 0.0077, 0.0, 0.0, 0.0, 1.3),

        (Chase, Ddpg) => (4.5e-4, 32.0, 0.031, 0.0, 0.0, 0.0, 0.6),
        (Chase, Maddpg) => (2.0e-4, 64.0, 0.021, 0.0, 0.0, 0.0, 1.0),
        (Chase, Sharing) => (9.7e-4, 0.79, 0.032, 0.0, 0.0, 0.0, 1.5),
        (Chase, TeamReg) => (1.3e-5, 85.0, 0.055, 0.06, 0.0026, 0.0, 1.0),
        (Chase, CoachReg) => (1.8e-4, 90.0, 0.011, 0.0069, 0.86, 0.76, 1.1),
        (Chase, AgentModelling) => (2.5e-5, 42.0, 0.098, 0.054, 0.0, 0.0, 1.2),
        (Chase, PolicyMask) => (6.8e-5, 9.4, 0.02, 0.0, 0.0, 0.0, 1.1),

        (Compromise, Ddpg) => (6.1e-5, 1.7, 0.065, 0.0, 0.0, 0.0, 1.1),
        (Compromise, Maddpg) => (3.1e-4, 0.94, 0.045, 0.0, 0.0, 0.0, 0.7),
        (Compromise, Sharing) => (6.2e-4, 0.58, 0.007, 0.0, 0.0, 0.0, 1.3),
        (Compromise, TeamReg) => (1.5e-5, 90.0, 0.02, 0.0013, 0.56, 0.0, 1.6),
        (Compromise, CoachReg) => (3.4e-4, 29.0, 0.0037, 0.65, 0.5, 1.3, 1.6),
        (Compromise, AgentModelling) => (1.2e-4, 0.71, 0.0051, 0.0075, 0.0, 0.0, 1.8),
        (Compromise, PolicyMask) => (2.5e-4, 0.52, 0.0077, 0.0, 0.0, 0.0, 1.3),
    }
}

/// Tuned hyper-parameters for `(task, variant)` at the given scale.
pub fn preset(task: Task, variant: Variant, scale: Scale, seed: u64) -> RunSpec {
    let (actor_lr, critic_lr_ratio, tau, lambda1, lambda2, lambda3, noise_scale) = tuned(task, variant);
    let mut train = TrainConfig::new(variant);
    train.seed = seed;
    train.episodes = scale.episodes();
    train.actor_lr = actor_lr;
    train.critic_lr_ratio = critic_lr_ratio;
    train.tau = tau;
    train.lambda1 = lambda1;
    train.lambda2 = lambda2;
    train.lambda3 = lambda3;
    train.noise_scale = noise_scale;
    RunSpec { env: EnvSpec::new(task), train }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_match_the_cli() {
        for v in Variant::ALL {
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.name()));
        }
        let old: Variant = serde_json::from_str("\"coach_reg\"").unwrap();
        assert_eq!(old, Variant::CoachReg);
    }

    #[test]
    fn json_round_trip_keeps_every_field() {
        let spec = preset(Task::Spread, Variant::CoachReg, Scale::Desk, 7);
        let text = spec.to_json().unwrap();
        assert!(text.contains("\"freeze_coach\": false"));
        let back: RunSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        assert_eq!(back.hash(), spec.hash());
    }

    #[test]
    fn hash_tracks_content() {
        let a = preset(Task::Spread, Variant::Maddpg, Scale::Desk, 0);
        let mut b = a.clone();
        b.train.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v: serde_json::Value = serde_json::to_value(preset(Task::Bounce, Variant::Ddpg, Scale::Full, 0)).unwrap();
        v["train"]["lambda4"] = 1.0.into();
        assert!(serde_json::from_value::<RunSpec>(v).is_err());
    }

    #[test]
    fn every_preset_validates() {
        for task in Task::ALL {
            for v in Variant::ALL {
                let s = preset(task, v, Scale::Full, 0);
                s.train.validate().unwrap();
                s.env.build().unwrap();
            }
        }
        let s = preset(Task::Spread, Variant::CoachReg, Scale::Full, 0);
        assert_eq!((s.train.actor_lr, s.train.lambda3, s.train.episodes), (1.2e-5, 8.4, 30_000));
    }
}
