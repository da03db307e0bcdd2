//! Episode loop: collection, learning cadence, evaluation and model selection.

use alloc::vec;
use alloc::vec::Vec;

use rand::{RngCore, SeedableRng};

use super::config::TrainConfig;
use super::learner::{ActMode, Learner, UpdateStats};
use super::nets::{Policy, TeamShape};
use super::noise::{noise_schedule, OuNoise};
use super::replay::{ReplayBuffer, Transition};
use crate::envs::{ActionSpace, MarkovGame};
use crate::seed::{self, labels};
use crate::{Error, Result};

/// One evaluation point.
#[derive(Clone, Debug)]
pub struct LogRow {
    /// Training episodes completed when the evaluation ran.
    pub episode: usize,
    pub learning_step: usize,
    /// Per-agent return averaged over the evaluation episodes.
    pub eval_returns: Vec<f64>,
    pub mean_return: f64,
    /// Per-agent critic loss averaged over the learning steps since the
    /// previous row.
    pub critic_losses: Vec<f64>,
    pub team_spirit: f64,
    pub mask_kl: f64,
    pub noise_scale: f64,
}

/// Per-agent and mean return of a set of evaluation episodes.
#[derive(Clone, Debug)]
pub struct EvalResult {
    pub per_agent: Vec<f64>,
    pub mean: f64,
}

#[derive(Clone, Debug)]
pub struct RunLog {
    pub n_agents: usize,
    pub rows: Vec<LogRow>,
    /// Undiscounted per-agent return of every training episode.
    pub episode_returns: Vec<Vec<f64>>,
    pub env_steps: usize,
    pub learning_steps: usize,
    /// Learning step of the selected snapshot (`None`: the final policy).
    pub best_learning_step: Option<usize>,
    pub best_eval: Option<EvalResult>,
    /// The selected snapshot re-evaluated on the final episode set.
    pub final_eval: EvalResult,
}

fn bits(v: &[f64]) -> impl Iterator<Item = u64> + '_ {
    v.iter().map(|x| x.to_bits())
}

impl LogRow {
    fn bitwise_eq(&self, o: &Self) -> bool {
        self.episode == o.episode
            && self.learning_step == o.learning_step
            && bits(&self.eval_returns).eq(bits(&o.eval_returns))
            && self.mean_return.to_bits() == o.mean_return.to_bits()
            && bits(&self.critic_losses).eq(bits(&o.critic_losses))
            && self.team_spirit.to_bits() == o.team_spirit.to_bits()
            && self.mask_kl.to_bits() == o.mask_kl.to_bits()
            && self.noise_scale.to_bits() == o.noise_scale.to_bits()
    }
}

impl EvalResult {
    fn bitwise_eq(&self, o: &Self) -> bool {
        bits(&self.per_agent).eq(bits(&o.per_agent)) && self.mean.to_bits() == o.mean.to_bits()
    }
}

impl RunLog {
    /// Equality on the bit patterns of every logged number (NaN included).
    pub fn bitwise_eq(&self, o: &Self) -> bool {
        self.n_agents == o.n_agents
            && self.rows.len() == o.rows.len()
            && self.rows.iter().zip(&o.rows).all(|(a, b)| a.bitwise_eq(b))
            && self.episode_returns.len() == o.episode_returns.len()
            && self.episode_returns.iter().zip(&o.episode_returns).all(|(a, b)| bits(a).eq(bits(b)))
            && self.env_steps == o.env_steps
            && self.learning_steps == o.learning_steps
            && self.best_learning_step == o.best_learning_step
            && match (&self.best_eval, &o.best_eval) {
                (Some(a), Some(b)) => a.bitwise_eq(b),
                (None, None) => true,
                _ => false,
            }
            && self.final_eval.bitwise_eq(&o.final_eval)
    }
}

/// Result of a training run: the log plus the selected policy.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: RunLog,
    pub best_policy: Policy,
    pub learner: Learner,
}

/// Network shapes implied by an environment; every agent must act in a
/// continuous box.
pub fn team_shape(env: &impl MarkovGame) -> Result<TeamShape> {
    let n = env.n_agents();
    let mut act_dims = Vec::with_capacity(n);
    for i in 0..n {
        match env.action_space(i) {
            ActionSpace::Continuous(d) => act_dims.push(d),
            ActionSpace::Discrete(_) => {
                return Err(Error::InvalidArgument("actor-critic learners need continuous actions".into()))
            }
        }
    }
    Ok(TeamShape { obs_dims: (0..n).map(|i| env.obs_dim(i)).collect(), act_dims })
}

/// Fixed per-episode environment seeds for an evaluation set.
pub fn eval_seeds(master: u64, label: &str, count: usize) -> Vec<u64> {
    let mut rng = seed::stream(master, label);
    (0..count).map(|_| rng.next_u64()).collect()
}

/// Per-agent undiscounted return of one deterministic episode, plus the
/// mask ids chosen at every step when the policy is masked.
pub fn run_eval_episode<E: MarkovGame>(env: &mut E, policy: &Policy, env_seed: u64) -> Result<(Vec<f64>, Vec<Vec<usize>>)> {
    let mut rng = seed::Rng::seed_from_u64(env_seed);
    let n = env.n_agents();
    let mut obs = env.reset(&mut rng);
    let mut returns = vec![0.0; n];
    let mut masks = vec![Vec::new(); n];
    for _ in 0..env.max_steps() {
        let mut actions = Vec::with_capacity(n);
        for (i, o) in obs.iter().enumerate() {
            let (a, m) = policy.select_action(i, o, ActMode::Eval)?;
            if let Some(m) = m {
                masks[i].push(m);
            }
            actions.push(a);
        }
        let step = env.step(&actions, &mut rng)?;
        for (r, x) in returns.iter_mut().zip(&step.rewards) {
            *r += x;
        }
        obs = step.obs;
        if step.done {
            break;
        }
    }
    Ok((returns, masks))
}

/// Mean per-agent return of `policy` over the given episode seeds.
pub fn evaluate<E: MarkovGame>(env: &mut E, policy: &Policy, seeds: &[u64]) -> Result<EvalResult> {
    let n = env.n_agents();
    let mut per_agent = vec![0.0; n];
    for &s in seeds {
        let (r, _) = run_eval_episode(env, policy, s)?;
        for (acc, x) in per_agent.iter_mut().zip(r) {
            *acc += x;
        }
    }
    per_agent.iter_mut().for_each(|x| *x /= seeds.len() as f64);
    let mean = per_agent.iter().sum::<f64>() / n as f64;
    Ok(EvalResult { per_agent, mean })
}

#[derive(Default)]
struct StatsAccumulator {
    count: usize,
    critic: Vec<f64>,
    team_spirit: f64,
    mask_kl: f64,
}

impl StatsAccumulator {
    fn add(&mut self, s: &UpdateStats) {
        if self.critic.is_empty() {
            self.critic = vec![0.0; s.critic_losses.len()];
        }
        for (a, x) in self.critic.iter_mut().zip(&s.critic_losses) {
            *a += x;
        }
        self.team_spirit += s.team_spirit;
        self.mask_kl += s.mask_kl;
        self.count += 1;
    }

    fn take(&mut self, n: usize) -> (Vec<f64>, f64, f64) {
        let out = if self.count == 0 {
            (vec![f64::NAN; n], f64::NAN, f64::NAN)
        } else {
            let c = self.count as f64;
            (self.critic.iter().map(|x| x / c).collect(), self.team_spirit / c, self.mask_kl / c)
        };
        *self = Self::default();
        out
    }
}

/// Trains `cfg.variant` on `env` from scratch.
///
/// One learning step runs after every `steps_per_update` environment steps
/// once the buffer holds a full batch. Every `eval_every` learning steps the
/// current policy is evaluated on a fixed episode set and the best snapshot
/// is kept; it is re-evaluated on a separate, larger set at the end.
pub fn train_run<E: MarkovGame + Clone>(cfg: &TrainConfig, env: &E) -> Result<TrainOutcome> {
    let shape = team_shape(env)?;
    let n = shape.n_agents();
    let mut learner = Learner::new(cfg, shape.clone())?;
    let mut env = env.clone();
    let mut eval_env = env.clone();
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, &shape.obs_dims, &shape.act_dims);

    let mut env_rng = seed::stream(cfg.seed, labels::ENV);
    let mut noise_rng = seed::stream(cfg.seed, labels::NOISE);
    let mut buffer_rng = seed::stream(cfg.seed, labels::BUFFER);
    let mut mask_rng = seed::stream(cfg.seed, labels::MASK);
    let eval_set = eval_seeds(cfg.seed, labels::EVAL, cfg.eval_episodes);
    let final_set = eval_seeds(cfg.seed, labels::FINAL_EVAL, cfg.final_eval_episodes);
    let mut noises: Vec<OuNoise> = shape.act_dims.iter().map(|&d| OuNoise::new(d, cfg.ou_theta, cfg.ou_sigma)).collect();

    let mut rows = Vec::new();
    let mut episode_returns = Vec::with_capacity(cfg.episodes);
    let mut acc = StatsAccumulator::default();
    let mut env_steps = 0usize;
    let mut learning_steps = 0usize;
    let mut best: Option<(usize, EvalResult, Policy)> = None;

    for episode in 0..cfg.episodes {
        let scale = noise_schedule(cfg.noise_scale, episode, cfg.episodes);
        let mut obs = env.reset(&mut env_rng);
        noises.iter_mut().for_each(OuNoise::reset);
        let mut returns = vec![0.0; n];
        for _ in 0..cfg.max_steps.min(env.max_steps()) {
            let mut actions = Vec::with_capacity(n);
            for (i, o) in obs.iter().enumerate() {
                let mode = ActMode::Train { noise: &mut noises[i], scale, noise_rng: &mut noise_rng, mask_rng: &mut mask_rng };
                actions.push(learner.policy.select_action(i, o, mode)?.0);
            }
            let step = env.step(&actions, &mut env_rng)?;
            for (r, x) in returns.iter_mut().zip(&step.rewards) {
                *r += x;
            }
            let transition = Transition {
                obs,
                actions,
                rewards: step.rewards,
                next_obs: step.obs.clone(),
                terminal: step.terminal,
            };
            buffer.push(&transition)?;
            obs = step.obs;
            env_steps += 1;

            if env_steps.is_multiple_of(cfg.steps_per_update) && buffer.len() >= cfg.batch_size {
                let batch = buffer.sample(cfg.batch_size, &mut buffer_rng);
                acc.add(&learner.update(&batch)?);
                learning_steps += 1;
                if learning_steps.is_multiple_of(cfg.eval_every) {
                    let result = evaluate(&mut eval_env, &learner.policy, &eval_set)?;
                    let (critic_losses, team_spirit, mask_kl) = acc.take(n);
                    rows.push(LogRow {
                        episode,
                        learning_step: learning_steps,
                        eval_returns: result.per_agent.clone(),
                        mean_return: result.mean,
                        critic_losses,
                        team_spirit,
                        mask_kl,
                        noise_scale: scale,
                    });
                    if best.as_ref().is_none_or(|(_, b, _)| result.mean > b.mean) {
                        best = Some((learning_steps, result, learner.policy.clone()));
                    }
                }
            }
            if step.done {
                break;
            }
        }
        episode_returns.push(returns);
    }

    let (best_learning_step, best_eval, best_policy) = match best {
        Some((s, r, p)) => (Some(s), Some(r), p),
        None => (None, None, learner.policy.clone()),
    };
    let final_eval = evaluate(&mut eval_env, &best_policy, &final_set)?;
    let log = RunLog {
        n_agents: n,
        rows,
        episode_returns,
        env_steps,
        learning_steps,
        best_learning_step,
        best_eval,
        final_eval,
    };
    Ok(TrainOutcome { log, best_policy, learner })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::fixtures::tiny_config;
    use crate::agents::Variant;
    use crate::envs::{ParticleEnv, Task, TaskConfig};

    fn small_run(variant: Variant) -> TrainConfig {
        let mut c = tiny_config(variant);
        c.episodes = 8;
        c.max_steps = 25;
        c.steps_per_update = 10;
        c.eval_every = 3;
        c.eval_episodes = 2;
        c.final_eval_episodes = 3;
        c
    }

    fn spread() -> ParticleEnv {
        ParticleEnv::new(TaskConfig::new(Task::Spread)).unwrap()
    }

    #[test]
    fn same_seed_is_bit_identical() {
        for v in [Variant::TeamReg, Variant::CoachReg] {
            let mut cfg = small_run(v);
            (cfg.lambda1, cfg.lambda2, cfg.lambda3) = (0.1, 0.1, 1.0);
            let a = train_run(&cfg, &spread()).unwrap();
            let b = train_run(&cfg, &spread()).unwrap();
            assert!(a.log.bitwise_eq(&b.log));
            assert_eq!(a.best_policy, b.best_policy);
            cfg.seed = 1;
            let c = train_run(&cfg, &spread()).unwrap();
            assert!(!a.log.bitwise_eq(&c.log));
        }
    }

    #[test]
    fn learning_cadence() {
        let mut cfg = small_run(Variant::Maddpg);
        cfg.batch_size = cfg.steps_per_update;
        let out = train_run(&cfg, &spread()).unwrap();
        let log = &out.log;
        assert_eq!(log.env_steps, 8 * 25);
        // the buffer holds a full batch from the first update on
        assert_eq!(log.learning_steps, log.env_steps / cfg.steps_per_update);
        assert_eq!(log.rows.len(), log.learning_steps / cfg.eval_every);
        for (k, r) in log.rows.iter().enumerate() {
            assert_eq!(r.learning_step, (k + 1) * cfg.eval_every);
            assert!(r.critic_losses.iter().all(|x| x.is_finite()));
            assert!(r.team_spirit.is_finite() && r.mask_kl.is_nan());
        }
        assert_eq!(log.episode_returns.len(), 8);
        let best = log.best_eval.as_ref().unwrap();
        let max = log.rows.iter().map(|r| r.mean_return).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(best.mean, max);
    }

    #[test]
    fn updates_wait_for_a_full_batch() {
        let mut cfg = small_run(Variant::Maddpg);
        cfg.batch_size = 55;
        let out = train_run(&cfg, &spread()).unwrap();
        // updates at steps 60, 70, ..., 200
        assert_eq!(out.log.learning_steps, 15);
    }

    #[test]
    fn best_snapshot_replays_its_logged_evaluation() {
        let cfg = small_run(Variant::PolicyMask);
        let out = train_run(&cfg, &spread()).unwrap();
        let seeds = eval_seeds(cfg.seed, labels::EVAL, cfg.eval_episodes);
        let again = evaluate(&mut spread(), &out.best_policy, &seeds).unwrap();
        assert_eq!(again.mean.to_bits(), out.log.best_eval.unwrap().mean.to_bits());
    }

    #[test]
    fn discrete_games_are_rejected() {
        let chain = crate::envs::ChainGame::new(5, true, 50).unwrap();
        assert!(train_run(&small_run(Variant::Maddpg), &chain).is_err());
    }
}
