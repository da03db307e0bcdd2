//! Parameter updates for the whole team.

use alloc::vec::Vec;

use super::config::{TrainConfig, Variant};
use super::nets::{
    build_actors, build_coach, build_critics, target_actor, target_critic, teammate_slot, Actor, CriticView, Policy,
    TeamShape,
};
use super::noise::OuNoise;
use super::objectives::{
    actor_pg, coach_mask, coach_objective, critic_input_matrix, critic_loss, epg_objective, mask_agreement, sampled_mask,
    td_targets, team_spirit_continuous, team_spirit_node, BatchNodes,
};
use super::replay::Batch;
use crate::autograd::losses::{kl_categorical, mse};
use crate::autograd::stochastic::{argmax, gumbel_noise, one_hot, one_hot_rows, sample_logits, softmax, MaskEstimator};
use crate::autograd::{soft_update, Adam, Gradients, Graph, Matrix, Mlp, Param};
use crate::seed::{self, labels};
use crate::{Error, Result};

/// Losses and diagnostics of one learning step, measured before the step's
/// parameter changes.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateStats {
    pub critic_losses: Vec<f64>,
    /// Mean teammate-prediction MSE over ordered agent pairs; NaN for masked
    /// variants and single-agent teams.
    pub team_spirit: f64,
    /// Mean `KL(p^c || p^i)` over agents; NaN for unmasked variants.
    pub mask_kl: f64,
}

/// How an action is chosen.
pub enum ActMode<'a> {
    /// Deterministic: no noise, argmax mask.
    Eval,
    /// Exploration noise of the given scale, sampled own mask.
    Train {
        noise: &'a mut OuNoise,
        scale: f64,
        noise_rng: &'a mut seed::Rng,
        mask_rng: &'a mut seed::Rng,
    },
}

impl Policy {
    /// Action of agent `i` (and its mask id when masked). The coach is never
    /// consulted here.
    pub fn select_action(&self, i: usize, obs: &[f64], mut mode: ActMode<'_>) -> Result<(Vec<f64>, Option<usize>)> {
        let actor = self.actor(i);
        let x = Matrix::row_vector(obs);
        let (mask, mask_id) = match actor.mask_layer {
            None => (None, None),
            Some(_) => {
                let logits = actor.eval_mask_logits(&x)?;
                let id = match &mut mode {
                    ActMode::Eval => argmax(logits.row(0)),
                    ActMode::Train { mask_rng, .. } => sample_logits(logits.row(0), &mut **mask_rng),
                };
                (Some(Matrix::row_vector(&one_hot(id, logits.cols()))), Some(id))
            }
        };
        let mut action = actor.eval(&x, mask.as_ref())?.into_vec();
        if let ActMode::Train { noise, scale, noise_rng, .. } = mode {
            let eps = noise.sample(noise_rng);
            for (a, e) in action.iter_mut().zip(eps) {
                *a = (*a + scale * e).clamp(-1.0, 1.0);
            }
        }
        Ok((action, mask_id))
    }
}

/// Main and target networks, optimizers and the update-time random streams.
#[derive(Clone, Debug)]
pub struct Learner {
    cfg: TrainConfig,
    view: CriticView,
    pub policy: Policy,
    pub target: Policy,
    pub critics: Vec<Mlp>,
    pub target_critics: Vec<Mlp>,
    pub coach: Option<Mlp>,
    actor_opts: Vec<Adam>,
    critic_opts: Vec<Adam>,
    coach_opt: Option<Adam>,
    gumbel: seed::Rng,
    coach_gumbel: seed::Rng,
}

fn accumulate<'a>(grads: &Gradients, params: Vec<&'a mut Param>, scale: f64) -> Vec<&'a mut Param> {
    params
        .into_iter()
        .map(|p| {
            grads.accumulate_into(p, scale);
            p
        })
        .collect()
}

fn step(opt: &mut Adam, params: Vec<&mut Param>, grads: &Gradients, lr: f64, clip: f64) -> Result<()> {
    let mut params = accumulate(grads, params, 1.0);
    opt.step(&mut params, lr, clip)?;
    Ok(())
}

fn prob_rows(logits: &Matrix) -> Matrix {
    let mut p = logits.clone();
    for r in 0..p.rows() {
        let s = softmax(logits.row(r));
        p.row_mut(r).copy_from_slice(&s);
    }
    p
}

impl Learner {
    /// Fresh networks for `shape`, initialized from the run's seed streams.
    pub fn new(cfg: &TrainConfig, shape: TeamShape) -> Result<Self> {
        cfg.validate()?;
        if shape.n_agents() == 0 || shape.act_dims.len() != shape.n_agents() {
            return Err(Error::InvalidArgument("team shape needs one action dim per agent".into()));
        }
        if cfg.variant == Variant::Sharing
            && (shape.obs_dims.iter().any(|&d| d != shape.obs_dims[0]) || shape.act_dims.iter().any(|&d| d != shape.act_dims[0]))
        {
            return Err(Error::InvalidArgument("parameter sharing needs identical agents".into()));
        }
        let mut init = seed::stream(cfg.seed, labels::INIT);
        let mut head_init = seed::stream(cfg.seed, labels::HEAD_INIT);
        let actors = build_actors(cfg, &shape, &mut init, &mut head_init);
        let critics = build_critics(cfg, &shape, &mut init);
        let coach = cfg.variant.is_masked().then(|| {
            let mut coach_init = seed::stream(cfg.seed, labels::COACH_INIT);
            build_coach(cfg, &shape, &mut coach_init)
        });
        let policy = Policy { variant: cfg.variant, shape, actors };
        let target = Policy {
            variant: policy.variant,
            shape: policy.shape.clone(),
            actors: policy.actors.iter().map(target_actor).collect(),
        };
        let target_critics = critics.iter().map(target_critic).collect();
        let actor_opts = policy.actors.iter().map(|a| Adam::new(&a.params())).collect();
        let critic_opts = critics.iter().map(|c| Adam::new(&c.params())).collect();
        let coach_opt = coach.as_ref().map(|c| Adam::new(&c.params()));
        Ok(Self {
            cfg: cfg.clone(),
            view: CriticView::for_variant(cfg.variant),
            policy,
            target,
            critics,
            target_critics,
            coach,
            actor_opts,
            critic_opts,
            coach_opt,
            gumbel: seed::stream(cfg.seed, labels::GUMBEL),
            coach_gumbel: seed::stream(cfg.seed, labels::COACH_GUMBEL),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn view(&self) -> CriticView {
        self.view
    }

    fn n_agents(&self) -> usize {
        self.policy.n_agents()
    }

    fn critic_slot(&self, i: usize) -> usize {
        self.policy.slot(i)
    }

    /// Target-policy actions for a batch of agent `j`'s observations; masked
    /// target actors use hard Gumbel-max masks.
    fn target_actions(&mut self, j: usize, obs: &Matrix) -> Result<Matrix> {
        let actor = self.target.actor(j);
        match actor.mask_layer {
            None => actor.eval(obs, None),
            Some(_) => {
                let logits = actor.eval_mask_logits(obs)?;
                let noise = gumbel_noise(logits.rows(), logits.cols(), &mut self.gumbel);
                let mask = one_hot_rows(&logits.zip_map(&noise, |l, n| l + n));
                actor.eval(obs, Some(&mask))
            }
        }
    }

    fn diagnostics(&self, batch: &Batch) -> Result<(f64, f64)> {
        let n = self.n_agents();
        let mut team_spirit = f64::NAN;
        let mut mask_kl = f64::NAN;
        if !self.policy.is_masked() && n > 1 {
            // one forward per agent yields both its action and its predictions
            let mut g = Graph::new();
            let mut actions = Vec::with_capacity(n);
            let mut trunks = Vec::with_capacity(n);
            for i in 0..n {
                let x = g.input(batch.obs[i].clone());
                let nodes = self.policy.actor(i).forward(&mut g, x, None, false)?;
                actions.push(nodes.output);
                trunks.push(nodes.trunk);
            }
            let mut total = 0.0;
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    let pred = self.policy.actor(i).predict_teammate(&mut g, trunks[i], teammate_slot(i, j), false)?;
                    total += mse(g.value(actions[j]).as_slice(), g.value(pred).as_slice())?;
                }
            }
            team_spirit = total / (n * (n - 1)) as f64;
        }
        if let Some(coach) = &self.coach {
            let joint: Vec<&Matrix> = batch.obs.iter().collect();
            let pc = prob_rows(&coach.eval(&Matrix::concat_cols(&joint), None)?);
            let mut total = 0.0;
            for i in 0..n {
                let pi = prob_rows(&self.policy.actor(i).eval_mask_logits(&batch.obs[i])?);
                for r in 0..pc.rows() {
                    total += kl_categorical(pc.row(r), pi.row(r))?;
                }
            }
            mask_kl = total / (n * pc.rows()) as f64;
        }
        Ok((team_spirit, mask_kl))
    }

    fn critic_gradients(&self, i: usize, batch: &Batch, next_actions: &[Matrix]) -> Result<(f64, Gradients)> {
        let s = self.critic_slot(i);
        let y = td_targets(
            &self.target_critics[s],
            self.view,
            i,
            &batch.rewards[i],
            &batch.not_terminal,
            &batch.next_obs,
            next_actions,
            self.cfg.gamma,
        )?;
        let mut g = Graph::new();
        let nodes = BatchNodes::new(&mut g, &batch.obs, &batch.actions);
        let loss = critic_loss(&mut g, &self.critics[s], self.view, i, &nodes, &y)?;
        Ok((g.scalar(loss), g.backward(loss)?))
    }

    /// One learning step on `batch`.
    pub fn update(&mut self, batch: &Batch) -> Result<UpdateStats> {
        let n = self.n_agents();
        if batch.n_agents() != n || batch.is_empty() {
            return Err(Error::shape("update batch agents", n, batch.n_agents()));
        }
        let (team_spirit, mask_kl) = self.diagnostics(batch)?;
        let next_actions = (0..n).map(|j| self.target_actions(j, &batch.next_obs[j])).collect::<Result<Vec<_>>>()?;
        let teammate_actions = (0..n).map(|j| self.target_actions(j, &batch.obs[j])).collect::<Result<Vec<_>>>()?;
        let critic_losses = if self.policy.is_masked() {
            self.coachreg_update(batch, &next_actions, &teammate_actions)?
        } else {
            self.teamreg_update(batch, &next_actions, &teammate_actions)?
        };
        self.update_targets()?;
        Ok(UpdateStats { critic_losses, team_spirit, mask_kl })
    }

    /// Critic, predictability and actor steps per agent in sequence. With
    /// both weights zero this is MADDPG (or DDPG / sharing, by critic view).
    fn teamreg_update(&mut self, batch: &Batch, next_actions: &[Matrix], teammate_actions: &[Matrix]) -> Result<Vec<f64>> {
        let n = self.n_agents();
        let (lambda1, lambda2, _) = self.cfg.effective_lambdas();
        let (lr, clip) = (self.cfg.actor_lr, self.cfg.grad_clip);
        let mut losses = Vec::with_capacity(n);
        for i in 0..n {
            // All gradients of this agent's round are taken at the same point.
            let (closs, critic_grads) = self.critic_gradients(i, batch, next_actions)?;
            losses.push(closs);

            let s = self.critic_slot(i);
            let actor_grads = {
                let mut g = Graph::new();
                let nodes = BatchNodes::new(&mut g, &batch.obs, teammate_actions);
                let actor = self.policy.actor(i);
                let (mut total, fwd) = actor_pg(&mut g, actor, true, &self.critics[s], self.view, i, &nodes, None)?;
                if lambda1 > 0.0 {
                    for j in (0..n).filter(|&j| j != i) {
                        let pred = actor.predict_teammate(&mut g, fwd.trunk, teammate_slot(i, j), true)?;
                        let truth = self.policy.actor(j).forward(&mut g, nodes.obs[j], None, false)?.output;
                        let ts = team_spirit_node(&mut g, truth, pred);
                        let w = g.scale(ts, lambda1);
                        total = g.add(total, w);
                    }
                }
                let loss = g.scale(total, -1.0);
                g.backward(loss)?
            };

            let predictability_grads = if lambda2 > 0.0 && n > 1 {
                let mut g = Graph::new();
                let obs: Vec<_> = batch.obs.iter().map(|m| g.input(m.clone())).collect();
                let mut total = None;
                for j in (0..n).filter(|&j| j != i) {
                    let ts = team_spirit_continuous(&mut g, self.policy.actor(i), false, self.policy.actor(j), true, i, j, &obs)?;
                    total = Some(match total {
                        Some(acc) => g.add(acc, ts),
                        None => ts,
                    });
                }
                let total = total.expect("at least one teammate");
                let loss = g.scale(total, -lambda2);
                Some(g.backward(loss)?)
            } else {
                None
            };

            if let Some(grads) = &predictability_grads {
                for j in (0..n).filter(|&j| j != i) {
                    let sj = self.policy.slot(j);
                    step(&mut self.actor_opts[sj], self.policy.actors[sj].params_mut(), grads, lr, clip)?;
                }
            }
            step(&mut self.critic_opts[s], self.critics[s].params_mut(), &critic_grads, self.cfg.critic_lr(), clip)?;
            let si = self.policy.slot(i);
            step(&mut self.actor_opts[si], self.policy.actors[si].params_mut(), &actor_grads, lr, clip)?;
        }
        Ok(losses)
    }

    /// Critic and own-mask actor steps per agent, then the regularizer step
    /// per agent, then the coach.
    fn coachreg_update(&mut self, batch: &Batch, next_actions: &[Matrix], teammate_actions: &[Matrix]) -> Result<Vec<f64>> {
        let n = self.n_agents();
        let (lambda1, lambda2, lambda3) = self.cfg.effective_lambdas();
        let (lr, clip) = (self.cfg.actor_lr, self.cfg.grad_clip);
        let k = self.cfg.n_masks;
        let b = batch.len();
        let mut losses = Vec::with_capacity(n);
        for i in 0..n {
            let (closs, critic_grads) = self.critic_gradients(i, batch, next_actions)?;
            losses.push(closs);
            let own_noise = gumbel_noise(b, k, &mut self.gumbel);
            let s = self.critic_slot(i);
            let actor_grads = {
                let mut g = Graph::new();
                let nodes = BatchNodes::new(&mut g, &batch.obs, teammate_actions);
                let actor = self.policy.actor(i);
                let logits = actor.mask_logits(&mut g, nodes.obs[i], true)?;
                let mask = sampled_mask(&mut g, logits, &own_noise, MaskEstimator::StraightThrough);
                let (pg, _) = actor_pg(&mut g, actor, true, &self.critics[s], self.view, i, &nodes, Some(mask))?;
                let loss = g.scale(pg, -1.0);
                g.backward(loss)?
            };
            step(&mut self.critic_opts[s], self.critics[s].params_mut(), &critic_grads, self.cfg.critic_lr(), clip)?;
            let si = self.policy.slot(i);
            step(&mut self.actor_opts[si], self.policy.actors[si].params_mut(), &actor_grads, lr, clip)?;
        }

        let regularize = lambda1 > 0.0 || lambda2 > 0.0;
        let coach_trains = self.cfg.coach_trains();
        if !(regularize || coach_trains) {
            return Ok(losses);
        }
        let coach_noise = gumbel_noise(b, k, &mut self.coach_gumbel);
        let coach = self.coach.as_ref().expect("masked variants build a coach");
        if regularize {
            for i in 0..n {
                let grads = {
                    let mut g = Graph::new();
                    let nodes = BatchNodes::new(&mut g, &batch.obs, &batch.actions);
                    let actor = self.policy.actor(i);
                    let s = self.critic_slot(i);
                    let (logits, mask) = coach_mask(&mut g, coach, false, &nodes.obs, &coach_noise, MaskEstimator::StraightThrough)?;
                    let mut total = None;
                    if lambda1 > 0.0 {
                        let e = mask_agreement(&mut g, actor, true, nodes.obs[i], logits)?;
                        total = Some(g.scale(e, lambda1));
                    }
                    if lambda2 > 0.0 {
                        let epg = epg_objective(&mut g, actor, true, &self.critics[s], self.view, i, &nodes, mask)?;
                        let w = g.scale(epg, lambda2);
                        total = Some(match total {
                            Some(acc) => g.add(acc, w),
                            None => w,
                        });
                    }
                    let loss = g.scale(total.expect("a positive weight"), -1.0);
                    g.backward(loss)?
                };
                let si = self.policy.slot(i);
                step(&mut self.actor_opts[si], self.policy.actors[si].params_mut(), &grads, lr, clip)?;
            }
        }
        if coach_trains {
            let grads = {
                let mut g = Graph::new();
                let nodes = BatchNodes::new(&mut g, &batch.obs, &batch.actions);
                let actors: Vec<&Actor> = (0..n).map(|i| self.policy.actor(i)).collect();
                let critics: Vec<&Mlp> = (0..n).map(|i| &self.critics[self.critic_slot(i)]).collect();
                let obj = coach_objective(&mut g, &actors, &critics, self.view, coach, &nodes, &coach_noise, MaskEstimator::StraightThrough, lambda3)?;
                let loss = g.scale(obj, -1.0);
                g.backward(loss)?
            };
            let coach = self.coach.as_mut().expect("masked variants build a coach");
            let opt = self.coach_opt.as_mut().expect("coach optimizer");
            step(opt, coach.params_mut(), &grads, self.cfg.coach_lr(), clip)?;
        }
        Ok(losses)
    }

    /// `target <- tau * main + (1 - tau) * target` for every actor and critic.
    pub fn update_targets(&mut self) -> Result<()> {
        let tau = self.cfg.tau;
        for (t, s) in self.target.params_mut().into_iter().zip(self.policy.params()) {
            soft_update(t, s, tau)?;
        }
        for (tc, c) in self.target_critics.iter_mut().zip(&self.critics) {
            for (t, s) in tc.params_mut().into_iter().zip(c.params()) {
                soft_update(t, s, tau)?;
            }
        }
        Ok(())
    }

    /// Q-values of agent `i`'s critic for a batch, used by tests and tools.
    pub fn q_values(&self, i: usize, obs: &[Matrix], actions: &[Matrix]) -> Result<Matrix> {
        self.critics[self.critic_slot(i)].eval(&critic_input_matrix(self.view, i, obs, actions), None)
    }
}
