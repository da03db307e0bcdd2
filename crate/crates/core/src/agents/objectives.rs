//! Training objectives as graph nodes.
//!
//! Objectives marked "maximized" are returned with their natural sign; the
//! learner negates them before minimizing. Networks passed with
//! `trainable = false` (targets, critics inside policy objectives, teammates)
//! contribute values but never gradients.

use alloc::vec::Vec;

use super::nets::{teammate_slot, Actor, CriticView};
use crate::autograd::losses::{kl_categorical, kl_rows_node, mse_node};
use crate::autograd::stochastic::{gumbel_softmax_node, MaskEstimator, GUMBEL_TEMPERATURE};
use crate::autograd::{Graph, Matrix, Mlp, NodeId};
use crate::{Error, Result};

/// Graph inputs for one minibatch, one node per agent and field.
#[derive(Clone, Debug)]
pub struct BatchNodes {
    pub obs: Vec<NodeId>,
    pub actions: Vec<NodeId>,
}

impl BatchNodes {
    pub fn new(g: &mut Graph<'_>, obs: &[Matrix], actions: &[Matrix]) -> Self {
        Self {
            obs: obs.iter().map(|m| g.input(m.clone())).collect(),
            actions: actions.iter().map(|m| g.input(m.clone())).collect(),
        }
    }
}

/// Concatenates `(o, a)` in the critic's reading order.
pub fn critic_input(g: &mut Graph<'_>, view: CriticView, i: usize, obs: &[NodeId], actions: &[NodeId]) -> NodeId {
    let order = view.order(i, obs.len());
    let mut parts: Vec<NodeId> = order.iter().map(|&k| obs[k]).collect();
    parts.extend(order.iter().map(|&k| actions[k]));
    g.concat(&parts)
}

/// Same as [`critic_input`] over plain matrices.
pub fn critic_input_matrix(view: CriticView, i: usize, obs: &[Matrix], actions: &[Matrix]) -> Matrix {
    let order = view.order(i, obs.len());
    let mut parts: Vec<&Matrix> = order.iter().map(|&k| &obs[k]).collect();
    parts.extend(order.iter().map(|&k| &actions[k]));
    Matrix::concat_cols(&parts)
}

/// TD targets `y = r + gamma * not_terminal * Qbar(o', a')`, computed
/// outside the graph so the target path carries no gradient.
pub fn td_targets(
    target_critic: &Mlp,
    view: CriticView,
    i: usize,
    rewards: &Matrix,
    not_terminal: &Matrix,
    next_obs: &[Matrix],
    next_actions: &[Matrix],
    gamma: f64,
) -> Result<Matrix> {
    let q_next = target_critic.eval(&critic_input_matrix(view, i, next_obs, next_actions), None)?;
    if q_next.shape() != rewards.shape() || not_terminal.shape() != rewards.shape() {
        return Err(Error::shape("td_targets", rewards.rows(), q_next.rows()));
    }
    let mut y = rewards.clone();
    for r in 0..y.rows() {
        let v = y.get(r, 0) + gamma * not_terminal.get(r, 0) * q_next.get(r, 0);
        y.set(r, 0, v);
    }
    Ok(y)
}

/// Critic loss `mean 1/2 (Q^i(o, a) - y)^2` (minimized).
pub fn critic_loss<'p>(
    g: &mut Graph<'p>,
    critic: &'p Mlp,
    view: CriticView,
    i: usize,
    batch: &BatchNodes,
    targets: &Matrix,
) -> Result<NodeId> {
    let x = critic_input(g, view, i, &batch.obs, &batch.actions);
    let q = critic.forward(g, x, None, true)?;
    let y = g.input(targets.clone());
    let m = mse_node(g, q, y);
    Ok(g.scale(m, 0.5))
}

/// Policy-gradient objective `mean Q^i(o, a)` with `a^i = mu^i(o^i)` on the
/// gradient path and teammates' actions taken from `actions` as constants
/// (maximized). Returns the objective and the actor's forward nodes so
/// callers can reuse the trunk.
pub fn actor_pg<'p>(
    g: &mut Graph<'p>,
    actor: &'p Actor,
    actor_trainable: bool,
    critic: &'p Mlp,
    view: CriticView,
    i: usize,
    batch: &BatchNodes,
    own_mask: Option<NodeId>,
) -> Result<(NodeId, crate::autograd::MlpNodes)> {
    let nodes = actor.forward(g, batch.obs[i], own_mask, actor_trainable)?;
    let mut actions = batch.actions.clone();
    actions[i] = nodes.output;
    let x = critic_input(g, view, i, &batch.obs, &actions);
    let q = critic.forward(g, x, None, false)?;
    Ok((g.mean(q), nodes))
}

/// Team-spirit objective `-mean MSE(true, predicted)` (maximized, <= 0).
pub fn team_spirit_node(g: &mut Graph<'_>, true_action: NodeId, predicted: NodeId) -> NodeId {
    let m = mse_node(g, true_action, predicted);
    g.scale(m, -1.0)
}

/// `J_TS^{i,j}`: agent `i` predicting teammate `j`'s continuous action.
/// Gradient reaches `predictor` (prediction) and/or `teammate`
/// (predictability) according to the flags.
pub fn team_spirit_continuous<'p>(
    g: &mut Graph<'p>,
    predictor: &'p Actor,
    predictor_trainable: bool,
    teammate: &'p Actor,
    teammate_trainable: bool,
    i: usize,
    j: usize,
    obs: &[NodeId],
) -> Result<NodeId> {
    let trunk = predictor.forward(g, obs[i], None, predictor_trainable)?.trunk;
    let pred = predictor.predict_teammate(g, trunk, teammate_slot(i, j), predictor_trainable)?;
    let truth = teammate.forward(g, obs[j], None, teammate_trainable)?.output;
    Ok(team_spirit_node(g, truth, pred))
}

/// Discrete team-spirit `-KL(p_true || p_pred)` on explicit distributions.
pub fn team_spirit_discrete(p_true: &[f64], p_pred: &[f64]) -> Result<f64> {
    Ok(-kl_categorical(p_true, p_pred)?)
}

/// Discrete team-spirit from logits, batch mean (maximized).
pub fn team_spirit_discrete_node(g: &mut Graph<'_>, true_logits: NodeId, pred_logits: NodeId) -> NodeId {
    let lp = g.log_softmax(true_logits);
    let lq = g.log_softmax(pred_logits);
    let kl = kl_rows_node(g, lp, lq);
    let m = g.mean(kl);
    g.scale(m, -1.0)
}

/// `(logits, p^i(e | o))` for a batch of observations.
pub fn mask_distribution(actor: &Actor, obs: &Matrix) -> Result<(Matrix, Matrix)> {
    let logits = actor.eval_mask_logits(obs)?;
    let mut probs = logits.clone();
    for r in 0..probs.rows() {
        let p = crate::autograd::stochastic::softmax(logits.row(r));
        probs.row_mut(r).copy_from_slice(&p);
    }
    Ok((logits, probs))
}

/// Gumbel-softmax mask from logits with pre-drawn noise.
pub fn sampled_mask(g: &mut Graph<'_>, logits: NodeId, noise: &Matrix, estimator: MaskEstimator) -> NodeId {
    gumbel_softmax_node(g, logits, noise, GUMBEL_TEMPERATURE, estimator)
}

/// Coach logits over the joint observation and its sampled mask `e^c`.
pub fn coach_mask<'p>(
    g: &mut Graph<'p>,
    coach: &'p Mlp,
    coach_trainable: bool,
    obs: &[NodeId],
    noise: &Matrix,
    estimator: MaskEstimator,
) -> Result<(NodeId, NodeId)> {
    let joint = g.concat(obs);
    let logits = coach.forward(g, joint, None, coach_trainable)?;
    Ok((logits, sampled_mask(g, logits, noise, estimator)))
}

/// `J_EPG^i`: return of agent `i` acting under the coach's mask while
/// teammates keep their replayed actions (maximized).
pub fn epg_objective<'p>(
    g: &mut Graph<'p>,
    actor: &'p Actor,
    actor_trainable: bool,
    critic: &'p Mlp,
    view: CriticView,
    i: usize,
    batch: &BatchNodes,
    coach_mask: NodeId,
) -> Result<NodeId> {
    Ok(actor_pg(g, actor, actor_trainable, critic, view, i, batch, Some(coach_mask))?.0)
}

/// `J_E^i = -mean KL(p^c || p^i)` (maximized, <= 0).
pub fn mask_agreement<'p>(
    g: &mut Graph<'p>,
    actor: &'p Actor,
    actor_trainable: bool,
    obs_i: NodeId,
    coach_logits: NodeId,
) -> Result<NodeId> {
    let own = actor.mask_logits(g, obs_i, actor_trainable)?;
    let lp = g.log_softmax(coach_logits);
    let lq = g.log_softmax(own);
    let kl = kl_rows_node(g, lp, lq);
    let m = g.mean(kl);
    Ok(g.scale(m, -1.0))
}

/// `(J_EPG^i, J_E^i)` for every agent, sharing one coach draw.
pub fn coach_objectives<'p>(
    g: &mut Graph<'p>,
    actors: &[&'p Actor],
    actors_trainable: bool,
    critics: &[&'p Mlp],
    view: CriticView,
    coach: &'p Mlp,
    coach_trainable: bool,
    batch: &BatchNodes,
    noise: &Matrix,
    estimator: MaskEstimator,
) -> Result<Vec<(NodeId, NodeId)>> {
    let (logits, mask) = coach_mask(g, coach, coach_trainable, &batch.obs, noise, estimator)?;
    (0..actors.len())
        .map(|i| {
            let epg = epg_objective(g, actors[i], actors_trainable, critics[i], view, i, batch, mask)?;
            let e = mask_agreement(g, actors[i], actors_trainable, batch.obs[i], logits)?;
            Ok((epg, e))
        })
        .collect()
}

/// Fused TeamReg objective of agent `i` in its own parameters:
/// `J_PG + lambda1 sum_j J_TS^{i,j} + lambda2 sum_j J_TS^{j,i}` (maximized).
/// Teammates are constants; `batch.actions` must already hold their
/// (target-policy) actions.
pub fn teamreg_objective<'p>(
    g: &mut Graph<'p>,
    actors: &[&'p Actor],
    critic: &'p Mlp,
    view: CriticView,
    i: usize,
    batch: &BatchNodes,
    lambda1: f64,
    lambda2: f64,
) -> Result<NodeId> {
    let (mut total, nodes) = actor_pg(g, actors[i], true, critic, view, i, batch, None)?;
    for j in (0..actors.len()).filter(|&j| j != i) {
        let pred = actors[i].predict_teammate(g, nodes.trunk, teammate_slot(i, j), true)?;
        let truth = actors[j].forward(g, batch.obs[j], None, false)?.output;
        let ts = team_spirit_node(g, truth, pred);
        let w = g.scale(ts, lambda1);
        total = g.add(total, w);

        let ts_ji = team_spirit_continuous(g, actors[j], false, actors[i], true, j, i, &batch.obs)?;
        let w = g.scale(ts_ji, lambda2);
        total = g.add(total, w);
    }
    Ok(total)
}

/// CoachReg actor objective `J_PG + lambda1 J_E + lambda2 J_EPG` in agent
/// `i`'s parameters (maximized). `own_noise` drives the actor's own mask,
/// `coach_noise` the coach's.
pub fn coachreg_actor_objective<'p>(
    g: &mut Graph<'p>,
    actor: &'p Actor,
    critic: &'p Mlp,
    coach: &'p Mlp,
    view: CriticView,
    i: usize,
    batch: &BatchNodes,
    own_noise: &Matrix,
    coach_noise: &Matrix,
    estimator: MaskEstimator,
    lambda1: f64,
    lambda2: f64,
) -> Result<NodeId> {
    let own_logits = actor.mask_logits(g, batch.obs[i], true)?;
    let own = sampled_mask(g, own_logits, own_noise, estimator);
    let (pg, _) = actor_pg(g, actor, true, critic, view, i, batch, Some(own))?;
    let (logits, mask) = coach_mask(g, coach, false, &batch.obs, coach_noise, estimator)?;
    let e = mask_agreement(g, actor, true, batch.obs[i], logits)?;
    let epg = epg_objective(g, actor, true, critic, view, i, batch, mask)?;
    let e = g.scale(e, lambda1);
    let epg = g.scale(epg, lambda2);
    let s = g.add(pg, e);
    Ok(g.add(s, epg))
}

/// Coach objective `1/N sum_i (J_EPG^i + lambda3 J_E^i)` (maximized).
pub fn coach_objective<'p>(
    g: &mut Graph<'p>,
    actors: &[&'p Actor],
    critics: &[&'p Mlp],
    view: CriticView,
    coach: &'p Mlp,
    batch: &BatchNodes,
    noise: &Matrix,
    estimator: MaskEstimator,
    lambda3: f64,
) -> Result<NodeId> {
    let terms = coach_objectives(g, actors, false, critics, view, coach, true, batch, noise, estimator)?;
    let n = terms.len() as f64;
    let mut total: Option<NodeId> = None;
    for (epg, e) in terms {
        let e = g.scale(e, lambda3);
        let t = g.add(epg, e);
        total = Some(match total {
            Some(acc) => g.add(acc, t),
            None => t,
        });
    }
    let total = total.ok_or_else(|| Error::InvalidArgument("coach objective needs agents".into()))?;
    Ok(g.scale(total, 1.0 / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::fixtures::{learner, random_batch, shape, tiny_config};
    use crate::agents::Variant;
    use crate::autograd::{Activation, MlpSpec};
    use alloc::vec;
    use proptest::prelude::*;

    fn param_mut<'a>(net: &'a mut Mlp, name: &str) -> &'a mut crate::autograd::Param {
        net.params_mut().into_iter().find(|p| p.name() == name).unwrap()
    }

    #[test]
    fn zero_critic_and_zero_discount_give_half_mean_square_reward() {
        let l = learner(&tiny_config(Variant::Maddpg), 2);
        let b = random_batch(&l.policy.shape, 10, "crit");
        let zero = Mlp::zeros(l.critics[0].spec().clone(), "critic0");
        let y = td_targets(&zero, CriticView::Joint, 0, &b.rewards[0], &b.not_terminal, &b.next_obs, &b.actions, 0.0).unwrap();
        assert_eq!(y, b.rewards[0]);
        let mut g = Graph::new();
        let nodes = BatchNodes::new(&mut g, &b.obs, &b.actions);
        let loss = critic_loss(&mut g, &zero, CriticView::Joint, 0, &nodes, &y).unwrap();
        let expected = b.rewards[0].as_slice().iter().map(|r| 0.5 * r * r).sum::<f64>() / 10.0;
        assert!((g.scalar(loss) - expected).abs() < 1e-12);
    }

    #[test]
    fn bellman_consistent_batch_has_zero_loss() {
        let l = learner(&tiny_config(Variant::Maddpg), 2);
        let mut b = random_batch(&l.policy.shape, 10, "bellman");
        b.not_terminal = Matrix::filled(10, 1, 1.0);
        let gamma = 0.95;
        let c = 2.5;
        let mut critic = Mlp::zeros(l.critics[0].spec().clone(), "critic0");
        param_mut(&mut critic, "critic0.out.b").value_mut().set(0, 0, c);
        let target = critic.renamed("", "target.");
        b.rewards[0] = Matrix::filled(10, 1, c * (1.0 - gamma));
        let y = td_targets(&target, CriticView::Joint, 0, &b.rewards[0], &b.not_terminal, &b.next_obs, &b.actions, gamma).unwrap();
        let mut g = Graph::new();
        let nodes = BatchNodes::new(&mut g, &b.obs, &b.actions);
        let loss = critic_loss(&mut g, &critic, CriticView::Joint, 0, &nodes, &y).unwrap();
        assert!(g.scalar(loss).abs() < 1e-20);
    }

    #[test]
    fn action_blind_critic_gives_no_actor_gradient() {
        let mut l = learner(&tiny_config(Variant::Maddpg), 2);
        let b = random_batch(&l.policy.shape, 8, "blind");
        // joint critic input: o0 o1 (3 + 3), then a0 a1
        let w = param_mut(&mut l.critics[0], "critic0.l0.w").value_mut();
        for r in 6..10 {
            w.row_mut(r).iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new();
        let nodes = BatchNodes::new(&mut g, &b.obs, &b.actions);
        let (pg, _) = actor_pg(&mut g, l.policy.actor(0), true, &l.critics[0], CriticView::Joint, 0, &nodes, None).unwrap();
        let grads = g.backward(pg).unwrap();
        for p in l.policy.actor(0).params() {
            if let Some(gr) = grads.get(p.name()) {
                assert!(gr.as_slice().iter().all(|&v| v == 0.0), "{}", p.name());
            }
        }
    }

    #[test]
    fn linear_critic_pushes_first_action_up() {
        let l = learner(&tiny_config(Variant::Maddpg), 2);
        let b = random_batch(&l.policy.shape, 8, "sign");
        let spec = MlpSpec::new(10, 1, Activation::Linear).with_hidden(vec![]);
        let mut critic = Mlp::zeros(spec, "critic0");
        param_mut(&mut critic, "critic0.out.w").value_mut().set(6, 0, 1.0);
        let mut g = Graph::new();
        let nodes = BatchNodes::new(&mut g, &b.obs, &b.actions);
        let (pg, _) = actor_pg(&mut g, l.policy.actor(0), true, &critic, CriticView::Joint, 0, &nodes, None).unwrap();
        let grads = g.backward(pg).unwrap();
        let gb = grads.get("actor0.out.b").unwrap();
        assert!(gb.get(0, 0) > 0.0);
        assert_eq!(gb.get(0, 1), 0.0);
    }

    #[test]
    fn exact_prediction_is_team_spirit_maximum() {
        let cfg = tiny_config(Variant::TeamReg);
        let mut l = learner(&cfg, 2);
        // teammate outputs tanh(0) = 0, head predicts tanh(0) = 0
        for p in l.policy.actors[1].policy.params_mut() {
            if p.name().contains(".l") && !p.name().contains(".ln") || p.name().contains(".out") {
                p.value_mut().as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        for p in l.policy.actors[0].heads[0].params_mut() {
            p.value_mut().as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        }
        let b = random_batch(&shape(2), 8, "ts");
        let mut g = Graph::new();
        let obs: Vec<_> = b.obs.iter().map(|m| g.input(m.clone())).collect();
        let j = team_spirit_continuous(&mut g, &l.policy.actors[0], true, &l.policy.actors[1], true, 0, 1, &obs).unwrap();
        assert_eq!(g.scalar(j), 0.0);
    }

    #[test]
    fn discrete_team_spirit_closed_forms() {
        assert_eq!(team_spirit_discrete(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        let v = team_spirit_discrete(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((v + core::f64::consts::LN_2).abs() < 1e-12);
        let mut g = Graph::new();
        let a = g.input(Matrix::from_rows(&[[0.3, -1.0, 2.0]]));
        let c = g.input(Matrix::from_rows(&[[0.3, -1.0, 2.0]]));
        let j = team_spirit_discrete_node(&mut g, a, c);
        assert!(g.scalar(j).abs() < 1e-12);
    }

    #[test]
    fn zero_mask_layer_is_uniform() {
        let mut l = learner(&tiny_config(Variant::CoachReg), 2);
        let layer = l.policy.actors[0].mask_layer.as_mut().unwrap();
        for p in layer.params_mut() {
            p.value_mut().as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        }
        let b = random_batch(&shape(2), 5, "mask");
        let (_, probs) = mask_distribution(&l.policy.actors[0], &b.obs[0]).unwrap();
        for r in 0..5 {
            let h: f64 = probs.row(r).iter().map(|p| -p * libm::log(*p)).sum();
            assert!((h - libm::log(4.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_argmax_is_shift_invariant() {
        let mut l = learner(&tiny_config(Variant::CoachReg), 2);
        let b = random_batch(&shape(2), 20, "shift");
        let (before, probs) = mask_distribution(&l.policy.actors[0], &b.obs[0]).unwrap();
        for r in 0..20 {
            assert!((probs.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let layer = l.policy.actors[0].mask_layer.as_mut().unwrap();
        layer.bias.value_mut().as_mut_slice().iter_mut().for_each(|v| *v += 3.7);
        let (after, _) = mask_distribution(&l.policy.actors[0], &b.obs[0]).unwrap();
        for r in 0..20 {
            assert_eq!(argmax(before.row(r)), argmax(after.row(r)));
        }
    }

    #[test]
    fn matching_coach_and_agent_masks_give_zero_agreement_penalty() {
        let mut l = learner(&tiny_config(Variant::CoachReg), 2);
        for p in l.policy.actors[0].mask_layer.as_mut().unwrap().params_mut() {
            p.value_mut().as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        }
        let coach = Mlp::zeros(l.coach.as_ref().unwrap().spec().clone(), "coach");
        let b = random_batch(&shape(2), 6, "je");
        let mut g = Graph::new();
        let obs: Vec<_> = b.obs.iter().map(|m| g.input(m.clone())).collect();
        let joint = g.concat(&obs);
        let logits = coach.forward(&mut g, joint, None, true).unwrap();
        let je = mask_agreement(&mut g, &l.policy.actors[0], true, obs[0], logits).unwrap();
        assert!(g.scalar(je).abs() < 1e-15);
    }

    use crate::autograd::stochastic::argmax;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn regularizers_are_never_positive(seed in 0u64..1000) {
            let mut cfg = tiny_config(Variant::CoachReg);
            cfg.seed = seed;
            let l = learner(&cfg, 2);
            let b = random_batch(&shape(2), 6, "prop");
            let mut g = Graph::new();
            let obs: Vec<_> = b.obs.iter().map(|m| g.input(m.clone())).collect();
            let joint = g.concat(&obs);
            let logits = l.coach.as_ref().unwrap().forward(&mut g, joint, None, false).unwrap();
            let je = mask_agreement(&mut g, l.policy.actor(1), false, obs[1], logits).unwrap();
            prop_assert!(g.scalar(je) <= 0.0);

            cfg.variant = Variant::TeamReg;
            cfg.hidden_dims = vec![8, 8];
            let t = learner(&cfg, 2);
            let mut g = Graph::new();
            let obs: Vec<_> = b.obs.iter().map(|m| g.input(m.clone())).collect();
            let ts = team_spirit_continuous(&mut g, t.policy.actor(1), false, t.policy.actor(0), false, 1, 0, &obs).unwrap();
            prop_assert!(g.scalar(ts) <= 0.0);
        }
    }
}
