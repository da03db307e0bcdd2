//! Actor, critic and coach networks.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{TrainConfig, Variant};
use crate::autograd::{Activation, Graph, Linear, Matrix, Mlp, MlpNodes, MlpSpec, NodeId, Param};
use crate::{Error, Result};

/// Deterministic policy `mu^i(o^i)` with optional teammate-prediction heads
/// on its trunk and an optional mask layer `l^i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub policy: Mlp,
    /// One linear head per teammate, in teammate order (self skipped);
    /// outputs pass through `tanh`.
    pub heads: Vec<Linear>,
    /// Linear map from the observation to `K` mask logits.
    pub mask_layer: Option<Linear>,
}

impl Actor {
    pub fn action_dim(&self) -> usize {
        self.policy.spec().output_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.policy.spec().input_dim
    }

    pub fn n_masks(&self) -> Option<usize> {
        self.mask_layer.as_ref().map(Linear::out_dim)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.policy.params();
        out.extend(self.heads.iter().flat_map(Linear::params));
        if let Some(m) = &self.mask_layer {
            out.extend(m.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.policy.params_mut();
        out.extend(self.heads.iter_mut().flat_map(Linear::params_mut));
        if let Some(m) = &mut self.mask_layer {
            out.extend(m.params_mut());
        }
        out
    }

    pub fn renamed(&self, from: &str, to: &str) -> Self {
        Self {
            policy: self.policy.renamed(from, to),
            heads: self.heads.iter().map(|h| h.renamed(from, to)).collect(),
            mask_layer: self.mask_layer.as_ref().map(|m| m.renamed(from, to)),
        }
    }

    pub fn forward<'p>(&'p self, g: &mut Graph<'p>, obs: NodeId, mask: Option<NodeId>, trainable: bool) -> Result<MlpNodes> {
        match (&self.mask_layer, mask) {
            (None, Some(_)) => return Err(Error::InvalidArgument("mask given to an unmasked actor".into())),
            (Some(_), None) => return Err(Error::InvalidArgument("masked actor needs a mask".into())),
            _ => {}
        }
        self.policy.forward_full(g, obs, mask, trainable)
    }

    /// Prediction of teammate `slot`'s action from this actor's trunk.
    pub fn predict_teammate<'p>(&'p self, g: &mut Graph<'p>, trunk: NodeId, slot: usize, trainable: bool) -> Result<NodeId> {
        let head = self
            .heads
            .get(slot)
            .ok_or_else(|| Error::InvalidArgument(format!("no teammate head {slot}")))?;
        let out = head.forward(g, trunk, trainable);
        Ok(g.tanh(out))
    }

    pub fn mask_logits<'p>(&'p self, g: &mut Graph<'p>, obs: NodeId, trainable: bool) -> Result<NodeId> {
        let layer = self
            .mask_layer
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("actor has no mask layer".into()))?;
        Ok(layer.forward(g, obs, trainable))
    }

    /// Mask logits for a batch of observations, outside any training graph.
    pub fn eval_mask_logits(&self, obs: &Matrix) -> Result<Matrix> {
        let mut g = Graph::new();
        let x = g.input(obs.clone());
        let l = self.mask_logits(&mut g, x, false)?;
        Ok(g.value(l).clone())
    }

    /// Actions for a batch; `mask` holds one row per observation.
    pub fn eval(&self, obs: &Matrix, mask: Option<&Matrix>) -> Result<Matrix> {
        let mut g = Graph::new();
        let x = g.input(obs.clone());
        let m = mask.map(|m| g.input(m.clone()));
        let y = self.forward(&mut g, x, m, false)?;
        Ok(g.value(y.output).clone())
    }

    /// Teammate predictions for a batch, outside any training graph.
    pub fn eval_prediction(&self, obs: &Matrix, slot: usize) -> Result<Matrix> {
        let mut g = Graph::new();
        let x = g.input(obs.clone());
        let nodes = self.forward(&mut g, x, None, false)?;
        let p = self.predict_teammate(&mut g, nodes.trunk, slot, false)?;
        Ok(g.value(p).clone())
    }
}

/// Slot of teammate `j` in agent `i`'s head list.
pub fn teammate_slot(i: usize, j: usize) -> usize {
    debug_assert_ne!(i, j);
    if j < i {
        j
    } else {
        j - 1
    }
}

/// Which agents' observations and actions a critic reads, in order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CriticView {
    /// Only the agent's own `(o^i, a^i)`.
    Local,
    /// Every agent in index order.
    Joint,
    /// Every agent, starting at agent `i` and wrapping around.
    Rotated,
}

impl CriticView {
    pub fn for_variant(v: Variant) -> Self {
        match v {
            Variant::Ddpg => CriticView::Local,
            Variant::Sharing => CriticView::Rotated,
            _ => CriticView::Joint,
        }
    }

    pub fn order(self, i: usize, n: usize) -> Vec<usize> {
        match self {
            CriticView::Local => alloc::vec![i],
            CriticView::Joint => (0..n).collect(),
            CriticView::Rotated => (0..n).map(|k| (i + k) % n).collect(),
        }
    }

    pub fn input_dim(self, i: usize, obs_dims: &[usize], act_dims: &[usize]) -> usize {
        self.order(i, obs_dims.len()).iter().map(|&k| obs_dims[k] + act_dims[k]).sum()
    }
}

/// Per-agent network shapes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeamShape {
    pub obs_dims: Vec<usize>,
    pub act_dims: Vec<usize>,
}

impl TeamShape {
    pub fn n_agents(&self) -> usize {
        self.obs_dims.len()
    }
}

/// The decentralized policies of a team: everything needed at execution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub variant: Variant,
    pub shape: TeamShape,
    /// One actor per agent, or a single actor shared by all.
    pub actors: Vec<Actor>,
}

impl Policy {
    /// Index into `actors` used by agent `i`.
    pub fn slot(&self, i: usize) -> usize {
        if self.variant == Variant::Sharing {
            0
        } else {
            i
        }
    }

    pub fn actor(&self, i: usize) -> &Actor {
        &self.actors[self.slot(i)]
    }

    pub fn n_agents(&self) -> usize {
        self.shape.n_agents()
    }

    pub fn is_masked(&self) -> bool {
        self.variant.is_masked()
    }

    pub fn params(&self) -> Vec<&Param> {
        self.actors.iter().flat_map(Actor::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.actors.iter_mut().flat_map(Actor::params_mut).collect()
    }
}

pub fn actor_name(variant: Variant, i: usize) -> alloc::string::String {
    if variant == Variant::Sharing {
        "actor".into()
    } else {
        format!("actor{i}")
    }
}

pub fn critic_name(variant: Variant, i: usize) -> alloc::string::String {
    if variant == Variant::Sharing {
        "critic".into()
    } else {
        format!("critic{i}")
    }
}

/// Builds the actors of a fresh team. Policies (and mask layers) draw from
/// `init`, teammate heads from `head_init`.
pub fn build_actors(cfg: &TrainConfig, shape: &TeamShape, init: &mut impl Rng, head_init: &mut impl Rng) -> Vec<Actor> {
    let n = shape.n_agents();
    let count = if cfg.variant == Variant::Sharing { 1 } else { n };
    let mut actors: Vec<Actor> = (0..count)
        .map(|i| {
            let name = actor_name(cfg.variant, i);
            let spec = MlpSpec::new(shape.obs_dims[i], shape.act_dims[i], Activation::Tanh)
                .with_hidden(cfg.hidden_dims.clone())
                .with_layer_norm(cfg.layer_norm);
            let policy = Mlp::new(spec, &name, init);
            let mask_layer = cfg
                .variant
                .is_masked()
                .then(|| Linear::new(&format!("{name}.mask"), shape.obs_dims[i], cfg.n_masks, init));
            Actor { policy, heads: Vec::new(), mask_layer }
        })
        .collect();
    if !cfg.variant.is_masked() {
        for (i, actor) in actors.iter_mut().enumerate() {
            let name = actor_name(cfg.variant, i);
            let trunk = actor.policy.trunk_dim();
            actor.heads = (0..n)
                .filter(|&j| j != i)
                .map(|j| Linear::new(&format!("{name}.head{j}"), trunk, shape.act_dims[j], head_init))
                .collect();
        }
    }
    actors
}

pub fn build_critics(cfg: &TrainConfig, shape: &TeamShape, init: &mut impl Rng) -> Vec<Mlp> {
    let view = CriticView::for_variant(cfg.variant);
    let count = if cfg.variant == Variant::Sharing { 1 } else { shape.n_agents() };
    (0..count)
        .map(|i| {
            let spec = MlpSpec::new(view.input_dim(i, &shape.obs_dims, &shape.act_dims), 1, Activation::Linear)
                .with_hidden(cfg.hidden_dims.clone())
                .with_layer_norm(cfg.layer_norm);
            Mlp::new(spec, &critic_name(cfg.variant, i), init)
        })
        .collect()
}

/// Coach `p^c(e | o)` over the joint observation.
pub fn build_coach(cfg: &TrainConfig, shape: &TeamShape, init: &mut impl Rng) -> Mlp {
    let spec = MlpSpec::new(shape.obs_dims.iter().sum(), cfg.n_masks, Activation::Linear)
        .with_hidden(cfg.hidden_dims.clone())
        .with_layer_norm(cfg.layer_norm);
    Mlp::new(spec, "coach", init)
}

pub const TARGET_PREFIX: &str = "target.";

pub fn target_actor(a: &Actor) -> Actor {
    a.renamed("", TARGET_PREFIX)
}

pub fn target_critic(c: &Mlp) -> Mlp {
    c.renamed("", TARGET_PREFIX)
}
