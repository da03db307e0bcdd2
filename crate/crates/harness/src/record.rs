//! Step-by-step episode recordings of a trained policy.

use std::path::Path;

use anyhow::{bail, Context, Result};
use marl_core::agents::{ActMode, OuNoise, Policy};
use marl_core::envs::MarkovGame;
use marl_core::seed;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::logs;

/// How masked agents pick their sub-policy while recording.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    Argmax,
    Sampled,
}

impl MaskMode {
    pub fn name(self) -> &'static str {
        match self {
            MaskMode::Argmax => "argmax",
            MaskMode::Sampled => "sampled",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub episode: usize,
    pub step: usize,
    pub agent: usize,
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub mask_id: Option<usize>,
}

/// Plays one episode per seed with no exploration noise. Under
/// `MaskMode::Sampled` masks are drawn from the agents' own mask
/// distributions using the `mask_seed` stream.
pub fn record<E: MarkovGame>(env: &mut E, policy: &Policy, seeds: &[u64], mode: MaskMode, mask_seed: u64) -> Result<Vec<StepRecord>> {
    let n = env.n_agents();
    let mut mask_rng = seed::stream(mask_seed, seed::labels::MASK);
    let mut noise_rng = seed::stream(mask_seed, seed::labels::NOISE);
    let mut out = Vec::new();
    for (episode, &s) in seeds.iter().enumerate() {
        let mut rng = seed::Rng::seed_from_u64(s);
        let mut obs = env.reset(&mut rng);
        for step in 0..env.max_steps() {
            let mut actions = Vec::with_capacity(n);
            let mut masks = Vec::with_capacity(n);
            for (i, o) in obs.iter().enumerate() {
                // zero-scale noise: only the mask is stochastic
                let mut still = OuNoise::new(policy.shape.act_dims[i], 0.0, 0.0);
                let act_mode = match mode {
                    MaskMode::Argmax => ActMode::Eval,
                    MaskMode::Sampled => ActMode::Train {
                        noise: &mut still,
                        scale: 0.0,
                        noise_rng: &mut noise_rng,
                        mask_rng: &mut mask_rng,
                    },
                };
                let (a, m) = policy.select_action(i, o, act_mode)?;
                actions.push(a);
                masks.push(m);
            }
            let next = env.step(&actions, &mut rng)?;
            for i in 0..n {
                out.push(StepRecord {
                    episode,
                    step,
                    agent: i,
                    obs: obs[i].clone(),
                    action: actions[i].clone(),
                    reward: next.rewards[i],
                    mask_id: masks[i],
                });
            }
            obs = next.obs;
            if next.done {
                break;
            }
        }
    }
    Ok(out)
}

fn padded(v: &[f64], width: usize) -> impl Iterator<Item = String> + '_ {
    (0..width).map(move |k| v.get(k).map_or(String::new(), |x| logs::real(*x)))
}

/// Columns `episode, step, agent_id, obs_0.., action_0.., reward, mask_id`.
/// Agents with shorter vectors leave the trailing cells empty; `mask_id`
/// is -1 for unmasked agents.
pub fn write_records(path: &Path, records: &[StepRecord], config_hash: &str) -> Result<()> {
    let obs_w = records.iter().map(|r| r.obs.len()).max().unwrap_or(0);
    let act_w = records.iter().map(|r| r.action.len()).max().unwrap_or(0);
    let mut w = logs::writer(path, config_hash)?;
    let mut header: Vec<String> = vec!["episode".into(), "step".into(), "agent_id".into()];
    header.extend((0..obs_w).map(|k| format!("obs_{k}")));
    header.extend((0..act_w).map(|k| format!("action_{k}")));
    header.extend(["reward".into(), "mask_id".into()]);
    w.write_record(&header)?;
    for r in records {
        let mut rec = vec![r.episode.to_string(), r.step.to_string(), r.agent.to_string()];
        rec.extend(padded(&r.obs, obs_w));
        rec.extend(padded(&r.action, act_w));
        rec.push(logs::real(r.reward));
        rec.push(r.mask_id.map_or("-1".into(), |m| m.to_string()));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// What analysis needs from a recording.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    /// Per agent, the mask ids of every step of every episode in order;
    /// empty for unmasked agents.
    pub masks: Vec<Vec<usize>>,
    /// `returns[i][e]`: undiscounted return of agent `i` in episode `e`.
    pub returns: Vec<Vec<f64>>,
}

pub fn read_records(path: &Path) -> Result<Recording> {
    let mut r = logs::reader(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).with_context(|| format!("{}: missing column {name}", path.display()));
    let (ep, ag, rw, mk) = (col("episode")?, col("agent_id")?, col("reward")?, col("mask_id")?);
    let mut rec = Recording { masks: Vec::new(), returns: Vec::new() };
    for row in r.records() {
        let row = row?;
        let (e, i): (usize, usize) = (row[ep].parse()?, row[ag].parse()?);
        if rec.returns.len() <= i {
            rec.returns.resize(i + 1, Vec::new());
            rec.masks.resize(i + 1, Vec::new());
        }
        let returns = &mut rec.returns[i];
        if returns.len() <= e {
            returns.resize(e + 1, 0.0);
        }
        returns[e] += row[rw].parse::<f64>()?;
        let m: i64 = row[mk].parse()?;
        if m >= 0 {
            rec.masks[i].push(m as usize);
        } else if m != -1 {
            bail!("{}: bad mask id {m}", path.display());
        }
    }
    Ok(rec)
}
