//! A single training run and the files it leaves behind.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use marl_core::agents::{eval_seeds, train_run, EvalResult, TrainOutcome};
use marl_core::seed::{self, labels};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::RunSpec;
use crate::logs;

pub const CONFIG_FILE: &str = "config.json";
pub const RUN_LOG_FILE: &str = "run_log.csv";
pub const EPISODES_FILE: &str = "episodes.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "best.ckpt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub per_agent: Vec<f64>,
    pub mean: f64,
}

impl From<&EvalResult> for EvalSummary {
    fn from(r: &EvalResult) -> Self {
        Self { per_agent: r.per_agent.clone(), mean: r.mean }
    }
}

/// Outcome of a run as written to `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub task: String,
    pub variant: String,
    pub seed: u64,
    pub env_steps: usize,
    pub learning_steps: usize,
    pub best_learning_step: Option<usize>,
    pub best_eval: Option<EvalSummary>,
    /// The selected snapshot re-evaluated on the final episode set.
    pub final_eval: EvalSummary,
    pub eval_seeds: Vec<u64>,
    pub final_eval_seeds: Vec<u64>,
    pub wall_seconds: f64,
}

impl RunSummary {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(SUMMARY_FILE);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Standard output directory of a run below `root`.
pub fn run_dir(root: &Path, spec: &RunSpec) -> PathBuf {
    root.join(spec.env.task.name()).join(spec.train.variant.name()).join(format!("seed{}", spec.train.seed))
}

/// Trains `spec` and writes config, logs, summary and best checkpoint into
/// `dir`.
pub fn execute(spec: &RunSpec, dir: &Path) -> Result<(TrainOutcome, RunSummary)> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    spec.save(&dir.join(CONFIG_FILE))?;
    let hash = spec.hash();
    let env = spec.env.build()?;
    let start = std::time::Instant::now();
    let outcome = train_run(&spec.train, &env)?;
    let wall_seconds = start.elapsed().as_secs_f64();
    let log = &outcome.log;
    logs::write_run_log(&dir.join(RUN_LOG_FILE), log, &hash)?;
    logs::write_episode_returns(&dir.join(EPISODES_FILE), log, &hash)?;

    // the eval stream positioned after drawing the evaluation seeds
    let mut eval_rng = seed::stream(spec.train.seed, labels::EVAL);
    for _ in 0..spec.train.eval_episodes {
        eval_rng.next_u64();
    }
    Checkpoint::from_policy(spec, &outcome.best_policy, spec.train.episodes as u64, &eval_rng)
        .save(&dir.join(CHECKPOINT_FILE))?;

    let summary = RunSummary {
        config_hash: hash,
        task: spec.env.task.name().into(),
        variant: spec.train.variant.name().into(),
        seed: spec.train.seed,
        env_steps: log.env_steps,
        learning_steps: log.learning_steps,
        best_learning_step: log.best_learning_step,
        best_eval: log.best_eval.as_ref().map(EvalSummary::from),
        final_eval: EvalSummary::from(&log.final_eval),
        eval_seeds: eval_seeds(spec.train.seed, labels::EVAL, spec.train.eval_episodes),
        final_eval_seeds: eval_seeds(spec.train.seed, labels::FINAL_EVAL, spec.train.final_eval_episodes),
        wall_seconds,
    };
    fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok((outcome, summary))
}
