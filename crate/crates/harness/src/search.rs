//! Random hyper-parameter search with model selection across seeds.

use std::path::Path;

use anyhow::Result;
use marl_core::agents::Variant;
use marl_core::seed;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunSpec;
use crate::jobs::{self, Job};
use crate::logs;

/// Base-10 exponent ranges (`lambda*` and learning rates) and the linear
/// noise-scale range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub log_actor_lr: (f64, f64),
    pub log_critic_lr_ratio: (f64, f64),
    pub log_tau: (f64, f64),
    pub log_lambda1: (f64, f64),
    pub log_lambda2: (f64, f64),
    pub log_lambda3: (f64, f64),
    pub noise_scale: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            log_actor_lr: (-8.0, -3.0),
            log_critic_lr_ratio: (-2.0, 2.0),
            log_tau: (-3.0, -1.0),
            log_lambda1: (-3.0, 0.0),
            log_lambda2: (-3.0, 0.0),
            log_lambda3: (-1.0, 1.0),
            noise_scale: (0.3, 1.8),
        }
    }
}

fn log_uniform(range: (f64, f64), rng: &mut impl Rng) -> f64 {
    10f64.powf(rng.random_range(range.0..=range.1))
}

/// Draws one configuration; regularizer weights the variant does not read
/// stay at zero.
pub fn sample_config(space: &SearchSpace, base: &RunSpec, variant: Variant, rng: &mut impl Rng) -> RunSpec {
    let mut spec = base.clone();
    let t = &mut spec.train;
    t.variant = variant;
    t.actor_lr = log_uniform(space.log_actor_lr, rng);
    t.critic_lr_ratio = log_uniform(space.log_critic_lr_ratio, rng);
    t.tau = log_uniform(space.log_tau, rng);
    t.lambda1 = if variant.reads_lambda1() { log_uniform(space.log_lambda1, rng) } else { 0.0 };
    t.lambda2 = if variant.reads_lambda2() { log_uniform(space.log_lambda2, rng) } else { 0.0 };
    t.lambda3 = if variant.reads_lambda3() { log_uniform(space.log_lambda3, rng) } else { 0.0 };
    t.noise_scale = rng.random_range(space.noise_scale.0..=space.noise_scale.1);
    spec
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigResult {
    pub config_id: usize,
    pub spec: RunSpec,
    /// Final re-evaluation of each seed's best snapshot.
    pub seed_scores: Vec<f64>,
}

impl ConfigResult {
    pub fn score(&self) -> f64 {
        self.seed_scores.iter().sum::<f64>() / self.seed_scores.len() as f64
    }
}

/// Best score first; ties broken by the lower config id.
pub fn rank(mut results: Vec<ConfigResult>) -> Vec<ConfigResult> {
    results.sort_by(|a, b| b.score().total_cmp(&a.score()).then(a.config_id.cmp(&b.config_id)));
    results
}

/// Quartiles by linear interpolation between order statistics.
pub fn quartiles(values: &[f64]) -> (f64, f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |q: f64| {
        let pos = q * (v.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    (at(0.25), at(0.5), at(0.75))
}

/// Box-plot input: quartiles and range of all configurations but the best,
/// plus the best score.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxSummary {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub best: f64,
}

pub fn box_summary(ranked: &[ConfigResult]) -> Option<BoxSummary> {
    let best = ranked.first()?.score();
    let rest: Vec<f64> = ranked[1..].iter().map(ConfigResult::score).collect();
    if rest.is_empty() {
        return Some(BoxSummary { n: 0, min: best, q1: best, median: best, q3: best, max: best, best });
    }
    let (q1, median, q3) = quartiles(&rest);
    let min = rest.iter().copied().fold(f64::INFINITY, f64::min);
    let max = rest.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some(BoxSummary { n: rest.len(), min, q1, median, q3, max, best })
}

/// Samples `n_configs` configurations, trains each on `n_seeds` seeds and
/// ranks them. Files go under `out/<task>/<variant>/search`.
pub fn search(base: &RunSpec, variant: Variant, n_configs: usize, n_seeds: usize, workers: usize, out: &Path) -> Result<Vec<ConfigResult>> {
    let root = out.join(base.env.task.name()).join(variant.name()).join("search");
    let mut rng = seed::stream(base.train.seed, &format!("search/{}/{}", base.env.task.name(), variant.name()));
    let configs: Vec<RunSpec> = (0..n_configs).map(|_| sample_config(&SearchSpace::default(), base, variant, &mut rng)).collect();
    let mut jobs_list = Vec::new();
    for (c, spec) in configs.iter().enumerate() {
        for s in 0..n_seeds {
            let mut spec = spec.clone();
            spec.train.seed = base.train.seed + s as u64;
            jobs_list.push(Job { spec, dir: root.join(format!("config{c:03}")).join(format!("seed{s}")) });
        }
    }
    let summaries = jobs::run_all(&jobs_list, workers)?;
    let results: Vec<ConfigResult> = configs
        .into_iter()
        .enumerate()
        .map(|(c, spec)| ConfigResult {
            config_id: c,
            spec,
            seed_scores: summaries[c * n_seeds..(c + 1) * n_seeds].iter().map(|s| s.final_eval.mean).collect(),
        })
        .collect();
    let ranked = rank(results);
    write_results(&root, base, variant, &ranked)?;
    Ok(ranked)
}

fn write_results(root: &Path, base: &RunSpec, variant: Variant, ranked: &[ConfigResult]) -> Result<()> {
    let hash = base.hash();
    let mut w = logs::writer(&root.join("search_results.csv"), &hash)?;
    w.write_record([
        "rank", "config_id", "score", "actor_lr", "critic_lr_ratio", "tau", "lambda1", "lambda2", "lambda3", "noise_scale",
    ])?;
    for (k, r) in ranked.iter().enumerate() {
        let t = &r.spec.train;
        let mut rec = vec![k.to_string(), r.config_id.to_string(), logs::real(r.score())];
        rec.extend([t.actor_lr, t.critic_lr_ratio, t.tau, t.lambda1, t.lambda2, t.lambda3, t.noise_scale].map(logs::real));
        w.write_record(rec)?;
    }
    w.flush()?;
    if let Some(b) = box_summary(ranked) {
        let mut w = logs::writer(&root.join("search_summary.csv"), &hash)?;
        w.write_record(["env", "variant", "n", "min", "q1", "median", "q3", "max", "best"])?;
        let mut rec = vec![base.env.task.name().to_string(), variant.name().to_string(), b.n.to_string()];
        rec.extend([b.min, b.q1, b.median, b.q3, b.max, b.best].map(logs::real));
        w.write_record(rec)?;
        w.flush()?;
        let best = &ranked[0].spec;
        best.save(&root.join("best_config.json"))?;
    }
    Ok(())
}
