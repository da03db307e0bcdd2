//! Coordination metrics over recorded episodes and run logs.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use marl_core::analysis::{
    best_equivalence_proximity, hamming_proximity, mask_entropy, mean_stderr, moving_average, perf_difference,
};

use crate::config::RunSpec;
use crate::logs;
use crate::record::{read_records, MaskMode, Recording};
use crate::run;

pub const ANALYSIS_FILE: &str = "analysis.csv";
pub const TEAM_SPIRIT_FILE: &str = "team_spirit_curve.csv";

/// Recording file of a run for the given mask mode.
pub fn record_file(mode: MaskMode) -> String {
    format!("record_{}.csv", mode.name())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub env: String,
    pub variant: String,
    /// `None` for the across-seed aggregate.
    pub seed: Option<u64>,
    pub value: f64,
    pub stderr: f64,
}

fn pairs<T>(items: &[T]) -> impl Iterator<Item = (&T, &T)> {
    items.iter().enumerate().flat_map(move |(i, a)| items[i + 1..].iter().map(move |b| (a, b)))
}

/// Per-run metrics of one recording. Mask metrics are skipped when no
/// agent is masked; `stderr` runs over agents or agent pairs.
pub fn recording_metrics(rec: &Recording, n_masks: usize, suffix: &str) -> Result<Vec<(String, f64, f64)>> {
    let mut out = Vec::new();
    let masked: Vec<&Vec<usize>> = rec.masks.iter().filter(|m| !m.is_empty()).collect();
    if !masked.is_empty() {
        let h: Vec<f64> = masked.iter().map(|m| mask_entropy(m)).collect();
        let (v, se) = mean_stderr(&h);
        out.push((format!("mask_entropy_{suffix}"), v, se));
    }
    if masked.len() >= 2 {
        let ham = pairs(&masked).map(|(a, b)| hamming_proximity(a, b)).collect::<marl_core::Result<Vec<_>>>()?;
        let (v, se) = mean_stderr(&ham);
        out.push((format!("hamming_{suffix}"), v, se));
        let beq = pairs(&masked)
            .map(|(a, b)| best_equivalence_proximity(a, b, n_masks))
            .collect::<marl_core::Result<Vec<_>>>()?;
        let (v, se) = mean_stderr(&beq);
        out.push((format!("best_equivalence_{suffix}"), v, se));
    }
    if rec.returns.len() >= 2 {
        let d = pairs(&rec.returns).map(|(a, b)| perf_difference(a, b)).collect::<marl_core::Result<Vec<_>>>()?;
        let (v, se) = mean_stderr(&d);
        out.push((format!("delta_perf_{suffix}"), v, se));
    }
    Ok(out)
}

struct RunMetrics {
    spec: RunSpec,
    metrics: Vec<(String, f64, f64)>,
    team_spirit: Vec<(usize, f64)>,
}

fn analyze_run(dir: &Path, window: usize) -> Result<RunMetrics> {
    let spec = RunSpec::load(&dir.join(run::CONFIG_FILE))?;
    let mut metrics = Vec::new();
    for mode in [MaskMode::Argmax, MaskMode::Sampled] {
        let path = dir.join(record_file(mode));
        if path.exists() {
            let rec = read_records(&path)?;
            metrics.extend(recording_metrics(&rec, spec.train.n_masks, mode.name())?);
        }
    }
    let log = logs::read_run_log(&dir.join(run::RUN_LOG_FILE))?;
    let values: Vec<f64> = log.iter().map(|r| r.team_spirit).collect();
    let team_spirit: Vec<(usize, f64)> =
        log.iter().map(|r| r.learning_step).zip(moving_average(&values, window)).filter(|(_, v)| !v.is_nan()).collect();
    if let Some(&(_, last)) = team_spirit.last() {
        metrics.push(("team_spirit_final".into(), last, 0.0));
    }
    if let Some(last) = log.last() {
        metrics.push(("eval_return_final".into(), last.mean_return, 0.0));
    }
    Ok(RunMetrics { spec, metrics, team_spirit })
}

/// Analyzes every run directory and writes `analysis.csv` and
/// `team_spirit_curve.csv` into `out`. Rows with `seed` empty aggregate the
/// runs sharing an (env, variant, metric) with the standard error over
/// seeds.
pub fn analyze(run_dirs: &[PathBuf], window: usize, out: &Path) -> Result<Vec<MetricRow>> {
    let runs = run_dirs
        .iter()
        .map(|d| analyze_run(d, window).with_context(|| format!("analyzing {}", d.display())))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for r in &runs {
        for (metric, value, stderr) in &r.metrics {
            rows.push(MetricRow {
                metric: metric.clone(),
                env: r.spec.env.task.name().into(),
                variant: r.spec.train.variant.name().into(),
                seed: Some(r.spec.train.seed),
                value: *value,
                stderr: *stderr,
            });
        }
    }
    let mut keys: Vec<(String, String, String)> =
        rows.iter().map(|r| (r.env.clone(), r.variant.clone(), r.metric.clone())).collect();
    keys.sort();
    keys.dedup();
    for (env, variant, metric) in keys {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| r.seed.is_some() && r.env == env && r.variant == variant && r.metric == metric)
            .map(|r| r.value)
            .collect();
        let (value, stderr) = mean_stderr(&vals);
        rows.push(MetricRow { metric, env, variant, seed: None, value, stderr });
    }

    let mut hashes: Vec<String> = runs.iter().map(|r| r.spec.hash()).collect();
    hashes.sort();
    hashes.dedup();
    let hash = hashes.join("+");
    std::fs::create_dir_all(out)?;
    let mut w = logs::writer(&out.join(ANALYSIS_FILE), &hash)?;
    w.write_record(["metric", "env", "variant", "seed", "value", "stderr"])?;
    for r in &rows {
        let seed = r.seed.map_or(String::new(), |s| s.to_string());
        w.write_record([r.metric.clone(), r.env.clone(), r.variant.clone(), seed, logs::real(r.value), logs::real(r.stderr)])?;
    }
    w.flush()?;
    let mut w = logs::writer(&out.join(TEAM_SPIRIT_FILE), &hash)?;
    w.write_record(["env", "variant", "seed", "learning_step", "team_spirit"])?;
    for r in &runs {
        for (step, v) in &r.team_spirit {
            w.write_record([
                r.spec.env.task.name().to_string(),
                r.spec.train.variant.name().to_string(),
                r.spec.train.seed.to_string(),
                step.to_string(),
                logs::real(*v),
            ])?;
        }
    }
    w.flush()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_agents_are_fully_proximal() {
        let seq = vec![0, 1, 2, 3, 0, 1, 2, 3];
        let rec = Recording { masks: vec![seq.clone(), seq.clone(), seq], returns: vec![vec![1.0, 2.0]; 3] };
        let m = recording_metrics(&rec, 4, "argmax").unwrap();
        let get = |name: &str| m.iter().find(|(n, ..)| n == name).unwrap().1;
        assert!((get("mask_entropy_argmax") - 4f64.ln()).abs() < 1e-12);
        assert_eq!(get("hamming_argmax"), 1.0);
        assert_eq!(get("best_equivalence_argmax"), 1.0);
        assert_eq!(get("delta_perf_argmax"), 0.0);
    }

    #[test]
    fn relabelled_agents_differ_only_in_plain_proximity() {
        let a = vec![0, 1, 2, 3, 0, 1];
        let b: Vec<usize> = a.iter().map(|m| (m + 1) % 4).collect();
        let rec = Recording { masks: vec![a, b], returns: vec![vec![0.0], vec![3.0]] };
        let m = recording_metrics(&rec, 4, "sampled").unwrap();
        let get = |name: &str| m.iter().find(|(n, ..)| n == name).unwrap().1;
        assert_eq!(get("hamming_sampled"), 0.0);
        assert_eq!(get("best_equivalence_sampled"), 1.0);
        assert_eq!(get("delta_perf_sampled"), 3.0);
    }

    #[test]
    fn unmasked_recording_has_only_delta_perf() {
        let rec = Recording { masks: vec![vec![], vec![]], returns: vec![vec![1.0], vec![2.0]] };
        let m = recording_metrics(&rec, 4, "argmax").unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].0, "delta_perf_argmax");
    }
}
