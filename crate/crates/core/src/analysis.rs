//! Coordination diagnostics over recorded mask sequences and training logs.

use alloc::vec::Vec;

use itertools::Itertools;

use crate::agents::RunLog;
use crate::{Error, Result};

/// Shannon entropy (nats) of the empirical distribution of mask ids.
pub fn mask_entropy(ids: &[usize]) -> f64 {
    if ids.is_empty() {
        return 0.0;
    }
    let k = ids.iter().max().map_or(0, |m| m + 1);
    let mut counts = alloc::vec![0usize; k];
    for &i in ids {
        counts[i] += 1;
    }
    let n = ids.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * libm::log(p)
        })
        .sum()
}

/// Entropy of a uniform distribution over `k` outcomes, `ln k`.
pub fn max_entropy(k: usize) -> f64 {
    libm::log(k as f64)
}

fn check_pair(a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape("mask sequences", a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("empty mask sequence".into()));
    }
    Ok(())
}

/// Fraction of timesteps on which the two sequences agree.
pub fn hamming_proximity(a: &[usize], b: &[usize]) -> Result<f64> {
    check_pair(a, b)?;
    let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.len() as f64)
}

/// Hamming proximity maximized over every relabeling of `b`'s ids in
/// `0..k`.
pub fn best_equivalence_proximity(a: &[usize], b: &[usize], k: usize) -> Result<f64> {
    check_pair(a, b)?;
    if a.iter().chain(b).any(|&m| m >= k) {
        return Err(Error::InvalidArgument("mask id out of range".into()));
    }
    // co-occurrence table: a permutation's score is the sum of its cells
    let mut table = alloc::vec![0usize; k * k];
    for (&x, &y) in a.iter().zip(b) {
        table[y * k + x] += 1;
    }
    let best = (0..k)
        .permutations(k)
        .map(|perm| perm.iter().enumerate().map(|(y, &x)| table[y * k + x]).sum::<usize>())
        .max()
        .unwrap_or(0);
    Ok(best as f64 / a.len() as f64)
}

/// Mean of `metric` over all unordered agent pairs.
pub fn mean_over_pairs(seqs: &[Vec<usize>], metric: impl Fn(&[usize], &[usize]) -> Result<f64>) -> Result<f64> {
    if seqs.len() < 2 {
        return Err(Error::InvalidArgument("need at least two agents".into()));
    }
    let mut total = 0.0;
    let mut pairs = 0;
    for (i, j) in (0..seqs.len()).tuple_combinations() {
        total += metric(&seqs[i], &seqs[j])?;
        pairs += 1;
    }
    Ok(total / pairs as f64)
}

/// `|mean(a) - mean(b)|` of two agents' per-episode returns.
pub fn perf_difference(returns_a: &[f64], returns_b: &[f64]) -> Result<f64> {
    if returns_a.is_empty() || returns_b.is_empty() {
        return Err(Error::InvalidArgument("empty return series".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok((mean(returns_a) - mean(returns_b)).abs())
}

/// Trailing moving average; the first `window - 1` points average the
/// available prefix.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..values.len())
        .map(|t| {
            let len = (t + 1).min(w);
            values[t + 1 - len..=t].iter().sum::<f64>() / len as f64
        })
        .collect()
}

/// `(learning_step, smoothed team-spirit MSE)` over a run's evaluation rows.
pub fn team_spirit_curve(log: &RunLog, window: usize) -> Vec<(usize, f64)> {
    let steps: Vec<usize> = log.rows.iter().map(|r| r.learning_step).collect();
    let values: Vec<f64> = log.rows.iter().map(|r| r.team_spirit).collect();
    steps.into_iter().zip(moving_average(&values, window)).collect()
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, libm::sqrt(var / n as f64))
}
