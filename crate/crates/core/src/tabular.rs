//! Independent tabular Q-learners on the two-agent chain.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::envs::chain_step;
use crate::seed;

/// `Q[s][a]` over chain positions `0..=L` and actions `{0, 1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    values: Vec<[f64; 2]>,
}

impl QTable {
    pub fn new(n_states: usize) -> Self {
        Self { values: vec![[0.0; 2]; n_states] }
    }

    pub fn n_states(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, s: usize) -> &[f64; 2] {
        &self.values[s]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s][a] = v;
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn boltzmann_probs(q_row: &[f64], temperature: f64) -> Vec<f64> {
    let max = q_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = q_row.iter().map(|q| libm::exp((q - max) / temperature)).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Samples `a` with probability proportional to `exp(Q[a] / temperature)`.
pub fn boltzmann_sample(q_row: &[f64], temperature: f64, rng: &mut impl Rng) -> usize {
    let p = boltzmann_probs(q_row, temperature);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, pa) in p.iter().enumerate() {
        acc += pa;
        if u < acc {
            return a;
        }
    }
    p.len() - 1
}

/// Greedy action, ties broken toward action 0.
pub fn greedy(q_row: &[f64]) -> usize {
    let mut best = 0;
    for (a, &q) in q_row.iter().enumerate() {
        if q > q_row[best] {
            best = a;
        }
    }
    best
}

/// One Q-learning step; `next = None` marks a terminal successor.
pub fn q_update(q: &mut QTable, s: usize, a: usize, r: f64, next: Option<usize>, lr: f64, gamma: f64) {
    let bootstrap = next.map_or(0.0, |s2| q.row(s2).iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let old = q.row(s)[a];
    q.set(s, a, old + lr * (r + gamma * bootstrap - old));
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyConfig {
    pub length: usize,
    pub coordinated: bool,
    pub n_seeds: usize,
    pub episodes: usize,
    pub lr: f64,
    pub gamma: f64,
    pub temperature: f64,
    pub eval_episodes: usize,
    /// Step cap for both training and evaluation episodes.
    pub step_cap: usize,
    /// Training episodes start at a uniformly drawn non-terminal cell
    /// instead of cell 0. Evaluation always starts at 0.
    pub random_start: bool,
}

impl ToyConfig {
    pub fn new(length: usize, coordinated: bool) -> Self {
        Self {
            length,
            coordinated,
            n_seeds: 20,
            episodes: 300,
            lr: 0.05,
            gamma: 0.99,
            temperature: 1.0,
            eval_episodes: 10,
            step_cap: 10 * length,
            random_start: false,
        }
    }

    /// Greedy return of the shortest path.
    pub fn optimal_return(&self) -> f64 {
        -(self.length as f64)
    }

    /// 90% of the way from the capped worst return to the optimum.
    pub fn ninety_percent_threshold(&self) -> f64 {
        let worst = -(self.step_cap as f64);
        worst + 0.9 * (self.optimal_return() - worst)
    }
}

struct Learners {
    q: [QTable; 2],
}

impl Learners {
    fn episode(&mut self, cfg: &ToyConfig, rng: Option<&mut seed::Rng>) -> f64 {
        let mut rng = rng;
        let mut s = match &mut rng {
            Some(r) if cfg.random_start => r.random_range(0..cfg.length),
            _ => 0,
        };
        let mut ret = 0.0;
        for _ in 0..cfg.step_cap {
            let pick = |q: &QTable, rng: &mut Option<&mut seed::Rng>| match rng {
                Some(r) => boltzmann_sample(q.row(s), cfg.temperature, *r),
                None => greedy(q.row(s)),
            };
            let a1 = pick(&self.q[0], &mut rng);
            let a2 = pick(&self.q[1], &mut rng);
            let (next, terminal) = chain_step(s, cfg.length, a1 as u8, a2 as u8, cfg.coordinated);
            ret -= 1.0;
            if rng.is_some() {
                let succ = (!terminal).then_some(next);
                q_update(&mut self.q[0], s, a1, -1.0, succ, cfg.lr, cfg.gamma);
                q_update(&mut self.q[1], s, a2, -1.0, succ, cfg.lr, cfg.gamma);
            }
            s = next;
            if terminal {
                break;
            }
        }
        ret
    }
}

/// Mean greedy evaluation return after each learning episode, one seed.
pub fn run_toy_seed(cfg: &ToyConfig, rng: &mut seed::Rng) -> Vec<f64> {
    let mut l = Learners { q: [QTable::new(cfg.length + 1), QTable::new(cfg.length + 1)] };
    (0..cfg.episodes)
        .map(|_| {
            l.episode(cfg, Some(rng));
            let total: f64 = (0..cfg.eval_episodes).map(|_| l.episode(cfg, None)).sum();
            total / cfg.eval_episodes as f64
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyCurves {
    pub per_seed: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl ToyCurves {
    /// First episode (0-based) whose seed-mean return reaches `threshold`.
    pub fn episodes_to_reach(&self, threshold: f64) -> Option<usize> {
        self.mean.iter().position(|&r| r >= threshold)
    }
}

/// Seed `k` uses the stream `toy/{k}` of `master`.
pub fn run_toy_experiment(cfg: &ToyConfig, master: u64) -> ToyCurves {
    let per_seed: Vec<Vec<f64>> = (0..cfg.n_seeds)
        .map(|k| run_toy_seed(cfg, &mut seed::stream(master, &format!("toy/{k}"))))
        .collect();
    let n = per_seed.len() as f64;
    let mut mean = vec![0.0; cfg.episodes];
    let mut stderr = vec![0.0; cfg.episodes];
    for e in 0..cfg.episodes {
        let m = per_seed.iter().map(|c| c[e]).sum::<f64>() / n;
        let var = if n > 1.0 { per_seed.iter().map(|c| (c[e] - m) * (c[e] - m)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        mean[e] = m;
        stderr[e] = libm::sqrt(var / n);
    }
    ToyCurves { per_seed, mean, stderr }
}
