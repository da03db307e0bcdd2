//! The tabular chain experiment and its CSV.

use std::path::Path;

use anyhow::Result;
use sha2::{Digest, Sha256};
use marl_core::tabular::{run_toy_experiment, ToyConfig, ToyCurves};

use crate::logs;

pub const TOY_FILE: &str = "toy.csv";

#[derive(Clone, Debug)]
pub struct ToyResult {
    pub unconstrained: ToyCurves,
    pub coordinated: ToyCurves,
    pub threshold: f64,
}

impl ToyResult {
    pub fn episodes_to_reach(&self) -> (Option<usize>, Option<usize>) {
        (self.unconstrained.episodes_to_reach(self.threshold), self.coordinated.episodes_to_reach(self.threshold))
    }
}

pub fn run_toy(base: &ToyConfig, master: u64) -> ToyResult {
    let plain = ToyConfig { coordinated: false, ..base.clone() };
    let coord = ToyConfig { coordinated: true, ..base.clone() };
    ToyResult {
        unconstrained: run_toy_experiment(&plain, master),
        coordinated: run_toy_experiment(&coord, master),
        threshold: base.ninety_percent_threshold(),
    }
}

/// Hash of the experiment settings, in the same form as run config hashes.
pub fn config_hash(cfg: &ToyConfig, master: u64) -> String {
    let digest = Sha256::digest(format!("{cfg:?} master={master}").as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Columns `variant, episode, mean_return, stderr, threshold`.
pub fn write_toy(path: &Path, result: &ToyResult, config_tag: &str) -> Result<()> {
    let mut w = logs::writer(path, config_tag)?;
    w.write_record(["variant", "episode", "mean_return", "stderr", "threshold"])?;
    for (name, c) in [("unconstrained", &result.unconstrained), ("coordinated", &result.coordinated)] {
        for (e, (m, se)) in c.mean.iter().zip(&c.stderr).enumerate() {
            w.write_record([name.to_string(), e.to_string(), logs::real(*m), logs::real(*se), logs::real(result.threshold)])?;
        }
    }
    w.flush()?;
    Ok(())
}
