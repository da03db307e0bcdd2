//! CSV artifacts. Every file opens with a `# config_hash=<hash>` comment
//! line followed by a header row.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use marl_core::agents::RunLog;

/// Lossless, platform-independent rendering of a real.
pub fn real(v: f64) -> String {
    format!("{v}")
}

pub fn writer(path: &Path, config_hash: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "# config_hash={config_hash}")?;
    Ok(csv::Writer::from_writer(out))
}

pub fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file))
}

/// Reads the hash from a file's leading comment line.
pub fn config_hash_of(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path)?;
    match text.lines().next().and_then(|l| l.strip_prefix("# config_hash=")) {
        Some(h) => Ok(h.to_string()),
        None => bail!("{} has no config hash line", path.display()),
    }
}

pub fn run_log_header(n_agents: usize) -> Vec<String> {
    let mut h = vec!["episode".to_string(), "learning_step".to_string()];
    h.extend((0..n_agents).map(|k| format!("eval_return_{k}")));
    h.push("mean_return".into());
    h.extend((0..n_agents).map(|k| format!("critic_loss_{k}")));
    h.extend(["team_spirit", "mask_kl", "noise_scale"].map(String::from));
    h
}

pub fn run_log_records(log: &RunLog) -> Vec<Vec<String>> {
    log.rows
        .iter()
        .map(|r| {
            let mut rec = vec![r.episode.to_string(), r.learning_step.to_string()];
            rec.extend(r.eval_returns.iter().copied().map(real));
            rec.push(real(r.mean_return));
            rec.extend(r.critic_losses.iter().copied().map(real));
            rec.extend([r.team_spirit, r.mask_kl, r.noise_scale].map(real));
            rec
        })
        .collect()
}

pub fn write_run_log(path: &Path, log: &RunLog, config_hash: &str) -> Result<()> {
    let mut w = writer(path, config_hash)?;
    w.write_record(run_log_header(log.n_agents))?;
    for rec in run_log_records(log) {
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Training-episode returns: `episode, return_0.., mean_return`.
pub fn write_episode_returns(path: &Path, log: &RunLog, config_hash: &str) -> Result<()> {
    let mut w = writer(path, config_hash)?;
    let mut header = vec!["episode".to_string()];
    header.extend((0..log.n_agents).map(|k| format!("return_{k}")));
    header.push("mean_return".into());
    w.write_record(header)?;
    for (e, returns) in log.episode_returns.iter().enumerate() {
        let mut rec = vec![e.to_string()];
        rec.extend(returns.iter().copied().map(real));
        rec.push(real(returns.iter().sum::<f64>() / returns.len() as f64));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// One row of a run log read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct RunLogRow {
    pub learning_step: usize,
    pub mean_return: f64,
    pub team_spirit: f64,
}

pub fn read_run_log(path: &Path) -> Result<Vec<RunLogRow>> {
    let mut r = reader(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).with_context(|| format!("missing column {name}"));
    let (ls, mr, ts) = (col("learning_step")?, col("mean_return")?, col("team_spirit")?);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(RunLogRow {
            learning_step: rec[ls].parse()?,
            mean_return: rec[mr].parse()?,
            team_spirit: rec[ts].parse()?,
        });
    }
    Ok(rows)
}
