//! Fan-out of independent runs to worker processes.
//!
//! Each job is a config file and an output directory. Workers are fresh
//! invocations of this binary (`marl train --config .. --out ..`) and share
//! nothing with the parent; results come back through the files they write.

use std::path::{Path, PathBuf};
use std::process::{Child, Command};

use anyhow::{bail, Context, Result};

use crate::config::RunSpec;
use crate::run::{self, RunSummary};

#[derive(Clone, Debug)]
pub struct Job {
    pub spec: RunSpec,
    pub dir: PathBuf,
}

fn spawn(exe: &Path, job: &Job) -> Result<Child> {
    std::fs::create_dir_all(&job.dir)?;
    let config = job.dir.join(run::CONFIG_FILE);
    job.spec.save(&config)?;
    Command::new(exe)
        .arg("train")
        .arg("--config")
        .arg(&config)
        .arg("--run-dir")
        .arg(&job.dir)
        .spawn()
        .with_context(|| format!("spawning worker for {}", job.dir.display()))
}

/// Runs every job, at most `workers` at a time. With one worker the jobs
/// run in this process.
pub fn run_all(jobs: &[Job], workers: usize) -> Result<Vec<RunSummary>> {
    if workers <= 1 {
        return jobs.iter().map(|j| Ok(run::execute(&j.spec, &j.dir)?.1)).collect();
    }
    let exe = std::env::current_exe()?;
    let mut pending = jobs.iter();
    let mut running: Vec<(Child, &Job)> = Vec::new();
    loop {
        while running.len() < workers {
            match pending.next() {
                Some(job) => running.push((spawn(&exe, job)?, job)),
                None => break,
            }
        }
        if running.is_empty() {
            break;
        }
        let mut k = 0;
        while k < running.len() {
            if let Some(status) = running[k].0.try_wait()? {
                let (_, job) = running.swap_remove(k);
                if !status.success() {
                    bail!("worker for {} failed: {status}", job.dir.display());
                }
            } else {
                k += 1;
            }
        }
        std::thread::sleep(std::time::Duration::from_millis(200));
    }
    jobs.iter().map(|j| RunSummary::load(&j.dir)).collect()
}
