use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use marl_core::agents::{eval_seeds, evaluate, Variant};
use marl_core::envs::Task;
use marl_core::seed::labels;
use marl_core::tabular::ToyConfig;

use marl_harness::analyze::{self, record_file};
use marl_harness::checkpoint::Checkpoint;
use marl_harness::config::{preset, RunSpec, Scale};
use marl_harness::jobs::{self, Job};
use marl_harness::record::{self, MaskMode};
use marl_harness::run::{self, RunSummary};
use marl_harness::{search, toy};

#[derive(Parser)]
#[command(name = "marl", version, about = "Train and analyze coordination-regularized multi-agent actor-critic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long, default_value = "spread")]
    env: Task,
    #[arg(long, default_value = "maddpg")]
    variant: Variant,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of consecutive seeds starting at --seed.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Training episodes; defaults to the preset's.
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long, value_enum, default_value = "desk")]
    scale: Scale,
    /// Run config file; replaces the preset (--seed and --episodes still apply when given).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "MARL_OUT_DIR", default_value = "runs")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

impl RunArgs {
    fn base(&self, seed_given: bool) -> Result<RunSpec> {
        let mut spec = match &self.config {
            Some(path) => RunSpec::load(path)?,
            None => preset(self.env, self.variant, self.scale, self.seed),
        };
        if seed_given || self.config.is_none() {
            spec.train.seed = self.seed;
        }
        if let Some(e) = self.episodes {
            spec.train.episodes = e;
        }
        spec.train.validate()?;
        Ok(spec)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Tabular chain experiment with and without the coordination module.
    Toy {
        #[arg(long, default_value_t = 5)]
        length: usize,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long, default_value_t = 300)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Start training episodes at a random cell.
        #[arg(long)]
        random_start: bool,
        #[arg(long, env = "MARL_OUT_DIR", default_value = "runs")]
        out: PathBuf,
    },
    /// Train one or more seeds of a preset or config file.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Train exactly one run into this directory (used by workers).
        #[arg(long, hide = true)]
        run_dir: Option<PathBuf>,
    },
    /// Re-evaluate a run's best checkpoint.
    Eval {
        #[arg(long)]
        run_dir: PathBuf,
        /// Evaluate on this many final-eval episodes instead of the run's own count.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Random hyper-parameter search.
    Search {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 50)]
        configs: usize,
    },
    /// Record episodes of a run's best checkpoint to CSV.
    Record {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        /// Mask selection; both modes when omitted.
        #[arg(long, value_enum)]
        mask_mode: Option<MaskMode>,
    },
    /// Coordination metrics over run directories.
    Analyze {
        /// Run directories; every run below --out when omitted.
        run_dirs: Vec<PathBuf>,
        #[arg(long, env = "MARL_OUT_DIR", default_value = "runs")]
        out: PathBuf,
        /// Moving-average window over evaluation rows.
        #[arg(long, default_value_t = 10)]
        window: usize,
    },
}

fn find_runs(root: &std::path::Path, found: &mut Vec<PathBuf>) -> Result<()> {
    if root.join(run::SUMMARY_FILE).exists() {
        found.push(root.to_path_buf());
        return Ok(());
    }
    for entry in std::fs::read_dir(root).with_context(|| format!("reading {}", root.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            find_runs(&path, found)?;
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let seed_given = std::env::args().any(|a| a == "--seed" || a.starts_with("--seed="));
    match cli.command {
        Command::Toy { length, seeds, episodes, seed, random_start, out } => {
            let mut cfg = ToyConfig::new(length, false);
            cfg.n_seeds = seeds;
            cfg.episodes = episodes;
            cfg.random_start = random_start;
            let result = toy::run_toy(&cfg, seed);
            std::fs::create_dir_all(&out)?;
            let path = out.join(toy::TOY_FILE);
            toy::write_toy(&path, &result, &toy::config_hash(&cfg, seed))?;
            let (plain, coord) = result.episodes_to_reach();
            let show = |e: Option<usize>| e.map_or("never".to_string(), |e| (e + 1).to_string());
            println!("threshold {}: unconstrained {} episodes, coordinated {} episodes", result.threshold, show(plain), show(coord));
            println!("wrote {}", path.display());
        }
        Command::Train { run: args, run_dir } => {
            if let Some(dir) = run_dir {
                let spec = args.base(seed_given)?;
                let (_, s) = run::execute(&spec, &dir)?;
                println!("{}: final eval {:.3}", dir.display(), s.final_eval.mean);
                return Ok(());
            }
            let base = args.base(seed_given)?;
            let jobs: Vec<Job> = (0..args.seeds)
                .map(|k| {
                    let mut spec = base.clone();
                    spec.train.seed = base.train.seed + k;
                    let dir = run::run_dir(&args.out, &spec);
                    Job { spec, dir }
                })
                .collect();
            for (job, s) in jobs.iter().zip(jobs::run_all(&jobs, args.workers)?) {
                println!("{}: final eval {:.3} ({:.0} s)", job.dir.display(), s.final_eval.mean, s.wall_seconds);
            }
        }
        Command::Eval { run_dir, episodes } => {
            let ckpt = Checkpoint::load(&run_dir.join(run::CHECKPOINT_FILE))?;
            let summary = RunSummary::load(&run_dir)?;
            let seeds = match episodes {
                Some(n) => eval_seeds(ckpt.spec.train.seed, labels::FINAL_EVAL, n),
                None => summary.final_eval_seeds.clone(),
            };
            let policy = ckpt.policy()?;
            let mut env = ckpt.spec.env.build()?;
            let r = evaluate(&mut env, &policy, &seeds)?;
            println!("mean return {} over {} episodes; per agent {:?}", r.mean, seeds.len(), r.per_agent);
            if episodes.is_none() {
                println!("logged final eval {}", summary.final_eval.mean);
            }
        }
        Command::Search { run: args, configs } => {
            let base = args.base(seed_given)?;
            let ranked = search::search(&base, base.train.variant, configs, args.seeds as usize, args.workers, &args.out)?;
            for r in ranked.iter().take(5) {
                println!("config {:3}: score {:.3}", r.config_id, r.score());
            }
        }
        Command::Record { run_dir, episodes, mask_mode } => {
            let ckpt = Checkpoint::load(&run_dir.join(run::CHECKPOINT_FILE))?;
            let policy = ckpt.policy()?;
            let mut env = ckpt.spec.env.build()?;
            let seeds = eval_seeds(ckpt.spec.train.seed, labels::FINAL_EVAL, episodes);
            let modes = match mask_mode {
                Some(m) => vec![m],
                None => vec![MaskMode::Argmax, MaskMode::Sampled],
            };
            for mode in modes {
                let recs = record::record(&mut env, &policy, &seeds, mode, ckpt.spec.train.seed)?;
                let path = run_dir.join(record_file(mode));
                record::write_records(&path, &recs, &ckpt.spec.hash())?;
                println!("wrote {}", path.display());
            }
        }
        Command::Analyze { mut run_dirs, out, window } => {
            if run_dirs.is_empty() {
                find_runs(&out, &mut run_dirs)?;
                run_dirs.sort();
            }
            if run_dirs.is_empty() {
                bail!("no runs found below {}", out.display());
            }
            let rows = analyze::analyze(&run_dirs, window, &out)?;
            for r in rows.iter().filter(|r| r.seed.is_none()) {
                println!("{:8} {:16} {:26} {:.4} ± {:.4}", r.env, r.variant, r.metric, r.value, r.stderr);
            }
            println!("wrote {}", out.join(analyze::ANALYSIS_FILE).display());
        }
    }
    Ok(())
}
