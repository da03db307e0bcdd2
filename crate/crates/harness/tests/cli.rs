use std::path::Path;
use std::process::Command;

use marl_core::agents::{evaluate, Variant};
use marl_core::envs::Task;
use marl_harness::checkpoint::Checkpoint;
use marl_harness::config::{preset, RunSpec, Scale};
use marl_harness::run::{self, RunSummary};
use marl_harness::{analyze, logs};

fn small_spec(variant: Variant, seed: u64) -> RunSpec {
    let mut spec = preset(Task::Spread, variant, Scale::Desk, seed);
    spec.train.episodes = 12;
    spec.train.max_steps = 50;
    spec.train.hidden_dims = vec![16, 16];
    spec.train.mask_repeats = 4;
    spec.train.batch_size = 64;
    spec.train.steps_per_update = 25;
    spec.train.eval_every = 4;
    spec.train.eval_episodes = 3;
    spec.train.final_eval_episodes = 5;
    spec.train.actor_lr = 1e-3;
    spec
}

fn marl(args: &[&str], out: &Path) -> String {
    let o = Command::new(env!("CARGO_BIN_EXE_marl")).args(args).env("MARL_OUT_DIR", out).output().unwrap();
    let stdout = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(o.status.success(), "marl {args:?} failed:\n{stdout}\n{}", String::from_utf8_lossy(&o.stderr));
    stdout
}

#[test]
fn best_checkpoint_replays_the_logged_evaluations() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(Variant::CoachReg, 2);
    let (outcome, summary) = run::execute(&spec, dir.path()).unwrap();
    let best = summary.best_eval.clone().expect("at least one evaluation ran");
    assert!(outcome.log.rows.len() >= 2);

    let ckpt = Checkpoint::load(&dir.path().join(run::CHECKPOINT_FILE)).unwrap();
    assert_eq!(ckpt.spec, spec);
    let policy = ckpt.policy().unwrap();
    let mut env = spec.env.build().unwrap();
    let replay = evaluate(&mut env, &policy, &summary.eval_seeds).unwrap();
    assert_eq!(replay.mean.to_bits(), best.mean.to_bits());
    let fin = evaluate(&mut env, &policy, &summary.final_eval_seeds).unwrap();
    assert_eq!(fin.mean.to_bits(), summary.final_eval.mean.to_bits());
}

#[test]
fn every_csv_carries_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(Variant::TeamReg, 0);
    run::execute(&spec, dir.path()).unwrap();
    for f in [run::RUN_LOG_FILE, run::EPISODES_FILE] {
        assert_eq!(logs::config_hash_of(&dir.path().join(f)).unwrap(), spec.hash());
    }
    assert_eq!(RunSpec::load(&dir.path().join(run::CONFIG_FILE)).unwrap(), spec);
}

#[test]
fn worker_processes_match_in_process_runs() {
    let out = tempfile::tempdir().unwrap();
    let cfg = out.path().join("small.json");
    small_spec(Variant::Maddpg, 0).save(&cfg).unwrap();
    let cfg = cfg.to_str().unwrap();
    let root = out.path().join("workers");
    marl(&["train", "--config", cfg, "--seeds", "2", "--workers", "2", "--out", root.to_str().unwrap()], out.path());
    for seed in 0..2 {
        let spec = small_spec(Variant::Maddpg, seed);
        let local = out.path().join(format!("local{seed}"));
        run::execute(&spec, &local).unwrap();
        let worker = run::run_dir(&root, &spec);
        for f in [run::CONFIG_FILE, run::RUN_LOG_FILE, run::EPISODES_FILE, run::CHECKPOINT_FILE] {
            assert_eq!(std::fs::read(local.join(f)).unwrap(), std::fs::read(worker.join(f)).unwrap(), "seed {seed} {f}");
        }
    }
}

#[test]
fn record_analyze_and_eval_from_the_cli() {
    let out = tempfile::tempdir().unwrap();
    let root = out.path();
    for seed in 0..2 {
        run::execute(&small_spec(Variant::CoachReg, seed), &run::run_dir(root, &small_spec(Variant::CoachReg, seed))).unwrap();
    }
    let run0 = run::run_dir(root, &small_spec(Variant::CoachReg, 0));
    let stdout = marl(&["eval", "--run-dir", run0.to_str().unwrap()], root);
    let summary = RunSummary::load(&run0).unwrap();
    assert!(stdout.contains(&format!("mean return {} ", summary.final_eval.mean)), "{stdout}");

    for seed in 0..2 {
        let d = run::run_dir(root, &small_spec(Variant::CoachReg, seed));
        marl(&["record", "--run-dir", d.to_str().unwrap(), "--episodes", "2"], root);
        assert!(d.join("record_argmax.csv").exists() && d.join("record_sampled.csv").exists());
    }
    marl(&["analyze", "--window", "2"], root);
    let text = std::fs::read_to_string(root.join(analyze::ANALYSIS_FILE)).unwrap();
    assert!(text.starts_with("# config_hash="));
    assert_eq!(text.lines().nth(1).unwrap(), "metric,env,variant,seed,value,stderr");
    for metric in ["mask_entropy_argmax", "hamming_sampled", "best_equivalence_sampled", "delta_perf_argmax"] {
        assert!(text.lines().any(|l| l.starts_with(&format!("{metric},spread,coachreg,,"))), "{metric} aggregate missing");
    }
    let entropy: f64 = text
        .lines()
        .find(|l| l.starts_with("mask_entropy_sampled,spread,coachreg,0,"))
        .unwrap()
        .split(',')
        .nth(4)
        .unwrap()
        .parse()
        .unwrap();
    assert!((0.0..=4f64.ln() + 1e-12).contains(&entropy));
    assert!(root.join(analyze::TEAM_SPIRIT_FILE).exists());
}

#[test]
fn toy_command_writes_curves() {
    let out = tempfile::tempdir().unwrap();
    let stdout = marl(&["toy", "--seeds", "3", "--episodes", "50"], out.path());
    assert!(stdout.contains("coordinated"));
    let text = std::fs::read_to_string(out.path().join("toy.csv")).unwrap();
    assert_eq!(text.lines().nth(1).unwrap(), "variant,episode,mean_return,stderr,threshold");
    assert_eq!(text.lines().count(), 2 + 2 * 50);
}

#[test]
fn search_from_the_cli_ranks_configs() {
    let out = tempfile::tempdir().unwrap();
    let cfg = out.path().join("base.json");
    let mut spec = small_spec(Variant::TeamReg, 0);
    spec.train.episodes = 4;
    spec.save(&cfg).unwrap();
    marl(&["search", "--config", cfg.to_str().unwrap(), "--variant", "teamreg", "--configs", "3", "--seeds", "1"], out.path());
    let dir = out.path().join("spread/teamreg/search");
    let results = std::fs::read_to_string(dir.join("search_results.csv")).unwrap();
    assert_eq!(results.lines().count(), 2 + 3);
    let summary = std::fs::read_to_string(dir.join("search_summary.csv")).unwrap();
    assert_eq!(summary.lines().nth(1).unwrap(), "env,variant,n,min,q1,median,q3,max,best");
    assert!(RunSpec::load(&dir.join("best_config.json")).is_ok());
}
