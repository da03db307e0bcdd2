//! Experiment harness around `marl-core`: run configs and presets, CSV
//! logs, checkpoints, multi-process fan-out, random search, episode
//! recording and coordination analysis. The `marl` binary is a thin CLI
//! over these modules.

pub mod analyze;
pub mod checkpoint;
pub mod config;
pub mod jobs;
pub mod logs;
pub mod record;
pub mod run;
pub mod search;
pub mod toy;
