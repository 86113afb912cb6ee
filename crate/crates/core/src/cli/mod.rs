//! Command-line front end: training runs, checkpoint evaluation and bound sweeps.

pub mod config;
pub mod trainer;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::bounds::{self, ScenarioLimits};
use crate::error::{Error, Result};
use config::ExperimentConfig;
use trainer::RunCheckpoint;

#[derive(Debug, Parser)]
#[command(name = "mopac", version, about = "Model predictive actor-critic experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a training experiment.
    Train {
        /// TOML experiment file; keys not given take preset or default values.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Named preset used as the base (pendulum, robotic, pendulum_fast, smoke).
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides the file and MOPAC_OUTPUT_DIR.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a saved checkpoint with deterministic actions.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Exact-DP checks of the MPC performance bound.
    Bounds {
        #[command(subcommand)]
        action: BoundsCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum BoundsCommand {
    /// Draw random scenarios and write them as JSON.
    Generate {
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check every scenario in a JSON file and write a CSV report.
    Sweep {
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Resolves the experiment config for `train`: preset or default, then the file, then flags.
pub fn resolve_config(
    config: Option<&PathBuf>,
    preset: Option<&str>,
    seed: Option<u64>,
    out: Option<&PathBuf>,
    epochs: Option<usize>,
) -> Result<ExperimentConfig> {
    let mut cfg = match (config, preset) {
        (Some(path), None) => ExperimentConfig::load(path)?,
        (Some(path), Some(name)) => {
            // Merge the file over the preset by round-tripping through TOML tables.
            let base = toml::Value::try_from(ExperimentConfig::preset(name)?)
                .map_err(|e| Error::Config(e.to_string()))?;
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            let file: toml::Value = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
            merge(base, file)
                .try_into()
                .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?
        }
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => ExperimentConfig::default(),
    };
    cfg.apply_env_overrides();
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(out) = out {
        cfg.output_dir = out.clone();
    }
    if let Some(epochs) = epochs {
        cfg.total_epochs = epochs;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn merge(base: toml::Value, over: toml::Value) -> toml::Value {
    match (base, over) {
        (toml::Value::Table(mut b), toml::Value::Table(o)) => {
            for (k, v) in o {
                let merged = match b.remove(&k) {
                    Some(old) => merge(old, v),
                    None => v,
                };
                b.insert(k, merged);
            }
            toml::Value::Table(b)
        }
        (_, o) => o,
    }
}

/// Executes a parsed command and returns the JSON summary printed on success.
pub fn run(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::Train {
            config,
            preset,
            seed,
            out,
            epochs,
        } => {
            let cfg = resolve_config(config.as_ref(), preset.as_deref(), seed, out.as_ref(), epochs)?;
            let summary = trainer::train(cfg)?;
            let last = summary.metrics.last();
            Ok(json!({
                "output_dir": summary.output_dir,
                "epochs": summary.metrics.len(),
                "env_steps": summary.env_steps,
                "final_eval_return_mean": last.map(|r| r.eval_return_mean),
                "final_eval_return_std": last.map(|r| r.eval_return_std),
            }))
        }
        Command::Evaluate {
            checkpoint,
            episodes,
            seed,
        } => {
            let ck = RunCheckpoint::load(&checkpoint)?;
            let stats = trainer::evaluate_checkpoint(&ck, episodes, seed)?;
            Ok(serde_json::to_value(stats)?)
        }
        Command::Bounds { action } => match action {
            BoundsCommand::Generate { count, seed, out } => {
                let scenarios = bounds::generate_scenarios(count, seed, &ScenarioLimits::default())?;
                bounds::write_scenarios(&out, &scenarios)?;
                Ok(json!({ "scenarios": scenarios.len(), "out": out }))
            }
            BoundsCommand::Sweep { scenarios, out } => {
                let scenarios = bounds::read_scenarios(&scenarios)?;
                let reports = bounds::sweep(&scenarios)?;
                bounds::write_report(&out, &reports)?;
                let satisfied = reports.iter().filter(|r| r.satisfied).count();
                Ok(json!({ "scenarios": reports.len(), "satisfied": satisfied, "out": out }))
            }
        },
    }
}

/// The structured record printed to stderr when a command fails.
pub fn error_record(err: &Error) -> serde_json::Value {
    json!({ "error": err.kind(), "message": err.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_preset_keys_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "total_epochs = 7\n[sac]\nbatch_size = 32\n").unwrap();
        let cfg = resolve_config(Some(&path), Some("robotic"), Some(3), None, None).unwrap();
        assert_eq!(cfg.env_id, "valve");
        assert_eq!(cfg.total_epochs, 7);
        assert_eq!(cfg.sac.batch_size, 32);
        assert_eq!(cfg.sac.hidden, vec![64, 64]);
        assert_eq!(cfg.seed, 3);
    }

    #[test]
    fn error_record_carries_kind() {
        let rec = error_record(&Error::Config("bad".into()));
        assert_eq!(rec["error"], "configuration");
    }
}
