//! Experiment configuration and presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envs::ENV_IDS;
use crate::error::{Error, Result};
use crate::model::EnsembleConfig;
use crate::mpr::MprConfig;
use crate::sac::SacConfig;

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "MOPAC_OUTPUT_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Mopac,
    SacOnly,
    MbrlOnly,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Mopac => "mopac",
            Algorithm::SacOnly => "sac_only",
            Algorithm::MbrlOnly => "mbrl_only",
        }
    }

    pub fn uses_model(self) -> bool {
        self != Algorithm::SacOnly
    }
}

/// Source of simulated dynamics for rollouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dynamics {
    /// The trained ensemble.
    Learned,
    /// The environment's exact one-step function, bypassing model training.
    Analytic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env_id: String,
    pub algorithm: Algorithm,
    pub total_epochs: usize,
    pub env_steps_per_epoch: usize,
    /// Env steps between model retraining and rollout phases.
    pub steps_per_iteration: usize,
    /// Initial env steps taken with uniformly random actions, before any update.
    pub warmup_steps: usize,
    /// Upper bound on ensemble epochs per training phase (early stopping may end sooner).
    pub model_train_epochs: usize,
    /// Model transitions generated per epoch, split evenly over iterations.
    pub model_rollout_batch: usize,
    /// Epochs of rollouts kept in the model buffer.
    pub model_retain_epochs: usize,
    pub gradient_steps: usize,
    pub real_ratio: f64,
    pub env_buffer_capacity: usize,
    pub eval_episodes: usize,
    pub checkpoint_every: usize,
    pub dynamics: Dynamics,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub ensemble: EnsembleConfig,
    pub mpr: MprConfig,
    pub sac: SacConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env_id: "pendulum".into(),
            algorithm: Algorithm::Mopac,
            total_epochs: 30,
            env_steps_per_epoch: 1000,
            steps_per_iteration: 250,
            warmup_steps: 1000,
            model_train_epochs: 20,
            model_rollout_batch: 10_000,
            model_retain_epochs: 1,
            gradient_steps: 20,
            real_ratio: 0.05,
            env_buffer_capacity: 1_000_000,
            eval_episodes: 5,
            checkpoint_every: 5,
            dynamics: Dynamics::Learned,
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            ensemble: EnsembleConfig::default(),
            mpr: MprConfig::default(),
            sac: SacConfig::default(),
        }
    }
}

pub const PRESETS: [&str; 4] = ["pendulum", "robotic", "pendulum_fast", "smoke"];

impl ExperimentConfig {
    /// Named starting points. `robotic` mirrors the hardware protocol on the valve toy;
    /// `pendulum_fast` fits the pendulum comparison into a desktop time budget.
    pub fn preset(name: &str) -> Result<Self> {
        let base = ExperimentConfig::default();
        match name {
            "pendulum" => Ok(base),
            "robotic" => Ok(ExperimentConfig {
                env_id: "valve".into(),
                total_epochs: 40,
                env_steps_per_epoch: 250,
                steps_per_iteration: 250,
                warmup_steps: 250,
                model_rollout_batch: 2500,
                gradient_steps: 2,
                sac: SacConfig {
                    batch_size: 128,
                    ..base.sac.clone()
                },
                mpr: MprConfig {
                    h_min: 2,
                    h_max: 5,
                    ..base.mpr.clone()
                },
                output_dir: PathBuf::from("runs/robotic"),
                ..base
            }),
            "pendulum_fast" => Ok(ExperimentConfig {
                gradient_steps: 2,
                model_rollout_batch: 4000,
                ensemble: EnsembleConfig {
                    learning_rate: 3e-3,
                    ..base.ensemble.clone()
                },
                sac: SacConfig {
                    batch_size: 128,
                    ..base.sac.clone()
                },
                mpr: MprConfig {
                    h_min: 1,
                    h_max: 5,
                    ..base.mpr.clone()
                },
                output_dir: PathBuf::from("runs/pendulum_fast"),
                ..base
            }),
            "smoke" => Ok(ExperimentConfig {
                total_epochs: 2,
                warmup_steps: 300,
                model_train_epochs: 3,
                model_rollout_batch: 400,
                gradient_steps: 1,
                eval_episodes: 2,
                ensemble: EnsembleConfig {
                    members: 3,
                    elites: 2,
                    hidden: vec![32, 32],
                    ..base.ensemble.clone()
                },
                sac: SacConfig {
                    hidden: vec![32, 32],
                    batch_size: 64,
                    ..base.sac.clone()
                },
                mpr: MprConfig {
                    n_traj: 8,
                    h_min: 2,
                    h_max: 4,
                    ..base.mpr.clone()
                },
                output_dir: PathBuf::from("runs/smoke"),
                ..base
            }),
            other => Err(Error::Config(format!("unknown preset '{other}', expected one of {PRESETS:?}"))),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies the output directory override from the environment, if set.
    pub fn apply_env_overrides(&mut self) {
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                self.output_dir = PathBuf::from(dir);
            }
        }
    }

    pub fn iterations_per_epoch(&self) -> usize {
        self.env_steps_per_epoch / self.steps_per_iteration
    }

    /// Model transitions requested per iteration.
    pub fn rollout_quota_per_iteration(&self) -> usize {
        self.model_rollout_batch.div_ceil(self.iterations_per_epoch())
    }

    pub fn validate(&self) -> Result<()> {
        if !ENV_IDS.contains(&self.env_id.as_str()) {
            return Err(Error::Config(format!(
                "unknown environment '{}', expected one of {ENV_IDS:?}",
                self.env_id
            )));
        }
        if self.env_steps_per_epoch == 0 || self.steps_per_iteration == 0 || self.eval_episodes == 0 {
            return Err(Error::Config("step and episode counts must be positive".into()));
        }
        if self.env_steps_per_epoch % self.steps_per_iteration != 0 {
            return Err(Error::Config(
                "steps_per_iteration must divide env_steps_per_epoch".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.real_ratio) {
            return Err(Error::Config("real_ratio must lie in [0, 1]".into()));
        }
        if self.env_buffer_capacity == 0 {
            return Err(Error::Config("env_buffer_capacity must be positive".into()));
        }
        if self.algorithm == Algorithm::Mopac && (self.model_rollout_batch == 0 || self.model_retain_epochs == 0) {
            return Err(Error::Config("mopac needs a positive model_rollout_batch and model_retain_epochs".into()));
        }
        if self.algorithm.uses_model() && self.dynamics == Dynamics::Learned && self.model_train_epochs == 0 {
            return Err(Error::Config("model_train_epochs must be positive with learned dynamics".into()));
        }
        if (self.mpr.gamma - self.sac.gamma).abs() > 0.0 {
            return Err(Error::Config("mpr.gamma and sac.gamma must agree".into()));
        }
        self.ensemble.validate()?;
        self.mpr.validate()?;
        self.sac.validate()
    }
}
