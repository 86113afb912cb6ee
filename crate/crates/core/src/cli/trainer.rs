//! The outer experiment loop: collect, fit the model, roll out, update.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Algorithm, Dynamics, ExperimentConfig};
use crate::envs::{make_env, EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::model::{AnalyticModel, EnsembleCheckpoint, EnsembleModel, EnsembleRollout, RolloutModel};
use crate::mpr::{self, ActionSource, MprDiagnostics};
use crate::replay::{MixedSampler, ReplayBuffer};
use crate::sac::{ActorCritic, SacCheckpoint, SacLosses};

const RUN_CHECKPOINT_VERSION: u32 = 1;

/// Independent random streams derived from the master seed.
mod stream {
    pub const INIT: u64 = 0;
    pub const ACT: u64 = 1;
    pub const MODEL: u64 = 2;
    pub const ROLLOUT: u64 = 3;
    pub const UPDATE: u64 = 4;
    pub const RESET: u64 = 5;
    pub const EVAL_SEEDS: u64 = 6;
    pub const EVAL: u64 = 7;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One row of `metrics.csv`. Empty cells mean "not applicable this epoch".
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub env_steps: usize,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    pub train_return_mean: Option<f64>,
    pub train_episodes: usize,
    pub model_val_l2: Option<f64>,
    pub model_epochs: Option<usize>,
    pub horizon: Option<usize>,
    pub mpr_calls: usize,
    pub mpr_transitions: usize,
    pub mpr_mean_cost: Option<f64>,
    pub mpr_min_cost: Option<f64>,
    pub mpr_ess: Option<f64>,
    pub gradient_steps: usize,
    pub v_loss: Option<f64>,
    pub q1_loss: Option<f64>,
    pub q2_loss: Option<f64>,
    pub policy_loss: Option<f64>,
    pub alpha: Option<f64>,
    pub entropy: Option<f64>,
}

pub const METRICS_HEADER: [&str; 21] = [
    "epoch",
    "env_steps",
    "eval_return_mean",
    "eval_return_std",
    "train_return_mean",
    "train_episodes",
    "model_val_l2",
    "model_epochs",
    "horizon",
    "mpr_calls",
    "mpr_transitions",
    "mpr_mean_cost",
    "mpr_min_cost",
    "mpr_ess",
    "gradient_steps",
    "v_loss",
    "q1_loss",
    "q2_loss",
    "policy_loss",
    "alpha",
    "entropy",
];

fn cell<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn to_record(&self) -> Vec<String> {
        vec![
            self.epoch.to_string(),
            self.env_steps.to_string(),
            self.eval_return_mean.to_string(),
            self.eval_return_std.to_string(),
            cell(self.train_return_mean),
            self.train_episodes.to_string(),
            cell(self.model_val_l2),
            cell(self.model_epochs),
            cell(self.horizon),
            self.mpr_calls.to_string(),
            self.mpr_transitions.to_string(),
            cell(self.mpr_mean_cost),
            cell(self.mpr_min_cost),
            cell(self.mpr_ess),
            self.gradient_steps.to_string(),
            cell(self.v_loss),
            cell(self.q1_loss),
            cell(self.q2_loss),
            cell(self.policy_loss),
            cell(self.alpha),
            cell(self.entropy),
        ]
    }

    pub fn is_finite(&self) -> bool {
        let opts = [
            self.train_return_mean,
            self.model_val_l2,
            self.mpr_mean_cost,
            self.mpr_min_cost,
            self.mpr_ess,
            self.v_loss,
            self.q1_loss,
            self.q2_loss,
            self.policy_loss,
            self.alpha,
            self.entropy,
        ];
        self.eval_return_mean.is_finite() && self.eval_return_std.is_finite() && opts.iter().flatten().all(|v| v.is_finite())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| Error::Io(std::io::Error::other(e.to_string()))))
        .collect()
}

/// One completed training episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub epoch: usize,
    pub steps: usize,
    pub episode_return: f64,
    pub first_observation: Vec<f64>,
    pub last_observation: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunCheckpoint {
    pub version: u32,
    pub env_id: String,
    pub algorithm: Algorithm,
    pub dynamics: Dynamics,
    pub epoch: usize,
    pub env_steps: usize,
    pub mpr: mpr::MprConfig,
    pub sac: SacCheckpoint,
    pub model: Option<EnsembleCheckpoint>,
}

impl RunCheckpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        let ck: RunCheckpoint = serde_json::from_str(&text)?;
        if ck.version != RUN_CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported run checkpoint version {}", ck.version)));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_string(self)?)?;
        fs::rename(tmp, path)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub mean: f64,
    pub std: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci95: f64,
    pub returns: Vec<f64>,
}

impl EvalStats {
    pub fn from_returns(returns: Vec<f64>) -> Self {
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let std = if returns.len() > 1 {
            (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        EvalStats {
            mean,
            std,
            ci95: 1.96 * std / n.sqrt(),
            returns,
        }
    }
}

/// Always proposes the middle of the action box; the base sequence for the pure planner.
pub struct CenterPrior {
    center: Array1<f64>,
}

impl CenterPrior {
    pub fn new(spec: &EnvSpec) -> Self {
        CenterPrior {
            center: Array1::from(spec.action_center()),
        }
    }
}

impl ActionSource for CenterPrior {
    fn nominal_actions(&self, states: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.center.broadcast((states.nrows(), self.center.len())).unwrap().to_owned())
    }
}

fn build_simulator<'a>(
    dynamics: Dynamics,
    env: &dyn Environment,
    model: Option<&'a EnsembleModel>,
) -> Result<Option<Box<dyn RolloutModel + 'a>>> {
    let spec = env.spec();
    match dynamics {
        Dynamics::Analytic => {
            let f = env
                .dynamics_fn()
                .ok_or_else(|| Error::Config("analytic dynamics requested but the environment exposes none".into()))?;
            Ok(Some(Box::new(AnalyticModel::new(spec.state_dim, spec.action_dim, f))))
        }
        Dynamics::Learned => match model {
            Some(m) if m.is_trained() => Ok(Some(Box::new(EnsembleRollout::new(
                m,
                m.config().reward_mode,
                env.reward_fn(),
            )?))),
            _ => Ok(None),
        },
    }
}

/// First action of one receding-horizon planning call.
#[allow(clippy::too_many_arguments)]
fn plan_first_action(
    state: &[f64],
    sim: &dyn RolloutModel,
    prior: &dyn ActionSource,
    value: &ActorCritic,
    horizon: usize,
    cfg: &mpr::MprConfig,
    spec: &EnvSpec,
    rng: &mut dyn RngCore,
) -> Result<(Vec<f64>, MprDiagnostics)> {
    let batch = mpr::simulate_batch(state, sim, prior, value, horizon, cfg, spec, rng)?;
    let actions = mpr::optimal_action_sequence(&batch, spec);
    Ok((actions.row(0).to_vec(), batch.diagnostics()))
}

/// Runs one episode per seed with `act` choosing every action; returns the episode returns.
pub fn run_episodes(
    env: &mut dyn Environment,
    seeds: &[u64],
    act: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    let mut returns = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut obs = env.reset(seed);
        let mut total = 0.0;
        loop {
            let action = act(&obs)?;
            let step = env.step(&action)?;
            total += step.transition.reward;
            obs = step.transition.next_state;
            if step.transition.done || step.truncated {
                break;
            }
        }
        returns.push(total);
    }
    Ok(returns)
}

/// Evaluates the controller a checkpoint describes: the policy mean, or the
/// planner for the pure model-based algorithm.
pub fn evaluate_checkpoint(ck: &RunCheckpoint, episodes: usize, seed: u64) -> Result<EvalStats> {
    if episodes == 0 {
        return Err(Error::contract("need at least one evaluation episode"));
    }
    let mut env = make_env(&ck.env_id)?;
    let spec = env.spec().clone();
    let ac = ActorCritic::from_checkpoint(ck.sac.clone())?;
    if ac.state_dim() != spec.state_dim || ac.action_dim() != spec.action_dim {
        return Err(Error::contract(format!(
            "checkpoint dims ({}, {}) do not match environment '{}' ({}, {})",
            ac.state_dim(),
            ac.action_dim(),
            ck.env_id,
            spec.state_dim,
            spec.action_dim
        )));
    }
    let model = ck.model.clone().map(EnsembleModel::from_checkpoint).transpose()?;
    let seeds = eval_seeds(seed, episodes);
    let mut rng = stream_rng(seed, stream::EVAL);
    let returns = if ck.algorithm == Algorithm::MbrlOnly {
        let sim = build_simulator(ck.dynamics, env.as_ref(), model.as_ref())?;
        let prior = CenterPrior::new(&spec);
        let horizon = ck.mpr.h_max;
        let mut act = |obs: &[f64]| -> Result<Vec<f64>> {
            match &sim {
                Some(sim) => Ok(plan_first_action(obs, sim.as_ref(), &prior, &ac, horizon, &ck.mpr, &spec, &mut rng)?.0),
                None => Ok(spec.action_center()),
            }
        };
        run_episodes(env.as_mut(), &seeds, &mut act)?
    } else {
        run_episodes(env.as_mut(), &seeds, &mut |obs| ac.deterministic_action(obs))?
    };
    Ok(EvalStats::from_returns(returns))
}

/// Fixed evaluation start seeds for a run.
pub fn eval_seeds(seed: u64, episodes: usize) -> Vec<u64> {
    let mut rng = stream_rng(seed, stream::EVAL_SEEDS);
    (0..episodes).map(|_| rng.next_u64()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub package_version: String,
    pub status: String,
    pub error: Option<String>,
    pub env_id: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub env_spec: EnvSpec,
    pub epochs_completed: usize,
    pub env_steps: usize,
    pub total_mpr_calls: usize,
    pub total_mpr_transitions: usize,
    pub files: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub metrics: Vec<MetricsRow>,
    pub episodes: Vec<EpisodeRecord>,
    pub env_steps: usize,
    pub total_mpr_calls: usize,
    pub total_mpr_transitions: usize,
}

#[derive(Default)]
struct EpochStats {
    losses: Vec<SacLosses>,
    value_losses: Vec<f64>,
    diagnostics: Vec<MprDiagnostics>,
    mpr_calls: usize,
    mpr_transitions: usize,
    model_val_l2: Option<f64>,
    model_epochs: Option<usize>,
    train_returns: Vec<f64>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

pub struct Trainer {
    cfg: ExperimentConfig,
    env: Box<dyn Environment>,
    eval_env: Box<dyn Environment>,
    spec: EnvSpec,
    ac: ActorCritic,
    model: Option<EnsembleModel>,
    env_buffer: ReplayBuffer,
    model_buffer: ReplayBuffer,
    act_rng: ChaCha8Rng,
    model_rng: ChaCha8Rng,
    rollout_rng: ChaCha8Rng,
    update_rng: ChaCha8Rng,
    reset_rng: ChaCha8Rng,
    eval_seeds: Vec<u64>,
    env_steps: usize,
    epoch: usize,
    obs: Vec<f64>,
    episode_return: f64,
    episode_steps: usize,
    episode_first_obs: Vec<f64>,
    episodes: Vec<EpisodeRecord>,
    total_mpr_calls: usize,
    total_mpr_transitions: usize,
}

impl Trainer {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let mut env = make_env(&cfg.env_id)?;
        let eval_env = make_env(&cfg.env_id)?;
        let spec = env.spec().clone();
        let seed = cfg.seed;
        let mut init_rng = stream_rng(seed, stream::INIT);
        let ac = ActorCritic::new(cfg.sac.clone(), &spec, &mut init_rng)?;
        let model = if cfg.algorithm.uses_model() && cfg.dynamics == Dynamics::Learned {
            Some(EnsembleModel::new(cfg.ensemble.clone(), spec.state_dim, spec.action_dim, &mut init_rng)?)
        } else {
            None
        };
        if cfg.algorithm.uses_model() && cfg.dynamics == Dynamics::Analytic && env.dynamics_fn().is_none() {
            return Err(Error::Config(format!("environment '{}' has no analytic dynamics", cfg.env_id)));
        }
        if cfg.ensemble.reward_mode == crate::model::RewardMode::Analytic && env.reward_fn().is_none() {
            return Err(Error::Config(format!("environment '{}' exposes no analytic reward", cfg.env_id)));
        }
        let model_capacity = cfg.model_retain_epochs
            * cfg.iterations_per_epoch()
            * (cfg.rollout_quota_per_iteration() + cfg.mpr.h_max);
        let env_buffer = ReplayBuffer::new(cfg.env_buffer_capacity, spec.state_dim, spec.action_dim)?;
        let model_buffer = ReplayBuffer::new(model_capacity.max(1), spec.state_dim, spec.action_dim)?;
        let mut reset_rng = stream_rng(seed, stream::RESET);
        let obs = env.reset(reset_rng.next_u64());
        Ok(Trainer {
            eval_seeds: eval_seeds(seed, cfg.eval_episodes),
            act_rng: stream_rng(seed, stream::ACT),
            model_rng: stream_rng(seed, stream::MODEL),
            rollout_rng: stream_rng(seed, stream::ROLLOUT),
            update_rng: stream_rng(seed, stream::UPDATE),
            episode_first_obs: obs.clone(),
            obs,
            reset_rng,
            cfg,
            env,
            eval_env,
            spec,
            ac,
            model,
            env_buffer,
            model_buffer,
            env_steps: 0,
            epoch: 0,
            episode_return: 0.0,
            episode_steps: 0,
            episodes: Vec::new(),
            total_mpr_calls: 0,
            total_mpr_transitions: 0,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn actor_critic(&self) -> &ActorCritic {
        &self.ac
    }

    pub fn model(&self) -> Option<&EnsembleModel> {
        self.model.as_ref()
    }

    pub fn env_buffer(&self) -> &ReplayBuffer {
        &self.env_buffer
    }

    pub fn model_buffer(&self) -> &ReplayBuffer {
        &self.model_buffer
    }

    pub fn env_steps(&self) -> usize {
        self.env_steps
    }

    pub fn checkpoint(&self) -> RunCheckpoint {
        RunCheckpoint {
            version: RUN_CHECKPOINT_VERSION,
            env_id: self.cfg.env_id.clone(),
            algorithm: self.cfg.algorithm,
            dynamics: self.cfg.dynamics,
            epoch: self.epoch,
            env_steps: self.env_steps,
            mpr: self.cfg.mpr.clone(),
            sac: self.ac.checkpoint(),
            model: self.model.as_ref().map(|m| m.checkpoint()),
        }
    }

    fn horizon(&self) -> Result<usize> {
        mpr::anneal_horizon(self.epoch.saturating_sub(1), self.cfg.total_epochs.max(1), &self.cfg.mpr)
    }

    /// Evaluates the current controller on the fixed evaluation seeds.
    pub fn evaluate(&mut self) -> Result<EvalStats> {
        let seeds = self.eval_seeds.clone();
        let returns = if self.cfg.algorithm == Algorithm::MbrlOnly {
            let horizon = self.horizon()?;
            let sim = build_simulator(self.cfg.dynamics, self.env.as_ref(), self.model.as_ref())?;
            let prior = CenterPrior::new(&self.spec);
            let mut rng = stream_rng(self.cfg.seed ^ (self.epoch as u64).wrapping_mul(0x9e37_79b9), stream::EVAL);
            let (ac, cfg, spec) = (&self.ac, &self.cfg.mpr, &self.spec);
            let mut act = |obs: &[f64]| -> Result<Vec<f64>> {
                match &sim {
                    Some(sim) => Ok(plan_first_action(obs, sim.as_ref(), &prior, ac, horizon, cfg, spec, &mut rng)?.0),
                    None => Ok(spec.action_center()),
                }
            };
            run_episodes(self.eval_env.as_mut(), &seeds, &mut act)?
        } else {
            let ac = &self.ac;
            run_episodes(self.eval_env.as_mut(), &seeds, &mut |obs| ac.deterministic_action(obs))?
        };
        Ok(EvalStats::from_returns(returns))
    }

    fn train_model(&mut self, stats: &mut EpochStats) -> Result<()> {
        let Some(model) = self.model.as_mut() else {
            return Ok(());
        };
        if self.env_buffer.len() < self.cfg.ensemble.min_transitions {
            return Ok(());
        }
        let report = model.train(&self.env_buffer, self.cfg.model_train_epochs, &mut self.model_rng)?;
        stats.model_val_l2 = Some(report.elite_val_l2());
        stats.model_epochs = Some(report.epochs);
        Ok(())
    }

    /// Fills this iteration's share of the model buffer with MPR transitions.
    fn model_rollouts(&mut self, stats: &mut EpochStats) -> Result<()> {
        let horizon = self.horizon()?;
        let sim = build_simulator(self.cfg.dynamics, self.env.as_ref(), self.model.as_ref())?;
        let Some(sim) = sim else {
            return Ok(());
        };
        if self.env_buffer.is_empty() {
            return Err(Error::EmptyBuffer("no environment transitions to start rollouts from".into()));
        }
        let calls = self.cfg.rollout_quota_per_iteration().div_ceil(horizon);
        for _ in 0..calls {
            let s0 = self.env_buffer.sample_state(&mut self.rollout_rng)?.to_vec();
            let (ts, diag) = mpr::mpr_transitions(
                &s0,
                sim.as_ref(),
                &self.ac,
                &self.ac,
                horizon,
                &self.cfg.mpr,
                &self.spec,
                &mut self.rollout_rng,
            )?;
            stats.mpr_transitions += ts.len();
            stats.mpr_calls += 1;
            stats.diagnostics.push(diag);
            self.model_buffer.extend(ts)?;
        }
        Ok(())
    }

    fn choose_action(&mut self, stats: &mut EpochStats) -> Result<Vec<f64>> {
        if self.env_steps < self.cfg.warmup_steps {
            return Ok(self.spec.uniform_action(&mut self.act_rng));
        }
        match self.cfg.algorithm {
            Algorithm::Mopac | Algorithm::SacOnly => Ok(self.ac.sample_action(&self.obs, &mut self.act_rng)?.0),
            Algorithm::MbrlOnly => {
                let horizon = self.horizon()?;
                let sim = build_simulator(self.cfg.dynamics, self.env.as_ref(), self.model.as_ref())?;
                match sim {
                    Some(sim) => {
                        let prior = CenterPrior::new(&self.spec);
                        let (a, diag) = plan_first_action(
                            &self.obs,
                            sim.as_ref(),
                            &prior,
                            &self.ac,
                            horizon,
                            &self.cfg.mpr,
                            &self.spec,
                            &mut self.act_rng,
                        )?;
                        stats.diagnostics.push(diag);
                        Ok(a)
                    }
                    None => Ok(self.spec.uniform_action(&mut self.act_rng)),
                }
            }
        }
    }

    fn gradient_steps(&mut self, stats: &mut EpochStats) -> Result<()> {
        if self.env_steps < self.cfg.warmup_steps || self.env_buffer.is_empty() {
            return Ok(());
        }
        let batch_size = self.cfg.sac.batch_size;
        for _ in 0..self.cfg.gradient_steps {
            match self.cfg.algorithm {
                Algorithm::Mopac => {
                    let sampler = MixedSampler::new(&self.env_buffer, &self.model_buffer, self.cfg.real_ratio)?;
                    let batch = sampler.sample_mixed(batch_size, &mut self.update_rng)?;
                    stats.losses.push(self.ac.update(&batch, &mut self.update_rng)?);
                }
                Algorithm::SacOnly => {
                    let batch = self.env_buffer.sample(batch_size, &mut self.update_rng)?;
                    stats.losses.push(self.ac.update(&batch, &mut self.update_rng)?);
                }
                Algorithm::MbrlOnly => {
                    let batch = self.env_buffer.sample(batch_size, &mut self.update_rng)?;
                    stats.value_losses.push(self.ac.update_value_only(&batch)?);
                }
            }
        }
        Ok(())
    }

    fn env_step(&mut self, stats: &mut EpochStats) -> Result<()> {
        let action = self.choose_action(stats)?;
        let step = self.env.step(&action)?;
        self.episode_return += step.transition.reward;
        self.episode_steps += 1;
        let next = step.transition.next_state.clone();
        let finished = step.transition.done || step.truncated;
        self.env_buffer.push(step.transition)?;
        self.env_steps += 1;
        if finished {
            stats.train_returns.push(self.episode_return);
            self.episodes.push(EpisodeRecord {
                epoch: self.epoch,
                steps: self.episode_steps,
                episode_return: self.episode_return,
                first_observation: std::mem::take(&mut self.episode_first_obs),
                last_observation: next,
            });
            self.obs = self.env.reset(self.reset_rng.next_u64());
            self.episode_first_obs = self.obs.clone();
            self.episode_return = 0.0;
            self.episode_steps = 0;
        } else {
            self.obs = next;
        }
        Ok(())
    }

    /// One epoch of interaction and learning, followed by evaluation.
    pub fn run_epoch(&mut self) -> Result<MetricsRow> {
        self.epoch += 1;
        let mut stats = EpochStats::default();
        let horizon = self.horizon()?;
        for _ in 0..self.cfg.env_steps_per_epoch {
            let iteration_start = self.env_steps % self.cfg.steps_per_iteration == 0;
            if iteration_start && self.cfg.algorithm.uses_model() && self.env_steps >= self.cfg.warmup_steps {
                self.train_model(&mut stats)?;
                if self.cfg.algorithm == Algorithm::Mopac {
                    self.model_rollouts(&mut stats)?;
                }
            }
            self.env_step(&mut stats)?;
            self.gradient_steps(&mut stats)?;
        }
        self.total_mpr_calls += stats.mpr_calls;
        self.total_mpr_transitions += stats.mpr_transitions;
        let eval = self.evaluate()?;
        let l = &stats.losses;
        let row = MetricsRow {
            epoch: self.epoch,
            env_steps: self.env_steps,
            eval_return_mean: eval.mean,
            eval_return_std: eval.std,
            train_return_mean: mean_of(stats.train_returns.iter().copied()),
            train_episodes: stats.train_returns.len(),
            model_val_l2: stats.model_val_l2,
            model_epochs: stats.model_epochs,
            horizon: self.cfg.algorithm.uses_model().then_some(horizon),
            mpr_calls: stats.mpr_calls,
            mpr_transitions: stats.mpr_transitions,
            mpr_mean_cost: mean_of(stats.diagnostics.iter().map(|d| d.mean_cost)),
            mpr_min_cost: mean_of(stats.diagnostics.iter().map(|d| d.min_cost)),
            mpr_ess: mean_of(stats.diagnostics.iter().map(|d| d.effective_sample_size)),
            gradient_steps: l.len() + stats.value_losses.len(),
            v_loss: mean_of(l.iter().map(|x| x.v_loss)).or_else(|| mean_of(stats.value_losses.iter().copied())),
            q1_loss: mean_of(l.iter().map(|x| x.q1_loss)),
            q2_loss: mean_of(l.iter().map(|x| x.q2_loss)),
            policy_loss: mean_of(l.iter().map(|x| x.policy_loss)),
            alpha: mean_of(l.iter().map(|x| x.alpha)),
            entropy: mean_of(l.iter().map(|x| x.entropy)),
        };
        if !row.is_finite() {
            return Err(Error::divergence("trainer", format!("non-finite metrics in epoch {}", self.epoch)));
        }
        Ok(row)
    }

    fn manifest(&self, status: &str, error: Option<String>) -> RunManifest {
        RunManifest {
            package_version: env!("CARGO_PKG_VERSION").into(),
            status: status.into(),
            error,
            env_id: self.cfg.env_id.clone(),
            algorithm: self.cfg.algorithm,
            seed: self.cfg.seed,
            env_spec: self.spec.clone(),
            epochs_completed: self.epoch,
            env_steps: self.env_steps,
            total_mpr_calls: self.total_mpr_calls,
            total_mpr_transitions: self.total_mpr_transitions,
            files: [
                "config.toml",
                "manifest.json",
                "metrics.csv",
                "timing.csv",
                "episodes.csv",
                "checkpoint.json",
            ]
            .map(String::from)
            .to_vec(),
        }
    }

    /// Runs every epoch, writing artifacts into the configured output directory.
    pub fn run(mut self) -> Result<RunSummary> {
        let dir = self.cfg.output_dir.clone();
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("config.toml"), self.cfg.to_toml_string()?)?;
        let write_manifest = |t: &Trainer, status: &str, err: Option<String>| -> Result<()> {
            fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&t.manifest(status, err))?)?;
            Ok(())
        };
        write_manifest(&self, "running", None)?;
        let mut metrics = csv::WriterBuilder::new().has_headers(false).from_path(dir.join("metrics.csv"))?;
        metrics.write_record(METRICS_HEADER)?;
        metrics.flush()?;
        let mut timing = File::create(dir.join("timing.csv"))?;
        writeln!(timing, "epoch,wall_time_s")?;
        let mut episodes = csv::WriterBuilder::new().has_headers(false).from_path(dir.join("episodes.csv"))?;
        episodes.write_record(["epoch", "steps", "episode_return"])?;
        self.checkpoint().save(&dir.join("checkpoint.json"))?;

        let start = Instant::now();
        let mut rows = Vec::new();
        let mut last_good = self.checkpoint();
        let mut written_episodes = 0;
        while self.epoch < self.cfg.total_epochs {
            let row = match self.run_epoch() {
                Ok(row) => row,
                Err(e) => {
                    last_good.save(&dir.join("checkpoint_last_good.json"))?;
                    write_manifest(&self, "failed", Some(e.to_string()))?;
                    return Err(e);
                }
            };
            metrics.write_record(row.to_record())?;
            metrics.flush()?;
            writeln!(timing, "{},{:.3}", row.epoch, start.elapsed().as_secs_f64())?;
            timing.flush()?;
            for ep in &self.episodes[written_episodes..] {
                episodes.write_record([ep.epoch.to_string(), ep.steps.to_string(), ep.episode_return.to_string()])?;
            }
            episodes.flush()?;
            written_episodes = self.episodes.len();
            log::info!(
                "epoch {} env_steps {} eval {:.2} ± {:.2}",
                row.epoch,
                row.env_steps,
                row.eval_return_mean,
                row.eval_return_std
            );
            rows.push(row);
            last_good = self.checkpoint();
            if self.cfg.checkpoint_every > 0 && self.epoch % self.cfg.checkpoint_every == 0 {
                last_good.save(&dir.join("checkpoint.json"))?;
            }
        }
        last_good.save(&dir.join("checkpoint.json"))?;
        write_manifest(&self, "complete", None)?;
        Ok(RunSummary {
            output_dir: dir,
            metrics: rows,
            episodes: self.episodes,
            env_steps: self.env_steps,
            total_mpr_calls: self.total_mpr_calls,
            total_mpr_transitions: self.total_mpr_transitions,
        })
    }
}

/// Builds and runs a trainer for `cfg`.
pub fn train(cfg: ExperimentConfig) -> Result<RunSummary> {
    Trainer::new(cfg)?.run()
}

/// Uniform-random controller returns, the reference band for evaluation sanity checks.
pub fn random_policy_returns(env_id: &str, episodes: usize, seed: u64) -> Result<Vec<f64>> {
    let mut env = make_env(env_id)?;
    let spec = env.spec().clone();
    let mut rng = stream_rng(seed, stream::ACT);
    let seeds = eval_seeds(seed, episodes);
    run_episodes(env.as_mut(), &seeds, &mut |_| Ok(spec.uniform_action(&mut rng)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::config::ExperimentConfig;

    fn smoke(dir: &Path, algorithm: Algorithm) -> ExperimentConfig {
        ExperimentConfig {
            algorithm,
            output_dir: dir.to_path_buf(),
            ..ExperimentConfig::preset("smoke").unwrap()
        }
    }

    #[test]
    fn zero_epochs_writes_only_initial_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = smoke(dir.path(), Algorithm::Mopac);
        cfg.total_epochs = 0;
        let summary = train(cfg).unwrap();
        assert!(summary.metrics.is_empty());
        assert_eq!(summary.env_steps, 0);
        assert!(read_metrics(&dir.path().join("metrics.csv")).unwrap().is_empty());
        let ck = RunCheckpoint::load(&dir.path().join("checkpoint.json")).unwrap();
        assert_eq!(ck.epoch, 0);
        assert!(dir.path().join("config.toml").exists());
    }

    #[test]
    fn all_algorithms_consume_the_same_budget() {
        for algorithm in [Algorithm::Mopac, Algorithm::SacOnly, Algorithm::MbrlOnly] {
            let dir = tempfile::tempdir().unwrap();
            let cfg = smoke(dir.path(), algorithm);
            let steps = cfg.env_steps_per_epoch;
            let summary = train(cfg).unwrap();
            let rows = read_metrics(&dir.path().join("metrics.csv")).unwrap();
            assert_eq!(rows.len(), 2);
            assert_eq!(rows, summary.metrics);
            assert_eq!(rows[0].env_steps, steps);
            assert_eq!(rows[1].env_steps, 2 * steps);
            if algorithm == Algorithm::SacOnly {
                assert!(rows.iter().all(|r| r.model_val_l2.is_none() && r.mpr_calls == 0));
            } else {
                assert!(rows[1].model_val_l2.is_some());
            }
            for r in &rows {
                if let Some(h) = r.horizon {
                    assert_eq!(r.mpr_transitions, r.mpr_calls * h);
                }
            }
        }
    }

    #[test]
    fn identical_seeds_give_identical_metrics() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        train(smoke(a.path(), Algorithm::Mopac)).unwrap();
        train(smoke(b.path(), Algorithm::Mopac)).unwrap();
        let read = |d: &Path| fs::read(d.join("metrics.csv")).unwrap();
        assert_eq!(read(a.path()), read(b.path()));
    }

    #[test]
    fn evaluation_is_pure() {
        let dir = tempfile::tempdir().unwrap();
        let mut trainer = Trainer::new(smoke(dir.path(), Algorithm::SacOnly)).unwrap();
        trainer.run_epoch().unwrap();
        let before = serde_json::to_string(&trainer.checkpoint()).unwrap();
        let buffer_len = trainer.env_buffer().len();
        let first = trainer.evaluate().unwrap();
        let second = trainer.evaluate().unwrap();
        assert_eq!(first, second);
        assert_eq!(serde_json::to_string(&trainer.checkpoint()).unwrap(), before);
        assert_eq!(trainer.env_buffer().len(), buffer_len);
    }

    #[test]
    fn single_episode_std_is_zero() {
        let s = EvalStats::from_returns(vec![-12.5]);
        assert_eq!(s.std, 0.0);
        assert_eq!(s.ci95, 0.0);
    }

    #[test]
    fn checkpoint_evaluation_rejects_mismatched_env() {
        let dir = tempfile::tempdir().unwrap();
        let trainer = Trainer::new(smoke(dir.path(), Algorithm::SacOnly)).unwrap();
        let mut ck = trainer.checkpoint();
        ck.env_id = "valve".into();
        assert!(matches!(evaluate_checkpoint(&ck, 1, 0), Err(Error::Contract(_))));
    }
}
