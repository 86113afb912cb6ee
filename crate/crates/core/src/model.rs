//! Probabilistic dynamics ensemble with elite selection.
//!
//! Each member maps a normalized `(s, a)` to a diagonal Gaussian over
//! standardized `(Δs, r)`. Members train on their own bootstrap resample by Gaussian
//! negative log-likelihood; the `elites` members with the lowest holdout L2
//! of their mean predictions are the ones used for simulation.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::approx::{sgd_step, Activation, Adam, GaussianHead, Parameterized, DEFAULT_LOG_STD_BOUNDS};
use crate::envs::{DynamicsFn, RewardFn, Transition};
use crate::error::{Error, Result};
use crate::replay::ReplayBuffer;

const CHECKPOINT_VERSION: u32 = 1;

/// Where simulated rewards come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// The reward channel predicted by the ensemble.
    Learned,
    /// The environment's analytic reward evaluated on the simulated transition.
    Analytic,
}

/// How the simulating member is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EliteSampling {
    /// One elite drawn per simulated trajectory batch and kept throughout.
    PerRollout,
    /// A fresh elite for every row at every step.
    PerStep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub members: usize,
    pub elites: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub holdout_fraction: f64,
    pub max_holdout: usize,
    /// Epochs without relative validation improvement before stopping.
    pub patience: usize,
    pub min_improvement: f64,
    pub min_transitions: usize,
    pub log_std_bounds: (f64, f64),
    pub bootstrap: bool,
    pub reward_mode: RewardMode,
    pub elite_sampling: EliteSampling,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            members: 7,
            elites: 5,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            learning_rate: 1e-3,
            batch_size: 256,
            holdout_fraction: 0.2,
            max_holdout: 5000,
            patience: 5,
            min_improvement: 0.01,
            min_transitions: 250,
            log_std_bounds: DEFAULT_LOG_STD_BOUNDS,
            bootstrap: true,
            reward_mode: RewardMode::Learned,
            elite_sampling: EliteSampling::PerRollout,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.members == 0 || self.elites == 0 || self.elites > self.members {
            return Err(Error::Config(format!(
                "need 1 <= elites ({}) <= members ({})",
                self.elites, self.members
            )));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("invalid ensemble optimizer settings".into()));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::Config("holdout_fraction must lie in (0, 1)".into()));
        }
        if self.log_std_bounds.0 >= self.log_std_bounds.1 {
            return Err(Error::Config("log_std_bounds must satisfy min < max".into()));
        }
        Ok(())
    }
}

/// Per-dimension affine input standardization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Normalizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Constant columns get unit scale so the stds stay positive.
    pub fn fit(x: &Array2<f64>) -> Self {
        let mean = x.mean_axis(Axis(0)).expect("non-empty inputs");
        let std = x.std_axis(Axis(0), 0.0);
        Normalizer {
            mean: mean.to_vec(),
            std: std.iter().map(|&s| if s > 1e-12 { s } else { 1.0 }).collect(),
        }
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mean = Array1::from(self.mean.clone());
        let std = Array1::from(self.std.clone());
        (x - &mean) / &std
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelTrainReport {
    /// Final-epoch mean Gaussian NLL per member on its bootstrap sample.
    pub train_nll: Vec<f64>,
    /// Holdout mean-prediction L2 per member (at its best epoch).
    pub val_l2: Vec<f64>,
    pub elites: Vec<usize>,
    pub epochs: usize,
    /// Mean holdout L2 over the elites after each epoch.
    pub elite_val_history: Vec<f64>,
}

impl ModelTrainReport {
    pub fn elite_val_l2(&self) -> f64 {
        self.elites.iter().map(|&i| self.val_l2[i]).sum::<f64>() / self.elites.len() as f64
    }
}

/// Indices of the `k` smallest losses, ties broken by lower index, ascending.
pub fn select_elites(losses: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    let mut elites: Vec<usize> = order.into_iter().take(k).collect();
    elites.sort_unstable();
    elites
}

#[derive(Clone, Debug)]
pub struct EnsembleModel {
    config: EnsembleConfig,
    state_dim: usize,
    action_dim: usize,
    members: Vec<GaussianHead>,
    elite_mask: Vec<bool>,
    normalizer: Normalizer,
    /// Standardizes `(Δs, r)`; members are trained and emit in these units.
    target_normalizer: Normalizer,
    trained: bool,
    optimizers: Vec<Adam>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleCheckpoint {
    pub version: u32,
    pub config: EnsembleConfig,
    pub state_dim: usize,
    pub action_dim: usize,
    pub members: Vec<GaussianHead>,
    pub elite_mask: Vec<bool>,
    pub normalizer: Normalizer,
    pub target_normalizer: Normalizer,
    pub trained: bool,
}

impl EnsembleModel {
    pub fn new<R: Rng + ?Sized>(
        config: EnsembleConfig,
        state_dim: usize,
        action_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let members = (0..config.members)
            .map(|_| {
                GaussianHead::new(
                    state_dim + action_dim,
                    &config.hidden,
                    state_dim + 1,
                    config.activation,
                    true,
                    config.log_std_bounds,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let optimizers = members.iter().map(Adam::new).collect();
        Ok(EnsembleModel {
            elite_mask: vec![false; config.members],
            normalizer: Normalizer::identity(state_dim + action_dim),
            target_normalizer: Normalizer::identity(state_dim + 1),
            config,
            state_dim,
            action_dim,
            members,
            trained: false,
            optimizers,
        })
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.config
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn members(&self) -> &[GaussianHead] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [GaussianHead] {
        &mut self.members
    }

    pub fn elite_mask(&self) -> &[bool] {
        &self.elite_mask
    }

    pub fn elites(&self) -> Vec<usize> {
        (0..self.members.len()).filter(|&i| self.elite_mask[i]).collect()
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Marks explicit elites, e.g. after loading hand-built members.
    pub fn set_elites(&mut self, elites: &[usize]) -> Result<()> {
        if elites.is_empty() || elites.iter().any(|&e| e >= self.members.len()) {
            return Err(Error::contract("elite indices out of range"));
        }
        self.elite_mask = (0..self.members.len()).map(|i| elites.contains(&i)).collect();
        self.trained = true;
        Ok(())
    }

    pub fn target_normalizer(&self) -> &Normalizer {
        &self.target_normalizer
    }

    pub fn set_normalizer(&mut self, normalizer: Normalizer) -> Result<()> {
        if normalizer.mean.len() != self.state_dim + self.action_dim
            || normalizer.std.iter().any(|s| !(*s > 0.0))
        {
            return Err(Error::contract("normalizer does not match the model inputs"));
        }
        self.normalizer = normalizer;
        Ok(())
    }

    fn inputs_targets(&self, data: &[Transition]) -> (Array2<f64>, Array2<f64>) {
        let (sd, ad) = (self.state_dim, self.action_dim);
        let n = data.len();
        let mut x = Array2::zeros((n, sd + ad));
        let mut y = Array2::zeros((n, sd + 1));
        for (i, t) in data.iter().enumerate() {
            for j in 0..sd {
                x[[i, j]] = t.state[j];
                y[[i, j]] = t.next_state[j] - t.state[j];
            }
            for j in 0..ad {
                x[[i, sd + j]] = t.action[j];
            }
            y[[i, sd]] = t.reward;
        }
        (x, y)
    }

    /// Trains every member for up to `epochs` passes over the environment buffer.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        epochs: usize,
        rng: &mut R,
    ) -> Result<ModelTrainReport> {
        if buffer.state_dim() != self.state_dim || buffer.action_dim() != self.action_dim {
            return Err(Error::contract("buffer dims do not match the model"));
        }
        let data: Vec<Transition> = buffer.iter().cloned().collect();
        self.train_on(&data, epochs, rng)
    }

    pub fn train_on<R: Rng + ?Sized>(
        &mut self,
        data: &[Transition],
        epochs: usize,
        rng: &mut R,
    ) -> Result<ModelTrainReport> {
        let need = self.config.min_transitions.max(2);
        if data.len() < need {
            return Err(Error::InsufficientData {
                have: data.len(),
                need,
            });
        }
        let (x_raw, y) = self.inputs_targets(data);
        self.normalizer = Normalizer::fit(&x_raw);
        let x = self.normalizer.apply(&x_raw);
        self.target_normalizer = Normalizer::fit(&y);
        let y = self.target_normalizer.apply(&y);

        let n = data.len();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        let n_hold = ((n as f64 * self.config.holdout_fraction).round() as usize)
            .clamp(1, self.config.max_holdout.max(1))
            .min(n - 1);
        let (hold_idx, train_idx) = perm.split_at(n_hold);
        let x_hold = x.select(Axis(0), hold_idx);
        let y_hold = y.select(Axis(0), hold_idx);

        let samples: Vec<Vec<usize>> = (0..self.members.len())
            .map(|_| {
                if self.config.bootstrap {
                    (0..train_idx.len())
                        .map(|_| train_idx[rng.random_range(0..train_idx.len())])
                        .collect()
                } else {
                    train_idx.to_vec()
                }
            })
            .collect();

        let m = self.members.len();
        let mut best_l2: Vec<f64> = (0..m)
            .map(|i| self.holdout_l2(i, &x_hold, &y_hold))
            .collect::<Result<_>>()?;
        let mut best_params: Vec<Vec<f64>> = self.members.iter().map(|h| h.flat_params()).collect();
        let mut train_nll = vec![f64::NAN; m];
        let mut since_improved = 0;
        let mut epochs_run = 0;
        let mut history = Vec::new();

        for _ in 0..epochs {
            epochs_run += 1;
            for i in 0..m {
                let mut order = samples[i].clone();
                order.shuffle(rng);
                let mut total = 0.0;
                for chunk in order.chunks(self.config.batch_size) {
                    let xb = x.select(Axis(0), chunk);
                    let yb = y.select(Axis(0), chunk);
                    total += self.nll_step(i, xb, yb.view())? * chunk.len() as f64;
                }
                train_nll[i] = total / order.len() as f64;
            }
            let mut improved = false;
            let mut current = vec![0.0; m];
            for i in 0..m {
                let l2 = self.holdout_l2(i, &x_hold, &y_hold)?;
                current[i] = l2;
                if best_l2[i] - l2 > self.config.min_improvement * best_l2[i] {
                    best_l2[i] = l2;
                    best_params[i] = self.members[i].flat_params();
                    improved = true;
                }
            }
            let elite_now = select_elites(&current, self.config.elites);
            history.push(elite_now.iter().map(|&e| current[e]).sum::<f64>() / elite_now.len() as f64);
            if improved {
                since_improved = 0;
            } else {
                since_improved += 1;
                if since_improved >= self.config.patience {
                    break;
                }
            }
        }

        for (member, params) in self.members.iter_mut().zip(&best_params) {
            member.set_flat_params(params)?;
        }
        let elites = select_elites(&best_l2, self.config.elites);
        self.elite_mask = (0..m).map(|i| elites.contains(&i)).collect();
        self.trained = true;
        Ok(ModelTrainReport {
            train_nll,
            val_l2: best_l2,
            elites,
            epochs: epochs_run,
            elite_val_history: history,
        })
    }

    /// One Adam step on the mean Gaussian NLL of a minibatch; returns the loss.
    fn nll_step(&mut self, member: usize, x: Array2<f64>, y: ArrayView2<f64>) -> Result<f64> {
        let head = &self.members[member];
        let out = head.forward(x)?;
        let scale = 1.0 / (y.len() as f64);
        let inv_var = out.log_std.mapv(|l| (-2.0 * l).exp());
        let err = &y - &out.mean;
        let sq = &err * &err;
        let loss = 0.5 * ((&sq * &inv_var).sum() + 2.0 * out.log_std.sum()) * scale
            + 0.5 * (2.0 * std::f64::consts::PI).ln();
        if !loss.is_finite() {
            return Err(Error::divergence(
                format!("dynamics member {member}"),
                "non-finite negative log-likelihood",
            ));
        }
        let d_mean = -(&err * &inv_var) * scale;
        let d_log_std = (1.0 - &sq * &inv_var) * scale;
        let (grads, _) = head.backward(&out, d_mean.view(), d_log_std.view())?;
        sgd_step(
            &mut self.members[member],
            &grads,
            self.config.learning_rate,
            Some(&mut self.optimizers[member]),
        )
        .map_err(|e| match e {
            Error::Divergence { detail, .. } => Error::divergence(format!("dynamics member {member}"), detail),
            other => other,
        })?;
        Ok(loss)
    }

    fn holdout_l2(&self, member: usize, x: &Array2<f64>, y: &Array2<f64>) -> Result<f64> {
        // Reported in raw target units.
        let out = self.members[member].forward(x.clone())?;
        let err = (y - &out.mean) * &Array1::from(self.target_normalizer.std.clone());
        Ok((&err * &err).mean().unwrap_or(0.0))
    }

    fn check_ready(&self, states: &Array2<f64>, actions: &Array2<f64>) -> Result<()> {
        if !self.trained {
            return Err(Error::contract("dynamics model used before training"));
        }
        if states.ncols() != self.state_dim || actions.ncols() != self.action_dim || states.nrows() != actions.nrows() {
            return Err(Error::contract("state/action batch does not match the model"));
        }
        Ok(())
    }

    /// Mean and std of `(Δs, r)` predicted by one member.
    pub fn member_distribution(
        &self,
        member: usize,
        states: &Array2<f64>,
        actions: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_ready(states, actions)?;
        let x = concatenate![Axis(1), *states, *actions];
        let out = self
            .members
            .get(member)
            .ok_or_else(|| Error::contract("member index out of range"))?
            .forward(self.normalizer.apply(&x))?;
        let t_mean = Array1::from(self.target_normalizer.mean.clone());
        let t_std = Array1::from(self.target_normalizer.std.clone());
        Ok((&out.mean * &t_std + &t_mean, out.std() * &t_std))
    }

    /// Reparameterized next-state and reward draw from one member.
    pub fn sample_member<R: Rng + ?Sized>(
        &self,
        member: usize,
        states: &Array2<f64>,
        actions: &Array2<f64>,
        rng: &mut R,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        let (mean, std) = self.member_distribution(member, states, actions)?;
        let noise = Array2::from_shape_simple_fn(mean.dim(), || rng.sample::<f64, _>(rand_distr::StandardNormal));
        self.assemble(states, mean + std * noise)
    }

    pub fn mean_member(
        &self,
        member: usize,
        states: &Array2<f64>,
        actions: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        let (mean, _) = self.member_distribution(member, states, actions)?;
        self.assemble(states, mean)
    }

    fn assemble(&self, states: &Array2<f64>, out: Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::RolloutAborted("dynamics model produced a non-finite prediction".into()));
        }
        let next = states + &out.slice(s![.., 0..self.state_dim]);
        let rewards = out.column(self.state_dim).to_owned();
        Ok((next, rewards))
    }

    pub fn pick_elite<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<usize> {
        let elites = self.elites();
        if !self.trained || elites.is_empty() {
            return Err(Error::contract("dynamics model used before training"));
        }
        Ok(elites[rng.random_range(0..elites.len())])
    }

    /// Single transition from a uniformly chosen elite.
    pub fn predict<R: Rng + ?Sized>(&self, state: &[f64], action: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        if !state.iter().chain(action).all(|v| v.is_finite()) {
            return Err(Error::contract("non-finite model input"));
        }
        let member = self.pick_elite(rng)?;
        let s = Array2::from_shape_vec((1, state.len()), state.to_vec()).map_err(|e| Error::contract(e.to_string()))?;
        let a = Array2::from_shape_vec((1, action.len()), action.to_vec()).map_err(|e| Error::contract(e.to_string()))?;
        let (next, r) = self.sample_member(member, &s, &a, rng)?;
        Ok((next.row(0).to_vec(), r[0]))
    }

    pub fn checkpoint(&self) -> EnsembleCheckpoint {
        EnsembleCheckpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            members: self.members.clone(),
            elite_mask: self.elite_mask.clone(),
            normalizer: self.normalizer.clone(),
            target_normalizer: self.target_normalizer.clone(),
            trained: self.trained,
        }
    }

    pub fn from_checkpoint(ckpt: EnsembleCheckpoint) -> Result<Self> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported model checkpoint version {}", ckpt.version)));
        }
        ckpt.config.validate()?;
        if ckpt.members.len() != ckpt.config.members || ckpt.elite_mask.len() != ckpt.members.len() {
            return Err(Error::Checkpoint("member count mismatch".into()));
        }
        let optimizers = ckpt.members.iter().map(Adam::new).collect();
        Ok(EnsembleModel {
            config: ckpt.config,
            state_dim: ckpt.state_dim,
            action_dim: ckpt.action_dim,
            members: ckpt.members,
            elite_mask: ckpt.elite_mask,
            normalizer: ckpt.normalizer,
            target_normalizer: ckpt.target_normalizer,
            trained: ckpt.trained,
            optimizers,
        })
    }
}

/// Batched one-step simulator consumed by model predictive rollouts.
pub trait RolloutModel: Sync {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Chooses the member that simulates one rollout batch.
    fn pin_member(&self, rng: &mut dyn RngCore) -> Result<usize>;
    /// Stochastic step of every row under the pinned member.
    fn step(
        &self,
        member: usize,
        states: &Array2<f64>,
        actions: &Array2<f64>,
        rng: &mut dyn RngCore,
    ) -> Result<(Array2<f64>, Array1<f64>)>;
    /// Mean prediction, used for the nominal trajectory.
    fn step_mean(&self, member: usize, states: &Array2<f64>, actions: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)>;
}

/// The ensemble as a simulator, with the reward channel selected by [`RewardMode`].
pub struct EnsembleRollout<'a> {
    model: &'a EnsembleModel,
    reward: Option<RewardFn>,
    elite_sampling: EliteSampling,
}

impl<'a> EnsembleRollout<'a> {
    /// `env_reward` is required in analytic mode.
    pub fn new(model: &'a EnsembleModel, mode: RewardMode, env_reward: Option<RewardFn>) -> Result<Self> {
        let reward = match mode {
            RewardMode::Learned => None,
            RewardMode::Analytic => Some(env_reward.ok_or_else(|| {
                Error::Config("analytic reward requested but the environment exposes none".into())
            })?),
        };
        Ok(EnsembleRollout {
            model,
            reward,
            elite_sampling: model.config.elite_sampling,
        })
    }

    pub fn with_elite_sampling(mut self, sampling: EliteSampling) -> Self {
        self.elite_sampling = sampling;
        self
    }

    fn relabel(&self, states: &Array2<f64>, actions: &Array2<f64>, next: &Array2<f64>, rewards: &mut Array1<f64>) {
        if let Some(f) = self.reward {
            for i in 0..states.nrows() {
                rewards[i] = f(
                    states.row(i).as_slice().unwrap(),
                    actions.row(i).as_slice().unwrap(),
                    next.row(i).as_slice().unwrap(),
                );
            }
        }
    }
}

impl RolloutModel for EnsembleRollout<'_> {
    fn state_dim(&self) -> usize {
        self.model.state_dim
    }

    fn action_dim(&self) -> usize {
        self.model.action_dim
    }

    fn pin_member(&self, rng: &mut dyn RngCore) -> Result<usize> {
        self.model.pick_elite(rng)
    }

    fn step(
        &self,
        member: usize,
        states: &Array2<f64>,
        actions: &Array2<f64>,
        rng: &mut dyn RngCore,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        let states = states.as_standard_layout().to_owned();
        let actions = actions.as_standard_layout().to_owned();
        let (next, mut rewards) = match self.elite_sampling {
            EliteSampling::PerRollout => self.model.sample_member(member, &states, &actions, rng)?,
            EliteSampling::PerStep => {
                let mut next = Array2::zeros(states.dim());
                let mut rewards = Array1::zeros(states.nrows());
                for i in 0..states.nrows() {
                    let m = self.model.pick_elite(rng)?;
                    let (n, r) = self.model.sample_member(
                        m,
                        &states.slice(s![i..i + 1, ..]).to_owned(),
                        &actions.slice(s![i..i + 1, ..]).to_owned(),
                        rng,
                    )?;
                    next.row_mut(i).assign(&n.row(0));
                    rewards[i] = r[0];
                }
                (next, rewards)
            }
        };
        self.relabel(&states, &actions, &next, &mut rewards);
        Ok((next, rewards))
    }

    fn step_mean(&self, member: usize, states: &Array2<f64>, actions: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        let states = states.as_standard_layout().to_owned();
        let actions = actions.as_standard_layout().to_owned();
        let (next, mut rewards) = self.model.mean_member(member, &states, &actions)?;
        self.relabel(&states, &actions, &next, &mut rewards);
        Ok((next, rewards))
    }
}

/// Exact environment dynamics behind the simulator interface.
pub struct AnalyticModel {
    state_dim: usize,
    action_dim: usize,
    dynamics: DynamicsFn,
}

impl AnalyticModel {
    pub fn new(state_dim: usize, action_dim: usize, dynamics: DynamicsFn) -> Self {
        AnalyticModel {
            state_dim,
            action_dim,
            dynamics,
        }
    }
}

impl RolloutModel for AnalyticModel {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn pin_member(&self, _rng: &mut dyn RngCore) -> Result<usize> {
        Ok(0)
    }

    fn step(
        &self,
        member: usize,
        states: &Array2<f64>,
        actions: &Array2<f64>,
        _rng: &mut dyn RngCore,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        self.step_mean(member, states, actions)
    }

    fn step_mean(&self, _member: usize, states: &Array2<f64>, actions: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        if states.ncols() != self.state_dim || actions.ncols() != self.action_dim {
            return Err(Error::contract("state/action batch does not match the analytic model"));
        }
        let mut next = Array2::zeros(states.dim());
        let mut rewards = Array1::zeros(states.nrows());
        for i in 0..states.nrows() {
            let (n, r) = (self.dynamics)(&states.row(i).to_vec(), &actions.row(i).to_vec());
            next.row_mut(i).assign(&Array1::from(n));
            rewards[i] = r;
        }
        Ok((next, rewards))
    }
}
