//! Model predictive rollouts.
//!
//! One nominal action sequence is produced by running the policy mean through
//! the pinned ensemble member's mean dynamics. `n_traj` Gaussian perturbations
//! of that sequence are simulated, scored by their discounted model return
//! plus a discounted terminal value, and averaged with softmin weights. The
//! improved sequence is replayed through the same member and every step is
//! returned as a transition for the model buffer.

use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::envs::{EnvSpec, Transition};
use crate::error::{Error, Result};
use crate::model::RolloutModel;

/// Produces the nominal action for a state.
pub trait ActionSource: Sync {
    fn nominal_actions(&self, states: &Array2<f64>) -> Result<Array2<f64>>;
}

/// Terminal value bootstrap.
pub trait TerminalValue: Sync {
    fn values(&self, states: &Array2<f64>) -> Result<Array1<f64>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MprConfig {
    pub n_traj: usize,
    pub h_min: usize,
    pub h_max: usize,
    pub anneal_fraction: f64,
    pub lambda: f64,
    /// Per-dimension noise std. `None` means 0.3 times the action half-range.
    pub noise_std: Option<Vec<f64>>,
    pub gamma: f64,
}

impl Default for MprConfig {
    fn default() -> Self {
        MprConfig {
            n_traj: 32,
            h_min: 5,
            h_max: 15,
            anneal_fraction: 1.0,
            lambda: 1.0,
            noise_std: None,
            gamma: 0.99,
        }
    }
}

pub const DEFAULT_NOISE_FRACTION: f64 = 0.3;

impl MprConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_traj == 0 {
            return Err(Error::Config("n_traj must be positive".into()));
        }
        if self.h_min < 1 || self.h_min > self.h_max {
            return Err(Error::Config(format!(
                "need 1 <= h_min ({}) <= h_max ({})",
                self.h_min, self.h_max
            )));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config("lambda must be positive".into()));
        }
        if !(self.anneal_fraction > 0.0) {
            return Err(Error::Config("anneal_fraction must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must lie in [0, 1]".into()));
        }
        if let Some(std) = &self.noise_std {
            if std.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::Config("noise_std must be positive elementwise".into()));
            }
        }
        Ok(())
    }

    pub fn resolved_noise_std(&self, spec: &EnvSpec) -> Result<Vec<f64>> {
        match &self.noise_std {
            Some(std) if std.len() != spec.action_dim => Err(Error::Config(format!(
                "noise_std has {} entries, action space has {}",
                std.len(),
                spec.action_dim
            ))),
            Some(std) => Ok(std.clone()),
            None => Ok(spec
                .action_half_range()
                .iter()
                .map(|h| DEFAULT_NOISE_FRACTION * h)
                .collect()),
        }
    }
}

/// Linear horizon growth from `h_min` to `h_max`, then a plateau.
pub fn anneal_horizon(epoch: usize, total_epochs: usize, cfg: &MprConfig) -> Result<usize> {
    if epoch > total_epochs {
        return Err(Error::contract(format!("epoch {epoch} exceeds total {total_epochs}")));
    }
    let progress = if total_epochs == 0 {
        1.0
    } else {
        (epoch as f64 / (cfg.anneal_fraction * total_epochs as f64)).min(1.0)
    };
    Ok(cfg.h_min + ((cfg.h_max - cfg.h_min) as f64 * progress).round() as usize)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    /// `H × action_dim`.
    pub base_actions: Array2<f64>,
    /// `n_traj × H × action_dim`.
    pub noise: Array3<f64>,
    pub costs: Array1<f64>,
    pub weights: Array1<f64>,
    /// Ensemble member that simulated the batch.
    pub member: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MprDiagnostics {
    pub min_cost: f64,
    pub mean_cost: f64,
    /// `1 / Σ w²`.
    pub effective_sample_size: f64,
}

impl RolloutBatch {
    pub fn diagnostics(&self) -> MprDiagnostics {
        MprDiagnostics {
            min_cost: self.costs.iter().copied().fold(f64::INFINITY, f64::min),
            mean_cost: self.costs.mean().unwrap_or(f64::NAN),
            effective_sample_size: 1.0 / self.weights.iter().map(|w| w * w).sum::<f64>(),
        }
    }
}

fn row_batch(s0: &[f64], rows: usize) -> Array2<f64> {
    let mut x = Array2::zeros((rows, s0.len()));
    x.rows_mut().into_iter().for_each(|mut r| r.assign(&ndarray::aview1(s0)));
    x
}

fn check_finite(name: &str, x: &Array2<f64>) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::RolloutAborted(format!("non-finite {name} during model rollout")))
    }
}

/// Policy-mean actions along the member's mean trajectory.
pub fn nominal_sequence(
    s0: &[f64],
    model: &dyn RolloutModel,
    member: usize,
    policy: &dyn ActionSource,
    horizon: usize,
) -> Result<Array2<f64>> {
    let mut state = row_batch(s0, 1);
    let mut actions = Array2::zeros((horizon, model.action_dim()));
    for t in 0..horizon {
        let a = policy.nominal_actions(&state)?;
        check_finite("policy action", &a)?;
        actions.row_mut(t).assign(&a.row(0));
        if t + 1 < horizon {
            state = model.step_mean(member, &state, &a)?.0;
            check_finite("state", &state)?;
        }
    }
    Ok(actions)
}

/// Costs `-(Σ γᵗ r_t + γ^H V(s_H))` of each perturbed sequence `base + noise[i]`.
pub fn rollout_costs(
    s0: &[f64],
    model: &dyn RolloutModel,
    member: usize,
    base: &Array2<f64>,
    noise: &Array3<f64>,
    value: &dyn TerminalValue,
    gamma: f64,
    rng: &mut dyn RngCore,
) -> Result<Array1<f64>> {
    let (n, horizon, _) = noise.dim();
    if base.nrows() != horizon || base.ncols() != noise.dim().2 {
        return Err(Error::contract("noise and base sequence shapes differ"));
    }
    let mut states = row_batch(s0, n);
    let mut returns = Array1::<f64>::zeros(n);
    let mut discount = 1.0;
    for t in 0..horizon {
        let actions = &noise.index_axis(Axis(1), t) + &base.row(t);
        let (next, rewards) = model.step(member, &states, &actions, rng)?;
        check_finite("state", &next)?;
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::RolloutAborted("non-finite reward during model rollout".into()));
        }
        returns.scaled_add(discount, &rewards);
        discount *= gamma;
        states = next;
    }
    let terminal = value.values(&states)?;
    if terminal.iter().any(|v| !v.is_finite()) {
        return Err(Error::RolloutAborted("non-finite terminal value".into()));
    }
    returns.scaled_add(discount, &terminal);
    Ok(-returns)
}

/// Softmin weights `exp(-(C - min C)/λ) / η`.
pub fn importance_weights(costs: &Array1<f64>, lambda: f64) -> Result<Array1<f64>> {
    if costs.is_empty() {
        return Err(Error::contract("importance weights need at least one cost"));
    }
    if !(lambda > 0.0) {
        return Err(Error::contract("lambda must be positive"));
    }
    if costs.iter().any(|c| !c.is_finite()) {
        return Err(Error::contract("costs must be finite"));
    }
    let beta = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let unnorm = costs.mapv(|c| (-(c - beta) / lambda).exp());
    let eta = unnorm.sum();
    Ok(unnorm / eta)
}

/// Simulates `cfg.n_traj` perturbations of the nominal sequence under one pinned elite.
pub fn simulate_batch(
    s0: &[f64],
    model: &dyn RolloutModel,
    policy: &dyn ActionSource,
    value: &dyn TerminalValue,
    horizon: usize,
    cfg: &MprConfig,
    spec: &EnvSpec,
    rng: &mut dyn RngCore,
) -> Result<RolloutBatch> {
    if horizon == 0 {
        return Err(Error::contract("horizon must be at least 1"));
    }
    if s0.len() != model.state_dim() || spec.action_dim != model.action_dim() {
        return Err(Error::contract("start state or action space does not match the model"));
    }
    let std = cfg.resolved_noise_std(spec)?;
    let member = model.pin_member(rng)?;
    let base_actions = nominal_sequence(s0, model, member, policy, horizon)?;
    let ad = spec.action_dim;
    let mut noise = Array3::zeros((cfg.n_traj, horizon, ad));
    for ((_, _, k), v) in noise.indexed_iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = std[k] * z;
    }
    let costs = rollout_costs(s0, model, member, &base_actions, &noise, value, cfg.gamma, rng)?;
    let weights = importance_weights(&costs, cfg.lambda)?;
    Ok(RolloutBatch {
        base_actions,
        noise,
        costs,
        weights,
        member,
    })
}

/// `base + Σ wᵢ nᵢ`, clipped to the action box afterwards.
pub fn optimal_action_sequence(batch: &RolloutBatch, spec: &EnvSpec) -> Array2<f64> {
    let (_, horizon, ad) = batch.noise.dim();
    let mut out = batch.base_actions.clone();
    for (i, &w) in batch.weights.iter().enumerate() {
        out.scaled_add(w, &batch.noise.index_axis(Axis(0), i));
    }
    for t in 0..horizon {
        for k in 0..ad {
            out[[t, k]] = out[[t, k]].clamp(spec.action_low[k], spec.action_high[k]);
        }
    }
    out
}

/// Runs `actions` from `s0` through `member`, one transition per step.
pub fn replay_sequence(
    s0: &[f64],
    model: &dyn RolloutModel,
    member: usize,
    actions: &Array2<f64>,
    rng: &mut dyn RngCore,
) -> Result<Vec<Transition>> {
    let mut state = row_batch(s0, 1);
    let mut out = Vec::with_capacity(actions.nrows());
    for t in 0..actions.nrows() {
        let a = actions.slice(s![t..t + 1, ..]).to_owned();
        let (next, r) = model.step(member, &state, &a, rng)?;
        check_finite("state", &next)?;
        if !r[0].is_finite() {
            return Err(Error::RolloutAborted("non-finite reward during model rollout".into()));
        }
        out.push(Transition {
            state: state.row(0).to_vec(),
            action: a.row(0).to_vec(),
            reward: r[0],
            next_state: next.row(0).to_vec(),
            done: false,
        });
        state = next;
    }
    Ok(out)
}

/// One full MPR call: simulate, reweight, replay. Returns `horizon` transitions.
pub fn mpr_transitions(
    s0: &[f64],
    model: &dyn RolloutModel,
    policy: &dyn ActionSource,
    value: &dyn TerminalValue,
    horizon: usize,
    cfg: &MprConfig,
    spec: &EnvSpec,
    rng: &mut dyn RngCore,
) -> Result<(Vec<Transition>, MprDiagnostics)> {
    let batch = simulate_batch(s0, model, policy, value, horizon, cfg, spec, rng)?;
    let actions = optimal_action_sequence(&batch, spec);
    let transitions = replay_sequence(s0, model, batch.member, &actions, rng)?;
    Ok((transitions, batch.diagnostics()))
}
