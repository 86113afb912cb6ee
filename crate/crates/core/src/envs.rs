//! Analytic desk-scale environments and exactly solvable tabular MDPs.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub max_episode_steps: usize,
    /// Integration step in seconds, continuous-time environments only.
    pub dt: Option<f64>,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.action_dim == 0 || self.max_episode_steps == 0 {
            return Err(Error::contract("environment dimensions must be positive"));
        }
        if self.action_low.len() != self.action_dim || self.action_high.len() != self.action_dim {
            return Err(Error::contract("action bounds length != action_dim"));
        }
        if self.action_low.iter().zip(&self.action_high).any(|(l, h)| !(l < h)) {
            return Err(Error::contract("action_low must be < action_high elementwise"));
        }
        Ok(())
    }

    pub fn clip_action(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(a, (l, h))| a.clamp(*l, *h))
            .collect()
    }

    pub fn action_center(&self) -> Vec<f64> {
        self.action_low.iter().zip(&self.action_high).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn action_half_range(&self) -> Vec<f64> {
        self.action_low.iter().zip(&self.action_high).map(|(l, h)| 0.5 * (h - l)).collect()
    }

    pub fn uniform_action<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.action_low
            .iter()
            .zip(&self.action_high)
            .map(|(l, h)| rng.random_range(*l..*h))
            .collect()
    }
}

/// One `(s, a, r, s', done)` tuple. `done` marks a true terminal state; time
/// limits are reported separately by [`Step::truncated`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub transition: Transition,
    /// The episode hit its step limit.
    pub truncated: bool,
}

/// Reward as a function of `(s, a, s')` in observation space.
pub type RewardFn = fn(&[f64], &[f64], &[f64]) -> f64;

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;
    /// Starts a new episode; the same seed always yields the same start.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn observation(&self) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<Step>;
    /// The analytic reward, when the environment exposes one.
    fn reward_fn(&self) -> Option<RewardFn> {
        None
    }
    /// Exact one-step dynamics in observation space, when available.
    fn dynamics_fn(&self) -> Option<DynamicsFn> {
        None
    }
}

/// Deterministic `(s, a) -> (s', r)` in observation space.
pub type DynamicsFn = fn(&[f64], &[f64]) -> (Vec<f64>, f64);

pub const ENV_IDS: [&str; 3] = ["pendulum", "valve", "pointmass"];

pub fn make_env(id: &str) -> Result<Box<dyn Environment>> {
    match id {
        "pendulum" => Ok(Box::new(Pendulum::new())),
        "valve" => Ok(Box::new(Valve::new(ValveConfig::default())?)),
        "pointmass" => Ok(Box::new(PointMass::new())),
        other => Err(Error::Config(format!(
            "unknown environment '{other}', expected one of {ENV_IDS:?}"
        ))),
    }
}

fn check_action(spec: &EnvSpec, action: &[f64]) -> Result<()> {
    if action.len() != spec.action_dim {
        return Err(Error::contract(format!(
            "action has {} entries, environment expects {}",
            action.len(),
            spec.action_dim
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Pendulum swing-up

pub const PENDULUM_GRAVITY: f64 = 10.0;
pub const PENDULUM_MASS: f64 = 1.0;
pub const PENDULUM_LENGTH: f64 = 1.0;
pub const PENDULUM_DT: f64 = 0.05;
pub const PENDULUM_MAX_TORQUE: f64 = 2.0;
pub const PENDULUM_MAX_SPEED: f64 = 8.0;
pub const PENDULUM_EPISODE_STEPS: usize = 200;

/// Maps an angle into `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

pub fn pendulum_reward(theta: f64, theta_dot: f64, torque: f64) -> f64 {
    let th = wrap_angle(theta);
    -(th * th + 0.1 * theta_dot * theta_dot + 0.001 * torque * torque)
}

/// Angular acceleration with `θ = 0` upright.
pub fn pendulum_acceleration(theta: f64, torque: f64) -> f64 {
    3.0 * PENDULUM_GRAVITY / (2.0 * PENDULUM_LENGTH) * theta.sin()
        + 3.0 / (PENDULUM_MASS * PENDULUM_LENGTH * PENDULUM_LENGTH) * torque
}

/// Energy conserved by the torque-free dynamics (per unit inertia).
pub fn pendulum_energy(state: &[f64]) -> f64 {
    0.5 * state[1] * state[1] + 3.0 * PENDULUM_GRAVITY / (2.0 * PENDULUM_LENGTH) * state[0].cos()
}

/// One semi-implicit Euler step on the physical state `[θ, θ̇]`.
pub fn pendulum_step(state: &[f64], action: &[f64]) -> Result<Transition> {
    if state.len() != 2 || action.len() != 1 {
        return Err(Error::contract("pendulum expects state [θ, θ̇] and action [torque]"));
    }
    if !state.iter().chain(action).all(|v| v.is_finite()) {
        return Err(Error::EnvFault(format!("non-finite pendulum input {state:?} {action:?}")));
    }
    let (theta, theta_dot) = (state[0], state[1]);
    let u = action[0].clamp(-PENDULUM_MAX_TORQUE, PENDULUM_MAX_TORQUE);
    let reward = pendulum_reward(theta, theta_dot, u);
    let new_dot = (theta_dot + pendulum_acceleration(theta, u) * PENDULUM_DT)
        .clamp(-PENDULUM_MAX_SPEED, PENDULUM_MAX_SPEED);
    let new_theta = theta + new_dot * PENDULUM_DT;
    Ok(Transition {
        state: state.to_vec(),
        action: vec![u],
        reward,
        next_state: vec![new_theta, new_dot],
        done: false,
    })
}

pub fn pendulum_observation(state: &[f64]) -> Vec<f64> {
    vec![state[0].cos(), state[0].sin(), state[1]]
}

fn pendulum_obs_reward(s: &[f64], a: &[f64], _next: &[f64]) -> f64 {
    let u = a[0].clamp(-PENDULUM_MAX_TORQUE, PENDULUM_MAX_TORQUE);
    pendulum_reward(s[1].atan2(s[0]), s[2], u)
}

fn pendulum_obs_dynamics(s: &[f64], a: &[f64]) -> (Vec<f64>, f64) {
    let physical = [s[1].atan2(s[0]), s[2]];
    let t = pendulum_step(&physical, &a[..1]).expect("finite pendulum input");
    (pendulum_observation(&t.next_state), t.reward)
}

/// Swing-up task observed as `[cos θ, sin θ, θ̇]`.
#[derive(Clone, Debug)]
pub struct Pendulum {
    spec: EnvSpec,
    state: [f64; 2],
    t: usize,
}

impl Pendulum {
    pub fn new() -> Self {
        Pendulum {
            spec: EnvSpec {
                state_dim: 3,
                action_dim: 1,
                action_low: vec![-PENDULUM_MAX_TORQUE],
                action_high: vec![PENDULUM_MAX_TORQUE],
                max_episode_steps: PENDULUM_EPISODE_STEPS,
                dt: Some(PENDULUM_DT),
            },
            state: [PI, 0.0],
            t: 0,
        }
    }

    pub fn physical_state(&self) -> [f64; 2] {
        self.state
    }

    pub fn set_physical_state(&mut self, state: [f64; 2]) {
        self.state = state;
    }
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = [rng.random_range(-PI..PI), rng.random_range(-1.0..1.0)];
        self.t = 0;
        self.observation()
    }

    fn observation(&self) -> Vec<f64> {
        pendulum_observation(&self.state)
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        check_action(&self.spec, action)?;
        if self.t >= self.spec.max_episode_steps {
            return Err(Error::contract("pendulum stepped past its episode limit"));
        }
        let physical = pendulum_step(&self.state, action)?;
        let obs = self.observation();
        self.state = [physical.next_state[0], physical.next_state[1]];
        self.t += 1;
        Ok(Step {
            transition: Transition {
                state: obs,
                action: physical.action,
                reward: physical.reward,
                next_state: self.observation(),
                done: false,
            },
            truncated: self.t >= self.spec.max_episode_steps,
        })
    }

    fn reward_fn(&self) -> Option<RewardFn> {
        Some(pendulum_obs_reward)
    }

    fn dynamics_fn(&self) -> Option<DynamicsFn> {
        Some(pendulum_obs_dynamics)
    }
}

// ---------------------------------------------------------------------------
// Valve rotation toy

/// Stick-slip valve turned by position-controlled fingers.
///
/// A finger is in contact when its extension is at least `contact_level`.
/// Only pushing commands (`u > 0`) of fingers in contact contribute grip; the
/// valve slips and turns by `rotation_gain · (grip − grip_threshold)` only
/// when grip exceeds the threshold, and the angle is read through an encoder
/// of `encoder_resolution` radians per tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValveConfig {
    pub n_fingers: usize,
    pub finger_gain: f64,
    pub contact_level: f64,
    pub grip_threshold: f64,
    pub rotation_gain: f64,
    /// Radians per encoder tick; a power of two keeps angle arithmetic exact.
    pub encoder_resolution: f64,
    pub episode_steps: usize,
}

impl Default for ValveConfig {
    fn default() -> Self {
        ValveConfig {
            n_fingers: 2,
            finger_gain: 0.25,
            contact_level: 0.5,
            grip_threshold: 1.0,
            rotation_gain: 1.0,
            encoder_resolution: 1.0 / 1024.0,
            episode_steps: 50,
        }
    }
}

impl ValveConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n_fingers >= 1
            && self.finger_gain > 0.0
            && (0.0..=1.0).contains(&self.contact_level)
            && self.grip_threshold >= 0.0
            && self.rotation_gain > 0.0
            && self.encoder_resolution > 0.0
            && self.episode_steps > 0;
        if !ok {
            return Err(Error::Config(format!("invalid valve configuration {self:?}")));
        }
        Ok(())
    }

    /// Largest single-step increment: every finger in contact pushing at full scale.
    pub fn max_increment(&self) -> f64 {
        self.quantize(self.rotation_gain * (self.n_fingers as f64 - self.grip_threshold).max(0.0))
    }

    fn quantize(&self, angle: f64) -> f64 {
        (angle / self.encoder_resolution).floor() * self.encoder_resolution
    }
}

/// Valve increment for finger extensions `fingers` and commands `action`.
pub fn valve_rotation(cfg: &ValveConfig, fingers: &[f64], action: &[f64]) -> f64 {
    let grip: f64 = fingers
        .iter()
        .zip(action)
        .filter(|(f, _)| **f >= cfg.contact_level)
        .map(|(_, u)| u.clamp(-1.0, 1.0).max(0.0))
        .sum();
    if grip > cfg.grip_threshold {
        cfg.quantize(cfg.rotation_gain * (grip - cfg.grip_threshold))
    } else {
        0.0
    }
}

/// One step on `[θ_valve, finger extensions...]` with finger velocity commands in `[-1, 1]`.
pub fn valve_step(cfg: &ValveConfig, state: &[f64], action: &[f64]) -> Result<Transition> {
    if state.len() != cfg.n_fingers + 1 || action.len() != cfg.n_fingers {
        return Err(Error::contract("valve state/action dimension mismatch"));
    }
    if !state.iter().chain(action).all(|v| v.is_finite()) {
        return Err(Error::contract("non-finite valve input"));
    }
    let action: Vec<f64> = action.iter().map(|u| u.clamp(-1.0, 1.0)).collect();
    let fingers = &state[1..];
    let delta = valve_rotation(cfg, fingers, &action);
    let mut next = Vec::with_capacity(state.len());
    next.push(state[0] + delta);
    next.extend(
        fingers
            .iter()
            .zip(&action)
            .map(|(f, u)| (f + cfg.finger_gain * u).clamp(0.0, 1.0)),
    );
    Ok(Transition {
        state: state.to_vec(),
        reward: next[0] - state[0],
        action,
        next_state: next,
        done: false,
    })
}

fn valve_obs_reward(s: &[f64], _a: &[f64], next: &[f64]) -> f64 {
    next[0] - s[0]
}

fn valve_obs_dynamics(s: &[f64], a: &[f64]) -> (Vec<f64>, f64) {
    let t = valve_step(&ValveConfig::default(), s, a).expect("valid valve input");
    (t.next_state, t.reward)
}

#[derive(Clone, Debug)]
pub struct Valve {
    cfg: ValveConfig,
    spec: EnvSpec,
    state: Vec<f64>,
    t: usize,
}

impl Valve {
    pub fn new(cfg: ValveConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = EnvSpec {
            state_dim: cfg.n_fingers + 1,
            action_dim: cfg.n_fingers,
            action_low: vec![-1.0; cfg.n_fingers],
            action_high: vec![1.0; cfg.n_fingers],
            max_episode_steps: cfg.episode_steps,
            dt: None,
        };
        let state = vec![0.0; cfg.n_fingers + 1];
        Ok(Valve { cfg, spec, state, t: 0 })
    }

    pub fn config(&self) -> &ValveConfig {
        &self.cfg
    }

    pub fn angle(&self) -> f64 {
        self.state[0]
    }
}

impl Environment for Valve {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    /// Valve at zero, fingers retracted to a random extension below contact.
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.state[0] = 0.0;
        for f in &mut self.state[1..] {
            *f = rng.random_range(0.0..0.25);
        }
        self.t = 0;
        self.observation()
    }

    fn observation(&self) -> Vec<f64> {
        self.state.clone()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        check_action(&self.spec, action)?;
        if self.t >= self.spec.max_episode_steps {
            return Err(Error::contract("valve stepped past its episode limit"));
        }
        let transition = valve_step(&self.cfg, &self.state, action)?;
        self.state = transition.next_state.clone();
        self.t += 1;
        Ok(Step {
            transition,
            truncated: self.t >= self.spec.max_episode_steps,
        })
    }

    fn reward_fn(&self) -> Option<RewardFn> {
        Some(valve_obs_reward)
    }

    fn dynamics_fn(&self) -> Option<DynamicsFn> {
        (self.cfg == ValveConfig::default()).then_some(valve_obs_dynamics as DynamicsFn)
    }
}

// ---------------------------------------------------------------------------
// Point mass

pub const POINTMASS_DT: f64 = 0.1;
pub const POINTMASS_EPISODE_STEPS: usize = 100;

fn pointmass_reward(s: &[f64], a: &[f64], _next: &[f64]) -> f64 {
    let u = a[0].clamp(-1.0, 1.0);
    -(s[0] * s[0] + 0.1 * s[1] * s[1] + 0.01 * u * u)
}

fn pointmass_dynamics(s: &[f64], a: &[f64]) -> (Vec<f64>, f64) {
    let u = a[0].clamp(-1.0, 1.0);
    let v = s[1] + u * POINTMASS_DT;
    let x = s[0] + v * POINTMASS_DT;
    (vec![x, v], pointmass_reward(s, a, &[]))
}

/// Unit mass on a line, driven to the origin by a bounded force.
#[derive(Clone, Debug)]
pub struct PointMass {
    spec: EnvSpec,
    state: [f64; 2],
    t: usize,
}

impl PointMass {
    pub fn new() -> Self {
        PointMass {
            spec: EnvSpec {
                state_dim: 2,
                action_dim: 1,
                action_low: vec![-1.0],
                action_high: vec![1.0],
                max_episode_steps: POINTMASS_EPISODE_STEPS,
                dt: Some(POINTMASS_DT),
            },
            state: [0.0; 2],
            t: 0,
        }
    }
}

impl Default for PointMass {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for PointMass {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = [rng.random_range(-1.0..1.0), 0.0];
        self.t = 0;
        self.observation()
    }

    fn observation(&self) -> Vec<f64> {
        self.state.to_vec()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        check_action(&self.spec, action)?;
        if self.t >= self.spec.max_episode_steps {
            return Err(Error::contract("point mass stepped past its episode limit"));
        }
        if !self.state.iter().all(|v| v.is_finite()) {
            return Err(Error::EnvFault("non-finite point-mass state".into()));
        }
        let state = self.observation();
        let action = self.spec.clip_action(action);
        let (next, reward) = pointmass_dynamics(&state, &action);
        self.state = [next[0], next[1]];
        self.t += 1;
        Ok(Step {
            transition: Transition {
                state,
                action,
                reward,
                next_state: next,
                done: false,
            },
            truncated: self.t >= self.spec.max_episode_steps,
        })
    }

    fn reward_fn(&self) -> Option<RewardFn> {
        Some(pointmass_reward)
    }

    fn dynamics_fn(&self) -> Option<DynamicsFn> {
        Some(pointmass_dynamics)
    }
}

// ---------------------------------------------------------------------------
// Tabular MDPs

/// Finite MDP with dense transition tensor `P[s][a][s']` and rewards `r[s][a]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularMDP {
    pub n_states: usize,
    pub n_actions: usize,
    /// Flattened `P[s][a][s']`.
    pub transitions: Vec<f64>,
    /// Flattened `r[s][a]`.
    pub rewards: Vec<f64>,
    pub gamma: f64,
    /// Bound on `|r(s, a)|`.
    pub r_max: f64,
}

impl TabularMDP {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        let r_max = rewards.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        let mdp = TabularMDP {
            n_states,
            n_actions,
            transitions,
            rewards,
            gamma,
            r_max,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Dirichlet(1, …, 1) transition rows and rewards uniform in `[-1, 1]`.
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, gamma: f64, rng: &mut R) -> Result<Self> {
        let mut transitions = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            transitions.extend(random_distribution(n_states, rng));
        }
        let rewards = (0..n_states * n_actions).map(|_| rng.random_range(-1.0..=1.0)).collect();
        TabularMDP::new(n_states, n_actions, transitions, rewards, gamma)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(Error::contract("MDP needs at least one state and one action"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::contract(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if self.transitions.len() != self.n_states * self.n_actions * self.n_states
            || self.rewards.len() != self.n_states * self.n_actions
        {
            return Err(Error::contract("MDP tables have the wrong size"));
        }
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = self.p(s, a);
                if row.iter().any(|p| !(*p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return Err(Error::contract(format!("P[{s}][{a}] is not a distribution")));
                }
            }
        }
        if self.rewards.iter().any(|r| !r.is_finite() || r.abs() > self.r_max) {
            return Err(Error::contract("reward exceeds r_max"));
        }
        Ok(())
    }

    pub fn p(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transitions[start..start + self.n_states]
    }

    pub fn p_mut(&mut self, s: usize, a: usize) -> &mut [f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &mut self.transitions[start..start + self.n_states]
    }

    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    /// `Q(s, a) = r(s, a) + γ Σ P(s'|s, a) V(s')`, flattened `[s][a]`.
    pub fn q_values(&self, v: &[f64]) -> Vec<f64> {
        let mut q = Vec::with_capacity(self.n_states * self.n_actions);
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let ev: f64 = self.p(s, a).iter().zip(v).map(|(p, v)| p * v).sum();
                q.push(self.r(s, a) + self.gamma * ev);
            }
        }
        q
    }

    /// One Bellman optimality backup; greedy ties go to the lowest action index.
    pub fn bellman_backup(&self, v: &[f64]) -> (Vec<f64>, Vec<usize>) {
        let q = self.q_values(v);
        let mut values = Vec::with_capacity(self.n_states);
        let mut policy = Vec::with_capacity(self.n_states);
        for row in q.chunks(self.n_actions) {
            let (best, val) = argmax(row);
            values.push(val);
            policy.push(best);
        }
        (values, policy)
    }

    /// Exact value of a deterministic stationary policy: `(I − γ P_π)⁻¹ r_π`.
    pub fn evaluate_policy(&self, policy: &[usize]) -> Result<Vec<f64>> {
        if policy.len() != self.n_states || policy.iter().any(|&a| a >= self.n_actions) {
            return Err(Error::contract("policy does not match the MDP"));
        }
        let dist: Vec<Vec<f64>> = policy
            .iter()
            .map(|&a| {
                let mut d = vec![0.0; self.n_actions];
                d[a] = 1.0;
                d
            })
            .collect();
        self.evaluate_stochastic_policy(&dist)
    }

    /// Exact value of a stochastic policy given as `π[s][a]`.
    pub fn evaluate_stochastic_policy(&self, policy: &[Vec<f64>]) -> Result<Vec<f64>> {
        let n = self.n_states;
        if policy.len() != n || policy.iter().any(|row| row.len() != self.n_actions) {
            return Err(Error::contract("policy does not match the MDP"));
        }
        let mut lhs = DMatrix::<f64>::identity(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for s in 0..n {
            for (a, &pa) in policy[s].iter().enumerate() {
                if pa == 0.0 {
                    continue;
                }
                rhs[s] += pa * self.r(s, a);
                for (s2, p) in self.p(s, a).iter().enumerate() {
                    lhs[(s, s2)] -= self.gamma * pa * p;
                }
            }
        }
        let v = lhs
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::contract("singular policy-evaluation system"))?;
        Ok(v.iter().copied().collect())
    }
}

pub(crate) fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Uniform draw from the probability simplex (Dirichlet with unit concentration).
pub fn random_distribution<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    // Fold rounding residue into the largest entry so rows sum to one.
    let residue = 1.0 - w.iter().sum::<f64>();
    let (imax, _) = argmax(&w);
    w[imax] += residue;
    w
}

const VALUE_ITERATION_CAP: usize = 10_000_000;

/// Iterates Bellman backups until `‖V − TV‖∞ ≤ tol`; returns `V` and the greedy policy.
pub fn solve_value_iteration(mdp: &TabularMDP, tol: f64) -> Result<(Vec<f64>, Vec<usize>)> {
    if !(tol > 0.0) {
        return Err(Error::contract("value-iteration tolerance must be positive"));
    }
    let mut v = vec![0.0; mdp.n_states];
    let mut best_residual = f64::INFINITY;
    let mut stalled = 0;
    for _ in 0..VALUE_ITERATION_CAP {
        let (next, _) = mdp.bellman_backup(&v);
        let residual = next.iter().zip(&v).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        v = next;
        if residual <= tol {
            break;
        }
        // Below the floating-point floor the residual stops shrinking.
        if residual < best_residual {
            best_residual = residual;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled > 100 {
                break;
            }
        }
    }
    let (_, policy) = mdp.bellman_backup(&v);
    Ok((v, policy))
}
