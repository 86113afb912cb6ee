//! Soft actor-critic with a state-value network.
//!
//! The actor is a diagonal Gaussian squashed by `tanh` and affinely mapped onto
//! the action box. Critics are twin Q networks backed up through a Polyak-averaged
//! V target, which is also the terminal value used by model predictive rollouts.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::approx::{
    polyak_update, sgd_step, Activation, Adam, DenseNet, GaussianHead, Gradients, Parameterized,
    DEFAULT_LOG_STD_BOUNDS,
};
use crate::envs::{EnvSpec, Transition};
use crate::error::{Error, Result};
use crate::mpr::{ActionSource, TerminalValue};

const CHECKPOINT_VERSION: u32 = 1;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha: f64,
    pub auto_alpha: bool,
    pub alpha_lr: f64,
    /// Defaults to `-action_dim` when unset.
    pub target_entropy: Option<f64>,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub log_std_bounds: (f64, f64),
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            hidden: vec![64, 64],
            activation: Activation::Relu,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha: 0.2,
            auto_alpha: false,
            alpha_lr: 3e-4,
            target_entropy: None,
            gamma: 0.99,
            tau: 0.005,
            batch_size: 256,
            log_std_bounds: DEFAULT_LOG_STD_BOUNDS,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::Config("alpha must be positive".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config("tau must lie in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must lie in [0, 1)".into()));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0 && self.alpha_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.batch_size == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("batch_size and hidden widths must be positive".into()));
        }
        if self.log_std_bounds.0 >= self.log_std_bounds.1 {
            return Err(Error::Config("log_std_bounds must satisfy min < max".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SacLosses {
    pub v_loss: f64,
    pub q1_loss: f64,
    pub q2_loss: f64,
    pub policy_loss: f64,
    pub alpha: f64,
    /// `-mean log π` on the batch.
    pub entropy: f64,
}

/// A batch of transitions in matrix form.
#[derive(Clone, Debug)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    pub dones: Array1<f64>,
}

impl Batch {
    pub fn from_transitions(ts: &[Transition]) -> Result<Self> {
        let first = ts.first().ok_or_else(|| Error::EmptyBuffer("empty training batch".into()))?;
        let (sd, ad) = (first.state.len(), first.action.len());
        let n = ts.len();
        let mut b = Batch {
            states: Array2::zeros((n, sd)),
            actions: Array2::zeros((n, ad)),
            rewards: Array1::zeros(n),
            next_states: Array2::zeros((n, sd)),
            dones: Array1::zeros(n),
        };
        for (i, t) in ts.iter().enumerate() {
            if t.state.len() != sd || t.action.len() != ad || t.next_state.len() != sd {
                return Err(Error::contract("ragged transition batch"));
            }
            b.states.row_mut(i).assign(&ndarray::aview1(&t.state));
            b.actions.row_mut(i).assign(&ndarray::aview1(&t.action));
            b.next_states.row_mut(i).assign(&ndarray::aview1(&t.next_state));
            b.rewards[i] = t.reward;
            b.dones[i] = if t.done { 1.0 } else { 0.0 };
        }
        Ok(b)
    }
}

/// Reparameterized policy draw for a batch, with what the reverse pass needs.
pub struct PolicySample {
    pub actions: Array2<f64>,
    pub log_prob: Array1<f64>,
    pub pre_tanh: Array2<f64>,
    pub eps: Array2<f64>,
    pub tanh: Array2<f64>,
    out: crate::approx::GaussianOutput,
}

/// Single-parameter owner so the temperature can use the shared Adam code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Scalar(Vec<f64>);

impl Parameterized for Scalar {
    fn param_blocks(&self) -> Vec<&[f64]> {
        vec![&self.0]
    }
    fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.0]
    }
}

#[derive(Clone, Debug)]
pub struct ActorCritic {
    cfg: SacConfig,
    state_dim: usize,
    action_dim: usize,
    action_center: Array1<f64>,
    action_scale: Array1<f64>,
    pub policy: GaussianHead,
    pub q1: DenseNet,
    pub q2: DenseNet,
    pub q1_target: DenseNet,
    pub q2_target: DenseNet,
    pub v: DenseNet,
    pub v_target: DenseNet,
    log_alpha: Scalar,
    opt_policy: Adam,
    opt_q1: Adam,
    opt_q2: Adam,
    opt_v: Adam,
    opt_alpha: Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SacCheckpoint {
    pub version: u32,
    pub config: SacConfig,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub policy: GaussianHead,
    pub q1: DenseNet,
    pub q2: DenseNet,
    pub q1_target: DenseNet,
    pub q2_target: DenseNet,
    pub v: DenseNet,
    pub v_target: DenseNet,
    pub log_alpha: f64,
}

/// `log(1 - tanh²u)` without cancellation for large `|u|`.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl ActorCritic {
    pub fn new<R: Rng + ?Sized>(cfg: SacConfig, spec: &EnvSpec, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        spec.validate()?;
        let (sd, ad) = (spec.state_dim, spec.action_dim);
        let policy = GaussianHead::new(sd, &cfg.hidden, ad, cfg.activation, true, cfg.log_std_bounds, rng)?;
        let critic = |inputs: usize, rng: &mut R| -> Result<DenseNet> {
            let mut sizes = vec![inputs];
            sizes.extend_from_slice(&cfg.hidden);
            sizes.push(1);
            DenseNet::new(&sizes, cfg.activation, Activation::Identity, rng)
        };
        let q1 = critic(sd + ad, rng)?;
        let q2 = critic(sd + ad, rng)?;
        let v = critic(sd, rng)?;
        let log_alpha = Scalar(vec![cfg.alpha.ln()]);
        Ok(ActorCritic {
            action_center: Array1::from(spec.action_center()),
            action_scale: Array1::from(spec.action_half_range()),
            opt_policy: Adam::new(&policy),
            opt_q1: Adam::new(&q1),
            opt_q2: Adam::new(&q2),
            opt_v: Adam::new(&v),
            opt_alpha: Adam::new(&log_alpha),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            v_target: v.clone(),
            policy,
            q1,
            q2,
            v,
            log_alpha,
            cfg,
            state_dim: sd,
            action_dim: ad,
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.cfg
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.0[0].exp()
    }

    pub fn target_entropy(&self) -> f64 {
        self.cfg.target_entropy.unwrap_or(-(self.action_dim as f64))
    }

    /// Overrides the temperature, e.g. for annealing schedules.
    pub fn set_alpha(&mut self, alpha: f64) -> Result<()> {
        if !(alpha > 0.0) {
            return Err(Error::contract("alpha must be positive"));
        }
        self.log_alpha.0[0] = alpha.ln();
        Ok(())
    }

    fn check_states(&self, states: &Array2<f64>) -> Result<()> {
        if states.ncols() != self.state_dim {
            return Err(Error::contract(format!(
                "state width {} != {}",
                states.ncols(),
                self.state_dim
            )));
        }
        Ok(())
    }

    /// Policy draw with a caller-supplied standard-normal `eps`.
    pub fn sample_with_noise(&self, states: &Array2<f64>, eps: Array2<f64>) -> Result<PolicySample> {
        self.check_states(states)?;
        let out = self.policy.forward(states.clone())?;
        if eps.dim() != out.mean.dim() {
            return Err(Error::contract("noise shape does not match the policy output"));
        }
        let std = out.std();
        let pre_tanh = &out.mean + &(&std * &eps);
        let tanh = pre_tanh.mapv(f64::tanh);
        let actions = &tanh * &self.action_scale + &self.action_center;
        let log_scale: f64 = self.action_scale.iter().map(|s| s.ln()).sum();
        let n = states.nrows();
        let mut log_prob = Array1::zeros(n);
        for i in 0..n {
            let mut lp = 0.0;
            for k in 0..self.action_dim {
                let e = eps[[i, k]];
                lp += -0.5 * e * e - out.log_std[[i, k]] - 0.5 * LN_2PI - log_one_minus_tanh_sq(pre_tanh[[i, k]]);
            }
            log_prob[i] = lp - log_scale;
        }
        Ok(PolicySample {
            actions,
            log_prob,
            pre_tanh,
            eps,
            tanh,
            out,
        })
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, states: &Array2<f64>, rng: &mut R) -> Result<PolicySample> {
        let eps = Array2::from_shape_simple_fn((states.nrows(), self.action_dim), || rng.sample(StandardNormal));
        self.sample_with_noise(states, eps)
    }

    /// Squashed stochastic action and its log-density.
    pub fn sample_action<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let s = Array2::from_shape_vec((1, state.len()), state.to_vec()).map_err(|e| Error::contract(e.to_string()))?;
        let p = self.sample_batch(&s, rng)?;
        Ok((p.actions.row(0).to_vec(), p.log_prob[0]))
    }

    /// Squashed policy mean for a batch of states.
    pub fn mean_actions(&self, states: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_states(states)?;
        let out = self.policy.forward(states.clone())?;
        Ok(out.mean.mapv(f64::tanh) * &self.action_scale + &self.action_center)
    }

    pub fn deterministic_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        let s = Array2::from_shape_vec((1, state.len()), state.to_vec()).map_err(|e| Error::contract(e.to_string()))?;
        Ok(self.mean_actions(&s)?.row(0).to_vec())
    }

    fn q_input(states: &Array2<f64>, actions: &Array2<f64>) -> Array2<f64> {
        concatenate![Axis(1), *states, *actions]
    }

    pub fn q_values(&self, states: &Array2<f64>, actions: &Array2<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        let x = Self::q_input(states, actions);
        Ok((
            self.q1.forward_batch(x.view())?.column(0).to_owned(),
            self.q2.forward_batch(x.view())?.column(0).to_owned(),
        ))
    }

    pub fn state_values(&self, states: &Array2<f64>) -> Result<Array1<f64>> {
        Ok(self.v.forward_batch(states.view())?.column(0).to_owned())
    }

    pub fn target_values(&self, states: &Array2<f64>) -> Result<Array1<f64>> {
        Ok(self.v_target.forward_batch(states.view())?.column(0).to_owned())
    }

    /// `r + γ(1 − done)·V̄(s')`.
    pub fn q_targets(&self, batch: &Batch) -> Result<Array1<f64>> {
        let next_v = self.target_values(&batch.next_states)?;
        Ok(&batch.rewards + &((1.0 - &batch.dones) * &next_v * self.cfg.gamma))
    }

    /// Mean `α log π − min(Q1, Q2)` for a fixed noise draw, with gradients
    /// w.r.t. the policy parameters and the sampled log-probabilities.
    pub fn policy_loss_and_grads(&self, states: &Array2<f64>, eps: Array2<f64>) -> Result<(f64, Gradients, PolicySample)> {
        let alpha = self.alpha();
        let sample = self.sample_with_noise(states, eps)?;
        let n = states.nrows();
        let inv_n = 1.0 / n as f64;
        let x = Self::q_input(states, &sample.actions);
        let tape1 = self.q1.forward_tape(x.clone())?;
        let tape2 = self.q2.forward_tape(x)?;
        let (q1, q2) = (tape1.output().column(0), tape2.output().column(0));
        let use1 = Array1::from_shape_fn(n, |i| if q1[i] <= q2[i] { 1.0 } else { 0.0 });
        let min_q = Array1::from_shape_fn(n, |i| q1[i].min(q2[i]));
        let loss = (alpha * &sample.log_prob - &min_q).sum() * inv_n;

        // d min(Q)/da through whichever critic is active per row.
        let g1 = (&use1 * inv_n).insert_axis(Axis(1));
        let g2 = ((1.0 - &use1) * inv_n).insert_axis(Axis(1));
        let (_, dx1) = self.q1.backward_tape(&tape1, g1.view())?;
        let (_, dx2) = self.q2.backward_tape(&tape2, g2.view())?;
        let sd = self.state_dim;
        let dq_da = (&dx1 + &dx2).slice(s![.., sd..]).to_owned();

        let std = sample.out.std();
        let one_minus_t2 = 1.0 - &sample.tanh * &sample.tanh;
        let da_du = &one_minus_t2 * &self.action_scale;
        let dlogp_du = 2.0 * &sample.tanh;
        let sigma_eps = &std * &sample.eps;
        // dL/du per unit batch weight, reusing inv_n already folded into dq_da.
        let dl_du = alpha * inv_n * &dlogp_du - &dq_da * &da_du;
        let d_mean = dl_du.clone();
        let d_log_std = &dl_du * &sigma_eps - alpha * inv_n;
        let (grads, _) = self.policy.backward(&sample.out, d_mean.view(), d_log_std.view())?;
        Ok((loss, grads, sample))
    }

    /// One gradient step on V, Q1, Q2 and π, then Polyak averaging of all targets.
    pub fn update<R: Rng + ?Sized>(&mut self, transitions: &[Transition], rng: &mut R) -> Result<SacLosses> {
        let batch = Batch::from_transitions(transitions)?;
        self.check_states(&batch.states)?;
        let n = batch.states.nrows();
        let inv_n = 1.0 / n as f64;
        let alpha = self.alpha();

        let eps = Array2::from_shape_simple_fn((n, self.action_dim), || rng.sample(StandardNormal));
        let (policy_loss, policy_grads, sample) = self.policy_loss_and_grads(&batch.states, eps)?;
        if !policy_loss.is_finite() {
            return Err(Error::divergence("policy", "non-finite policy loss"));
        }

        // V toward E[min Q(s, ã) − α log π(ã|s)].
        let (q1_new, q2_new) = self.q_values(&batch.states, &sample.actions)?;
        let v_target = Array1::from_shape_fn(n, |i| q1_new[i].min(q2_new[i])) - alpha * &sample.log_prob;
        let v_tape = self.v.forward_tape(batch.states.clone())?;
        let v_err = &v_tape.output().column(0) - &v_target;
        let v_loss = 0.5 * v_err.mapv(|e| e * e).sum() * inv_n;
        if !v_loss.is_finite() {
            return Err(Error::divergence("value", "non-finite value loss"));
        }
        let (v_grads, _) = self.v.backward_tape(&v_tape, (&v_err * inv_n).insert_axis(Axis(1)).view())?;

        // Q toward r + γ(1 − d) V̄(s').
        let y = self.q_targets(&batch)?;
        let x = Self::q_input(&batch.states, &batch.actions);
        let mut q_losses = [0.0; 2];
        let mut q_grads = Vec::with_capacity(2);
        for (k, net) in [&self.q1, &self.q2].into_iter().enumerate() {
            let tape = net.forward_tape(x.clone())?;
            let err = &tape.output().column(0) - &y;
            q_losses[k] = 0.5 * err.mapv(|e| e * e).sum() * inv_n;
            if !q_losses[k].is_finite() {
                return Err(Error::divergence(format!("q{}", k + 1), "non-finite critic loss"));
            }
            q_grads.push(net.backward_tape(&tape, (&err * inv_n).insert_axis(Axis(1)).view())?.0);
        }

        let named = |name: &'static str| {
            move |e: Error| match e {
                Error::Divergence { detail, .. } => Error::divergence(name, detail),
                other => other,
            }
        };
        sgd_step(&mut self.v, &v_grads, self.cfg.critic_lr, Some(&mut self.opt_v)).map_err(named("value"))?;
        sgd_step(&mut self.q1, &q_grads[0], self.cfg.critic_lr, Some(&mut self.opt_q1)).map_err(named("q1"))?;
        sgd_step(&mut self.q2, &q_grads[1], self.cfg.critic_lr, Some(&mut self.opt_q2)).map_err(named("q2"))?;
        sgd_step(&mut self.policy, &policy_grads, self.cfg.actor_lr, Some(&mut self.opt_policy))
            .map_err(named("policy"))?;

        let entropy = -sample.log_prob.mean().unwrap_or(0.0);
        if self.cfg.auto_alpha {
            // J(α) = −log α · E[log π + H̄]; gradient w.r.t. log α.
            let g = entropy - self.target_entropy();
            let grads = Gradients { blocks: vec![vec![g]] };
            sgd_step(&mut self.log_alpha, &grads, self.cfg.alpha_lr, Some(&mut self.opt_alpha))
                .map_err(named("alpha"))?;
        }

        self.soft_update_targets()?;
        Ok(SacLosses {
            v_loss,
            q1_loss: q_losses[0],
            q2_loss: q_losses[1],
            policy_loss,
            alpha: self.alpha(),
            entropy,
        })
    }

    /// TD(0) regression of V on observed transitions, leaving the actor and critics untouched.
    pub fn update_value_only(&mut self, transitions: &[Transition]) -> Result<f64> {
        let batch = Batch::from_transitions(transitions)?;
        self.check_states(&batch.states)?;
        let inv_n = 1.0 / batch.states.nrows() as f64;
        let y = self.q_targets(&batch)?;
        let tape = self.v.forward_tape(batch.states.clone())?;
        let err = &tape.output().column(0) - &y;
        let loss = 0.5 * err.mapv(|e| e * e).sum() * inv_n;
        if !loss.is_finite() {
            return Err(Error::divergence("value", "non-finite value loss"));
        }
        let (grads, _) = self.v.backward_tape(&tape, (&err * inv_n).insert_axis(Axis(1)).view())?;
        sgd_step(&mut self.v, &grads, self.cfg.critic_lr, Some(&mut self.opt_v))
            .map_err(|_| Error::divergence("value", "non-finite gradient"))?;
        polyak_update(&mut self.v_target, &self.v, self.cfg.tau)?;
        Ok(loss)
    }

    fn soft_update_targets(&mut self) -> Result<()> {
        let tau = self.cfg.tau;
        polyak_update(&mut self.v_target, &self.v, tau)?;
        polyak_update(&mut self.q1_target, &self.q1, tau)?;
        polyak_update(&mut self.q2_target, &self.q2, tau)
    }

    pub fn checkpoint(&self) -> SacCheckpoint {
        SacCheckpoint {
            version: CHECKPOINT_VERSION,
            config: self.cfg.clone(),
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            action_low: (&self.action_center - &self.action_scale).to_vec(),
            action_high: (&self.action_center + &self.action_scale).to_vec(),
            policy: self.policy.clone(),
            q1: self.q1.clone(),
            q2: self.q2.clone(),
            q1_target: self.q1_target.clone(),
            q2_target: self.q2_target.clone(),
            v: self.v.clone(),
            v_target: self.v_target.clone(),
            log_alpha: self.log_alpha.0[0],
        }
    }

    pub fn from_checkpoint(ck: SacCheckpoint) -> Result<Self> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported actor-critic checkpoint version {}", ck.version)));
        }
        ck.config.validate()?;
        let (sd, ad) = (ck.state_dim, ck.action_dim);
        let congruent = ck.policy.input_dim() == sd
            && ck.policy.dim == ad
            && ck.q1.input_dim() == sd + ad
            && ck.q1.same_architecture(&ck.q1_target)
            && ck.q2.same_architecture(&ck.q2_target)
            && ck.q1.same_architecture(&ck.q2)
            && ck.v.input_dim() == sd
            && ck.v.same_architecture(&ck.v_target)
            && ck.action_low.len() == ad
            && ck.action_high.len() == ad;
        if !congruent {
            return Err(Error::Checkpoint("actor-critic networks are not congruent".into()));
        }
        let low = Array1::from(ck.action_low);
        let high = Array1::from(ck.action_high);
        let log_alpha = Scalar(vec![ck.log_alpha]);
        Ok(ActorCritic {
            action_center: (&high + &low) / 2.0,
            action_scale: (&high - &low) / 2.0,
            opt_policy: Adam::new(&ck.policy),
            opt_q1: Adam::new(&ck.q1),
            opt_q2: Adam::new(&ck.q2),
            opt_v: Adam::new(&ck.v),
            opt_alpha: Adam::new(&log_alpha),
            cfg: ck.config,
            state_dim: sd,
            action_dim: ad,
            policy: ck.policy,
            q1: ck.q1,
            q2: ck.q2,
            q1_target: ck.q1_target,
            q2_target: ck.q2_target,
            v: ck.v,
            v_target: ck.v_target,
            log_alpha,
        })
    }
}

impl ActionSource for ActorCritic {
    fn nominal_actions(&self, states: &Array2<f64>) -> Result<Array2<f64>> {
        self.mean_actions(states)
    }
}

impl TerminalValue for ActorCritic {
    fn values(&self, states: &Array2<f64>) -> Result<Array1<f64>> {
        self.target_values(states)
    }
}
