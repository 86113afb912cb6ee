//! Exact checks of the MPC suboptimality bound and the model-return gap bound
//! on small tabular MDPs.
//!
//! Everything here is exact dynamic programming or linear solves. Model error
//! `ε_f` is measured as the largest total-variation distance between matching
//! transition rows; value error `ε_V` as the sup-norm distance to `V*`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{argmax, random_distribution, solve_value_iteration, TabularMDP};
use crate::error::{Error, Result};

/// Largest `H·|S|²·|A|` backward induction will attempt.
pub const MAX_DP_WORK: usize = 50_000_000;
const VI_TOL: f64 = 1e-13;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundScenario {
    pub mdp: TabularMDP,
    pub epsilon_f: f64,
    pub epsilon_v: f64,
    pub horizon: usize,
    #[serde(default)]
    pub epsilon_pi: f64,
    pub seed: u64,
}

impl BoundScenario {
    pub fn validate(&self) -> Result<()> {
        self.mdp.validate()?;
        if !(0.0..=1.0).contains(&self.epsilon_f) {
            return Err(Error::contract("epsilon_f must lie in [0, 1]"));
        }
        if !(self.epsilon_v >= 0.0) || !(self.epsilon_pi >= 0.0) {
            return Err(Error::contract("epsilon_v and epsilon_pi must be nonnegative"));
        }
        if self.horizon == 0 {
            return Err(Error::contract("horizon must be at least 1"));
        }
        Ok(())
    }
}

/// Ranges for [`random_scenario`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioLimits {
    pub min_states: usize,
    pub max_states: usize,
    pub min_actions: usize,
    pub max_actions: usize,
    pub max_horizon: usize,
    pub gammas: Vec<f64>,
    pub max_epsilon_f: f64,
    pub max_epsilon_v: f64,
    pub max_epsilon_pi: f64,
}

impl Default for ScenarioLimits {
    fn default() -> Self {
        ScenarioLimits {
            min_states: 2,
            max_states: 8,
            min_actions: 2,
            max_actions: 4,
            max_horizon: 4,
            gammas: vec![0.9, 0.95, 0.99],
            max_epsilon_f: 0.2,
            max_epsilon_v: 0.5,
            max_epsilon_pi: 0.2,
        }
    }
}

/// Scenario drawn from `seed` alone: Dirichlet rows, rewards in `[-1, 1]`,
/// uniform sizes, horizon and error levels within `limits`.
pub fn random_scenario(seed: u64, limits: &ScenarioLimits) -> Result<BoundScenario> {
    if limits.gammas.is_empty() || limits.min_states > limits.max_states || limits.min_actions > limits.max_actions {
        return Err(Error::Config("invalid scenario limits".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_states = rng.random_range(limits.min_states..=limits.max_states);
    let n_actions = rng.random_range(limits.min_actions..=limits.max_actions);
    let gamma = limits.gammas[rng.random_range(0..limits.gammas.len())];
    let horizon = rng.random_range(1..=limits.max_horizon.max(1));
    let mdp = TabularMDP::random(n_states, n_actions, gamma, &mut rng)?;
    Ok(BoundScenario {
        mdp,
        epsilon_f: rng.random_range(0.0..=limits.max_epsilon_f),
        epsilon_v: rng.random_range(0.0..=limits.max_epsilon_v),
        horizon,
        epsilon_pi: rng.random_range(0.0..=limits.max_epsilon_pi),
        seed,
    })
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Largest row-wise TV distance between two MDPs on the same spaces.
pub fn max_row_tv(a: &TabularMDP, b: &TabularMDP) -> Result<f64> {
    same_spaces(a, b)?;
    let mut worst = 0.0f64;
    for s in 0..a.n_states {
        for act in 0..a.n_actions {
            worst = worst.max(total_variation(a.p(s, act), b.p(s, act)));
        }
    }
    Ok(worst)
}

fn same_spaces(a: &TabularMDP, b: &TabularMDP) -> Result<()> {
    if a.n_states != b.n_states || a.n_actions != b.n_actions {
        return Err(Error::contract("MDPs do not share state and action spaces"));
    }
    Ok(())
}

/// `(1 − ε)·p + ε·q`, renormalized against rounding.
fn mix_row(p: &[f64], q: &[f64], eps: f64) -> Vec<f64> {
    let mut row: Vec<f64> = p.iter().zip(q).map(|(a, b)| (1.0 - eps) * a + eps * b).collect();
    let residue = 1.0 - row.iter().sum::<f64>();
    let (imax, _) = argmax(&row);
    row[imax] += residue;
    row
}

/// Mixes every row toward the matching row of `targets`, which must hold distributions.
pub fn perturb_toward(mdp: &TabularMDP, epsilon_f: f64, targets: &[Vec<f64>]) -> Result<(TabularMDP, f64)> {
    if !(0.0..=1.0).contains(&epsilon_f) {
        return Err(Error::contract("epsilon_f must lie in [0, 1]"));
    }
    if targets.len() != mdp.n_states * mdp.n_actions || targets.iter().any(|t| t.len() != mdp.n_states) {
        return Err(Error::contract("one target row per (s, a) is required"));
    }
    let mut out = mdp.clone();
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let row = mix_row(mdp.p(s, a), &targets[s * mdp.n_actions + a], epsilon_f);
            out.p_mut(s, a).copy_from_slice(&row);
        }
    }
    out.validate()?;
    let tv = max_row_tv(mdp, &out)?;
    Ok((out, tv))
}

/// Mixes every row with a random distribution at weight `epsilon_f`, so each
/// row moves by at most `epsilon_f` in TV. Returns the measured max TV.
pub fn perturb_model<R: Rng + ?Sized>(mdp: &TabularMDP, epsilon_f: f64, rng: &mut R) -> Result<(TabularMDP, f64)> {
    if epsilon_f == 0.0 {
        return Ok((mdp.clone(), 0.0));
    }
    let targets: Vec<Vec<f64>> = (0..mdp.n_states * mdp.n_actions)
        .map(|_| random_distribution(mdp.n_states, rng))
        .collect();
    perturb_toward(mdp, epsilon_f, &targets)
}

/// `V + U[−ε_V, ε_V]` per state, with the measured sup-norm error.
pub fn inject_value_error<R: Rng + ?Sized>(v: &[f64], epsilon_v: f64, rng: &mut R) -> (Vec<f64>, f64) {
    if epsilon_v == 0.0 {
        return (v.to_vec(), 0.0);
    }
    let noisy: Vec<f64> = v.iter().map(|x| x + rng.random_range(-epsilon_v..=epsilon_v)).collect();
    let err = noisy.iter().zip(v).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    (noisy, err)
}

/// First action of the exact `H`-step optimization on `model` with terminal
/// value `v_hat`, for every state. Ties go to the lowest action index.
pub fn mpc_policy(model: &TabularMDP, v_hat: &[f64], horizon: usize) -> Result<Vec<usize>> {
    if horizon == 0 {
        return Err(Error::contract("horizon must be at least 1"));
    }
    if v_hat.len() != model.n_states {
        return Err(Error::contract("terminal value does not match the MDP"));
    }
    let work = horizon
        .saturating_mul(model.n_states)
        .saturating_mul(model.n_states)
        .saturating_mul(model.n_actions);
    if work > MAX_DP_WORK {
        return Err(Error::ScenarioSize(format!(
            "backward induction needs {work} operations, limit is {MAX_DP_WORK}"
        )));
    }
    let mut w = v_hat.to_vec();
    let mut first = vec![0; model.n_states];
    for _ in 0..horizon {
        let (next, policy) = model.bellman_backup(&w);
        w = next;
        first = policy;
    }
    Ok(first)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcValue {
    /// Uniform-start expected return.
    pub j: f64,
    pub per_state: Vec<f64>,
    pub policy: Vec<usize>,
}

/// True value of the stationary MPC policy planned on `mdp_model`.
pub fn mpc_policy_value(mdp_true: &TabularMDP, mdp_model: &TabularMDP, v_hat: &[f64], horizon: usize) -> Result<MpcValue> {
    same_spaces(mdp_true, mdp_model)?;
    let policy = mpc_policy(mdp_model, v_hat, horizon)?;
    let per_state = mdp_true.evaluate_policy(&policy)?;
    Ok(MpcValue {
        j: mean(&per_state),
        per_state,
        policy,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `2γ^H ε_V / (1 − γ^H) + r_max (1 − γ^H)/(1 − γ) · ε_f`.
pub fn bound_eq2(gamma: f64, horizon: usize, epsilon_v: f64, epsilon_f: f64, r_max: f64) -> f64 {
    let gh = gamma.powi(horizon as i32);
    2.0 * gh * epsilon_v / (1.0 - gh) + r_max * (1.0 - gh) / (1.0 - gamma) * epsilon_f
}

/// The infinite-horizon limit `r_max ε_f / (1 − γ)`.
pub fn bound_eq3(gamma: f64, epsilon_f: f64, r_max: f64) -> f64 {
    r_max * epsilon_f / (1.0 - gamma)
}

/// Lower bound on `J(π) − Ĵ(π)`, as printed:
/// `−[2γ r_max (ε_f + 2ε_π)/(1 − γ²) + 4 r_max ε_π/(1 − γ)]`.
pub fn lemma2_bound(gamma: f64, r_max: f64, epsilon_f: f64, epsilon_pi: f64) -> f64 {
    -(2.0 * gamma * r_max * (epsilon_f + 2.0 * epsilon_pi) / (1.0 - gamma * gamma)
        + 4.0 * r_max * epsilon_pi / (1.0 - gamma))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub seed: u64,
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub horizon: usize,
    /// Measured max row TV between the model and the true MDP.
    pub epsilon_f: f64,
    /// Measured sup-norm terminal value error.
    pub epsilon_v: f64,
    pub r_max: f64,
    pub j_star: f64,
    pub j_mpc: f64,
    pub gap: f64,
    pub per_state_gap: Vec<f64>,
    pub bound_eq2: f64,
    pub bound_eq3: f64,
    pub satisfied: bool,
}

/// Builds the perturbed model and value from the scenario seed, plans, and compares.
pub fn check_theorem1(scenario: &BoundScenario) -> Result<Theorem1Report> {
    scenario.validate()?;
    let mdp = &scenario.mdp;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let (model, eps_f) = perturb_model(mdp, scenario.epsilon_f, &mut rng)?;
    let (v_star, pi_star) = solve_value_iteration(mdp, VI_TOL)?;
    let (v_hat, eps_v) = inject_value_error(&v_star, scenario.epsilon_v, &mut rng);
    let v_opt = mdp.evaluate_policy(&pi_star)?;
    let mpc = mpc_policy_value(mdp, &model, &v_hat, scenario.horizon)?;
    let j_star = mean(&v_opt);
    let gap = j_star - mpc.j;
    let b2 = bound_eq2(mdp.gamma, scenario.horizon, eps_v, eps_f, mdp.r_max);
    Ok(Theorem1Report {
        seed: scenario.seed,
        n_states: mdp.n_states,
        n_actions: mdp.n_actions,
        gamma: mdp.gamma,
        horizon: scenario.horizon,
        epsilon_f: eps_f,
        epsilon_v: eps_v,
        r_max: mdp.r_max,
        j_star,
        j_mpc: mpc.j,
        gap,
        per_state_gap: v_opt.iter().zip(&mpc.per_state).map(|(a, b)| a - b).collect(),
        bound_eq2: b2,
        bound_eq3: bound_eq3(mdp.gamma, eps_f, mdp.r_max),
        satisfied: gap <= b2 + 1e-9,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Report {
    pub j_true: f64,
    pub j_model: f64,
    pub gap: f64,
    pub epsilon_f: f64,
    pub epsilon_pi: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Evaluates `policy` exactly on both MDPs and compares the gap with the lower bound.
pub fn measure_lemma2_gap(
    true_mdp: &TabularMDP,
    model_mdp: &TabularMDP,
    policy: &[Vec<f64>],
    epsilon_pi: f64,
) -> Result<Lemma2Report> {
    same_spaces(true_mdp, model_mdp)?;
    if (true_mdp.gamma - model_mdp.gamma).abs() > 0.0 {
        return Err(Error::contract("MDPs must share the discount"));
    }
    let j_true = mean(&true_mdp.evaluate_stochastic_policy(policy)?);
    let j_model = mean(&model_mdp.evaluate_stochastic_policy(policy)?);
    let eps_f = max_row_tv(true_mdp, model_mdp)?;
    let r_max = true_mdp.r_max.max(model_mdp.r_max);
    let bound = lemma2_bound(true_mdp.gamma, r_max, eps_f, epsilon_pi);
    let gap = j_true - j_model;
    Ok(Lemma2Report {
        j_true,
        j_model,
        gap,
        epsilon_f: eps_f,
        epsilon_pi,
        bound,
        holds: gap >= bound - 1e-9,
    })
}

/// Return-gap check on a scenario: perturbed model, random stochastic policy, scenario `ε_π`.
pub fn check_lemma2(scenario: &BoundScenario) -> Result<Lemma2Report> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed ^ 0x9e37_79b9_7f4a_7c15);
    let (model, _) = perturb_model(&scenario.mdp, scenario.epsilon_f, &mut rng)?;
    let policy: Vec<Vec<f64>> = (0..scenario.mdp.n_states)
        .map(|_| random_distribution(scenario.mdp.n_actions, &mut rng))
        .collect();
    measure_lemma2_gap(&scenario.mdp, &model, &policy, scenario.epsilon_pi)
}

/// Checks every scenario in parallel, preserving order.
pub fn sweep(scenarios: &[BoundScenario]) -> Result<Vec<Theorem1Report>> {
    scenarios.par_iter().map(check_theorem1).collect()
}

pub fn generate_scenarios(count: usize, base_seed: u64, limits: &ScenarioLimits) -> Result<Vec<BoundScenario>> {
    (0..count as u64).map(|i| random_scenario(base_seed + i, limits)).collect()
}

pub fn read_scenarios(path: &Path) -> Result<Vec<BoundScenario>> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn write_scenarios(path: &Path, scenarios: &[BoundScenario]) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(scenarios)?)?;
    Ok(())
}

/// CSV report; the `epsilon_f_tv` header marks the total-variation reading of model error.
pub fn write_report(path: &Path, reports: &[Theorem1Report]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "seed",
        "n_states",
        "n_actions",
        "gamma",
        "horizon",
        "epsilon_f_tv",
        "epsilon_v",
        "gap",
        "bound_eq2",
        "bound_eq3",
        "satisfied",
    ])?;
    for r in reports {
        w.write_record([
            r.seed.to_string(),
            r.n_states.to_string(),
            r.n_actions.to_string(),
            r.gamma.to_string(),
            r.horizon.to_string(),
            r.epsilon_f.to_string(),
            r.epsilon_v.to_string(),
            r.gap.to_string(),
            r.bound_eq2.to_string(),
            r.bound_eq3.to_string(),
            r.satisfied.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-loop expectimax over the full `H`-step tree, no memoization.
    fn expectimax(m: &TabularMDP, v_hat: &[f64], s: usize, depth: usize) -> (f64, usize) {
        if depth == 0 {
            return (v_hat[s], 0);
        }
        let mut best = (f64::NEG_INFINITY, 0);
        for a in 0..m.n_actions {
            let mut q = m.r(s, a);
            for (s2, p) in m.p(s, a).iter().enumerate() {
                if *p > 0.0 {
                    q += m.gamma * p * expectimax(m, v_hat, s2, depth - 1).0;
                }
            }
            if q > best.0 {
                best = (q, a);
            }
        }
        best
    }

    /// Open-loop enumeration of every action sequence on a deterministic MDP.
    fn best_sequence(m: &TabularMDP, v_hat: &[f64], s0: usize, h: usize) -> usize {
        let total = m.n_actions.pow(h as u32);
        let mut best = (f64::NEG_INFINITY, 0);
        for code in 0..total {
            let (mut s, mut c, mut ret, mut disc) = (s0, code, 0.0, 1.0);
            let mut first = 0;
            for t in 0..h {
                let a = c % m.n_actions;
                c /= m.n_actions;
                if t == 0 {
                    first = a;
                }
                ret += disc * m.r(s, a);
                disc *= m.gamma;
                s = m.p(s, a).iter().position(|&p| p == 1.0).unwrap();
            }
            ret += disc * v_hat[s];
            if ret > best.0 {
                best = (ret, first);
            }
        }
        best.1
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let m = TabularMDP::random(5, 3, 0.9, &mut rng(1)).unwrap();
        let (p, tv) = perturb_model(&m, 0.0, &mut rng(2)).unwrap();
        assert_eq!(p, m);
        assert_eq!(tv, 0.0);
    }

    #[test]
    fn point_mass_mixing_tv_is_exact() {
        let m = TabularMDP::random(4, 2, 0.9, &mut rng(3)).unwrap();
        let j = 2;
        let targets: Vec<Vec<f64>> = (0..8).map(|_| (0..4).map(|k| if k == j { 1.0 } else { 0.0 }).collect()).collect();
        for eps in [0.3, 1.0] {
            let (p, _) = perturb_toward(&m, eps, &targets).unwrap();
            for s in 0..4 {
                for a in 0..2 {
                    let tv = total_variation(m.p(s, a), p.p(s, a));
                    assert!((tv - eps * (1.0 - m.p(s, a)[j])).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn measured_tv_respects_budget() {
        for seed in 0..100 {
            let m = TabularMDP::random(6, 3, 0.95, &mut rng(seed)).unwrap();
            let (p, tv) = perturb_model(&m, 0.1, &mut rng(seed + 1000)).unwrap();
            assert!(tv <= 0.1 + 1e-12);
            assert_eq!(tv, max_row_tv(&m, &p).unwrap());
        }
    }

    #[test]
    fn exact_model_and_value_are_optimal_at_every_horizon() {
        for seed in 0..20 {
            let m = TabularMDP::random(6, 3, 0.9, &mut rng(seed)).unwrap();
            let (v, pi) = solve_value_iteration(&m, VI_TOL).unwrap();
            let j_star = mean(&m.evaluate_policy(&pi).unwrap());
            for h in 1..=5 {
                let mpc = mpc_policy_value(&m, &m, &v, h).unwrap();
                assert!((j_star - mpc.j).abs() <= 1e-9);
            }
            assert_eq!(mpc_policy(&m, &v, 1).unwrap(), pi);
        }
    }

    #[test]
    fn zero_reward_mdp_has_zero_value() {
        let mut m = TabularMDP::random(4, 2, 0.9, &mut rng(4)).unwrap();
        m.rewards.iter_mut().for_each(|r| *r = 0.0);
        m.r_max = 0.0;
        let (p, _) = perturb_model(&m, 0.2, &mut rng(5)).unwrap();
        let v_hat = vec![0.3, -0.1, 0.2, 0.0];
        for h in 1..4 {
            assert_eq!(mpc_policy_value(&m, &p, &v_hat, h).unwrap().j, 0.0);
        }
    }

    #[test]
    fn backward_induction_matches_expectimax() {
        let m = TabularMDP::random(4, 3, 0.9, &mut rng(6)).unwrap();
        let (v, _) = solve_value_iteration(&m, VI_TOL).unwrap();
        let (v_hat, _) = inject_value_error(&v, 0.2, &mut rng(7));
        let policy = mpc_policy(&m, &v_hat, 3).unwrap();
        for s in 0..4 {
            assert_eq!(policy[s], expectimax(&m, &v_hat, s, 3).1);
        }
    }

    #[test]
    fn deterministic_mdp_matches_sequence_enumeration() {
        let mut r = rng(8);
        let (n, k) = (4, 3);
        let mut transitions = Vec::new();
        for _ in 0..n * k {
            let target = r.random_range(0..n);
            transitions.extend((0..n).map(|s| if s == target { 1.0 } else { 0.0 }));
        }
        let rewards = (0..n * k).map(|_| r.random_range(-1.0..1.0)).collect();
        let m = TabularMDP::new(n, k, transitions, rewards, 0.9).unwrap();
        let (v, pi_star) = solve_value_iteration(&m, VI_TOL).unwrap();
        let (v_hat, _) = inject_value_error(&v, 0.2, &mut r);
        let mpc = mpc_policy_value(&m, &m, &v_hat, 3).unwrap();
        for s in 0..n {
            assert_eq!(mpc.policy[s], best_sequence(&m, &v_hat, s, 3));
        }
        let gap = mean(&m.evaluate_policy(&pi_star).unwrap()) - mpc.j;
        assert!(gap >= -1e-9);
    }

    #[test]
    fn worked_bound_value() {
        let b = bound_eq2(0.99, 5, 0.1, 0.01, 1.0);
        assert!((b - 3.930).abs() < 5e-4, "{b}");
        let first = bound_eq2(0.99, 5, 0.1, 0.0, 1.0);
        assert!((first - 3.881).abs() < 5e-4);
    }

    #[test]
    fn bound_terms_are_monotone_and_converge() {
        let mut prev = bound_eq2(0.95, 3, 0.0, 0.1, 1.0);
        for i in 1..20 {
            let b = bound_eq2(0.95, 3, 0.05 * i as f64, 0.1, 1.0);
            assert!(b > prev);
            prev = b;
        }
        let mut prev = bound_eq2(0.95, 3, 0.1, 0.0, 1.0);
        for i in 1..20 {
            let b = bound_eq2(0.95, 3, 0.1, 0.01 * i as f64, 1.0);
            assert!(b > prev);
            prev = b;
        }
        let long = bound_eq2(0.99, 500, 0.0, 0.05, 1.0);
        let limit = bound_eq3(0.99, 0.05, 1.0);
        assert!((long - limit).abs() / limit <= 0.01);
    }

    #[test]
    fn zero_error_corner() {
        let mut s = random_scenario(11, &ScenarioLimits::default()).unwrap();
        s.epsilon_f = 0.0;
        s.epsilon_v = 0.0;
        let r = check_theorem1(&s).unwrap();
        assert!(r.gap.abs() <= 1e-9);
        assert!(r.satisfied);
    }

    #[test]
    fn lemma2_collapses_without_error() {
        assert_eq!(lemma2_bound(0.9, 1.0, 0.0, 0.0), 0.0);
        let m = TabularMDP::random(5, 2, 0.9, &mut rng(12)).unwrap();
        let pi: Vec<Vec<f64>> = (0..5).map(|_| random_distribution(2, &mut rng(13))).collect();
        let r = measure_lemma2_gap(&m, &m, &pi, 0.0).unwrap();
        assert_eq!(r.gap, 0.0);
        assert!(r.holds);
    }

    #[test]
    fn oversized_horizon_is_rejected() {
        let m = TabularMDP::random(3, 2, 0.9, &mut rng(14)).unwrap();
        let v = vec![0.0; 3];
        assert!(matches!(mpc_policy(&m, &v, MAX_DP_WORK), Err(Error::ScenarioSize(_))));
    }

    #[test]
    fn scenario_json_and_report_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let scenarios = generate_scenarios(3, 0, &ScenarioLimits::default()).unwrap();
        let path = dir.path().join("s.json");
        write_scenarios(&path, &scenarios).unwrap();
        assert_eq!(read_scenarios(&path).unwrap(), scenarios);
        let reports = sweep(&scenarios).unwrap();
        let out = dir.path().join("r.csv");
        write_report(&out, &reports).unwrap();
        let text = std::fs::read_to_string(out).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("seed,n_states,n_actions,gamma,horizon,epsilon_f_tv"));
    }
}
