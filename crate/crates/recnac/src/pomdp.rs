//! Finite POMDP model, histories, trajectory sampling, and behavior policies.
//!
//! A POMDP here is a tuple `(S, Y, A, P, phi, r, mu)` with finite state,
//! observation, and action spaces. The agent never sees `S_t`; it acts on the
//! open history `Z_t = (Y_0, A_0, ..., A_{t-1}, Y_t)` and extends it to the
//! closed history `Zbar_t = (Z_t, A_t)` once an action is chosen. Policies are
//! non-stationary maps from `(t, Z_t)` to action distributions.
//!
//! Sampling uses a counter-seeded ChaCha stream with a fixed draw pattern
//! (one initial state draw, then observation/action/next-state per step), so
//! trajectories are reproducible from `(pomdp, policy, len, seed)` alone.

use crate::error::{Error, Result};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Tolerance for validating that kernel rows are probability distributions.
pub const PROB_TOL: f64 = 1e-9;

/// Finite POMDP with dense kernels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Pomdp {
    pub n_states: usize,
    pub n_obs: usize,
    pub n_actions: usize,
    /// `transition[s][a][s2] = P(s2 | s, a)`.
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `obs_kernel[s][y] = phi(y | s)`.
    pub obs_kernel: Vec<Vec<f64>>,
    /// `reward[s][a]`, bounded by `r_inf` in absolute value.
    pub reward: Vec<Vec<f64>>,
    /// Initial state distribution `mu`.
    pub init_dist: Vec<f64>,
    /// Upper bound on `|reward|`; recorded so truncation tails are certified.
    pub r_inf: f64,
    /// Seed used by [`random_pomdp`]; 0 for hand-built instances.
    pub seed: u64,
}

impl Pomdp {
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_obs == 0 || self.n_actions == 0 {
            return Err(Error::InvalidArgument("POMDP dimensions must be positive".into()));
        }
        if self.transition.len() != self.n_states
            || self.obs_kernel.len() != self.n_states
            || self.reward.len() != self.n_states
            || self.init_dist.len() != self.n_states
        {
            return Err(Error::InvalidArgument("POMDP table shape mismatch".into()));
        }
        for s in 0..self.n_states {
            if self.transition[s].len() != self.n_actions || self.reward[s].len() != self.n_actions {
                return Err(Error::InvalidArgument("POMDP table shape mismatch".into()));
            }
            for a in 0..self.n_actions {
                check_dist(&self.transition[s][a], self.n_states, "transition row")?;
                if self.reward[s][a].abs() > self.r_inf + PROB_TOL {
                    return Err(Error::InvalidArgument(format!(
                        "reward[{s}][{a}] exceeds recorded r_inf"
                    )));
                }
            }
            check_dist(&self.obs_kernel[s], self.n_obs, "observation row")?;
        }
        check_dist(&self.init_dist, self.n_states, "initial distribution")?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let pomdp: Pomdp = serde_json::from_str(&text)?;
        pomdp.validate()?;
        Ok(pomdp)
    }
}

fn check_dist(row: &[f64], len: usize, what: &str) -> Result<()> {
    if row.len() != len {
        return Err(Error::InvalidArgument(format!("{what} has wrong length")));
    }
    let mut sum = 0.0;
    for &p in row {
        if !(p >= 0.0) {
            return Err(Error::InvalidArgument(format!("{what} has a negative entry")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidArgument(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

/// Draws a random POMDP: transition and observation rows are i.i.d. positive
/// entries normalized to sum 1, rewards are Uniform[0,1], and the initial
/// distribution is a normalized positive row. Draw order is fixed (transition
/// rows by (s, a), observation rows by s, rewards by (s, a), then `mu`), so
/// instances are reproducible from the seed.
pub fn random_pomdp(n_states: usize, n_obs: usize, n_actions: usize, seed: u64) -> Result<Pomdp> {
    if n_states == 0 || n_obs == 0 || n_actions == 0 {
        return Err(Error::InvalidArgument("POMDP dimensions must be positive".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    // (0, 1] draws keep every branch reachable.
    let positive = |rng: &mut ChaCha12Rng| 1.0 - rng.random::<f64>();
    let row = |rng: &mut ChaCha12Rng, len: usize| {
        let mut v: Vec<f64> = (0..len).map(|_| positive(rng)).collect();
        let sum: f64 = v.iter().sum();
        v.iter_mut().for_each(|p| *p /= sum);
        v
    };

    let transition: Vec<Vec<Vec<f64>>> = (0..n_states)
        .map(|_| (0..n_actions).map(|_| row(&mut rng, n_states)).collect())
        .collect();
    let obs_kernel: Vec<Vec<f64>> = (0..n_states).map(|_| row(&mut rng, n_obs)).collect();
    let reward: Vec<Vec<f64>> = (0..n_states)
        .map(|_| (0..n_actions).map(|_| rng.random::<f64>()).collect())
        .collect();
    let init_dist = row(&mut rng, n_states);

    let r_inf = reward
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0_f64, |acc, &x| acc.max(x.abs()));
    let pomdp = Pomdp {
        n_states,
        n_obs,
        n_actions,
        transition,
        obs_kernel,
        reward,
        init_dist,
        r_inf,
        seed,
    };
    pomdp.validate()?;
    Ok(pomdp)
}

/// Observed history. Open histories satisfy `obs.len() == actions.len() + 1`
/// (the agent has just observed and must act); closed histories satisfy
/// `obs.len() == actions.len()` (the step's action is chosen).
///
/// `rewards` mirrors `actions` and exists solely for reward-reading policies
/// such as [`EpsilonGreedyPolicy`]; entries are NaN in contexts where realized
/// rewards are not part of the conditioning (see [`crate::oracle`]).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub obs: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_open(&self) -> bool {
        self.obs.len() == self.actions.len() + 1
    }

    pub fn is_closed(&self) -> bool {
        !self.obs.is_empty() && self.obs.len() == self.actions.len()
    }

    /// Time index of an open history: `t` such that `Y_t` was just observed.
    pub fn t(&self) -> usize {
        debug_assert!(self.is_open());
        self.obs.len() - 1
    }

    /// Number of completed (observation, action) pairs.
    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    pub fn push_obs(&mut self, y: usize) {
        debug_assert_eq!(self.obs.len(), self.actions.len(), "push_obs on an open history");
        self.obs.push(y);
    }

    /// Closes the current step. `reward` may be NaN when unknown.
    pub fn push_action(&mut self, a: usize, reward: f64) {
        debug_assert!(self.is_open(), "push_action on a closed history");
        self.actions.push(a);
        self.rewards.push(reward);
    }

    pub fn pop_action(&mut self) {
        self.actions.pop();
        self.rewards.pop();
    }

    pub fn pop_obs(&mut self) {
        debug_assert!(self.is_open());
        self.obs.pop();
    }
}

/// A sampled rollout; all vectors have the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub obs: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Open history at step `t`: observations through `Y_t`, actions and
    /// rewards through step `t - 1`.
    pub fn open_history(&self, t: usize) -> History {
        History {
            obs: self.obs[..=t].to_vec(),
            actions: self.actions[..t].to_vec(),
            rewards: self.rewards[..t].to_vec(),
        }
    }

    /// Closed history over the first `len` steps.
    pub fn closed_history(&self, len: usize) -> History {
        History {
            obs: self.obs[..len].to_vec(),
            actions: self.actions[..len].to_vec(),
            rewards: self.rewards[..len].to_vec(),
        }
    }

    /// Writes columns `t,s,y,a,r`.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        wtr.write_record(["t", "s", "y", "a", "r"])?;
        for t in 0..self.len() {
            wtr.write_record(&[
                t.to_string(),
                self.states[t].to_string(),
                self.obs[t].to_string(),
                self.actions[t].to_string(),
                self.rewards[t].to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut out = Trajectory { states: vec![], obs: vec![], actions: vec![], rewards: vec![] };
        for rec in rdr.records() {
            let rec = rec?;
            let field = |i: usize| -> Result<&str> {
                rec.get(i).ok_or_else(|| Error::InvalidArgument("short trajectory row".into()))
            };
            out.states.push(parse_num(field(1)?)?);
            out.obs.push(parse_num(field(2)?)?);
            out.actions.push(parse_num(field(3)?)?);
            out.rewards.push(
                field(4)?
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("bad reward field: {e}")))?,
            );
        }
        Ok(out)
    }
}

fn parse_num(s: &str) -> Result<usize> {
    s.parse::<usize>().map_err(|e| Error::InvalidArgument(format!("bad index field: {e}")))
}

/// Non-stationary policy over open histories.
///
/// Implementations must be stateless or hold only per-trajectory caches that
/// [`Policy::begin_trajectory`] resets; `probs` must be a pure function of
/// `(t, history)` between resets.
pub trait Policy {
    /// Action distribution at step `t`; `history` must be open with `t()==t`.
    fn probs(&mut self, t: usize, history: &History) -> Result<Vec<f64>>;

    /// Resets per-trajectory caches.
    fn begin_trajectory(&mut self) {}

    /// `Some(distribution)` when the policy depends on `t` alone; lets exact
    /// evaluation use backward induction instead of history enumeration.
    fn time_marginals(&self, _t: usize) -> Option<Vec<f64>> {
        None
    }

    /// True when `probs` reads `history.rewards`.
    fn uses_rewards(&self) -> bool {
        false
    }
}

/// Uniform distribution over actions at every step.
#[derive(Debug, Clone)]
pub struct UniformPolicy {
    pub n_actions: usize,
}

impl UniformPolicy {
    pub fn new(n_actions: usize) -> Self {
        UniformPolicy { n_actions }
    }
}

impl Policy for UniformPolicy {
    fn probs(&mut self, _t: usize, _history: &History) -> Result<Vec<f64>> {
        Ok(vec![1.0 / self.n_actions as f64; self.n_actions])
    }

    fn time_marginals(&self, _t: usize) -> Option<Vec<f64>> {
        Some(vec![1.0 / self.n_actions as f64; self.n_actions])
    }
}

/// Deterministic policy that plays `seq[t mod seq.len()]` at step `t`.
#[derive(Debug, Clone)]
pub struct FixedSequencePolicy {
    pub seq: Vec<usize>,
    pub n_actions: usize,
}

impl FixedSequencePolicy {
    pub fn new(seq: Vec<usize>, n_actions: usize) -> Result<Self> {
        if seq.is_empty() {
            return Err(Error::InvalidArgument("action sequence must be non-empty".into()));
        }
        if seq.iter().any(|&a| a >= n_actions) {
            return Err(Error::InvalidArgument(format!(
                "action sequence entries must be below {n_actions}"
            )));
        }
        Ok(FixedSequencePolicy { seq, n_actions })
    }

    fn one_hot(&self, t: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.n_actions];
        p[self.seq[t % self.seq.len()]] = 1.0;
        p
    }
}

impl Policy for FixedSequencePolicy {
    fn probs(&mut self, t: usize, _history: &History) -> Result<Vec<f64>> {
        Ok(self.one_hot(t))
    }

    fn time_marginals(&self, t: usize) -> Option<Vec<f64>> {
        Some(self.one_hot(t))
    }
}

/// Exploration probability `min{(2 + t) / 10, p_exp}` at step `t`.
pub fn exploration_prob(t: usize, p_exp: f64) -> f64 {
    ((2 + t) as f64 / 10.0).min(p_exp)
}

/// Epsilon-greedy over past realized rewards: with the exploration
/// probability the action is uniform; otherwise it replays the action taken
/// at the earliest maximum-reward step. Step 0 is uniform (no history).
/// Smaller `p_exp` caps exploration earlier, which makes the exploited action
/// depend on older steps, a long-term dependency knob.
#[derive(Debug, Clone)]
pub struct EpsilonGreedyPolicy {
    pub n_actions: usize,
    pub p_exp: f64,
}

impl EpsilonGreedyPolicy {
    pub fn new(n_actions: usize, p_exp: f64) -> Result<Self> {
        if n_actions == 0 {
            return Err(Error::InvalidArgument("need at least one action".into()));
        }
        if !(0.0..=1.0).contains(&p_exp) {
            return Err(Error::InvalidArgument("p_exp must lie in [0, 1]".into()));
        }
        Ok(EpsilonGreedyPolicy { n_actions, p_exp })
    }

    /// Earliest index of the maximum entry.
    fn best_step(rewards: &[f64]) -> Result<usize> {
        let mut best = 0usize;
        for (j, &r) in rewards.iter().enumerate() {
            if r.is_nan() {
                return Err(Error::InvalidArgument(
                    "epsilon-greedy policy requires a realized reward trace".into(),
                ));
            }
            if r > rewards[best] {
                best = j;
            }
        }
        Ok(best)
    }
}

impl Policy for EpsilonGreedyPolicy {
    fn probs(&mut self, t: usize, history: &History) -> Result<Vec<f64>> {
        let n = self.n_actions as f64;
        if t == 0 {
            return Ok(vec![1.0 / n; self.n_actions]);
        }
        if history.rewards.len() < t || history.actions.len() < t {
            return Err(Error::InvalidArgument(format!(
                "epsilon-greedy at t={t} needs {t} past steps, history has {}",
                history.rewards.len()
            )));
        }
        let p = exploration_prob(t, self.p_exp);
        let j = Self::best_step(&history.rewards[..t])?;
        let exploit = history.actions[j];
        let mut probs = vec![p / n; self.n_actions];
        probs[exploit] += 1.0 - p;
        Ok(probs)
    }

    fn uses_rewards(&self) -> bool {
        true
    }
}

/// Validates a policy output: correct arity, nonnegative, sums to 1.
pub fn check_probs(probs: &[f64], n_actions: usize) -> Result<()> {
    if probs.len() != n_actions {
        return Err(Error::InvalidArgument("policy output has wrong arity".into()));
    }
    let mut sum = 0.0;
    for &p in probs {
        if !(p >= -PROB_TOL) {
            return Err(Error::InvalidArgument("policy output has a negative entry".into()));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidArgument(format!("policy output sums to {sum}")));
    }
    Ok(())
}

/// Inverse-CDF draw from a distribution using a single uniform.
pub(crate) fn draw_categorical(rng: &mut ChaCha12Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Samples `(S_t, Y_t, A_t, R_t)` for `t = 0..len`. The policy sees the open
/// history (with realized rewards) at each step; actions are drawn by the
/// sampler from the returned distribution.
pub fn sample_trajectory(
    pomdp: &Pomdp,
    policy: &mut dyn Policy,
    len: usize,
    seed: u64,
) -> Result<Trajectory> {
    if len == 0 {
        return Err(Error::InvalidArgument("trajectory length must be positive".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    policy.begin_trajectory();
    let mut history = History::new();
    let mut traj = Trajectory {
        states: Vec::with_capacity(len),
        obs: Vec::with_capacity(len),
        actions: Vec::with_capacity(len),
        rewards: Vec::with_capacity(len),
    };
    let mut s = draw_categorical(&mut rng, &pomdp.init_dist);
    for t in 0..len {
        let y = draw_categorical(&mut rng, &pomdp.obs_kernel[s]);
        history.push_obs(y);
        let probs = policy.probs(t, &history)?;
        check_probs(&probs, pomdp.n_actions)?;
        let a = draw_categorical(&mut rng, &probs);
        let r = pomdp.reward[s][a];
        history.push_action(a, r);
        traj.states.push(s);
        traj.obs.push(y);
        traj.actions.push(a);
        traj.rewards.push(r);
        s = draw_categorical(&mut rng, &pomdp.transition[s][a]);
    }
    Ok(traj)
}

/// Monte Carlo estimate of the discounted return `E[sum_t gamma^t R_t]` over
/// `n_rollouts` trajectories of length `len`; rollout seeds are `seed + i`.
pub fn mc_discounted_return(
    pomdp: &Pomdp,
    policy: &mut dyn Policy,
    gamma: f64,
    len: usize,
    n_rollouts: usize,
    seed: u64,
) -> Result<f64> {
    if n_rollouts == 0 {
        return Err(Error::InvalidArgument("need at least one rollout".into()));
    }
    let mut total = 0.0;
    for i in 0..n_rollouts {
        let traj = sample_trajectory(pomdp, policy, len, seed.wrapping_add(i as u64))?;
        let mut disc = 1.0;
        for t in 0..len {
            total += disc * traj.rewards[t];
            disc *= gamma;
        }
    }
    Ok(total / n_rollouts as f64)
}
