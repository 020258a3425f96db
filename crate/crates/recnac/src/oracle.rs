//! Exact finite-horizon evaluation of policies on small POMDPs.
//!
//! The belief `b_t(s) = P(S_t = s | Zbar_t)` depends only on the POMDP and the
//! realized history, not on the policy, and updates by one Bayes step per
//! (action, observation) pair. Truncated action values
//!
//! ```text
//! Q^(H)_t(zbar, a) = E[ sum_{k<H} gamma^k R_{t+k} | Zbar_t = zbar, A_t = a ]
//! ```
//!
//! approach the infinite-horizon values at rate `gamma^H r_inf / (1-gamma)`,
//! the tail certificate recorded in [`OracleConfig`].
//!
//! Two evaluation routes share this module. Policies that expose
//! [`crate::pomdp::Policy::time_marginals`] (open-loop: the action law depends
//! on `t` alone) are evaluated by backward induction over states, `O(H |S|^2
//! |A|)`, with no branching limit. General history-dependent policies are
//! evaluated by enumerating future `(action, observation)` branches, which is
//! exponential in `H` and therefore guarded by `max_branches`; policies that
//! read realized rewards are rejected on this route because counterfactual
//! branches carry no reward trace.

use crate::error::{Error, Result};
use crate::pomdp::{History, Policy, Pomdp};

/// Posterior over states given the realized history.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    pub probs: Vec<f64>,
}

impl Belief {
    pub fn uniform(n_states: usize) -> Self {
        Belief { probs: vec![1.0 / n_states as f64; n_states] }
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.probs.iter().sum();
        if self.probs.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("belief is not a distribution".into()));
        }
        Ok(())
    }
}

/// Truncation horizon and branch budget for exact evaluation.
#[derive(Debug, Clone, Copy)]
pub struct OracleConfig {
    /// Number of reward terms `H` kept in every value.
    pub horizon: usize,
    pub gamma: f64,
    /// Certified bound on the dropped tail: `gamma^H r_inf / (1 - gamma)`.
    pub tail_tol: f64,
    /// Enumeration budget for the history-tree route.
    pub max_branches: f64,
}

pub const DEFAULT_MAX_BRANCHES: f64 = 1e6;

impl OracleConfig {
    /// Fixes the horizon and records the implied tail bound.
    pub fn from_horizon(gamma: f64, r_inf: f64, horizon: usize) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidArgument("gamma must lie in (0, 1)".into()));
        }
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        if r_inf < 0.0 {
            return Err(Error::InvalidArgument("r_inf must be nonnegative".into()));
        }
        let tail_tol = gamma.powi(horizon as i32) * r_inf / (1.0 - gamma);
        Ok(OracleConfig { horizon, gamma, tail_tol, max_branches: DEFAULT_MAX_BRANCHES })
    }

    /// Smallest horizon whose tail bound is at most `tol`.
    pub fn from_tolerance(gamma: f64, r_inf: f64, tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidArgument("gamma must lie in (0, 1)".into()));
        }
        if r_inf < 0.0 {
            return Err(Error::InvalidArgument("r_inf must be nonnegative".into()));
        }
        let mut horizon = if r_inf == 0.0 {
            1
        } else {
            let x = tol * (1.0 - gamma) / r_inf;
            if x >= 1.0 {
                1
            } else {
                (x.ln() / gamma.ln()).ceil() as usize
            }
        };
        // Guards the ceil against floating-point edge cases.
        while gamma.powi(horizon as i32) * r_inf / (1.0 - gamma) > tol {
            horizon += 1;
        }
        Self::from_horizon(gamma, r_inf, horizon.max(1))
    }

    pub fn with_max_branches(mut self, max_branches: f64) -> Self {
        self.max_branches = max_branches;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidArgument("bad oracle horizon or gamma".into()));
        }
        if !(self.tail_tol >= 0.0) || !(self.max_branches >= 1.0) {
            return Err(Error::InvalidArgument("bad oracle tolerances".into()));
        }
        Ok(())
    }
}

/// `b_0(s)` given the first observation: `mu(s) phi(y0 | s)`, normalized.
pub fn initial_belief(pomdp: &Pomdp, y0: usize) -> Result<Belief> {
    if y0 >= pomdp.n_obs {
        return Err(Error::InvalidArgument("observation out of range".into()));
    }
    let mut probs: Vec<f64> =
        (0..pomdp.n_states).map(|s| pomdp.init_dist[s] * pomdp.obs_kernel[s][y0]).collect();
    let norm: f64 = probs.iter().sum();
    if norm <= 0.0 {
        return Err(Error::Infeasible("first observation has zero likelihood".into()));
    }
    probs.iter_mut().for_each(|p| *p /= norm);
    Ok(Belief { probs })
}

/// One Bayes step: `b'(s') propto sum_s b(s) P(s'|s,a) phi(y'|s')`.
pub fn belief_update(pomdp: &Pomdp, belief: &Belief, a: usize, y_next: usize) -> Result<Belief> {
    if a >= pomdp.n_actions || y_next >= pomdp.n_obs {
        return Err(Error::InvalidArgument("action or observation out of range".into()));
    }
    let mut probs = vec![0.0; pomdp.n_states];
    for s in 0..pomdp.n_states {
        let bs = belief.probs[s];
        if bs == 0.0 {
            continue;
        }
        for s2 in 0..pomdp.n_states {
            probs[s2] += bs * pomdp.transition[s][a][s2];
        }
    }
    for (s2, p) in probs.iter_mut().enumerate() {
        *p *= pomdp.obs_kernel[s2][y_next];
    }
    let norm: f64 = probs.iter().sum();
    if norm <= 0.0 {
        return Err(Error::Infeasible("observation has zero likelihood under belief".into()));
    }
    probs.iter_mut().for_each(|p| *p /= norm);
    Ok(Belief { probs })
}

/// Belief after an open history (Bayes steps over its realized pairs).
pub fn belief_from_history(pomdp: &Pomdp, history: &History) -> Result<Belief> {
    if !history.is_open() {
        return Err(Error::InvalidArgument("belief needs an open history".into()));
    }
    let mut belief = initial_belief(pomdp, history.obs[0])?;
    for k in 0..history.actions.len() {
        belief = belief_update(pomdp, &belief, history.actions[k], history.obs[k + 1])?;
    }
    Ok(belief)
}

/// Expected one-step reward under a belief.
fn belief_reward(pomdp: &Pomdp, belief: &Belief, a: usize) -> f64 {
    (0..pomdp.n_states).map(|s| belief.probs[s] * pomdp.reward[s][a]).sum()
}

/// Backward-induction tables under time-dependent action marginals.
/// `q[k][s][a]` is the exact `(horizon - k)`-term value when the chain is in
/// `s` at offset `k` and plays `a`, then follows `marginals[k+1..]`;
/// `v[k][s]` averages `q[k][s][.]` under `marginals[k]`.
struct OpenLoopTables {
    q: Vec<Vec<Vec<f64>>>,
    v: Vec<Vec<f64>>,
}

fn open_loop_tables(pomdp: &Pomdp, marginals: &[Vec<f64>], gamma: f64) -> OpenLoopTables {
    let horizon = marginals.len();
    let (ns, na) = (pomdp.n_states, pomdp.n_actions);
    let mut q = vec![vec![vec![0.0; na]; ns]; horizon];
    let mut v = vec![vec![0.0; ns]; horizon + 1];
    for k in (0..horizon).rev() {
        for s in 0..ns {
            for a in 0..na {
                let mut future = 0.0;
                for s2 in 0..ns {
                    future += pomdp.transition[s][a][s2] * v[k + 1][s2];
                }
                q[k][s][a] = pomdp.reward[s][a] + gamma * future;
            }
            v[k][s] = (0..na).map(|a| marginals[k][a] * q[k][s][a]).sum();
        }
    }
    v.truncate(horizon);
    OpenLoopTables { q, v }
}

/// Action marginals for offsets `t0 .. t0 + horizon`, or `None` if the policy
/// is not open-loop.
fn collect_marginals(
    policy: &dyn Policy,
    t0: usize,
    horizon: usize,
    n_actions: usize,
) -> Option<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let m = policy.time_marginals(t0 + k)?;
        debug_assert_eq!(m.len(), n_actions);
        out.push(m);
    }
    Some(out)
}

fn check_tree_budget(pomdp: &Pomdp, cfg: &OracleConfig) -> Result<()> {
    let per_level = (pomdp.n_obs * pomdp.n_actions) as f64;
    let branches = per_level.powf(cfg.horizon as f64);
    if !(branches <= cfg.max_branches) {
        return Err(Error::ResourceLimit(format!(
            "history tree needs about {branches:.3e} branches at horizon {}, budget is {:.3e}; \
             raise max_branches or lower the horizon",
            cfg.horizon, cfg.max_branches
        )));
    }
    Ok(())
}

fn check_tree_policy(policy: &dyn Policy) -> Result<()> {
    if policy.uses_rewards() {
        return Err(Error::InvalidArgument(
            "reward-reading policies cannot be evaluated on the history tree; \
             counterfactual branches carry no reward trace"
                .into(),
        ));
    }
    Ok(())
}

/// `Q` values for every action over the history tree, `depth` reward terms.
/// `history` is a scratch open history restored before returning.
fn q_tree(
    pomdp: &Pomdp,
    policy: &mut dyn Policy,
    history: &mut History,
    belief: &Belief,
    depth: usize,
    gamma: f64,
) -> Result<Vec<f64>> {
    let (ns, na, ny) = (pomdp.n_states, pomdp.n_actions, pomdp.n_obs);
    let mut q = vec![0.0; na];
    for a in 0..na {
        q[a] = belief_reward(pomdp, belief, a);
        if depth == 1 {
            continue;
        }
        // Predictive state law, then branch on the next observation.
        let mut pred = vec![0.0; ns];
        for s in 0..ns {
            let bs = belief.probs[s];
            if bs == 0.0 {
                continue;
            }
            for s2 in 0..ns {
                pred[s2] += bs * pomdp.transition[s][a][s2];
            }
        }
        let mut future = 0.0;
        for y in 0..ny {
            let mut child_probs: Vec<f64> =
                (0..ns).map(|s2| pred[s2] * pomdp.obs_kernel[s2][y]).collect();
            let likelihood: f64 = child_probs.iter().sum();
            if likelihood <= 0.0 {
                continue;
            }
            child_probs.iter_mut().for_each(|p| *p /= likelihood);
            let child = Belief { probs: child_probs };
            history.push_action(a, f64::NAN);
            history.push_obs(y);
            let t_child = history.t();
            let probs = policy.probs(t_child, history)?;
            let q_child = q_tree(pomdp, policy, history, &child, depth - 1, gamma)?;
            let v_child: f64 = probs.iter().zip(&q_child).map(|(p, q)| p * q).sum();
            history.pop_obs();
            history.pop_action();
            future += likelihood * v_child;
        }
        q[a] += gamma * future;
    }
    Ok(q)
}

/// Exact truncated `Q^(H)_t(zbar_t, .)` for every action at an open history.
/// Open-loop policies go through backward induction; others through the
/// guarded history tree.
pub fn exact_q_values(
    pomdp: &Pomdp,
    policy: &mut dyn Policy,
    cfg: &OracleConfig,
    history: &History,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if !history.is_open() {
        return Err(Error::InvalidArgument("exact evaluation needs an open history".into()));
    }
    let t0 = history.t();
    let belief = belief_from_history(pomdp, history)?;
    if let Some(marginals) = collect_marginals(policy, t0, cfg.horizon, pomdp.n_actions) {
        let tables = open_loop_tables(pomdp, &marginals, cfg.gamma);
        let q = (0..pomdp.n_actions)
            .map(|a| (0..pomdp.n_states).map(|s| belief.probs[s] * tables.q[0][s][a]).sum())
            .collect();
        return Ok(q);
    }
    check_tree_policy(policy)?;
    check_tree_budget(pomdp, cfg)?;
    let mut scratch = history.clone();
    q_tree(pomdp, policy, &mut scratch, &belief, cfg.horizon, cfg.gamma)
}

/// Q, V, and advantages at an open history, all with `H` reward terms.
#[derive(Debug, Clone)]
pub struct AdvantageReport {
    pub q: Vec<f64>,
    pub v: f64,
    pub advantages: Vec<f64>,
    pub action_probs: Vec<f64>,
}

pub fn exact_advantages(
    pomdp: &Pomdp,
    policy: &mut dyn Policy,
    cfg: &OracleConfig,
    history: &History,
) -> Result<AdvantageReport> {
    let q = exact_q_values(pomdp, policy, cfg, history)?;
    let action_probs = policy.probs(history.t(), history)?;
    let v: f64 = action_probs.iter().zip(&q).map(|(p, q)| p * q).sum();
    let advantages = q.iter().map(|qa| qa - v).collect();
    Ok(AdvantageReport { q, v, advantages, action_probs })
}

/// Exact truncated return `J^(H) = E[sum_{t<H} gamma^t R_t]`.
pub fn exact_return(pomdp: &Pomdp, policy: &mut dyn Policy, cfg: &OracleConfig) -> Result<f64> {
    cfg.validate()?;
    policy.begin_trajectory();
    if let Some(marginals) = collect_marginals(policy, 0, cfg.horizon, pomdp.n_actions) {
        let tables = open_loop_tables(pomdp, &marginals, cfg.gamma);
        return Ok((0..pomdp.n_states).map(|s| pomdp.init_dist[s] * tables.v[0][s]).sum());
    }
    check_tree_policy(policy)?;
    check_tree_budget(pomdp, cfg)?;
    let mut total = 0.0;
    for y0 in 0..pomdp.n_obs {
        let p_y0: f64 =
            (0..pomdp.n_states).map(|s| pomdp.init_dist[s] * pomdp.obs_kernel[s][y0]).sum();
        if p_y0 <= 0.0 {
            continue;
        }
        let mut history = History::new();
        history.push_obs(y0);
        let belief = initial_belief(pomdp, y0)?;
        let probs = policy.probs(0, &history)?;
        let q = q_tree(pomdp, policy, &mut history, &belief, cfg.horizon, cfg.gamma)?;
        let v: f64 = probs.iter().zip(&q).map(|(p, q)| p * q).sum();
        total += p_y0 * v;
    }
    Ok(total)
}

/// Both sides of the finite-horizon performance-difference identity.
///
/// With `H` reward terms on both returns and remaining-depth advantages on
/// the right-hand side,
///
/// ```text
/// J^(H)(new) - J^(H)(old)
///   = sum_{t<H} gamma^t E_new[ A_old^(H-t)(Zbar_t, A_t) ],
/// ```
///
/// the identity is exact, so `residual` is floating-point small.
#[derive(Debug, Clone)]
pub struct PdlReport {
    pub value_new: f64,
    pub value_old: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

pub fn check_performance_difference(
    pomdp: &Pomdp,
    policy_new: &mut dyn Policy,
    policy_old: &mut dyn Policy,
    cfg: &OracleConfig,
) -> Result<PdlReport> {
    cfg.validate()?;
    let horizon = cfg.horizon;
    let (ns, na) = (pomdp.n_states, pomdp.n_actions);
    let margs_new = collect_marginals(policy_new, 0, horizon, na);
    let margs_old = collect_marginals(policy_old, 0, horizon, na);
    if let (Some(mn), Some(mo)) = (margs_new, margs_old) {
        let tn = open_loop_tables(pomdp, &mn, cfg.gamma);
        let to = open_loop_tables(pomdp, &mo, cfg.gamma);
        let value_new: f64 = (0..ns).map(|s| pomdp.init_dist[s] * tn.v[0][s]).sum();
        let value_old: f64 = (0..ns).map(|s| pomdp.init_dist[s] * to.v[0][s]).sum();
        // State marginals under the new policy; expected advantages are
        // linear in the belief, so marginals suffice.
        let mut rho = pomdp.init_dist.clone();
        let mut rhs = 0.0;
        let mut disc = 1.0;
        for t in 0..horizon {
            for s in 0..ns {
                if rho[s] == 0.0 {
                    continue;
                }
                for a in 0..na {
                    rhs += disc * rho[s] * mn[t][a] * (to.q[t][s][a] - to.v[t][s]);
                }
            }
            if t + 1 < horizon {
                let mut next = vec![0.0; ns];
                for s in 0..ns {
                    if rho[s] == 0.0 {
                        continue;
                    }
                    for a in 0..na {
                        let w = rho[s] * mn[t][a];
                        if w == 0.0 {
                            continue;
                        }
                        for s2 in 0..ns {
                            next[s2] += w * pomdp.transition[s][a][s2];
                        }
                    }
                }
                rho = next;
            }
            disc *= cfg.gamma;
        }
        let lhs = value_new - value_old;
        return Ok(PdlReport { value_new, value_old, lhs, rhs, residual: (lhs - rhs).abs() });
    }

    check_tree_policy(policy_new)?;
    check_tree_policy(policy_old)?;
    check_tree_budget(pomdp, cfg)?;
    let value_new = exact_return(pomdp, policy_new, cfg)?;
    let value_old = exact_return(pomdp, policy_old, cfg)?;

    // Depth-first walk of the history tree under the new policy, accumulating
    // remaining-depth advantages of the old policy at every node.
    struct Walk<'a> {
        pomdp: &'a Pomdp,
        cfg: &'a OracleConfig,
        rhs: f64,
    }
    impl Walk<'_> {
        fn node(
            &mut self,
            policy_new: &mut dyn Policy,
            policy_old: &mut dyn Policy,
            history: &mut History,
            belief: &Belief,
            weight: f64,
            t: usize,
        ) -> Result<()> {
            let depth_left = self.cfg.horizon - t;
            let probs_new = policy_new.probs(t, history)?;
            let probs_old = policy_old.probs(t, history)?;
            let q_old =
                q_tree(self.pomdp, policy_old, history, belief, depth_left, self.cfg.gamma)?;
            let v_old: f64 = probs_old.iter().zip(&q_old).map(|(p, q)| p * q).sum();
            let disc = self.cfg.gamma.powi(t as i32);
            for a in 0..self.pomdp.n_actions {
                self.rhs += disc * weight * probs_new[a] * (q_old[a] - v_old);
            }
            if depth_left == 1 {
                return Ok(());
            }
            let ns = self.pomdp.n_states;
            for a in 0..self.pomdp.n_actions {
                if probs_new[a] == 0.0 {
                    continue;
                }
                let mut pred = vec![0.0; ns];
                for s in 0..ns {
                    if belief.probs[s] == 0.0 {
                        continue;
                    }
                    for s2 in 0..ns {
                        pred[s2] += belief.probs[s] * self.pomdp.transition[s][a][s2];
                    }
                }
                for y in 0..self.pomdp.n_obs {
                    let mut child_probs: Vec<f64> =
                        (0..ns).map(|s2| pred[s2] * self.pomdp.obs_kernel[s2][y]).collect();
                    let likelihood: f64 = child_probs.iter().sum();
                    if likelihood <= 0.0 {
                        continue;
                    }
                    child_probs.iter_mut().for_each(|p| *p /= likelihood);
                    let child = Belief { probs: child_probs };
                    history.push_action(a, f64::NAN);
                    history.push_obs(y);
                    self.node(
                        policy_new,
                        policy_old,
                        history,
                        &child,
                        weight * probs_new[a] * likelihood,
                        t + 1,
                    )?;
                    history.pop_obs();
                    history.pop_action();
                }
            }
            Ok(())
        }
    }

    let mut walk = Walk { pomdp, cfg, rhs: 0.0 };
    for y0 in 0..pomdp.n_obs {
        let p_y0: f64 =
            (0..pomdp.n_states).map(|s| pomdp.init_dist[s] * pomdp.obs_kernel[s][y0]).sum();
        if p_y0 <= 0.0 {
            continue;
        }
        let mut history = History::new();
        history.push_obs(y0);
        let belief = initial_belief(pomdp, y0)?;
        walk.node(policy_new, policy_old, &mut history, &belief, p_y0, 0)?;
    }
    let lhs = value_new - value_old;
    Ok(PdlReport { value_new, value_old, lhs, rhs: walk.rhs, residual: (lhs - walk.rhs).abs() })
}
