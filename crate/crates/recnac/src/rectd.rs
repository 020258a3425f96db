//! Temporal-difference policy evaluation with a recurrent approximator.
//!
//! A fixed behavior policy generates length-`T+1` trajectories; the network
//! value `F_t` of each closed history prefix is fit by projected semi-gradient
//! updates
//!
//! ```text
//! delta_t = R_t + gamma F_{t+1} - F_t
//! g       = sum_{t<T} gamma^t delta_t grad F_t
//! Theta  <- Proj_Omega(Theta + eta g)
//! ```
//!
//! with `Omega` the max-norm ball around the init snapshot. Progress is
//! tracked by the mean squared temporal difference `sum_{t<T} gamma^t
//! delta_t^2` estimated on fresh trajectories, and by the mean per-unit
//! parameter deviations from the snapshot.
//!
//! A deterministic companion replaces the sampled update with its exact
//! expectation by enumerating the joint `(state, observation, action)` path
//! distribution; realized rewards ride along each path, so reward-reading
//! behavior policies are supported here.

use crate::error::{Error, Result};
use crate::features::{embed_pairs, FeatureMap};
use crate::indrnn::{
    forward, grad_from_state, project_max_norm, smoothness_constants, NetParams, ParamVec,
    ProjectionRadii,
};
use crate::pomdp::{check_probs, sample_trajectory, History, Policy, Pomdp, Trajectory};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct RecTdConfig {
    /// Step size.
    pub eta: f64,
    pub gamma: f64,
    /// Number of temporal-difference terms `T`; trajectories have `T+1` steps.
    pub t_len: usize,
    /// Number of projected updates `K`.
    pub k_iters: usize,
    pub radii: ProjectionRadii,
    pub seed: u64,
}

impl Default for RecTdConfig {
    fn default() -> Self {
        RecTdConfig {
            eta: 0.05,
            gamma: 0.9,
            t_len: 8,
            k_iters: 100,
            radii: ProjectionRadii { rho_w: 1.0, rho_u: 1.0 },
            seed: 0,
        }
    }
}

impl RecTdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig("bad eta or gamma".into()));
        }
        if self.t_len == 0 || self.k_iters == 0 {
            return Err(Error::InvalidConfig("t_len and k_iters must be positive".into()));
        }
        if !(self.radii.rho_w >= 0.0 && self.radii.rho_u >= 0.0) {
            return Err(Error::InvalidConfig("projection radii must be nonnegative".into()));
        }
        Ok(())
    }
}

/// `delta_t = r_t + gamma F_{t+1} - F_t` for `t < t_len`; `outputs` must have
/// `t_len + 1` entries.
pub fn td_errors(outputs: &[f64], rewards: &[f64], gamma: f64, t_len: usize) -> Vec<f64> {
    debug_assert!(outputs.len() > t_len && rewards.len() >= t_len);
    (0..t_len).map(|t| rewards[t] + gamma * outputs[t + 1] - outputs[t]).collect()
}

/// `sum_{t<T} gamma^t delta_t^2`.
pub fn mstd_from_deltas(deltas: &[f64], gamma: f64) -> f64 {
    let mut disc = 1.0;
    let mut acc = 0.0;
    for &d in deltas {
        acc += disc * d * d;
        disc *= gamma;
    }
    acc
}

/// Discounted semi-gradient `sum_{t<T} gamma^t delta_t grad F_t` and the TD
/// errors it was built from. The tape must cover `t_len + 1` steps and carry
/// gradients.
pub fn semi_gradient(
    net: &NetParams,
    tape: &crate::indrnn::ForwardTape,
    rewards: &[f64],
    gamma: f64,
    t_len: usize,
) -> Result<(ParamVec, Vec<f64>)> {
    if tape.len() < t_len + 1 {
        return Err(Error::InvalidArgument(format!(
            "semi-gradient needs {} outputs, tape has {}",
            t_len + 1,
            tape.len()
        )));
    }
    let grads = tape
        .grads
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("tape was recorded without gradients".into()))?;
    let deltas = td_errors(&tape.outputs, rewards, gamma, t_len);
    let mut g = ParamVec::zeros(net.m, net.d);
    let mut disc = 1.0;
    for (t, &delta) in deltas.iter().enumerate() {
        let grad_t = grad_from_state(net, &grads[t]);
        g.axpy(disc * delta, &grad_t);
        disc *= gamma;
    }
    Ok((g, deltas))
}

/// Mean squared temporal difference on `n_eval` fresh trajectories.
pub fn mstd_estimate(
    pomdp: &Pomdp,
    policy: &mut dyn Policy,
    fm: &FeatureMap,
    net: &NetParams,
    gamma: f64,
    t_len: usize,
    n_eval: usize,
    seed: u64,
) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..n_eval {
        let traj = sample_trajectory(pomdp, policy, t_len + 1, seed.wrapping_add(i as u64))?;
        let xs = embed_pairs(fm, &traj.obs, &traj.actions)?;
        let tape = forward(net, &xs, false)?;
        let deltas = td_errors(&tape.outputs, &traj.rewards, gamma, t_len);
        total += mstd_from_deltas(&deltas, gamma);
    }
    Ok(total / n_eval as f64)
}

/// Result of a policy-evaluation run. Curves have one entry per iteration,
/// measured at `Theta(k)` before its update; `net_avg` carries the averaged
/// iterate `(1/K) sum_{k<K} Theta(k)`, which stays in the projection set by
/// convexity.
#[derive(Debug, Clone)]
pub struct RecTdRun {
    pub net_final: NetParams,
    pub net_avg: NetParams,
    /// Discounted squared TD errors summed over iteration `k`'s own training
    /// trajectory (the exact expectation on mean-path runs).
    pub mstd_curve: Vec<f64>,
    /// Running mean of `mstd_curve[0..=k]`; the smoothed learning trace.
    pub avg_mstd_curve: Vec<f64>,
    pub dev_w_curve: Vec<f64>,
    pub dev_u_curve: Vec<f64>,
}

/// Projected semi-gradient temporal-difference learning.
///
/// Per iteration one training seed is drawn from a counter stream, so runs
/// are reproducible from the config alone.
pub fn run_rec_td(
    pomdp: &Pomdp,
    policy: &mut dyn Policy,
    fm: &FeatureMap,
    net0: &NetParams,
    cfg: &RecTdConfig,
) -> Result<RecTdRun> {
    cfg.validate()?;
    net0.validate()?;
    let mut net = net0.clone();
    // The iterate must start inside the projection set for the gradient-norm
    // certificate below to hold.
    project_max_norm(&mut net, &cfg.radii);

    let sc = smoothness_constants(
        net.activation.bounds(),
        net.alpha,
        &cfg.radii,
        net.m,
        net.d,
        cfg.t_len + 1,
    );
    let grad_cap = sc.semi_grad_bound(cfg.t_len + 1, cfg.gamma, pomdp.r_inf);

    let mut seed_rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut mstd_curve = Vec::with_capacity(cfg.k_iters);
    let mut avg_mstd_curve = Vec::with_capacity(cfg.k_iters);
    let mut dev_w_curve = Vec::with_capacity(cfg.k_iters);
    let mut dev_u_curve = Vec::with_capacity(cfg.k_iters);
    let mut w_sum = vec![0.0; net.m];
    let mut u_sum = vec![0.0; net.m * net.d];
    let mut mstd_sum = 0.0;

    for k in 0..cfg.k_iters {
        let train_seed: u64 = seed_rng.random();

        dev_w_curve.push(net.dev_w_mean());
        dev_u_curve.push(net.dev_u_mean());
        for (acc, w) in w_sum.iter_mut().zip(&net.w) {
            *acc += w;
        }
        for (acc, u) in u_sum.iter_mut().zip(&net.u) {
            *acc += u;
        }

        let traj = sample_trajectory(pomdp, policy, cfg.t_len + 1, train_seed)?;
        let xs = embed_pairs(fm, &traj.obs, &traj.actions)?;
        let tape = forward(&net, &xs, true)?;
        let (g, deltas) = semi_gradient(&net, &tape, &traj.rewards, cfg.gamma, cfg.t_len)?;
        mstd_curve.push(mstd_from_deltas(&deltas, cfg.gamma));
        mstd_sum += mstd_curve[k];
        avg_mstd_curve.push(mstd_sum / (k + 1) as f64);
        let g_norm = g.norm2();
        assert!(
            g_norm <= grad_cap * (1.0 + 1e-9) + 1e-12,
            "semi-gradient norm {g_norm} exceeds certified cap {grad_cap}"
        );
        let mut w_step = net.clone();
        w_step.w.iter_mut().zip(&g.w).for_each(|(w, gw)| *w += cfg.eta * gw);
        w_step.u.iter_mut().zip(&g.u).for_each(|(u, gu)| *u += cfg.eta * gu);
        net = w_step;
        project_max_norm(&mut net, &cfg.radii);
    }

    let mut net_avg = net.clone();
    let k = cfg.k_iters as f64;
    net_avg.w = w_sum.iter().map(|w| w / k).collect();
    net_avg.u = u_sum.iter().map(|u| u / k).collect();
    Ok(RecTdRun { net_final: net, net_avg, mstd_curve, avg_mstd_curve, dev_w_curve, dev_u_curve })
}

/// A trajectory together with its exact probability under the joint path law.
#[derive(Debug, Clone)]
pub struct JointPath {
    pub prob: f64,
    pub traj: Trajectory,
}

/// Enumerates every positive-probability `(state, observation, action)` path
/// of the given length, weighting by
/// `mu(s0) phi(y0|s0) pi(a0|z0) P(s1|s0,a0) ...`. Realized rewards ride along
/// the open history, so reward-reading policies are supported. Errs once more
/// than `max_paths` paths are produced.
pub fn enumerate_joint_paths(
    pomdp: &Pomdp,
    policy: &mut dyn Policy,
    len: usize,
    max_paths: usize,
) -> Result<Vec<JointPath>> {
    if len == 0 {
        return Err(Error::InvalidArgument("path length must be positive".into()));
    }
    policy.begin_trajectory();
    let mut paths = Vec::new();
    let mut history = History::new();
    let mut traj = Trajectory { states: vec![], obs: vec![], actions: vec![], rewards: vec![] };

    fn recurse(
        pomdp: &Pomdp,
        policy: &mut dyn Policy,
        len: usize,
        max_paths: usize,
        history: &mut History,
        traj: &mut Trajectory,
        state_prob: &[f64],
        weight: f64,
        t: usize,
        paths: &mut Vec<JointPath>,
    ) -> Result<()> {
        for s in 0..pomdp.n_states {
            let w_s = weight * state_prob[s];
            if w_s <= 0.0 {
                continue;
            }
            for y in 0..pomdp.n_obs {
                let w_y = w_s * pomdp.obs_kernel[s][y];
                if w_y <= 0.0 {
                    continue;
                }
                history.push_obs(y);
                traj.states.push(s);
                traj.obs.push(y);
                let probs = policy.probs(t, history)?;
                check_probs(&probs, pomdp.n_actions)?;
                for a in 0..pomdp.n_actions {
                    let w_a = w_y * probs[a];
                    if w_a <= 0.0 {
                        continue;
                    }
                    let r = pomdp.reward[s][a];
                    history.push_action(a, r);
                    traj.actions.push(a);
                    traj.rewards.push(r);
                    if t + 1 == len {
                        if paths.len() >= max_paths {
                            return Err(Error::ResourceLimit(format!(
                                "joint path enumeration exceeds the {max_paths}-path budget"
                            )));
                        }
                        paths.push(JointPath { prob: w_a, traj: traj.clone() });
                    } else {
                        recurse(
                            pomdp,
                            policy,
                            len,
                            max_paths,
                            history,
                            traj,
                            &pomdp.transition[s][a],
                            w_a,
                            t + 1,
                            paths,
                        )?;
                    }
                    history.pop_action();
                    traj.actions.pop();
                    traj.rewards.pop();
                }
                history.pop_obs();
                traj.states.pop();
                traj.obs.pop();
            }
        }
        Ok(())
    }

    recurse(
        pomdp,
        policy,
        len,
        max_paths,
        &mut history,
        &mut traj,
        &pomdp.init_dist.clone(),
        1.0,
        0,
        &mut paths,
    )?;
    Ok(paths)
}

/// Exact expected semi-gradient and exact mean squared temporal difference
/// at `net`, averaging over an enumerated path law.
pub fn mean_semi_gradient(
    net: &NetParams,
    fm: &FeatureMap,
    paths: &[JointPath],
    gamma: f64,
    t_len: usize,
) -> Result<(ParamVec, f64)> {
    let mut g = ParamVec::zeros(net.m, net.d);
    let mut mstd = 0.0;
    for path in paths {
        let xs = embed_pairs(fm, &path.traj.obs, &path.traj.actions)?;
        let tape = forward(net, &xs, true)?;
        let (gp, deltas) = semi_gradient(net, &tape, &path.traj.rewards, gamma, t_len)?;
        g.axpy(path.prob, &gp);
        mstd += path.prob * mstd_from_deltas(&deltas, gamma);
    }
    Ok((g, mstd))
}

/// Deterministic policy evaluation along the exact mean update path:
/// `Theta(k+1) = Proj(Theta(k) + eta E[g])`, with the exact mean squared
/// temporal difference recorded at every iterate.
pub fn mean_path_rec_td(
    pomdp: &Pomdp,
    policy: &mut dyn Policy,
    fm: &FeatureMap,
    net0: &NetParams,
    cfg: &RecTdConfig,
    max_paths: usize,
) -> Result<RecTdRun> {
    cfg.validate()?;
    net0.validate()?;
    let paths = enumerate_joint_paths(pomdp, policy, cfg.t_len + 1, max_paths)?;
    let total_prob: f64 = paths.iter().map(|p| p.prob).sum();
    if (total_prob - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "path probabilities sum to {total_prob}, not 1"
        )));
    }
    let mut net = net0.clone();
    project_max_norm(&mut net, &cfg.radii);
    let mut mstd_curve = Vec::with_capacity(cfg.k_iters);
    let mut avg_mstd_curve = Vec::with_capacity(cfg.k_iters);
    let mut dev_w_curve = Vec::with_capacity(cfg.k_iters);
    let mut dev_u_curve = Vec::with_capacity(cfg.k_iters);
    let mut w_sum = vec![0.0; net.m];
    let mut u_sum = vec![0.0; net.m * net.d];
    let mut mstd_sum = 0.0;
    for k in 0..cfg.k_iters {
        let (g, mstd) = mean_semi_gradient(&net, fm, &paths, cfg.gamma, cfg.t_len)?;
        mstd_curve.push(mstd);
        mstd_sum += mstd;
        avg_mstd_curve.push(mstd_sum / (k + 1) as f64);
        dev_w_curve.push(net.dev_w_mean());
        dev_u_curve.push(net.dev_u_mean());
        for (acc, w) in w_sum.iter_mut().zip(&net.w) {
            *acc += w;
        }
        for (acc, u) in u_sum.iter_mut().zip(&net.u) {
            *acc += u;
        }
        net.w.iter_mut().zip(&g.w).for_each(|(w, gw)| *w += cfg.eta * gw);
        net.u.iter_mut().zip(&g.u).for_each(|(u, gu)| *u += cfg.eta * gu);
        project_max_norm(&mut net, &cfg.radii);
    }
    let mut net_avg = net.clone();
    let k = cfg.k_iters as f64;
    net_avg.w = w_sum.iter().map(|w| w / k).collect();
    net_avg.u = u_sum.iter().map(|u| u / k).collect();
    Ok(RecTdRun { net_final: net, net_avg, mstd_curve, avg_mstd_curve, dev_w_curve, dev_u_curve })
}
