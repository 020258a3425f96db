//! Natural actor-critic with recurrent actor and critic.
//!
//! Each outer step `n` evaluates the current softmax actor with a freshly
//! initialized critic (temporal-difference learning, averaged iterate), then
//! fits the natural-gradient direction by compatible function approximation:
//! projected SGD on the path loss
//!
//! ```text
//! l_T(omega) = sum_{t<T} gamma^t ( grad log pi(A_t|Z_t) . omega - Adv_t )^2,
//! ```
//!
//! one fresh trajectory per SGD step, direction averaged over iterates. The
//! actor then moves additively, `Phi(n+1) = Phi(n) + eta_npg * omega_n`; the
//! direction is projected onto the zero-centered max-norm set but the actor
//! parameters themselves are left unprojected, so their drift from the init
//! snapshot is part of the recorded trace.

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::indrnn::{
    init_symmetric, smoothness_constants, Activation, NetParams, ParamVec, ProjectionRadii,
};
use crate::policy::{advantages_from_critic, SoftmaxRnnPolicy};
use crate::pomdp::{mc_discounted_return, sample_trajectory, Pomdp, Trajectory};
use crate::rectd::{mstd_estimate, run_rec_td, RecTdConfig};
use serde::{Deserialize, Serialize};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Outer-loop configuration. `None` step sizes resolve to the decaying
/// schedules `eta_npg = 1/sqrt(N)` and `eta_sgd = 0.1/sqrt(K_sgd)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NacConfig {
    pub n_outer: usize,
    pub eta_npg: Option<f64>,
    pub eta_sgd: Option<f64>,
    pub eta_td: f64,
    pub k_sgd: usize,
    pub k_td: usize,
    pub t_len: usize,
    pub gamma: f64,
    pub m_actor: usize,
    pub m_critic: usize,
    pub alpha_actor: f64,
    pub alpha_critic: f64,
    pub activation: Activation,
    pub actor_radii: ProjectionRadii,
    pub critic_radii: ProjectionRadii,
    /// Rollouts per value estimate in the trace.
    pub n_eval_value: usize,
    /// Rollout length for value estimates; `None` picks the shortest length
    /// whose discounted tail is below 1e-3.
    pub t_eval: Option<usize>,
    /// Fresh trajectories per critic MSTD estimate.
    pub n_eval_mstd: usize,
    /// Fresh trajectories per CFA loss estimate in the trace.
    pub n_eval_cfa: usize,
    pub seed: u64,
}

impl Default for NacConfig {
    fn default() -> Self {
        NacConfig {
            n_outer: 30,
            eta_npg: None,
            eta_sgd: None,
            eta_td: 0.05,
            k_sgd: 200,
            k_td: 300,
            t_len: 6,
            gamma: 0.5,
            m_actor: 32,
            m_critic: 32,
            alpha_actor: 0.5,
            alpha_critic: 0.5,
            activation: Activation::Tanh,
            actor_radii: ProjectionRadii { rho_w: 1.0, rho_u: 1.0 },
            critic_radii: ProjectionRadii { rho_w: 1.0, rho_u: 1.0 },
            n_eval_value: 200,
            t_eval: None,
            n_eval_mstd: 10,
            n_eval_cfa: 20,
            seed: 0,
        }
    }
}

impl NacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig("gamma must lie in (0, 1)".into()));
        }
        if self.t_len == 0 || self.k_sgd == 0 || self.k_td == 0 {
            return Err(Error::InvalidConfig("t_len, k_sgd, k_td must be positive".into()));
        }
        if self.m_actor == 0 || !self.m_actor.is_multiple_of(2) || self.m_critic == 0 || !self.m_critic.is_multiple_of(2)
        {
            return Err(Error::InvalidConfig("network widths must be even and positive".into()));
        }
        if !(self.eta_td > 0.0)
            || self.eta_npg.is_some_and(|e| !(e > 0.0))
            || self.eta_sgd.is_some_and(|e| !(e > 0.0))
        {
            return Err(Error::InvalidConfig("step sizes must be positive".into()));
        }
        if self.n_eval_value == 0 || self.n_eval_mstd == 0 || self.n_eval_cfa == 0 {
            return Err(Error::InvalidConfig("evaluation counts must be positive".into()));
        }
        Ok(())
    }

    pub fn resolved_eta_npg(&self) -> f64 {
        self.eta_npg.unwrap_or(1.0 / (self.n_outer.max(1) as f64).sqrt())
    }

    pub fn resolved_eta_sgd(&self) -> f64 {
        self.eta_sgd.unwrap_or(0.1 / (self.k_sgd as f64).sqrt())
    }

    /// Rollout length whose discounted reward tail is below 1e-3.
    pub fn resolved_t_eval(&self, r_inf: f64) -> usize {
        if let Some(t) = self.t_eval {
            return t;
        }
        let mut t = 1usize;
        while self.gamma.powi(t as i32) * r_inf / (1.0 - self.gamma) >= 1e-3 {
            t += 1;
        }
        t
    }
}

/// Path-based compatible function approximation loss on one trajectory:
/// `sum_{t<T} gamma^t (grad log pi(A_t|Z_t) . omega - advantages[t])^2`,
/// with `advantages[t]` the estimate at the realized action.
pub fn cfa_loss_sample(
    actor: &mut SoftmaxRnnPolicy,
    advantages: &[f64],
    traj: &Trajectory,
    omega: &ParamVec,
    gamma: f64,
    t_len: usize,
) -> Result<f64> {
    if traj.len() < t_len || advantages.len() < t_len {
        return Err(Error::InvalidArgument(format!(
            "loss needs {t_len} steps; trajectory has {} and advantages {}",
            traj.len(),
            advantages.len()
        )));
    }
    if omega.m != actor.net().m || omega.d != actor.net().d {
        return Err(Error::InvalidArgument("direction has wrong shape".into()));
    }
    let mut acc = 0.0;
    let mut disc = 1.0;
    for t in 0..t_len {
        let h = traj.open_history(t);
        let (g, _) = actor.log_prob_grad(t, &h, traj.actions[t])?;
        let resid = g.dot(omega) - advantages[t];
        acc += disc * resid * resid;
        disc *= gamma;
    }
    Ok(acc)
}

/// Realized-action advantages along a trajectory, per the critic's branch
/// values centered by the actor's action distribution.
pub fn critic_advantages_along(
    actor: &mut SoftmaxRnnPolicy,
    critic: &NetParams,
    fm: &FeatureMap,
    traj: &Trajectory,
    t_len: usize,
) -> Result<Vec<f64>> {
    let mut advantages = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let h = traj.open_history(t);
        let est = advantages_from_critic(actor, critic, fm, t, &h)?;
        advantages.push(est.advantages[traj.actions[t]]);
    }
    Ok(advantages)
}

/// Projected SGD on the compatible function approximation loss. Starts at
/// `omega = 0`, draws one fresh trajectory under the actor per step, projects
/// each iterate onto the zero-centered max-norm set, and returns the average
/// of the `K_sgd` iterates `omega(0..K_sgd-1)` (so `k_sgd = 1` returns zero).
pub fn cfa_sgd(
    pomdp: &Pomdp,
    actor: &mut SoftmaxRnnPolicy,
    critic: &NetParams,
    fm: &FeatureMap,
    cfg: &NacConfig,
    seed: u64,
) -> Result<ParamVec> {
    let (m, d) = (actor.net().m, actor.net().d);
    let eta = cfg.resolved_eta_sgd();
    let mut omega = ParamVec::zeros(m, d);
    let mut omega_sum = ParamVec::zeros(m, d);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for _ in 0..cfg.k_sgd {
        omega_sum.axpy(1.0, &omega);
        let traj = sample_trajectory(pomdp, actor, cfg.t_len, rng.random())?;
        let advantages = critic_advantages_along(actor, critic, fm, &traj, cfg.t_len)?;
        let mut grad = ParamVec::zeros(m, d);
        let mut disc = 1.0;
        for t in 0..cfg.t_len {
            let h = traj.open_history(t);
            let (g, _) = actor.log_prob_grad(t, &h, traj.actions[t])?;
            let resid = g.dot(&omega) - advantages[t];
            grad.axpy(2.0 * disc * resid, &g);
            disc *= cfg.gamma;
        }
        omega.axpy(-eta, &grad);
        omega.project(&cfg.actor_radii);
    }
    omega_sum.scale(1.0 / cfg.k_sgd as f64);
    Ok(omega_sum)
}

/// The additive policy update `Phi + eta * omega`; the init snapshot is kept.
pub fn npg_update(actor_params: &NetParams, omega: &ParamVec, eta: f64) -> Result<NetParams> {
    if omega.m != actor_params.m || omega.d != actor_params.d {
        return Err(Error::InvalidArgument("direction has wrong shape".into()));
    }
    let mut out = actor_params.clone();
    for (w, o) in out.w.iter_mut().zip(&omega.w) {
        *w += eta * o;
    }
    for (u, o) in out.u.iter_mut().zip(&omega.u) {
        *u += eta * o;
    }
    Ok(out)
}

/// One outer-step record, measured at `Phi(n)` before its update.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NacTraceRow {
    pub n: usize,
    /// Monte Carlo discounted-return estimate of the current policy.
    pub value_est: f64,
    /// Mean squared temporal difference of the averaged critic iterate.
    pub critic_mstd: f64,
    /// CFA loss of `omega_n` on fresh trajectories.
    pub cfa_loss: f64,
    pub omega_norm: f64,
    /// `||Phi(n) - Phi(0)||_2`.
    pub phi_dev: f64,
}

#[derive(Debug, Clone)]
pub struct NacRun {
    pub rows: Vec<NacTraceRow>,
    /// Value estimate at the final actor `Phi(N)`.
    pub final_value_est: f64,
    pub actor: NetParams,
}

/// Full natural actor-critic loop.
///
/// Derived seeds come from one
/// counter stream in a fixed per-iteration order, so runs are reproducible
/// from the config alone.
pub fn run_rec_nac(pomdp: &Pomdp, fm: &FeatureMap, cfg: &NacConfig) -> Result<NacRun> {
    cfg.validate()?;
    if fm.n_actions != pomdp.n_actions {
        return Err(Error::InvalidConfig("feature map does not match the POMDP".into()));
    }
    let mut master = ChaCha12Rng::seed_from_u64(cfg.seed);
    let actor_seed: u64 = master.random();
    let actor_net =
        init_symmetric(cfg.m_actor, fm.d, cfg.alpha_actor, cfg.activation, actor_seed)?;
    let mut actor = SoftmaxRnnPolicy::new(actor_net, fm.clone())?;
    let t_eval = cfg.resolved_t_eval(pomdp.r_inf);
    let eta_npg = cfg.resolved_eta_npg();

    let mut rows = Vec::with_capacity(cfg.n_outer);
    for n in 0..cfg.n_outer {
        let critic_seed: u64 = master.random();
        let td_seed: u64 = master.random();
        let mstd_seed: u64 = master.random();
        let sgd_seed: u64 = master.random();
        let value_seed: u64 = master.random();
        let cfa_eval_seed: u64 = master.random();

        let value_est =
            mc_discounted_return(pomdp, &mut actor, cfg.gamma, t_eval, cfg.n_eval_value, value_seed)?;
        let phi_dev = actor.net().deviation().norm2();

        // Fresh critic, trained to evaluate the current actor; the averaged
        // iterate is the advantage source.
        let critic_net =
            init_symmetric(cfg.m_critic, fm.d, cfg.alpha_critic, cfg.activation, critic_seed)?;
        let td_cfg = RecTdConfig {
            eta: cfg.eta_td,
            gamma: cfg.gamma,
            t_len: cfg.t_len,
            k_iters: cfg.k_td,
            radii: cfg.critic_radii,
            seed: td_seed,
        };
        let td_run = run_rec_td(pomdp, &mut actor, fm, &critic_net, &td_cfg)?;
        let critic = td_run.net_avg;
        let critic_mstd = mstd_estimate(
            pomdp,
            &mut actor,
            fm,
            &critic,
            cfg.gamma,
            cfg.t_len,
            cfg.n_eval_mstd,
            mstd_seed,
        )?;

        let omega = cfa_sgd(pomdp, &mut actor, &critic, fm, cfg, sgd_seed)?;
        let omega_norm = omega.norm2();

        let mut cfa_loss = 0.0;
        let mut eval_rng = ChaCha12Rng::seed_from_u64(cfa_eval_seed);
        for _ in 0..cfg.n_eval_cfa {
            let traj = sample_trajectory(pomdp, &mut actor, cfg.t_len, eval_rng.random())?;
            let advantages = critic_advantages_along(&mut actor, &critic, fm, &traj, cfg.t_len)?;
            cfa_loss += cfa_loss_sample(&mut actor, &advantages, &traj, &omega, cfg.gamma, cfg.t_len)?;
        }
        cfa_loss /= cfg.n_eval_cfa as f64;

        rows.push(NacTraceRow { n, value_est, critic_mstd, cfa_loss, omega_norm, phi_dev });
        actor.apply_step(eta_npg, &omega)?;
    }

    let final_seed: u64 = master.random();
    let final_value_est =
        mc_discounted_return(pomdp, &mut actor, cfg.gamma, t_eval, cfg.n_eval_value, final_seed)?;
    Ok(NacRun { rows, final_value_est, actor: actor.net().clone() })
}

/// Non-statistical ingredients of the outer-loop convergence bound, reported
/// for observability only (never asserted):
/// `ln|A| / ((1-gamma) sqrt(N))`, the width-dependent approximation term
/// `||rho||^2 p_T(alpha_m rho1) / ((1-gamma) m^{1/4})`, and the horizon tail
/// `gamma^T r_inf / (1-gamma)^2`, plus the memory-regime classification
/// (`alpha_m rho1` below 1: per-step sensitivities decay geometrically).
#[derive(Debug, Clone)]
pub struct NpgDiagnostics {
    pub kl_radius_term: f64,
    pub width_term: f64,
    pub tail_term: f64,
    pub alpha_m_rho1: f64,
    pub long_term_memory: bool,
    pub p_t: f64,
}

pub fn npg_diagnostics(cfg: &NacConfig, n_actions: usize, r_inf: f64) -> NpgDiagnostics {
    let bounds = cfg.activation.bounds();
    let sc = smoothness_constants(
        bounds,
        cfg.alpha_actor,
        &cfg.actor_radii,
        cfg.m_actor,
        1,
        cfg.t_len,
    );
    let p_t = sc.p[cfg.t_len];
    let one_minus = 1.0 - cfg.gamma;
    let rho_sq = cfg.actor_radii.norm2().powi(2);
    let alpha_m_rho1 = sc.alpha_m * bounds.rho1;
    NpgDiagnostics {
        kl_radius_term: (n_actions as f64).ln() / (one_minus * (cfg.n_outer.max(1) as f64).sqrt()),
        width_term: rho_sq * p_t / (one_minus * (cfg.m_actor as f64).powf(0.25)),
        tail_term: cfg.gamma.powi(cfg.t_len as i32) * r_inf / (one_minus * one_minus),
        alpha_m_rho1,
        long_term_memory: alpha_m_rho1 >= 1.0,
        p_t,
    }
}
