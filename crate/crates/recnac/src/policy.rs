//! Softmax policies driven by a recurrent network over embedded histories.
//!
//! The actor scores each candidate action by closing the current step with it:
//! the open history `(y_0, a_0, ..., y_t)` plus a candidate `a` embeds to the
//! closed sequence `X_0..X_t`, and
//!
//! ```text
//! pi(a | z_t) = exp(F_t(X_0..X_t; Phi)) / sum_a' exp(F_t(...; Phi)).
//! ```
//!
//! The shared prefix `X_0..X_{t-1}` is cached (hidden states plus forward-mode
//! gradients) and re-synced by longest common prefix, so sampling, tree
//! evaluation, and trajectory replays all branch one step per action.
//!
//! The score function is `grad log pi(a|z) = grad F(a) - sum_a' pi(a') grad
//! F(a')`, and the log-linearized companion replaces `F` by its first-order
//! model at the init snapshot.

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::indrnn::{forward_branch, grad_from_state, linearized_forward, GradState, NetParams, ParamVec};
use crate::pomdp::{History, Policy};

/// Numerically safe softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// `KL(p || q) = sum_a p_a ln(p_a / q_a)`; `q` must dominate `p`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::InvalidArgument("KL needs equal-length distributions".into()));
    }
    let mut acc = 0.0;
    for (&pa, &qa) in p.iter().zip(q) {
        if pa == 0.0 {
            continue;
        }
        if qa <= 0.0 {
            return Err(Error::InvalidArgument("KL undefined: q vanishes where p does not".into()));
        }
        acc += pa * (pa / qa).ln();
    }
    Ok(acc)
}

struct PrefixCache {
    obs: Vec<usize>,
    actions: Vec<usize>,
    hidden: Vec<Vec<f64>>,
    grads: Vec<GradState>,
}

impl PrefixCache {
    fn new() -> Self {
        PrefixCache { obs: vec![], actions: vec![], hidden: vec![], grads: vec![] }
    }

    fn clear(&mut self) {
        self.obs.clear();
        self.actions.clear();
        self.hidden.clear();
        self.grads.clear();
    }
}

/// Softmax policy over branch values of a recurrent network.
pub struct SoftmaxRnnPolicy {
    net: NetParams,
    fm: FeatureMap,
    cache: PrefixCache,
}

impl SoftmaxRnnPolicy {
    pub fn new(net: NetParams, fm: FeatureMap) -> Result<Self> {
        net.validate()?;
        if fm.d != net.d {
            return Err(Error::InvalidArgument(
                "feature dimension does not match network input dimension".into(),
            ));
        }
        Ok(SoftmaxRnnPolicy { net, fm, cache: PrefixCache::new() })
    }

    pub fn net(&self) -> &NetParams {
        &self.net
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.fm
    }

    /// Shifts the parameters along `omega` (a natural-gradient step). The init
    /// snapshot is untouched; cached activations are invalidated.
    pub fn apply_step(&mut self, eta: f64, omega: &ParamVec) -> Result<()> {
        if omega.m != self.net.m || omega.d != self.net.d {
            return Err(Error::InvalidArgument("step direction has wrong shape".into()));
        }
        for (w, o) in self.net.w.iter_mut().zip(&omega.w) {
            *w += eta * o;
        }
        for (u, o) in self.net.u.iter_mut().zip(&omega.u) {
            *u += eta * o;
        }
        self.cache.clear();
        Ok(())
    }

    /// Re-syncs the cache to the closed prefix `(obs[..t], actions[..t])` of
    /// an open history, reusing the longest matching prefix.
    fn sync_prefix(&mut self, history: &History, t: usize) -> Result<()> {
        let mut keep = 0;
        while keep < t
            && keep < self.cache.obs.len()
            && self.cache.obs[keep] == history.obs[keep]
            && self.cache.actions[keep] == history.actions[keep]
        {
            keep += 1;
        }
        self.cache.obs.truncate(keep);
        self.cache.actions.truncate(keep);
        self.cache.hidden.truncate(keep);
        self.cache.grads.truncate(keep);
        for k in keep..t {
            let x = self.fm.embed(history.obs[k], history.actions[k]).to_vec();
            let prev = if k == 0 {
                None
            } else {
                Some((self.cache.hidden[k - 1].as_slice(), Some(&self.cache.grads[k - 1])))
            };
            let step = forward_branch(&self.net, prev, &x, true)?;
            self.cache.obs.push(history.obs[k]);
            self.cache.actions.push(history.actions[k]);
            self.cache.hidden.push(step.hidden);
            self.cache.grads.push(step.grad.expect("branch recorded with gradients"));
        }
        Ok(())
    }

    fn check_open(&self, t: usize, history: &History) -> Result<()> {
        if !history.is_open() || history.t() != t {
            return Err(Error::InvalidArgument(format!(
                "softmax policy needs an open history at t={t}"
            )));
        }
        Ok(())
    }

    /// Branch steps for every candidate action at `(t, history)`.
    fn branches(&mut self, t: usize, history: &History, with_grad: bool) -> Result<Vec<crate::indrnn::BranchStep>> {
        self.check_open(t, history)?;
        self.sync_prefix(history, t)?;
        let prev_hidden: Option<&[f64]> =
            if t == 0 { None } else { Some(self.cache.hidden[t - 1].as_slice()) };
        let prev_grad = if t == 0 { None } else { Some(&self.cache.grads[t - 1]) };
        let mut steps = Vec::with_capacity(self.fm.n_actions);
        for a in 0..self.fm.n_actions {
            let x = self.fm.embed(history.obs[t], a).to_vec();
            let prev = prev_hidden.map(|h| (h, prev_grad));
            steps.push(forward_branch(&self.net, prev, &x, with_grad)?);
        }
        Ok(steps)
    }

    /// Branch values `F_t((z_t, a); Phi)` for every action.
    pub fn action_values(&mut self, t: usize, history: &History) -> Result<Vec<f64>> {
        Ok(self.branches(t, history, false)?.into_iter().map(|b| b.output).collect())
    }

    pub fn action_probs(&mut self, t: usize, history: &History) -> Result<Vec<f64>> {
        Ok(softmax(&self.action_values(t, history)?))
    }

    /// `grad_Phi log pi(a | z_t)` and the action distribution it came from.
    pub fn log_prob_grad(
        &mut self,
        t: usize,
        history: &History,
        a: usize,
    ) -> Result<(ParamVec, Vec<f64>)> {
        if a >= self.fm.n_actions {
            return Err(Error::InvalidArgument("action out of range".into()));
        }
        let steps = self.branches(t, history, true)?;
        let probs = softmax(&steps.iter().map(|s| s.output).collect::<Vec<_>>());
        let mut grad = ParamVec::zeros(self.net.m, self.net.d);
        for (a2, step) in steps.iter().enumerate() {
            let g = grad_from_state(&self.net, step.grad.as_ref().expect("gradient recorded"));
            let coeff = if a2 == a { 1.0 - probs[a2] } else { -probs[a2] };
            grad.axpy(coeff, &g);
        }
        Ok((grad, probs))
    }

    /// Action distribution of the log-linearized policy: branch values are
    /// replaced by the first-order model of `F` at the init snapshot.
    pub fn log_linearized_probs(&mut self, t: usize, history: &History) -> Result<Vec<f64>> {
        self.check_open(t, history)?;
        let mut logits = Vec::with_capacity(self.fm.n_actions);
        for a in 0..self.fm.n_actions {
            let mut xs: Vec<Vec<f64>> = (0..t)
                .map(|k| self.fm.embed(history.obs[k], history.actions[k]).to_vec())
                .collect();
            xs.push(self.fm.embed(history.obs[t], a).to_vec());
            let lin = linearized_forward(&self.net, &xs)?;
            logits.push(*lin.last().expect("nonempty sequence"));
        }
        Ok(softmax(&logits))
    }
}

impl Policy for SoftmaxRnnPolicy {
    fn probs(&mut self, t: usize, history: &History) -> Result<Vec<f64>> {
        self.action_probs(t, history)
    }

    fn begin_trajectory(&mut self) {
        self.cache.clear();
    }
}

/// Critic-based advantage estimate at one open history.
#[derive(Debug, Clone)]
pub struct AdvantageEstimate {
    pub q: Vec<f64>,
    pub v: f64,
    pub advantages: Vec<f64>,
    pub action_probs: Vec<f64>,
}

/// Scores every action by the critic's branch value `F_t((z_t, a); Theta)`,
/// then centers with the actor's action distribution:
/// `V = sum_a pi(a) Q(a)`, `A(a) = Q(a) - V`.
pub fn advantages_from_critic(
    actor: &mut SoftmaxRnnPolicy,
    critic: &NetParams,
    fm: &FeatureMap,
    t: usize,
    history: &History,
) -> Result<AdvantageEstimate> {
    if !history.is_open() || history.t() != t {
        return Err(Error::InvalidArgument("advantages need an open history".into()));
    }
    let action_probs = actor.action_probs(t, history)?;
    // Critic prefix pass, then one branch per action.
    let mut prev_hidden: Option<Vec<f64>> = None;
    for k in 0..t {
        let x = fm.embed(history.obs[k], history.actions[k]).to_vec();
        let step =
            forward_branch(critic, prev_hidden.as_deref().map(|h| (h, None)), &x, false)?;
        prev_hidden = Some(step.hidden);
    }
    let mut q = Vec::with_capacity(fm.n_actions);
    for a in 0..fm.n_actions {
        let x = fm.embed(history.obs[t], a).to_vec();
        let step =
            forward_branch(critic, prev_hidden.as_deref().map(|h| (h, None)), &x, false)?;
        q.push(step.output);
    }
    let v: f64 = action_probs.iter().zip(&q).map(|(p, q)| p * q).sum();
    let advantages = q.iter().map(|qa| qa - v).collect();
    Ok(AdvantageEstimate { q, v, advantages, action_probs })
}
