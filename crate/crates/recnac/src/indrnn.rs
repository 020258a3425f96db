//! Independently-recurrent network with exact forward-mode gradients.
//!
//! Each hidden unit evolves autonomously,
//!
//! ```text
//! H_t(i) = act(w_i * H_{t-1}(i) + <u_i, x_t>),    H_{-1} = 0,
//! F_t    = (1/sqrt(m)) * sum_i c_i * H_t(i),
//! ```
//!
//! with a frozen readout `c in {-1, +1}^m`. Because the recurrent weight is
//! diagonal, the full Jacobian of `H_t(i)` with respect to `(w_i, u_i)` is
//! carried forward exactly in `O(m d)` per step:
//!
//! ```text
//! dH_t/dw_i = act'(pre) * (H_{t-1}(i) + w_i * dH_{t-1}/dw_i)
//! dH_t/du_i = act'(pre) * (x_t + w_i * dH_{t-1}/du_i)
//! ```
//!
//! Symmetric initialization mirrors units `i` and `i + m/2` with negated
//! readout signs, so `F_t(.; Theta(0)) = 0` identically; the readout sum is
//! accumulated pair-by-pair in a single pass to keep that cancellation exact
//! in floating point.
//!
//! Training is constrained to the max-norm ball around the init snapshot:
//! `|w_i - w_i(0)| <= rho_w / sqrt(m)` and `||u_i - u_i(0)||_2 <= rho_u /
//! sqrt(m)`, whose projection is a per-unit clamp / ball projection.

use crate::error::{Error, Result};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Tanh,
    Sigmoid,
}

/// `rho0 >= sup|act|`, `rho1 >= sup|act'|`, `rho2 >= sup|act''|`.
#[derive(Debug, Clone, Copy)]
pub struct ActivationBounds {
    pub rho0: f64,
    pub rho1: f64,
    pub rho2: f64,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    #[inline]
    pub fn deriv(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let h = z.tanh();
                1.0 - h * h
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 - s)
            }
        }
    }

    pub fn bounds(self) -> ActivationBounds {
        match self {
            // sup|tanh''| = 4 / (3 sqrt(3)).
            Activation::Tanh => ActivationBounds { rho0: 1.0, rho1: 1.0, rho2: 4.0 / (3.0 * 3.0_f64.sqrt()) },
            // sup|sigmoid''| = 1 / (6 sqrt(3)).
            Activation::Sigmoid => {
                ActivationBounds { rho0: 1.0, rho1: 0.25, rho2: 1.0 / (6.0 * 3.0_f64.sqrt()) }
            }
        }
    }
}

/// Network parameters plus the frozen init snapshot `(w0, u0)` the max-norm
/// ball is centered on. `u` is row-major: unit `i` owns `u[i*d .. (i+1)*d]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetParams {
    pub m: usize,
    pub d: usize,
    pub alpha: f64,
    pub activation: Activation,
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    pub c: Vec<f64>,
    pub w0: Vec<f64>,
    pub u0: Vec<f64>,
    pub seed: u64,
}

impl NetParams {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.d == 0 {
            return Err(Error::InvalidArgument("network dimensions must be positive".into()));
        }
        let ok = self.w.len() == self.m
            && self.w0.len() == self.m
            && self.c.len() == self.m
            && self.u.len() == self.m * self.d
            && self.u0.len() == self.m * self.d;
        if !ok {
            return Err(Error::InvalidArgument("parameter vector shape mismatch".into()));
        }
        if self.c.iter().any(|&c| c != 1.0 && c != -1.0) {
            return Err(Error::InvalidArgument("readout entries must be +/-1".into()));
        }
        Ok(())
    }

    /// Copy with the trainable parameters reset to the init snapshot.
    pub fn at_snapshot(&self) -> NetParams {
        let mut net = self.clone();
        net.w = net.w0.clone();
        net.u = net.u0.clone();
        net
    }

    /// `Theta - Theta(0)` as a parameter-shaped vector.
    pub fn deviation(&self) -> ParamVec {
        let mut v = ParamVec::zeros(self.m, self.d);
        for i in 0..self.m {
            v.w[i] = self.w[i] - self.w0[i];
        }
        for j in 0..self.m * self.d {
            v.u[j] = self.u[j] - self.u0[j];
        }
        v
    }

    /// `(1/m) sum_i |w_i - w_i(0)|`.
    pub fn dev_w_mean(&self) -> f64 {
        self.w.iter().zip(&self.w0).map(|(a, b)| (a - b).abs()).sum::<f64>() / self.m as f64
    }

    /// `(1/m) sum_i ||u_i - u_i(0)||_2`.
    pub fn dev_u_mean(&self) -> f64 {
        (0..self.m)
            .map(|i| {
                let row = &self.u[i * self.d..(i + 1) * self.d];
                let row0 = &self.u0[i * self.d..(i + 1) * self.d];
                row.iter().zip(row0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            })
            .sum::<f64>()
            / self.m as f64
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let net: NetParams = serde_json::from_str(&text)?;
        net.validate()?;
        Ok(net)
    }
}

/// Symmetric initialization: for `i < m/2` draw `c_i ~ Rad(1)`,
/// `w_i(0) ~ Rad(alpha)`, `u_i(0) ~ N(0, I_d)`, then mirror unit `i + m/2`
/// with the same weights and negated readout. The mirrored halves cancel, so
/// the network output is identically zero at initialization.
pub fn init_symmetric(
    m: usize,
    d: usize,
    alpha: f64,
    activation: Activation,
    seed: u64,
) -> Result<NetParams> {
    if m == 0 || !m.is_multiple_of(2) {
        return Err(Error::InvalidArgument("symmetric init needs even positive width".into()));
    }
    if d == 0 {
        return Err(Error::InvalidArgument("input dimension must be positive".into()));
    }
    if alpha < 0.0 {
        return Err(Error::InvalidArgument("alpha must be nonnegative".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let half = m / 2;
    let mut c = vec![0.0; m];
    let mut w0 = vec![0.0; m];
    let mut u0 = vec![0.0; m * d];
    for i in 0..half {
        c[i] = if rng.random::<f64>() < 0.5 { 1.0 } else { -1.0 };
        w0[i] = if rng.random::<f64>() < 0.5 { alpha } else { -alpha };
        for j in 0..d {
            u0[i * d + j] = StandardNormal.sample(&mut rng);
        }
        c[half + i] = -c[i];
        w0[half + i] = w0[i];
        for j in 0..d {
            u0[(half + i) * d + j] = u0[i * d + j];
        }
    }
    let net = NetParams {
        m,
        d,
        alpha,
        activation,
        w: w0.clone(),
        u: u0.clone(),
        c,
        w0,
        u0,
        seed,
    };
    net.validate()?;
    Ok(net)
}

/// Parameter-shaped vector (gradients, update directions, deviations).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVec {
    pub m: usize,
    pub d: usize,
    pub w: Vec<f64>,
    pub u: Vec<f64>,
}

impl ParamVec {
    pub fn zeros(m: usize, d: usize) -> Self {
        ParamVec { m, d, w: vec![0.0; m], u: vec![0.0; m * d] }
    }

    pub fn axpy(&mut self, scale: f64, other: &ParamVec) {
        debug_assert!(self.m == other.m && self.d == other.d);
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            *a += scale * b;
        }
        for (a, b) in self.u.iter_mut().zip(&other.u) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.w.iter_mut().for_each(|v| *v *= s);
        self.u.iter_mut().for_each(|v| *v *= s);
    }

    pub fn dot(&self, other: &ParamVec) -> f64 {
        debug_assert!(self.m == other.m && self.d == other.d);
        let wsum: f64 = self.w.iter().zip(&other.w).map(|(a, b)| a * b).sum();
        let usum: f64 = self.u.iter().zip(&other.u).map(|(a, b)| a * b).sum();
        wsum + usum
    }

    pub fn norm2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Projects onto the zero-centered max-norm set: `|w_i| <= rho_w/sqrt(m)`
    /// and `||u_i||_2 <= rho_u/sqrt(m)` per unit. Any vector in this set has
    /// `||.||_2 <= ||(rho_w, rho_u)||_2`.
    pub fn project(&mut self, radii: &ProjectionRadii) {
        let sqrt_m = (self.m as f64).sqrt();
        let w_cap = radii.rho_w / sqrt_m;
        let u_cap = radii.rho_u / sqrt_m;
        for w in self.w.iter_mut() {
            *w = w.clamp(-w_cap, w_cap);
        }
        for i in 0..self.m {
            let row = &mut self.u[i * self.d..(i + 1) * self.d];
            let mut prev = f64::INFINITY;
            loop {
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n <= u_cap || n >= prev {
                    break;
                }
                prev = n;
                let s = u_cap / n;
                row.iter_mut().for_each(|v| *v *= s);
            }
        }
    }
}

/// Max-norm ball radii; the per-unit caps are `rho_w/sqrt(m)`, `rho_u/sqrt(m)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProjectionRadii {
    pub rho_w: f64,
    pub rho_u: f64,
}

impl ProjectionRadii {
    pub fn norm2(&self) -> f64 {
        (self.rho_w * self.rho_w + self.rho_u * self.rho_u).sqrt()
    }

    /// Effective recurrent-weight bound inside the ball.
    pub fn alpha_m(&self, alpha: f64, m: usize) -> f64 {
        alpha + self.rho_w / (m as f64).sqrt()
    }
}

/// Projects onto the max-norm ball centered at the init snapshot, in place.
pub fn project_max_norm(net: &mut NetParams, radii: &ProjectionRadii) {
    let sqrt_m = (net.m as f64).sqrt();
    let w_cap = radii.rho_w / sqrt_m;
    let u_cap = radii.rho_u / sqrt_m;
    for i in 0..net.m {
        net.w[i] = net.w[i].clamp(net.w0[i] - w_cap, net.w0[i] + w_cap);
        let row = &mut net.u[i * net.d..(i + 1) * net.d];
        let row0 = &net.u0[i * net.d..(i + 1) * net.d];
        // Rescale until the recomputed norm is inside the cap, so projecting
        // twice is a no-op even at the rounding boundary.
        let mut prev = f64::INFINITY;
        loop {
            let dev_sq: f64 = row.iter().zip(row0).map(|(a, b)| (a - b) * (a - b)).sum();
            let dev = dev_sq.sqrt();
            if dev <= u_cap || dev >= prev {
                break;
            }
            prev = dev;
            let s = u_cap / dev;
            for (a, b) in row.iter_mut().zip(row0) {
                *a = b + (*a - b) * s;
            }
        }
    }
}

/// Per-unit forward-mode derivatives of the hidden state at one step.
#[derive(Debug, Clone)]
pub struct GradState {
    /// `dh_dw[i] = dH_t(i)/dw_i`.
    pub dh_dw: Vec<f64>,
    /// `dh_du[i*d + j] = dH_t(i)/du_{i,j}`, row-major like `u`.
    pub dh_du: Vec<f64>,
}

/// Hidden states, outputs, and (optionally) gradients for a full sequence.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    pub hidden: Vec<Vec<f64>>,
    pub outputs: Vec<f64>,
    pub grads: Option<Vec<GradState>>,
}

impl ForwardTape {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }
}

/// One-step continuation from a shared prefix.
#[derive(Debug, Clone)]
pub struct BranchStep {
    pub hidden: Vec<f64>,
    pub output: f64,
    pub grad: Option<GradState>,
}

pub const INPUT_NORM_TOL: f64 = 1e-9;

fn check_input(x: &[f64], d: usize) -> Result<()> {
    if x.len() != d {
        return Err(Error::InvalidArgument("input dimension mismatch".into()));
    }
    let norm_sq: f64 = x.iter().map(|v| v * v).sum();
    if norm_sq.sqrt() > 1.0 + INPUT_NORM_TOL {
        return Err(Error::InvalidArgument(format!(
            "input norm {} exceeds the unit ball",
            norm_sq.sqrt()
        )));
    }
    Ok(())
}

/// Readout `(1/sqrt(m)) sum_i c_i h_i`, accumulated pair-by-pair so mirrored
/// units cancel exactly at the symmetric init.
fn readout(c: &[f64], hidden: &[f64], m: usize) -> f64 {
    let mut acc = 0.0;
    if m.is_multiple_of(2) {
        let half = m / 2;
        for i in 0..half {
            acc += c[i] * hidden[i] + c[half + i] * hidden[half + i];
        }
    } else {
        for i in 0..m {
            acc += c[i] * hidden[i];
        }
    }
    acc / (m as f64).sqrt()
}

fn step_unit(
    net: &NetParams,
    prev_hidden: Option<&[f64]>,
    prev_grad: Option<&GradState>,
    x: &[f64],
    with_grad: bool,
) -> (Vec<f64>, Option<GradState>) {
    let (m, d) = (net.m, net.d);
    let mut hidden = vec![0.0; m];
    let mut grad = if with_grad {
        Some(GradState { dh_dw: vec![0.0; m], dh_du: vec![0.0; m * d] })
    } else {
        None
    };
    for i in 0..m {
        let h_prev = prev_hidden.map_or(0.0, |h| h[i]);
        let mut pre = net.w[i] * h_prev;
        let u_row = &net.u[i * d..(i + 1) * d];
        for j in 0..d {
            pre += u_row[j] * x[j];
        }
        hidden[i] = net.activation.apply(pre);
        if let Some(g) = grad.as_mut() {
            let ip = net.activation.deriv(pre);
            let dw_prev = prev_grad.map_or(0.0, |pg| pg.dh_dw[i]);
            g.dh_dw[i] = ip * (h_prev + net.w[i] * dw_prev);
            for j in 0..d {
                let du_prev = prev_grad.map_or(0.0, |pg| pg.dh_du[i * d + j]);
                g.dh_du[i * d + j] = ip * (x[j] + net.w[i] * du_prev);
            }
        }
    }
    (hidden, grad)
}

/// Runs the network over `xs`, recording hidden states, outputs `F_t`, and
/// (when `with_grad`) the exact forward-mode gradient state per step.
pub fn forward(net: &NetParams, xs: &[Vec<f64>], with_grad: bool) -> Result<ForwardTape> {
    net.validate()?;
    let mut tape = ForwardTape {
        hidden: Vec::with_capacity(xs.len()),
        outputs: Vec::with_capacity(xs.len()),
        grads: if with_grad { Some(Vec::with_capacity(xs.len())) } else { None },
    };
    for x in xs {
        check_input(x, net.d)?;
        let (prev_h, prev_g) = match tape.hidden.last() {
            Some(h) => (Some(h.as_slice()), tape.grads.as_ref().and_then(|g| g.last())),
            None => (None, None),
        };
        let (hidden, grad) = step_unit(net, prev_h, prev_g, x, with_grad);
        tape.outputs.push(readout(&net.c, &hidden, net.m));
        tape.hidden.push(hidden);
        if let (Some(gs), Some(g)) = (tape.grads.as_mut(), grad) {
            gs.push(g);
        }
    }
    Ok(tape)
}

/// Single-step continuation from `prev` (pass `None` at `t = 0`) with a
/// candidate input; used to branch one closed step per candidate action off a
/// shared prefix.
pub fn forward_branch(
    net: &NetParams,
    prev: Option<(&[f64], Option<&GradState>)>,
    x: &[f64],
    with_grad: bool,
) -> Result<BranchStep> {
    check_input(x, net.d)?;
    let (prev_h, prev_g) = match prev {
        Some((h, g)) => (Some(h), g),
        None => (None, None),
    };
    if with_grad && prev_h.is_some() && prev_g.is_none() {
        return Err(Error::InvalidArgument("branch with gradients needs prefix gradients".into()));
    }
    let (hidden, grad) = step_unit(net, prev_h, prev_g, x, with_grad);
    Ok(BranchStep { output: readout(&net.c, &hidden, net.m), hidden, grad })
}

/// Assembles `grad F_t` from a gradient state:
/// `grad_{theta_i} F_t = (c_i / sqrt(m)) * (dH_t/dw_i, dH_t/du_i)`.
pub fn grad_from_state(net: &NetParams, state: &GradState) -> ParamVec {
    let (m, d) = (net.m, net.d);
    let inv = 1.0 / (m as f64).sqrt();
    let mut g = ParamVec::zeros(m, d);
    for i in 0..m {
        let s = net.c[i] * inv;
        g.w[i] = s * state.dh_dw[i];
        for j in 0..d {
            g.u[i * d + j] = s * state.dh_du[i * d + j];
        }
    }
    g
}

/// `grad_Theta F_t` from a tape recorded with gradients.
pub fn grad_f(net: &NetParams, tape: &ForwardTape, t: usize) -> Result<ParamVec> {
    let grads = tape
        .grads
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("tape was recorded without gradients".into()))?;
    let state = grads
        .get(t)
        .ok_or_else(|| Error::InvalidArgument(format!("tape has no step {t}")))?;
    Ok(grad_from_state(net, state))
}

/// First-order model at the init snapshot:
/// `F_lin_t(Theta) = <grad F_t(Theta(0)), Theta - Theta(0)>`, for every t.
/// Exactly zero at `Theta = Theta(0)` and linear in the deviation.
pub fn linearized_forward(net: &NetParams, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let snapshot = net.at_snapshot();
    let tape = forward(&snapshot, xs, true)?;
    let dev = net.deviation();
    let grads = tape.grads.as_ref().expect("tape with gradients");
    let inv = 1.0 / (net.m as f64).sqrt();
    let mut out = Vec::with_capacity(xs.len());
    for state in grads {
        let mut acc = 0.0;
        for i in 0..net.m {
            let mut unit = state.dh_dw[i] * dev.w[i];
            for j in 0..net.d {
                unit += state.dh_du[i * net.d + j] * dev.u[i * net.d + j];
            }
            acc += net.c[i] * inv * unit;
        }
        out.push(acc);
    }
    Ok(out)
}

/// Recurrent tangent feature of unit `i` at the init snapshot:
///
/// ```text
/// psi_t(i) = sum_{k=0}^{t} w_i(0)^k * (h_{t-k-1}(i), x_{t-k}) * prod_{j=0}^{k} I_{t-j}(i)
/// ```
///
/// with `h` the snapshot hidden trajectory, `h_{-1} = 0`, and
/// `I_s = act'(w_i(0) h_{s-1} + <u_i(0), x_s>)`. Rows are `[psi_w, psi_u[0..d]]`.
/// Satisfies `sqrt(m) * c_i * grad_{theta_i} F_t(Theta(0)) = psi_t(i)`.
pub fn ntrf_features(net: &NetParams, xs: &[Vec<f64>], t: usize) -> Result<Vec<Vec<f64>>> {
    if t >= xs.len() {
        return Err(Error::InvalidArgument(format!("t={t} out of range for {} inputs", xs.len())));
    }
    for x in xs.iter().take(t + 1) {
        check_input(x, net.d)?;
    }
    let (m, d) = (net.m, net.d);
    let mut rows = Vec::with_capacity(m);
    let mut h = vec![0.0; t + 1];
    let mut act_deriv = vec![0.0; t + 1];
    for i in 0..m {
        let w0 = net.w0[i];
        let u0 = &net.u0[i * d..(i + 1) * d];
        let mut h_prev = 0.0;
        for (s, x) in xs.iter().take(t + 1).enumerate() {
            let mut pre = w0 * h_prev;
            for j in 0..d {
                pre += u0[j] * x[j];
            }
            h[s] = net.activation.apply(pre);
            act_deriv[s] = net.activation.deriv(pre);
            h_prev = h[s];
        }
        let mut row = vec![0.0; 1 + d];
        let mut w_pow = 1.0;
        let mut deriv_prod = 1.0;
        for k in 0..=t {
            deriv_prod *= act_deriv[t - k];
            let coeff = w_pow * deriv_prod;
            let h_lag = if k == t { 0.0 } else { h[t - k - 1] };
            row[0] += coeff * h_lag;
            for j in 0..d {
                row[1 + j] += coeff * xs[t - k][j];
            }
            w_pow *= w0;
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Applies a transport map to the init: `theta_bar_i = theta_i(0) +
/// (c_i / sqrt(m)) * v(w_i(0), u_i(0))`, with `v` returning `(v_w, v_u)`.
/// The snapshot is preserved, so the result's deviation is the transport.
pub fn build_transported_params(
    net: &NetParams,
    transport: &dyn Fn(f64, &[f64]) -> (f64, Vec<f64>),
) -> Result<NetParams> {
    let (m, d) = (net.m, net.d);
    let inv = 1.0 / (m as f64).sqrt();
    let mut out = net.at_snapshot();
    for i in 0..m {
        let (vw, vu) = transport(net.w0[i], &net.u0[i * d..(i + 1) * d]);
        if vu.len() != d {
            return Err(Error::InvalidArgument("transport output dimension mismatch".into()));
        }
        let s = net.c[i] * inv;
        out.w[i] += s * vw;
        for j in 0..d {
            out.u[i * d + j] += s * vu[j];
        }
    }
    Ok(out)
}

/// Growth/smoothness constant tables.
///
/// Entry `t` is built from `p_t(x) = sum_{k<t} x^k` and `q_t(x) =
/// sum_{k<t} (k+1) x^k` at `x = alpha_m * rho1`, so **entry `t` bounds
/// quantities at sequence positions `< t`** (entry 0 is the empty bound).
/// `l[t]` bounds the per-unit hidden gradient norm at positions `< t`, hence
/// `||grad F_s||_2 <= sqrt(l[s+1])` and `|F_s| <= l[s+1] * ||rho||_2`.
#[derive(Debug, Clone)]
pub struct SmoothnessConstants {
    pub bounds: ActivationBounds,
    pub alpha_m: f64,
    pub rho_norm: f64,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub l: Vec<f64>,
    pub beta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub chi: Vec<f64>,
}

/// Tables up to entry `t_max` for a width-`m` network with input dimension
/// `d` constrained by `radii`.
pub fn smoothness_constants(
    bounds: ActivationBounds,
    alpha: f64,
    radii: &ProjectionRadii,
    m: usize,
    d: usize,
    t_max: usize,
) -> SmoothnessConstants {
    let alpha_m = radii.alpha_m(alpha, m);
    let x = alpha_m * bounds.rho1;
    let mut p = vec![0.0; t_max + 1];
    let mut q = vec![0.0; t_max + 1];
    let mut x_pow = 1.0;
    for t in 1..=t_max {
        p[t] = p[t - 1] + x_pow;
        q[t] = q[t - 1] + t as f64 * x_pow;
        x_pow *= x;
    }
    let l: Vec<f64> = p
        .iter()
        .map(|&pt| (bounds.rho0 * bounds.rho0 + 1.0) * bounds.rho1 * bounds.rho1 * pt * pt)
        .collect();
    let beta: Vec<f64> = p.iter().zip(&q).map(|(&pt, &qt)| d as f64 * pt * qt).collect();
    let lambda: Vec<f64> =
        l.iter().map(|&lt| 2.0_f64.sqrt() * (bounds.rho0 + 1.0 + alpha_m * lt)).collect();
    let chi: Vec<f64> =
        l.iter().zip(&beta).map(|(&lt, &bt)| 2.0_f64.sqrt() * (lt + alpha_m * bt)).collect();
    SmoothnessConstants {
        bounds,
        alpha_m,
        rho_norm: radii.norm2(),
        p,
        q,
        l,
        beta,
        lambda,
        chi,
    }
}

impl SmoothnessConstants {
    /// Coefficient of the linearization gap at positions `< t`:
    /// `|F_lin - F| <= (2/sqrt(m)) (rho2 Lambda^2 + rho1 chi) ||dev||^2`.
    pub fn lin_gap_coeff(&self, t: usize, m: usize) -> f64 {
        2.0 / (m as f64).sqrt()
            * (self.bounds.rho2 * self.lambda[t] * self.lambda[t] + self.bounds.rho1 * self.chi[t])
    }

    /// Coefficient of the log-linearization KL bound at positions `< t`.
    pub fn kl_coeff(&self, t: usize, m: usize) -> f64 {
        6.0 / (m as f64).sqrt()
            * (self.lambda[t] * self.lambda[t] * self.bounds.rho2 + self.chi[t] * self.bounds.rho1)
    }

    /// Uniform output bound at positions `< t`: `|F| <= l[t] * ||rho||_2`.
    pub fn f_bound(&self, t: usize) -> f64 {
        self.l[t] * self.rho_norm
    }

    /// Largest possible TD error given `r_inf`, positions `< t`.
    pub fn delta_max(&self, t: usize, r_inf: f64) -> f64 {
        r_inf + 2.0 * self.f_bound(t)
    }

    /// Bound on the discounted semi-gradient norm over positions `< t`.
    /// `max(l, sqrt(l))` keeps the bound valid when `l[t] < 1` (the gradient
    /// norm itself is only bounded by `sqrt(l)`).
    pub fn semi_grad_bound(&self, t: usize, gamma: f64, r_inf: f64) -> f64 {
        let lt = self.l[t];
        self.delta_max(t, r_inf) * lt.max(lt.sqrt()) / (1.0 - gamma)
    }
}
