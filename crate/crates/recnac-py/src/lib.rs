//! Python bindings for the core types and training loops: POMDP instances,
//! feature maps, symmetric-init networks, trajectory sampling, temporal-
//! difference evaluation, natural actor-critic, and the exact oracle.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use recnac::features::{embed_pairs, make_feature_map, FeatureKind};
use recnac::harness::PolicySpec;
use recnac::indrnn::{forward, init_symmetric, Activation, NetParams, ProjectionRadii};
use recnac::oracle::{belief_from_history, exact_q_values, exact_return, OracleConfig};
use recnac::pomdp::{random_pomdp, History};
use recnac::recnpg::{run_rec_nac, NacConfig};
use recnac::rectd::{mstd_estimate, run_rec_td, RecTdConfig};
use std::path::PathBuf;

fn pyerr(e: recnac::Error) -> PyErr {
    match e {
        recnac::Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_activation(name: &str) -> PyResult<Activation> {
    match name {
        "tanh" => Ok(Activation::Tanh),
        "sigmoid" => Ok(Activation::Sigmoid),
        _ => Err(PyValueError::new_err(format!("unknown activation {name:?}"))),
    }
}

/// Open history from aligned index lists; `obs` must be one longer than
/// `actions`. Realized rewards are not part of the conditioning.
fn open_history(obs: Vec<usize>, actions: Vec<usize>) -> History {
    let rewards = vec![f64::NAN; actions.len()];
    History { obs, actions, rewards }
}

#[pyclass(frozen)]
struct Pomdp {
    inner: recnac::pomdp::Pomdp,
}

#[pymethods]
impl Pomdp {
    /// Draws transition, emission, and reward tables from the seed.
    #[staticmethod]
    fn random(states: usize, obs: usize, actions: usize, seed: u64) -> PyResult<Self> {
        Ok(Pomdp { inner: random_pomdp(states, obs, actions, seed).map_err(pyerr)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Pomdp { inner: recnac::pomdp::Pomdp::load(&path).map_err(pyerr)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(pyerr)
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states
    }

    #[getter]
    fn n_obs(&self) -> usize {
        self.inner.n_obs
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.inner.n_actions
    }

    /// Largest absolute reward; scales oracle truncation tolerances.
    #[getter]
    fn r_inf(&self) -> f64 {
        self.inner.r_inf
    }

    /// Posterior over hidden states after an open history.
    fn belief(&self, obs: Vec<usize>, actions: Vec<usize>) -> PyResult<Vec<f64>> {
        let h = open_history(obs, actions);
        Ok(belief_from_history(&self.inner, &h).map_err(pyerr)?.probs)
    }

    fn __repr__(&self) -> String {
        format!(
            "Pomdp(states={}, obs={}, actions={})",
            self.inner.n_states, self.inner.n_obs, self.inner.n_actions
        )
    }
}

/// Behavior-policy description; training and evaluation entry points build a
/// fresh stateful policy from it per run, so results depend only on seeds.
#[pyclass(frozen)]
#[derive(Clone)]
struct Policy {
    spec: PolicySpec,
}

#[pymethods]
impl Policy {
    #[staticmethod]
    fn uniform() -> Self {
        Policy { spec: PolicySpec::Uniform }
    }

    /// Explores uniformly with a ramping probability capped at `p_exp`,
    /// otherwise replays the best-rewarded action seen so far.
    #[staticmethod]
    fn epsilon_greedy(p_exp: f64) -> Self {
        Policy { spec: PolicySpec::EpsilonGreedy { p_exp } }
    }

    /// Cycles through `actions` regardless of observations.
    #[staticmethod]
    fn fixed(actions: Vec<usize>) -> Self {
        Policy { spec: PolicySpec::Fixed { actions } }
    }
}

#[pyclass(frozen)]
struct FeatureMap {
    inner: recnac::features::FeatureMap,
}

#[pymethods]
impl FeatureMap {
    /// Gaussian embedding per (observation, action) pair, rescaled so the
    /// largest embedding has norm one.
    #[staticmethod]
    fn gaussian(pomdp: &Pomdp, d: usize, seed: u64) -> PyResult<Self> {
        let fm = make_feature_map(&pomdp.inner, FeatureKind::GaussianJoint, d, seed)
            .map_err(pyerr)?;
        Ok(FeatureMap { inner: fm })
    }

    /// Concatenated one-hot embedding; dimension is `n_obs + n_actions`.
    #[staticmethod]
    fn one_hot(pomdp: &Pomdp) -> PyResult<Self> {
        let fm =
            make_feature_map(&pomdp.inner, FeatureKind::ConcatOneHot, 0, 0).map_err(pyerr)?;
        Ok(FeatureMap { inner: fm })
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d
    }

    fn embed(&self, y: usize, a: usize) -> PyResult<Vec<f64>> {
        if y >= self.inner.n_obs || a >= self.inner.n_actions {
            return Err(PyValueError::new_err(format!("pair ({y}, {a}) out of range")));
        }
        Ok(self.inner.embed(y, a).to_vec())
    }
}

#[pyclass(frozen)]
struct Net {
    inner: NetParams,
}

#[pymethods]
impl Net {
    /// Symmetric initialization: mirrored unit pairs with opposite readout
    /// signs, so the output is identically zero before training.
    #[staticmethod]
    #[pyo3(signature = (m, d, alpha=0.5, seed=0, activation="tanh"))]
    fn symmetric(m: usize, d: usize, alpha: f64, seed: u64, activation: &str) -> PyResult<Self> {
        let act = parse_activation(activation)?;
        Ok(Net { inner: init_symmetric(m, d, alpha, act, seed).map_err(pyerr)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Net { inner: NetParams::load(&path).map_err(pyerr)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(pyerr)
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d
    }

    /// Mean recurrent-weight deviation from the init snapshot.
    #[getter]
    fn dev_w(&self) -> f64 {
        self.inner.dev_w_mean()
    }

    /// Mean input-weight deviation from the init snapshot.
    #[getter]
    fn dev_u(&self) -> f64 {
        self.inner.dev_u_mean()
    }

    /// Outputs `F_t` along an aligned observation/action sequence.
    fn forward(&self, fm: &FeatureMap, obs: Vec<usize>, actions: Vec<usize>) -> PyResult<Vec<f64>> {
        let xs = embed_pairs(&fm.inner, &obs, &actions).map_err(pyerr)?;
        Ok(forward(&self.inner, &xs, false).map_err(pyerr)?.outputs)
    }

    fn __repr__(&self) -> String {
        format!("Net(m={}, d={})", self.inner.m, self.inner.d)
    }
}

/// Curves from one temporal-difference evaluation run.
#[pyclass(frozen)]
struct TdRun {
    #[pyo3(get)]
    mstd_curve: Vec<f64>,
    #[pyo3(get)]
    avg_mstd_curve: Vec<f64>,
    #[pyo3(get)]
    dev_w_curve: Vec<f64>,
    #[pyo3(get)]
    dev_u_curve: Vec<f64>,
    net_final: NetParams,
    net_avg: NetParams,
}

#[pymethods]
impl TdRun {
    #[getter]
    fn net_final(&self) -> Net {
        Net { inner: self.net_final.clone() }
    }

    #[getter]
    fn net_avg(&self) -> Net {
        Net { inner: self.net_avg.clone() }
    }
}

/// Trace of one natural actor-critic run.
#[pyclass(frozen)]
struct NacRun {
    #[pyo3(get)]
    value_curve: Vec<f64>,
    #[pyo3(get)]
    critic_mstd_curve: Vec<f64>,
    #[pyo3(get)]
    final_value_est: f64,
    actor: NetParams,
}

#[pymethods]
impl NacRun {
    #[getter]
    fn actor(&self) -> Net {
        Net { inner: self.actor.clone() }
    }
}

/// Samples one rollout; returns (states, obs, actions, rewards).
#[pyfunction]
#[pyo3(name = "sample_trajectory", signature = (pomdp, policy, len, seed=0))]
fn sample_trajectory_py(
    pomdp: &Pomdp,
    policy: &Policy,
    len: usize,
    seed: u64,
) -> PyResult<(Vec<usize>, Vec<usize>, Vec<usize>, Vec<f64>)> {
    let mut p = policy.spec.build(&pomdp.inner).map_err(pyerr)?;
    let t = recnac::pomdp::sample_trajectory(&pomdp.inner, p.as_mut(), len, seed)
        .map_err(pyerr)?;
    Ok((t.states, t.obs, t.actions, t.rewards))
}

/// Projected semi-gradient temporal-difference learning.
#[pyfunction]
#[pyo3(
    name = "run_rec_td",
    signature = (pomdp, policy, fm, net, *, eta=0.05, gamma=0.9, t_len=8, k_iters=100, rho_w=1.0, rho_u=1.0, seed=0)
)]
#[allow(clippy::too_many_arguments)]
fn run_rec_td_py(
    pomdp: &Pomdp,
    policy: &Policy,
    fm: &FeatureMap,
    net: &Net,
    eta: f64,
    gamma: f64,
    t_len: usize,
    k_iters: usize,
    rho_w: f64,
    rho_u: f64,
    seed: u64,
) -> PyResult<TdRun> {
    let cfg = RecTdConfig {
        eta,
        gamma,
        t_len,
        k_iters,
        radii: ProjectionRadii { rho_w, rho_u },
        seed,
    };
    let mut p = policy.spec.build(&pomdp.inner).map_err(pyerr)?;
    let run = run_rec_td(&pomdp.inner, p.as_mut(), &fm.inner, &net.inner, &cfg).map_err(pyerr)?;
    Ok(TdRun {
        mstd_curve: run.mstd_curve,
        avg_mstd_curve: run.avg_mstd_curve,
        dev_w_curve: run.dev_w_curve,
        dev_u_curve: run.dev_u_curve,
        net_final: run.net_final,
        net_avg: run.net_avg,
    })
}

/// Mean squared temporal difference of `net` on fresh rollouts.
#[pyfunction]
#[pyo3(
    name = "mstd_estimate",
    signature = (pomdp, policy, fm, net, *, gamma=0.9, t_len=8, n_eval=100, seed=0)
)]
#[allow(clippy::too_many_arguments)]
fn mstd_estimate_py(
    pomdp: &Pomdp,
    policy: &Policy,
    fm: &FeatureMap,
    net: &Net,
    gamma: f64,
    t_len: usize,
    n_eval: usize,
    seed: u64,
) -> PyResult<f64> {
    let mut p = policy.spec.build(&pomdp.inner).map_err(pyerr)?;
    mstd_estimate(&pomdp.inner, p.as_mut(), &fm.inner, &net.inner, gamma, t_len, n_eval, seed)
        .map_err(pyerr)
}

/// Full natural actor-critic loop with library defaults for the inner loops.
#[pyfunction]
#[pyo3(
    name = "run_rec_nac",
    signature = (pomdp, fm, *, n_outer=30, m=32, t_len=6, gamma=0.5, seed=0)
)]
fn run_rec_nac_py(
    pomdp: &Pomdp,
    fm: &FeatureMap,
    n_outer: usize,
    m: usize,
    t_len: usize,
    gamma: f64,
    seed: u64,
) -> PyResult<NacRun> {
    let cfg = NacConfig {
        n_outer,
        m_actor: m,
        m_critic: m,
        t_len,
        gamma,
        seed,
        ..NacConfig::default()
    };
    let run = run_rec_nac(&pomdp.inner, &fm.inner, &cfg).map_err(pyerr)?;
    Ok(NacRun {
        value_curve: run.rows.iter().map(|r| r.value_est).collect(),
        critic_mstd_curve: run.rows.iter().map(|r| r.critic_mstd).collect(),
        final_value_est: run.final_value_est,
        actor: run.actor,
    })
}

/// Exact truncated action values at an open history, by brute-force
/// enumeration of the hidden-state and future-path tree.
#[pyfunction]
#[pyo3(name = "exact_q", signature = (pomdp, policy, obs, actions, *, gamma=0.9, horizon=10))]
fn exact_q_py(
    pomdp: &Pomdp,
    policy: &Policy,
    obs: Vec<usize>,
    actions: Vec<usize>,
    gamma: f64,
    horizon: usize,
) -> PyResult<Vec<f64>> {
    let cfg = OracleConfig::from_horizon(gamma, pomdp.inner.r_inf, horizon).map_err(pyerr)?;
    let mut p = policy.spec.build(&pomdp.inner).map_err(pyerr)?;
    let h = open_history(obs, actions);
    exact_q_values(&pomdp.inner, p.as_mut(), &cfg, &h).map_err(pyerr)
}

/// Exact truncated discounted return of `policy` from the start distribution.
#[pyfunction]
#[pyo3(name = "exact_return", signature = (pomdp, policy, *, gamma=0.9, horizon=10))]
fn exact_return_py(
    pomdp: &Pomdp,
    policy: &Policy,
    gamma: f64,
    horizon: usize,
) -> PyResult<f64> {
    let cfg = OracleConfig::from_horizon(gamma, pomdp.inner.r_inf, horizon).map_err(pyerr)?;
    let mut p = policy.spec.build(&pomdp.inner).map_err(pyerr)?;
    exact_return(&pomdp.inner, p.as_mut(), &cfg).map_err(pyerr)
}

#[pymodule]
fn recnac_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Pomdp>()?;
    m.add_class::<Policy>()?;
    m.add_class::<FeatureMap>()?;
    m.add_class::<Net>()?;
    m.add_class::<TdRun>()?;
    m.add_class::<NacRun>()?;
    m.add_function(wrap_pyfunction!(sample_trajectory_py, m)?)?;
    m.add_function(wrap_pyfunction!(run_rec_td_py, m)?)?;
    m.add_function(wrap_pyfunction!(mstd_estimate_py, m)?)?;
    m.add_function(wrap_pyfunction!(run_rec_nac_py, m)?)?;
    m.add_function(wrap_pyfunction!(exact_q_py, m)?)?;
    m.add_function(wrap_pyfunction!(exact_return_py, m)?)?;
    Ok(())
}
