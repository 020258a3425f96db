//! Embeddings of (observation, action) pairs into the unit ball of `R^d`.
//!
//! The recurrent network consumes `X_t = embed(Y_t, A_t)`; every embedding is
//! constrained to `||X||_2 <= 1`, which the network's smoothness constants
//! assume.

use crate::error::{Error, Result};
use crate::pomdp::{History, Pomdp};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    /// Standard Gaussian vector per (y, a), all rescaled by the maximum norm
    /// so the largest embedding has norm exactly 1.
    GaussianJoint,
    /// Concatenated one-hot `(onehot(y), onehot(a)) / sqrt(2)`; forces
    /// `d = n_obs + n_actions` and gives every embedding norm exactly 1.
    ConcatOneHot,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureMap {
    pub kind: FeatureKind,
    pub d: usize,
    pub n_obs: usize,
    pub n_actions: usize,
    pub seed: u64,
    /// `table[y * n_actions + a]` is the embedding of `(y, a)`.
    table: Vec<Vec<f64>>,
}

/// Builds the embedding table for `pomdp`. `d` is ignored for
/// [`FeatureKind::ConcatOneHot`], which fixes `d = n_obs + n_actions`.
pub fn make_feature_map(pomdp: &Pomdp, kind: FeatureKind, d: usize, seed: u64) -> Result<FeatureMap> {
    let n_obs = pomdp.n_obs;
    let n_actions = pomdp.n_actions;
    match kind {
        FeatureKind::GaussianJoint => {
            if d == 0 {
                return Err(Error::InvalidArgument("feature dimension must be positive".into()));
            }
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mut table: Vec<Vec<f64>> = (0..n_obs * n_actions)
                .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect();
            let max_norm = table
                .iter()
                .map(|x| norm2(x))
                .fold(0.0_f64, f64::max);
            if max_norm == 0.0 {
                return Err(Error::InvalidArgument("degenerate feature draw".into()));
            }
            for x in &mut table {
                for v in x.iter_mut() {
                    *v /= max_norm;
                }
            }
            Ok(FeatureMap { kind, d, n_obs, n_actions, seed, table })
        }
        FeatureKind::ConcatOneHot => {
            let d = n_obs + n_actions;
            let inv = 1.0 / 2.0_f64.sqrt();
            let mut table = vec![vec![0.0; d]; n_obs * n_actions];
            for y in 0..n_obs {
                for a in 0..n_actions {
                    let x = &mut table[y * n_actions + a];
                    x[y] = inv;
                    x[n_obs + a] = inv;
                }
            }
            Ok(FeatureMap { kind, d, n_obs, n_actions, seed, table })
        }
    }
}

impl FeatureMap {
    pub fn embed(&self, y: usize, a: usize) -> &[f64] {
        &self.table[y * self.n_actions + a]
    }
}

/// Embeds every completed (observation, action) pair of a closed history.
pub fn embed_history(fm: &FeatureMap, history: &History) -> Result<Vec<Vec<f64>>> {
    if !history.is_closed() {
        return Err(Error::InvalidArgument("embed_history requires a closed history".into()));
    }
    embed_pairs(fm, &history.obs, &history.actions)
}

/// Embeds aligned observation/action index slices.
pub fn embed_pairs(fm: &FeatureMap, obs: &[usize], actions: &[usize]) -> Result<Vec<Vec<f64>>> {
    if obs.len() != actions.len() {
        return Err(Error::InvalidArgument("obs/action length mismatch".into()));
    }
    for (&y, &a) in obs.iter().zip(actions) {
        if y >= fm.n_obs || a >= fm.n_actions {
            return Err(Error::InvalidArgument(format!("pair ({y}, {a}) out of range")));
        }
    }
    Ok(obs.iter().zip(actions).map(|(&y, &a)| fm.embed(y, a).to_vec()).collect())
}

pub(crate) fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
