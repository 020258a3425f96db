//! Experiment harness: declarative configs, trial fan-out, and aggregation.
//!
//! An experiment is a TOML-described sweep over network widths and sequence
//! lengths. Trials run in parallel with seeds derived as `base_seed +
//! trial_index`, curves are aggregated into confidence bands, and everything
//! needed to reproduce the run lands next to the outputs in `metadata.toml`.
//! Outputs carry no timestamps and all aggregation happens in trial order, so
//! re-running from the metadata reproduces every CSV byte for byte.

use crate::error::{Error, Result};
use crate::features::{make_feature_map, FeatureKind, FeatureMap};
use crate::indrnn::{init_symmetric, Activation, NetParams};
use crate::pomdp::{
    random_pomdp, EpsilonGreedyPolicy, FixedSequencePolicy, Policy, Pomdp, UniformPolicy,
};
use crate::recnpg::{run_rec_nac, NacConfig};
use crate::rectd::{mean_path_rec_td, run_rec_td, RecTdConfig, RecTdRun};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

/// Two-sided 90% normal quantile used for all confidence bands.
pub const CI_Z_90: f64 = 1.6449;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "RECNAC_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    RecTd,
    RecNac,
    MeanPath,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PomdpSpec {
    pub states: usize,
    pub obs: usize,
    pub actions: usize,
    pub seed: u64,
    /// Load from JSON instead of generating when set.
    pub file: Option<PathBuf>,
}

impl Default for PomdpSpec {
    fn default() -> Self {
        PomdpSpec { states: 2, obs: 2, actions: 2, seed: 0, file: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureSpec {
    pub kind: FeatureKind,
    pub d: usize,
    pub seed: u64,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec { kind: FeatureKind::GaussianJoint, d: 8, seed: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
#[derive(Default)]
pub enum PolicySpec {
    #[default]
    Uniform,
    EpsilonGreedy { p_exp: f64 },
    Fixed { actions: Vec<usize> },
}


impl PolicySpec {
    pub fn build(&self, pomdp: &Pomdp) -> Result<Box<dyn Policy>> {
        match self {
            PolicySpec::Uniform => Ok(Box::new(UniformPolicy::new(pomdp.n_actions))),
            PolicySpec::EpsilonGreedy { p_exp } => {
                Ok(Box::new(EpsilonGreedyPolicy::new(pomdp.n_actions, *p_exp)?))
            }
            PolicySpec::Fixed { actions } => {
                Ok(Box::new(FixedSequencePolicy::new(actions.clone(), pomdp.n_actions)?))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NetSpec {
    pub alpha: f64,
    pub activation: Activation,
}

impl Default for NetSpec {
    fn default() -> Self {
        NetSpec { alpha: 0.5, activation: Activation::Tanh }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub trials: usize,
    pub widths: Vec<usize>,
    pub seq_lens: Vec<usize>,
    pub pomdp: PomdpSpec,
    pub features: FeatureSpec,
    pub policy: PolicySpec,
    pub net: NetSpec,
    pub rec_td: RecTdConfig,
    pub nac: NacConfig,
    /// Joint-path budget for mean-path runs.
    pub mean_path_budget: usize,
    /// Output directory; falls back to `RECNAC_OUT_DIR`, then `recnac-out`.
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::RecTd,
            seed: 0,
            trials: 5,
            widths: vec![32, 64, 128, 256],
            seq_lens: vec![8],
            pomdp: PomdpSpec::default(),
            features: FeatureSpec::default(),
            policy: PolicySpec::default(),
            net: NetSpec::default(),
            rec_td: RecTdConfig::default(),
            nac: NacConfig::default(),
            mean_path_budget: 1_000_000,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.widths.is_empty() || self.seq_lens.is_empty() {
            return Err(Error::InvalidConfig("widths and seq_lens must be non-empty".into()));
        }
        if self.widths.iter().any(|m| *m == 0 || m % 2 != 0) {
            return Err(Error::InvalidConfig("widths must be positive and even".into()));
        }
        if self.seq_lens.contains(&0) {
            return Err(Error::InvalidConfig("seq_lens must be positive".into()));
        }
        if self.features.d == 0 {
            return Err(Error::InvalidConfig("feature dimension must be positive".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: ExperimentConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn out_dir(&self) -> PathBuf {
        if let Some(dir) = &self.output {
            return dir.clone();
        }
        if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
            if !dir.is_empty() {
                return PathBuf::from(dir);
            }
        }
        PathBuf::from("recnac-out")
    }

    pub fn trial_seeds(&self) -> Vec<u64> {
        (0..self.trials).map(|i| self.seed.wrapping_add(i as u64)).collect()
    }
}

/// Pointwise mean with a symmetric confidence band across trials.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveBundle {
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub n_curves: usize,
    /// Set when only one curve was available and the band collapsed.
    pub degenerate: bool,
}

/// Pointwise `mean +- z * sd / sqrt(n)` with the sample standard deviation.
/// A single curve yields a collapsed band flagged as degenerate.
pub fn aggregate_ci(curves: &[Vec<f64>], z: f64) -> Result<CurveBundle> {
    if curves.is_empty() {
        return Err(Error::InvalidArgument("no curves to aggregate".into()));
    }
    if !(z >= 0.0) {
        return Err(Error::InvalidArgument("confidence multiplier must be non-negative".into()));
    }
    let len = curves[0].len();
    if curves.iter().any(|c| c.len() != len) {
        return Err(Error::InvalidArgument("curves have mismatched lengths".into()));
    }
    let n = curves.len();
    let mut mean = vec![0.0; len];
    let mut lo = vec![0.0; len];
    let mut hi = vec![0.0; len];
    for i in 0..len {
        let mu = curves.iter().map(|c| c[i]).sum::<f64>() / n as f64;
        let half = if n > 1 {
            let var =
                curves.iter().map(|c| (c[i] - mu) * (c[i] - mu)).sum::<f64>() / (n - 1) as f64;
            z * var.sqrt() / (n as f64).sqrt()
        } else {
            0.0
        };
        mean[i] = mu;
        lo[i] = mu - half;
        hi[i] = mu + half;
    }
    Ok(CurveBundle { mean, lo, hi, n_curves: n, degenerate: n == 1 })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metadata {
    pub config: ExperimentConfig,
    pub derived: DerivedInfo,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DerivedInfo {
    pub trial_seeds: Vec<u64>,
    pub pomdp_file: String,
    pub metrics: Vec<String>,
}

pub fn load_metadata(path: &Path) -> Result<Metadata> {
    let text = fs::read_to_string(path)?;
    Ok(toml::from_str(&text)?)
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub out_dir: PathBuf,
    pub csv_files: Vec<PathBuf>,
    pub metadata_file: PathBuf,
}

/// Curves produced by one trial, keyed by metric name.
type TrialCurves = BTreeMap<&'static str, Vec<f64>>;

fn td_curves(run: &RecTdRun) -> TrialCurves {
    let mut out = BTreeMap::new();
    out.insert("mstd", run.mstd_curve.clone());
    out.insert("avg_mstd", run.avg_mstd_curve.clone());
    out.insert("dev_w", run.dev_w_curve.clone());
    out.insert("dev_u", run.dev_u_curve.clone());
    out
}

fn run_one_trial(
    cfg: &ExperimentConfig,
    pomdp: &Pomdp,
    fm: &FeatureMap,
    m: usize,
    t_len: usize,
    trial_seed: u64,
) -> Result<TrialCurves> {
    match cfg.kind {
        ExperimentKind::RecTd | ExperimentKind::MeanPath => {
            let mut policy = cfg.policy.build(pomdp)?;
            let net: NetParams = init_symmetric(
                m,
                fm.d,
                cfg.net.alpha,
                cfg.net.activation,
                trial_seed.wrapping_mul(2).wrapping_add(1),
            )?;
            let td_cfg = RecTdConfig { t_len, seed: trial_seed, ..cfg.rec_td };
            let run = if cfg.kind == ExperimentKind::RecTd {
                run_rec_td(pomdp, policy.as_mut(), fm, &net, &td_cfg)?
            } else {
                mean_path_rec_td(pomdp, policy.as_mut(), fm, &net, &td_cfg, cfg.mean_path_budget)?
            };
            Ok(td_curves(&run))
        }
        ExperimentKind::RecNac => {
            let nac_cfg = NacConfig {
                m_actor: m,
                m_critic: m,
                t_len,
                seed: trial_seed,
                alpha_actor: cfg.net.alpha,
                alpha_critic: cfg.net.alpha,
                activation: cfg.net.activation,
                ..cfg.nac.clone()
            };
            let run = run_rec_nac(pomdp, fm, &nac_cfg)?;
            let mut out = BTreeMap::new();
            out.insert("value_est", run.rows.iter().map(|r| r.value_est).collect());
            out.insert("critic_mstd", run.rows.iter().map(|r| r.critic_mstd).collect());
            out.insert("cfa_loss", run.rows.iter().map(|r| r.cfa_loss).collect());
            out.insert("omega_norm", run.rows.iter().map(|r| r.omega_norm).collect());
            out.insert("phi_dev", run.rows.iter().map(|r| r.phi_dev).collect());
            Ok(out)
        }
    }
}

fn write_bundle_csv(path: &Path, bundle: &CurveBundle) -> Result<()> {
    let mut text = String::from("iteration,mean,lo,hi\n");
    for i in 0..bundle.mean.len() {
        text.push_str(&format!("{i},{},{},{}\n", bundle.mean[i], bundle.lo[i], bundle.hi[i]));
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_curve_csv(path: &Path, curve: &[f64]) -> Result<()> {
    let mut text = String::from("iteration,value\n");
    for (i, v) in curve.iter().enumerate() {
        text.push_str(&format!("{i},{v}\n"));
    }
    fs::write(path, text)?;
    Ok(())
}

/// Reads the `value` column of a per-trial curve CSV.
pub fn read_curve_csv(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header.trim() == "iteration,value" => {}
        _ => return Err(Error::InvalidArgument(format!("{}: expected iteration,value header", path.display()))),
    }
    let mut out = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let field = line.split(',').nth(1).ok_or_else(|| {
            Error::InvalidArgument(format!("{}: malformed row {line}", path.display()))
        })?;
        out.push(field.trim().parse::<f64>().map_err(|e| {
            Error::InvalidArgument(format!("{}: bad value {field}: {e}", path.display()))
        })?);
    }
    Ok(out)
}

/// Runs the full sweep and writes the POMDP, per-trial curves, aggregated
/// bands, and reproducible metadata under the configured output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let out_dir = cfg.out_dir();
    fs::create_dir_all(&out_dir)?;
    let trials_dir = out_dir.join("trials");
    fs::create_dir_all(&trials_dir)?;

    let pomdp = match &cfg.pomdp.file {
        Some(path) => Pomdp::load(path)?,
        None => random_pomdp(cfg.pomdp.states, cfg.pomdp.obs, cfg.pomdp.actions, cfg.pomdp.seed)?,
    };
    let pomdp_file = out_dir.join("pomdp.json");
    pomdp.save(&pomdp_file)?;
    let fm = make_feature_map(&pomdp, cfg.features.kind, cfg.features.d, cfg.features.seed)?;

    let trial_seeds = cfg.trial_seeds();
    let mut csv_files = Vec::new();
    let mut metrics: Vec<String> = Vec::new();
    let mut warned_degenerate = false;
    for &m in &cfg.widths {
        for &t_len in &cfg.seq_lens {
            let trial_results: Vec<TrialCurves> = trial_seeds
                .par_iter()
                .map(|&seed| run_one_trial(cfg, &pomdp, &fm, m, t_len, seed))
                .collect::<Result<Vec<_>>>()?;
            let metric_names: Vec<&'static str> =
                trial_results[0].keys().copied().collect();
            for name in metric_names {
                let curves: Vec<Vec<f64>> =
                    trial_results.iter().map(|tc| tc[name].clone()).collect();
                for (j, curve) in curves.iter().enumerate() {
                    let path = trials_dir.join(format!("{name}_m{m}_T{t_len}_trial{j}.csv"));
                    write_curve_csv(&path, curve)?;
                    csv_files.push(path);
                }
                let bundle = aggregate_ci(&curves, CI_Z_90)?;
                if bundle.degenerate && !warned_degenerate {
                    eprintln!("warning: single trial, confidence band is degenerate");
                    warned_degenerate = true;
                }
                let path = out_dir.join(format!("{name}_m{m}_T{t_len}.csv"));
                write_bundle_csv(&path, &bundle)?;
                csv_files.push(path);
                let tag = name.to_string();
                if !metrics.contains(&tag) {
                    metrics.push(tag);
                }
            }
        }
    }

    let mut echo = cfg.clone();
    echo.output = Some(out_dir.clone());
    let metadata = Metadata {
        config: echo,
        derived: DerivedInfo {
            trial_seeds,
            pomdp_file: pomdp_file.display().to_string(),
            metrics,
        },
    };
    let metadata_file = out_dir.join("metadata.toml");
    fs::write(&metadata_file, toml::to_string_pretty(&metadata)?)?;
    Ok(ExperimentReport { out_dir, csv_files, metadata_file })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn two_point_band_matches_the_pinned_quantile() {
        let bundle = aggregate_ci(&[vec![0.0], vec![2.0]], CI_Z_90).unwrap();
        assert!((bundle.mean[0] - 1.0).abs() < 1e-15);
        // sd = sqrt(2), half-width = z * sqrt(2) / sqrt(2) = z.
        assert!((bundle.hi[0] - (1.0 + CI_Z_90)).abs() < 1e-12);
        assert!((bundle.lo[0] - (1.0 - CI_Z_90)).abs() < 1e-12);
        assert!(!bundle.degenerate);
    }

    #[test]
    fn identical_curves_collapse_the_band() {
        let c = vec![1.0, 2.0, 3.0];
        let bundle = aggregate_ci(&[c.clone(), c.clone(), c.clone()], CI_Z_90).unwrap();
        assert_eq!(bundle.mean, c);
        assert_eq!(bundle.lo, c);
        assert_eq!(bundle.hi, c);
    }

    #[test]
    fn single_curve_is_degenerate_and_mismatched_lengths_fail() {
        let bundle = aggregate_ci(&[vec![1.0, 2.0]], CI_Z_90).unwrap();
        assert!(bundle.degenerate);
        assert_eq!(bundle.lo, bundle.mean);
        assert!(aggregate_ci(&[vec![1.0], vec![1.0, 2.0]], CI_Z_90).is_err());
        assert!(aggregate_ci(&[], CI_Z_90).is_err());
    }

    #[test]
    fn band_always_brackets_the_mean() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = 2 + (rng.random::<u64>() % 6) as usize;
            let len = 1 + (rng.random::<u64>() % 10) as usize;
            let curves: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..len).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect())
                .collect();
            let b = aggregate_ci(&curves, CI_Z_90).unwrap();
            for i in 0..len {
                assert!(b.lo[i] <= b.mean[i] && b.mean[i] <= b.hi[i]);
            }
        }
    }

    #[test]
    fn interval_coverage_sits_near_ninety_percent() {
        // 10_000 simulated experiments of 100 standard-normal curves; the
        // pinned quantile must cover the true mean about 90% of the time.
        let mut rng = ChaCha12Rng::seed_from_u64(97);
        let mut covered = 0usize;
        let sims = 10_000;
        let n = 100;
        for _ in 0..sims {
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in 0..n {
                let x: f64 = rng.sample(StandardNormal);
                sum += x;
                sumsq += x * x;
            }
            let mu = sum / n as f64;
            let var = (sumsq - sum * sum / n as f64) / (n - 1) as f64;
            let half = CI_Z_90 * var.sqrt() / (n as f64).sqrt();
            if mu - half <= 0.0 && 0.0 <= mu + half {
                covered += 1;
            }
        }
        let rate = covered as f64 / sims as f64;
        assert!((rate - 0.90).abs() < 0.02, "coverage {rate}");
    }

    fn tiny_td_config(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            kind: ExperimentKind::RecTd,
            seed: 11,
            trials: 2,
            widths: vec![4],
            seq_lens: vec![3],
            features: FeatureSpec { d: 3, ..FeatureSpec::default() },
            rec_td: RecTdConfig { k_iters: 4, t_len: 3, ..RecTdConfig::default() },
            output: Some(dir.to_path_buf()),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn experiment_outputs_have_the_exact_band_header() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_td_config(dir.path());
        let report = run_experiment(&cfg).unwrap();
        let band = report.out_dir.join("mstd_m4_T3.csv");
        let text = fs::read_to_string(&band).unwrap();
        assert!(text.starts_with("iteration,mean,lo,hi\n"));
        assert_eq!(text.lines().count(), 1 + cfg.rec_td.k_iters);
        for name in ["dev_w_m4_T3.csv", "dev_u_m4_T3.csv"] {
            assert!(report.out_dir.join(name).exists());
        }
        assert!(report.out_dir.join("pomdp.json").exists());
        let raw = report.out_dir.join("trials").join("mstd_m4_T3_trial0.csv");
        let curve = read_curve_csv(&raw).unwrap();
        assert_eq!(curve.len(), cfg.rec_td.k_iters);
    }

    #[test]
    fn metadata_reruns_reproduce_the_outputs_byte_for_byte() {
        let dir1 = tempfile::tempdir().unwrap();
        let report1 = run_experiment(&tiny_td_config(dir1.path())).unwrap();
        let meta = load_metadata(&report1.metadata_file).unwrap();
        assert_eq!(meta.derived.trial_seeds, vec![11, 12]);

        let dir2 = tempfile::tempdir().unwrap();
        let mut cfg2 = meta.config.clone();
        cfg2.output = Some(dir2.path().to_path_buf());
        let report2 = run_experiment(&cfg2).unwrap();
        assert_eq!(report1.csv_files.len(), report2.csv_files.len());
        for (a, b) in report1.csv_files.iter().zip(&report2.csv_files) {
            let bytes_a = fs::read(a).unwrap();
            let bytes_b = fs::read(b).unwrap();
            assert_eq!(bytes_a, bytes_b, "{} differs", a.display());
        }
    }

    #[test]
    fn mean_path_experiments_are_deterministic_across_runs() {
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let mut cfg = tiny_td_config(dir1.path());
        cfg.kind = ExperimentKind::MeanPath;
        cfg.policy = PolicySpec::EpsilonGreedy { p_exp: 0.5 };
        let r1 = run_experiment(&cfg).unwrap();
        cfg.output = Some(dir2.path().to_path_buf());
        let r2 = run_experiment(&cfg).unwrap();
        let band1 = fs::read(r1.out_dir.join("mstd_m4_T3.csv")).unwrap();
        let band2 = fs::read(r2.out_dir.join("mstd_m4_T3.csv")).unwrap();
        assert_eq!(band1, band2);
    }

    #[test]
    fn nac_experiments_emit_all_trace_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            kind: ExperimentKind::RecNac,
            trials: 2,
            widths: vec![4],
            seq_lens: vec![2],
            features: FeatureSpec { d: 3, ..FeatureSpec::default() },
            nac: NacConfig {
                n_outer: 2,
                k_sgd: 2,
                k_td: 2,
                n_eval_value: 2,
                n_eval_cfa: 1,
                ..NacConfig::default()
            },
            output: Some(dir.path().to_path_buf()),
            ..ExperimentConfig::default()
        };
        let report = run_experiment(&cfg).unwrap();
        for metric in ["value_est", "critic_mstd", "cfa_loss", "omega_norm", "phi_dev"] {
            let path = report.out_dir.join(format!("{metric}_m4_T2.csv"));
            let text = fs::read_to_string(&path).unwrap();
            assert_eq!(text.lines().count(), 1 + 2);
        }
        let meta = load_metadata(&report.metadata_file).unwrap();
        assert_eq!(meta.derived.metrics.len(), 5);
    }

    #[test]
    fn partial_toml_configs_fill_in_defaults() {
        let text = r#"
            kind = "mean-path"
            trials = 3
            widths = [8]

            [pomdp]
            states = 3

            [policy]
            kind = "epsilon-greedy"
            p_exp = 0.25
        "#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.kind, ExperimentKind::MeanPath);
        assert_eq!(cfg.trials, 3);
        assert_eq!(cfg.widths, vec![8]);
        assert_eq!(cfg.seq_lens, vec![8]);
        assert_eq!(cfg.pomdp.states, 3);
        assert_eq!(cfg.pomdp.obs, 2);
        match cfg.policy {
            PolicySpec::EpsilonGreedy { p_exp } => assert!((p_exp - 0.25).abs() < 1e-15),
            _ => panic!("wrong policy"),
        }
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.widths = vec![5];
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.seq_lens = vec![];
        assert!(cfg.validate().is_err());
    }
}
