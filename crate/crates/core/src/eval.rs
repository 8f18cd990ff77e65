//! Leave-one-participant-out evaluation: per-subset reports, random-subset
//! controls and λ sweeps.
//!
//! Nothing from a held-out environment reaches its fold model: the mask is
//! counted over training environments only, standardisation statistics come
//! from training pairs, and per-fold outlier re-detection (when enabled)
//! sees training environments only.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::correlation::{sign_vector, RepresentationMatrix, SignConfig, SignVector};
use crate::corpus::{environment_pairs, Corpus, PairSet, DEFAULT_P_T};
use crate::error::{Error, Result};
use crate::invariance::{invariant_mask, InvariantMask};
use crate::io::write_table;
use crate::ocsvm::{partition_representations, DetectConfig, Partition};
use crate::preflearn::{self, PrefModel, TrainConfig};
use crate::seed::rng_for;

/// Which environments the invariant mask of a fold is counted over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskScope {
    /// The fold's training environments within the evaluated subset.
    Subset,
    /// Every corpus environment except the held-out one.
    Corpus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub p_t: f64,
    pub symmetric_pairs: bool,
    pub train: TrainConfig,
    /// Invariant-feature threshold; `None` trains on every feature.
    pub lambda: Option<f64>,
    pub mask_scope: MaskScope,
    pub sign: SignConfig,
    /// Re-detect outliers among each fold's training environments and drop them.
    pub per_fold_detection: Option<DetectConfig>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            p_t: DEFAULT_P_T,
            symmetric_pairs: true,
            train: TrainConfig::default(),
            lambda: None,
            mask_scope: MaskScope::Subset,
            sign: SignConfig::default(),
            per_fold_detection: None,
        }
    }
}

impl ModelConfig {
    pub fn with_lambda(mut self, lambda: Option<f64>) -> Self {
        self.lambda = lambda;
        self
    }
}

/// Pair sets and sign vectors of every corpus environment, computed once.
#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    env_ids: Vec<String>,
    pairs: BTreeMap<String, PairSet>,
    /// `None` for environments without pairs.
    signs: BTreeMap<String, Option<SignVector>>,
    p_t: f64,
    symmetric_pairs: bool,
}

impl PreparedCorpus {
    pub fn new(corpus: &Corpus, p_t: f64, symmetric_pairs: bool, sign: &SignConfig) -> Result<Self> {
        let mut pairs = BTreeMap::new();
        let mut signs = BTreeMap::new();
        for env in corpus.environments() {
            let ps = environment_pairs(env, p_t, symmetric_pairs)?;
            let sv = if ps.is_empty() {
                log::warn!("environment '{}' has no pairs at p_t = {p_t}", env.env_id);
                None
            } else {
                Some(sign_vector(&ps, sign)?)
            };
            signs.insert(env.env_id.clone(), sv);
            pairs.insert(env.env_id.clone(), ps);
        }
        Ok(PreparedCorpus {
            env_ids: corpus.env_ids(),
            pairs,
            signs,
            p_t,
            symmetric_pairs,
        })
    }

    pub fn for_config(corpus: &Corpus, config: &ModelConfig) -> Result<Self> {
        Self::new(corpus, config.p_t, config.symmetric_pairs, &config.sign)
    }

    pub fn env_ids(&self) -> &[String] {
        &self.env_ids
    }

    pub fn pairs(&self, env_id: &str) -> Result<&PairSet> {
        self.pairs
            .get(env_id)
            .ok_or_else(|| Error::invalid(format!("unknown environment '{env_id}'")))
    }

    pub fn signs(&self, env_id: &str) -> Result<Option<&SignVector>> {
        self.signs
            .get(env_id)
            .map(Option::as_ref)
            .ok_or_else(|| Error::invalid(format!("unknown environment '{env_id}'")))
    }

    fn check_matches(&self, config: &ModelConfig) -> Result<()> {
        if self.p_t != config.p_t || self.symmetric_pairs != config.symmetric_pairs {
            return Err(Error::invalid(
                "prepared corpus was built with different pair settings",
            ));
        }
        Ok(())
    }

    fn check_envs(&self, envs: &[String]) -> Result<()> {
        for e in envs {
            if !self.pairs.contains_key(e) {
                return Err(Error::invalid(format!("unknown environment '{e}'")));
            }
        }
        Ok(())
    }

    /// Mask over the environments in `envs` that have sign vectors.
    pub fn mask_over(&self, envs: &[String], lambda: f64) -> Result<InvariantMask> {
        let rows = envs
            .iter()
            .map(|e| self.signs(e))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect::<Vec<_>>();
        if rows.is_empty() {
            return Err(Error::invalid("no environment with pairs to count signs over"));
        }
        invariant_mask(rows, lambda)
    }
}

/// A fold model and the environments it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldModel {
    pub model: PrefModel,
    pub training_envs: Vec<String>,
    pub dropped_outliers: Vec<String>,
}

impl FoldModel {
    pub fn n_features(&self) -> usize {
        self.model.mask.as_ref().map_or(self.model.d, InvariantMask::len)
    }
}

/// Trains the model of one fold from `training` environments only.
///
/// `mask_envs` are the environments the invariant mask is counted over
/// (before any per-fold outlier removal).
pub fn train_fold(
    prepared: &PreparedCorpus,
    training: &[String],
    mask_envs: &[String],
    config: &ModelConfig,
) -> Result<FoldModel> {
    prepared.check_envs(training)?;
    let mut training_envs = training.to_vec();
    let mut mask_envs = mask_envs.to_vec();
    let mut dropped = Vec::new();

    if let Some(detect) = &config.per_fold_detection {
        let rows: Vec<SignVector> = training_envs
            .iter()
            .filter_map(|e| prepared.signs(e).ok().flatten().cloned())
            .collect();
        let matrix = RepresentationMatrix { rows };
        let partition = partition_representations(&matrix, detect.nu, detect.kernel, &detect.solver)?;
        dropped = partition.outliers.clone();
        training_envs.retain(|e| !partition.is_outlier(e));
        mask_envs.retain(|e| !partition.is_outlier(e));
    }

    let mask = match config.lambda {
        Some(lambda) => Some(prepared.mask_over(&mask_envs, lambda)?),
        None => None,
    };
    let sets = training_envs
        .iter()
        .map(|e| prepared.pairs(e))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>();
    if sets.is_empty() {
        return Err(Error::invalid("fold has no training pairs"));
    }
    let model = preflearn::train(&sets, mask.as_ref(), &config.train)?;
    Ok(FoldModel {
        model,
        training_envs,
        dropped_outliers: dropped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ci95 {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Normal-approximation interval `mean ± 1.96·sd/√n` (sample sd).
pub fn ci95(values: &[f64]) -> Result<Ci95> {
    if values.is_empty() {
        return Err(Error::invalid("confidence interval of an empty sample"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok(Ci95 { mean, lo: mean, hi: mean });
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let half = 1.96 * (var / n).sqrt();
    Ok(Ci95 {
        mean,
        lo: mean - half,
        hi: mean + half,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub held_out_env: String,
    pub accuracy: f64,
    pub n_test_pairs: usize,
    pub n_features: usize,
    /// The mask selected nothing and the fold fell back to a majority-class predictor.
    pub zero_features: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub envs: Vec<String>,
    pub folds: Vec<FoldResult>,
    /// Held-out environments without test pairs; excluded from the mean.
    pub skipped: Vec<String>,
    pub mean_accuracy: f64,
    pub ci95: Ci95,
    pub mean_features: f64,
    pub config: ModelConfig,
}

impl Report {
    pub fn accuracies(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.accuracy).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header = ["held_out_env", "accuracy", "n_test_pairs", "n_features", "zero_features"]
            .map(String::from)
            .to_vec();
        let rows: Vec<Vec<String>> = self
            .folds
            .iter()
            .map(|f| {
                vec![
                    f.held_out_env.clone(),
                    f.accuracy.to_string(),
                    f.n_test_pairs.to_string(),
                    f.n_features.to_string(),
                    f.zero_features.to_string(),
                ]
            })
            .collect();
        write_table(path, &header, &rows)
    }
}

/// Leave-one-participant-out cross validation over `envs`.
pub fn lopo_cv(corpus: &Corpus, envs: &[String], config: &ModelConfig) -> Result<Report> {
    let prepared = PreparedCorpus::for_config(corpus, config)?;
    lopo_cv_prepared(&prepared, envs, config)
}

pub fn lopo_cv_prepared(prepared: &PreparedCorpus, envs: &[String], config: &ModelConfig) -> Result<Report> {
    prepared.check_matches(config)?;
    prepared.check_envs(envs)?;
    if envs.len() < 2 {
        return Err(Error::invalid(format!(
            "leave-one-out needs at least 2 environments, got {}",
            envs.len()
        )));
    }
    let mut folds = Vec::with_capacity(envs.len());
    let mut skipped = Vec::new();
    for held in envs {
        let test = prepared.pairs(held)?;
        if test.is_empty() {
            log::warn!("environment '{held}' has no test pairs; fold skipped");
            skipped.push(held.clone());
            continue;
        }
        let training: Vec<String> = envs.iter().filter(|e| *e != held).cloned().collect();
        let mask_envs: Vec<String> = match config.mask_scope {
            MaskScope::Subset => training.clone(),
            MaskScope::Corpus => prepared.env_ids().iter().filter(|e| *e != held).cloned().collect(),
        };
        let fold = train_fold(prepared, &training, &mask_envs, config)?;
        let accuracy = preflearn::accuracy(&fold.model, &[test])?;
        let n_features = fold.n_features();
        folds.push(FoldResult {
            held_out_env: held.clone(),
            accuracy,
            n_test_pairs: test.len(),
            n_features,
            zero_features: config.lambda.is_some() && n_features == 0,
        });
    }
    if folds.is_empty() {
        return Err(Error::invalid("every fold was skipped for lack of test pairs"));
    }
    let accs: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
    let ci = ci95(&accs)?;
    let mean_features = folds.iter().map(|f| f.n_features as f64).sum::<f64>() / folds.len() as f64;
    Ok(Report {
        envs: envs.to_vec(),
        folds,
        skipped,
        mean_accuracy: ci.mean,
        ci95: ci,
        mean_features,
        config: *config,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SubsetOutcome {
    Computed { report: Report },
    NotComputable { n_envs: usize, reason: String },
}

impl SubsetOutcome {
    pub fn report(&self) -> Option<&Report> {
        match self {
            SubsetOutcome::Computed { report } => Some(report),
            SubsetOutcome::NotComputable { .. } => None,
        }
    }

    pub fn mean_accuracy(&self) -> Option<f64> {
        self.report().map(|r| r.mean_accuracy)
    }
}

fn subset_outcome(prepared: &PreparedCorpus, envs: &[String], config: &ModelConfig) -> Result<SubsetOutcome> {
    if envs.len() < 2 {
        return Ok(SubsetOutcome::NotComputable {
            n_envs: envs.len(),
            reason: "fewer than 2 environments".into(),
        });
    }
    Ok(SubsetOutcome::Computed {
        report: lopo_cv_prepared(prepared, envs, config)?,
    })
}

/// LOPO reports over all environments, the inliers, and the outliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReports {
    pub all: SubsetOutcome,
    pub inliers: SubsetOutcome,
    pub outliers: SubsetOutcome,
}

pub fn experiment_splits(corpus: &Corpus, partition: &Partition, config: &ModelConfig) -> Result<SplitReports> {
    let prepared = PreparedCorpus::for_config(corpus, config)?;
    experiment_splits_prepared(&prepared, partition, config)
}

fn check_partition(prepared: &PreparedCorpus, partition: &Partition) -> Result<()> {
    let mut ids = partition.env_ids();
    ids.sort();
    let mut ours = prepared.env_ids().to_vec();
    ours.sort();
    if ids != ours {
        return Err(Error::invalid("partition does not cover the corpus environments"));
    }
    Ok(())
}

pub fn experiment_splits_prepared(
    prepared: &PreparedCorpus,
    partition: &Partition,
    config: &ModelConfig,
) -> Result<SplitReports> {
    check_partition(prepared, partition)?;
    Ok(SplitReports {
        all: subset_outcome(prepared, prepared.env_ids(), config)?,
        inliers: subset_outcome(prepared, &partition.inliers, config)?,
        outliers: subset_outcome(prepared, &partition.outliers, config)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlRun {
    pub envs: Vec<String>,
    pub report: Report,
}

/// Repeated LOPO over random `k`-subsets of a pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlReport {
    pub pool: Vec<String>,
    pub k: usize,
    pub n_runs: usize,
    pub seed: u64,
    pub runs: Vec<ControlRun>,
    /// Mean and interval across the per-run mean accuracies.
    pub mean_accuracy: f64,
    pub ci95: Ci95,
}

pub fn random_subset_control(
    corpus: &Corpus,
    pool: &[String],
    k: usize,
    n_runs: usize,
    seed: u64,
    config: &ModelConfig,
) -> Result<ControlReport> {
    let prepared = PreparedCorpus::for_config(corpus, config)?;
    random_subset_control_prepared(&prepared, pool, k, n_runs, seed, config)
}

pub fn random_subset_control_prepared(
    prepared: &PreparedCorpus,
    pool: &[String],
    k: usize,
    n_runs: usize,
    seed: u64,
    config: &ModelConfig,
) -> Result<ControlReport> {
    if k > pool.len() {
        return Err(Error::invalid(format!(
            "cannot draw {k} environments from a pool of {}",
            pool.len()
        )));
    }
    if n_runs == 0 {
        return Err(Error::invalid("n_runs must be at least 1"));
    }
    let mut rng = rng_for(seed, "control");
    let mut runs = Vec::with_capacity(n_runs);
    for _ in 0..n_runs {
        let mut idx = sample(&mut rng, pool.len(), k).into_vec();
        idx.sort_unstable();
        let envs: Vec<String> = idx.into_iter().map(|i| pool[i].clone()).collect();
        let report = lopo_cv_prepared(prepared, &envs, config)?;
        runs.push(ControlRun { envs, report });
    }
    let means: Vec<f64> = runs.iter().map(|r| r.report.mean_accuracy).collect();
    let ci = ci95(&means)?;
    Ok(ControlReport {
        pool: pool.to_vec(),
        k,
        n_runs,
        seed,
        runs,
        mean_accuracy: ci.mean,
        ci95: ci,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub subset: String,
    pub mean_accuracy: f64,
    pub ci95: Ci95,
    /// Size of the mask counted over the whole subset.
    pub n_features: usize,
    pub mean_fold_features: f64,
    pub zero_feature_folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Subsets too small to evaluate.
    pub not_computable: Vec<String>,
}

impl SweepTable {
    pub fn subset_rows(&self, subset: &str) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| r.subset == subset).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header = [
            "lambda",
            "subset",
            "mean_accuracy",
            "ci_lo",
            "ci_hi",
            "n_features",
            "mean_fold_features",
            "zero_feature_folds",
        ]
        .map(String::from)
        .to_vec();
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.lambda.to_string(),
                    r.subset.clone(),
                    r.mean_accuracy.to_string(),
                    r.ci95.lo.to_string(),
                    r.ci95.hi.to_string(),
                    r.n_features.to_string(),
                    r.mean_fold_features.to_string(),
                    r.zero_feature_folds.to_string(),
                ]
            })
            .collect();
        write_table(path, &header, &rows)
    }
}

/// LOPO accuracy and feature counts per λ for the inlier and outlier subsets.
pub fn lambda_sweep(corpus: &Corpus, partition: &Partition, lambdas: &[f64], config: &ModelConfig) -> Result<SweepTable> {
    let prepared = PreparedCorpus::for_config(corpus, config)?;
    lambda_sweep_prepared(&prepared, partition, lambdas, config)
}

pub fn lambda_sweep_prepared(
    prepared: &PreparedCorpus,
    partition: &Partition,
    lambdas: &[f64],
    config: &ModelConfig,
) -> Result<SweepTable> {
    check_partition(prepared, partition)?;
    if let Some(bad) = lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::invalid(format!("lambda {bad} outside [0, 1]")));
    }
    let mut rows = Vec::new();
    let mut not_computable = Vec::new();
    for (name, envs) in [("inliers", &partition.inliers), ("outliers", &partition.outliers)] {
        if envs.len() < 2 {
            not_computable.push(name.to_string());
            continue;
        }
        for &lambda in lambdas {
            let cfg = config.with_lambda(Some(lambda));
            let report = lopo_cv_prepared(prepared, envs, &cfg)?;
            let n_features = prepared.mask_over(envs, lambda)?.len();
            if n_features == 0 {
                log::warn!("{name}: no invariant features at lambda = {lambda}");
            }
            rows.push(SweepRow {
                lambda,
                subset: name.to_string(),
                mean_accuracy: report.mean_accuracy,
                ci95: report.ci95,
                n_features,
                mean_fold_features: report.mean_features,
                zero_feature_folds: report.folds.iter().filter(|f| f.zero_features).count(),
            });
        }
    }
    Ok(SweepTable { rows, not_computable })
}
