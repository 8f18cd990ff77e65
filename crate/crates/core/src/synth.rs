//! Synthetic multi-environment corpora with planted invariant features and
//! planted outlier environments.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Environment, Session};
use crate::error::{Error, Result};
use crate::ocsvm::Partition;
use crate::seed::{indexed_seed, rng_for, sub_seed};

fn default_spurious_scale() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_envs: usize,
    pub n_outliers: usize,
    pub sessions_per_env: usize,
    pub windows_per_session: usize,
    pub d: usize,
    pub n_invariant: usize,
    pub flip_fraction: f64,
    pub noise_sd: f64,
    /// Euclidean norm of each environment's spurious coefficient vector.
    #[serde(default = "default_spurious_scale")]
    pub spurious_scale: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_envs: 50,
            n_outliers: 16,
            sessions_per_env: 4,
            windows_per_session: 60,
            d: 768,
            n_invariant: 150,
            flip_fraction: 0.6,
            noise_sd: 0.1,
            spurious_scale: default_spurious_scale(),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidInput(m));
        if self.n_envs < 2 {
            return fail(format!("n_envs must be at least 2, got {}", self.n_envs));
        }
        if self.n_outliers >= self.n_envs {
            return fail(format!("n_outliers ({}) must be below n_envs ({})", self.n_outliers, self.n_envs));
        }
        if self.sessions_per_env == 0 {
            return fail("sessions_per_env must be at least 1".into());
        }
        if self.windows_per_session < 2 {
            return fail("windows_per_session must be at least 2".into());
        }
        if self.d == 0 {
            return fail("d must be at least 1".into());
        }
        if self.n_invariant > self.d {
            return fail(format!("n_invariant ({}) exceeds d ({})", self.n_invariant, self.d));
        }
        if !(0.0..=1.0).contains(&self.flip_fraction) {
            return fail(format!("flip_fraction must lie in [0, 1], got {}", self.flip_fraction));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return fail(format!("noise_sd must be finite and non-negative, got {}", self.noise_sd));
        }
        if !(self.spurious_scale.is_finite() && self.spurious_scale >= 0.0) {
            return fail(format!(
                "spurious_scale must be finite and non-negative, got {}",
                self.spurious_scale
            ));
        }
        Ok(())
    }

    /// Number of invariant features an outlier flips.
    pub fn n_flipped(&self) -> usize {
        (self.flip_fraction * self.n_invariant as f64 - 1e-9).ceil().max(0.0) as usize
    }

    pub fn env_id(&self, index: usize) -> String {
        let width = (self.n_envs - 1).to_string().len().max(2);
        format!("p{index:0width$}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub env_ids: Vec<String>,
    pub outlier_env_ids: Vec<String>,
    /// Sorted.
    pub invariant_feature_indices: Vec<usize>,
    /// Sign of each invariant feature in inlier environments, aligned with the indices.
    pub shared_signs: Vec<i8>,
    /// Invariant features whose sign an outlier flipped.
    pub flipped: BTreeMap<String, Vec<usize>>,
    pub coefficients: BTreeMap<String, Vec<f64>>,
}

impl GroundTruth {
    pub fn inlier_env_ids(&self) -> Vec<String> {
        self.env_ids
            .iter()
            .filter(|e| !self.outlier_env_ids.contains(e))
            .cloned()
            .collect()
    }

    pub fn is_outlier(&self, env_id: &str) -> bool {
        self.outlier_env_ids.iter().any(|o| o == env_id)
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn min_max(values: &mut [f64]) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    for v in values.iter_mut() {
        *v = if range > 0.0 { (*v - lo) / range } else { 0.5 };
    }
}

fn scale_to_norm(v: &mut [f64], norm: f64) {
    let current = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if current > 0.0 {
        v.iter_mut().for_each(|x| *x *= norm / current);
    }
}

pub fn generate(spec: &SynthSpec) -> Result<(Corpus, GroundTruth)> {
    spec.validate()?;
    let mut master = rng_for(spec.seed, "synth");
    let mut invariant = sample(&mut master, spec.d, spec.n_invariant).into_vec();
    invariant.sort_unstable();
    let shared_signs: Vec<i8> = (0..spec.n_invariant)
        .map(|_| if master.random_bool(0.5) { 1 } else { -1 })
        .collect();
    let mut magnitudes: Vec<f64> = (0..spec.n_invariant).map(|_| master.random_range(0.5..1.5)).collect();
    scale_to_norm(&mut magnitudes, 1.0);
    let outlier_idx: BTreeSet<usize> = sample(&mut master, spec.n_envs, spec.n_outliers).into_iter().collect();

    let is_invariant = {
        let mut m = vec![false; spec.d];
        invariant.iter().for_each(|&i| m[i] = true);
        m
    };
    let spurious: Vec<usize> = (0..spec.d).filter(|&i| !is_invariant[i]).collect();
    let env_stream = sub_seed(spec.seed, "synth/env");
    let n_flip = spec.n_flipped();

    let mut envs = Vec::with_capacity(spec.n_envs);
    let mut truth = GroundTruth {
        env_ids: Vec::with_capacity(spec.n_envs),
        outlier_env_ids: Vec::new(),
        invariant_feature_indices: invariant.clone(),
        shared_signs: shared_signs.clone(),
        flipped: BTreeMap::new(),
        coefficients: BTreeMap::new(),
    };

    for e in 0..spec.n_envs {
        let env_id = spec.env_id(e);
        let mut rng = ChaCha8Rng::seed_from_u64(indexed_seed(env_stream, e as u64));
        let mut coef = vec![0.0; spec.d];
        for (k, &i) in invariant.iter().enumerate() {
            coef[i] = f64::from(shared_signs[k]) * magnitudes[k];
        }
        if outlier_idx.contains(&e) {
            let mut flips: Vec<usize> = sample(&mut rng, spec.n_invariant, n_flip)
                .into_iter()
                .map(|k| invariant[k])
                .collect();
            flips.sort_unstable();
            for &i in &flips {
                coef[i] = -coef[i];
            }
            truth.outlier_env_ids.push(env_id.clone());
            truth.flipped.insert(env_id.clone(), flips);
        }
        let mut gamma: Vec<f64> = spurious.iter().map(|_| rng.sample(StandardNormal)).collect();
        scale_to_norm(&mut gamma, spec.spurious_scale);
        for (&i, g) in spurious.iter().zip(gamma) {
            coef[i] = g;
        }

        let mut sessions = Vec::with_capacity(spec.sessions_per_env);
        for s in 0..spec.sessions_per_env {
            let mut rows = Vec::with_capacity(spec.windows_per_session);
            let mut labels = Vec::with_capacity(spec.windows_per_session);
            for _ in 0..spec.windows_per_session {
                let x: Vec<f64> = (0..spec.d).map(|_| rng.sample(StandardNormal)).collect();
                let eps: f64 = rng.sample(StandardNormal);
                let z = x.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>() + spec.noise_sd * eps;
                labels.push(logistic(z));
                rows.push(x);
            }
            min_max(&mut labels);
            sessions.push(Session::from_rows(format!("s{s}"), rows, labels)?);
        }
        truth.env_ids.push(env_id.clone());
        truth.coefficients.insert(env_id.clone(), coef);
        envs.push(Environment { env_id, sessions });
    }
    Ok((Corpus::new(envs)?, truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Set-overlap metrics of the predicted outliers against the planted ones.
///
/// An empty prediction has precision 1 and an empty truth has recall 1.
pub fn score_detection(partition: &Partition, truth: &GroundTruth) -> Result<DetectionScore> {
    let universe: BTreeSet<&String> = partition.scores.iter().map(|s| &s.env_id).collect();
    let truth_universe: BTreeSet<&String> = truth.env_ids.iter().collect();
    if universe != truth_universe {
        return Err(Error::invalid("partition and ground truth cover different environments"));
    }
    let predicted: BTreeSet<&String> = partition.outliers.iter().collect();
    let actual: BTreeSet<&String> = truth.outlier_env_ids.iter().collect();
    let tp = predicted.intersection(&actual).count() as f64;
    let precision = if predicted.is_empty() { 1.0 } else { tp / predicted.len() as f64 };
    let recall = if actual.is_empty() { 1.0 } else { tp / actual.len() as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(DetectionScore { precision, recall, f1 })
}
