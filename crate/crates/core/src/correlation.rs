//! Correlation coefficients and per-environment sign vectors.

use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::{Corpus, Environment, PairSet};
use crate::error::{Error, Result};
use crate::io::write_table;

/// Sample Pearson correlation. `None` when either variable is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::invalid("correlation needs at least two observations"));
    }
    if is_constant(x) || is_constant(y) {
        return Ok(None);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

/// Point-biserial correlation between a continuous `x` and a 0/1 `y`,
/// using the population standard deviation of `x`.
///
/// `None` when `x` is constant or `y` has a single class.
pub fn point_biserial(x: &[f64], y: &[u8]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::invalid("correlation needs at least two observations"));
    }
    if let Some(bad) = y.iter().find(|&&v| v > 1) {
        return Err(Error::invalid(format!("binary variable contains {bad}")));
    }
    if is_constant(x) {
        return Ok(None);
    }
    let n = x.len() as f64;
    let (mut sum1, mut n1) = (0.0, 0usize);
    let mut sum = 0.0;
    for (&v, &c) in x.iter().zip(y) {
        sum += v;
        if c == 1 {
            sum1 += v;
            n1 += 1;
        }
    }
    let n0 = x.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Ok(None);
    }
    let mean = sum / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let m1 = sum1 / n1 as f64;
    let m0 = (sum - sum1) / n0 as f64;
    let (n1, n0) = (n1 as f64, n0 as f64);
    let r = (m1 - m0) / var.sqrt() * (n1 * n0 / (n * n)).sqrt();
    Ok(Some(r.clamp(-1.0, 1.0)))
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&a| a == v[0])
}

/// Two-sided p-value of a correlation `r` over `n` observations (Student t, n − 2 df).
pub fn correlation_p_value(r: f64, n: usize) -> f64 {
    if n <= 2 {
        return 1.0;
    }
    let df = (n - 2) as f64;
    let denom = 1.0 - r * r;
    if denom <= 0.0 {
        return 0.0;
    }
    let t = r.abs() * (df / denom).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    2.0 * (1.0 - dist.cdf(t))
}

/// How correlation values are turned into signs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignConfig {
    /// `|r| <= zero_tol` counts as zero correlation.
    pub zero_tol: f64,
    /// When set, correlations with a p-value above this level get sign 0.
    pub p_value_gate: Option<f64>,
}

impl Default for SignConfig {
    fn default() -> Self {
        SignConfig {
            zero_tol: 1e-12,
            p_value_gate: None,
        }
    }
}

impl SignConfig {
    pub fn sign_of(&self, r: Option<f64>, n: usize) -> i8 {
        let Some(r) = r else { return 0 };
        if r.abs() <= self.zero_tol {
            return 0;
        }
        if let Some(alpha) = self.p_value_gate {
            if correlation_p_value(r, n) > alpha {
                return 0;
            }
        }
        if r > 0.0 {
            1
        } else {
            -1
        }
    }
}

/// Environment representation over {−1, 0, +1}^d.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignVector {
    pub env_id: String,
    pub signs: Vec<i8>,
}

impl SignVector {
    pub fn d(&self) -> usize {
        self.signs.len()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.signs.iter().map(|&s| s as f64).collect()
    }
}

/// Signs of the point-biserial correlation between each difference column and the pair labels.
pub fn sign_vector(pairs: &PairSet, config: &SignConfig) -> Result<SignVector> {
    if pairs.is_empty() {
        return Err(Error::invalid(format!(
            "environment '{}' has no pairs",
            pairs.env_id
        )));
    }
    let labels = pairs.labels();
    let n = pairs.len();
    let mut signs = Vec::with_capacity(pairs.d());
    if n < 2 {
        signs.resize(pairs.d(), 0);
    } else {
        for f in 0..pairs.d() {
            let r = point_biserial(&pairs.diff_column(f), labels)?;
            signs.push(config.sign_of(r, n));
        }
    }
    Ok(SignVector {
        env_id: pairs.env_id.clone(),
        signs,
    })
}

/// Signs of the Pearson correlation between window features and continuous
/// window labels, pooled over the environment's sessions.
pub fn sign_vector_continuous(env: &Environment, config: &SignConfig) -> Result<SignVector> {
    let windows: Vec<_> = env.sessions.iter().flat_map(|s| &s.windows).collect();
    if windows.len() < 2 {
        return Err(Error::invalid(format!(
            "environment '{}' has fewer than two windows",
            env.env_id
        )));
    }
    let d = windows[0].features.len();
    let labels: Vec<f64> = windows.iter().map(|w| w.label).collect();
    let signs = (0..d)
        .map(|f| {
            let col: Vec<f64> = windows.iter().map(|w| w.features[f]).collect();
            pearson(&col, &labels).map(|r| config.sign_of(r, labels.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SignVector {
        env_id: env.env_id.clone(),
        signs,
    })
}

/// Sign vectors stacked as an `E × d` matrix, one row per environment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepresentationMatrix {
    pub rows: Vec<SignVector>,
}

impl RepresentationMatrix {
    /// Rows in the order of `env_ids`, one per named environment.
    pub fn from_pairsets(env_ids: &[String], pairsets: &[PairSet], config: &SignConfig) -> Result<Self> {
        let rows = env_ids
            .iter()
            .map(|id| {
                let ps = pairsets
                    .iter()
                    .find(|p| &p.env_id == id)
                    .ok_or_else(|| Error::invalid(format!("no pair set for environment '{id}'")))?;
                sign_vector(ps, config)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RepresentationMatrix { rows })
    }

    pub fn n_envs(&self) -> usize {
        self.rows.len()
    }

    pub fn d(&self) -> usize {
        self.rows.first().map_or(0, SignVector::d)
    }

    pub fn env_ids(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.env_id.clone()).collect()
    }

    pub fn to_f64_rows(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(SignVector::as_f64).collect()
    }

    /// Writes the matrix as a table: `env_id` then one column per feature index.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut header = vec!["env_id".to_string()];
        header.extend((0..self.d()).map(|i| i.to_string()));
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                std::iter::once(r.env_id.clone())
                    .chain(r.signs.iter().map(|s| s.to_string()))
                    .collect()
            })
            .collect();
        write_table(path, &header, &rows)
    }
}

/// Representation matrix of `corpus`, rows in corpus order.
pub fn representation_matrix(
    corpus: &Corpus,
    pairsets: &[PairSet],
    config: &SignConfig,
) -> Result<RepresentationMatrix> {
    RepresentationMatrix::from_pairsets(&corpus.env_ids(), pairsets, config)
}
