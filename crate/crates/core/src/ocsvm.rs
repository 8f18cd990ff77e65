//! ν-formulation one-class SVM over environment representations.
//!
//! The dual solved here is
//!
//! ```text
//! minimise ½ αᵀQα   subject to   0 ≤ αᵢ ≤ 1/(νn),   Σαᵢ = 1,   Qᵢⱼ = k(xᵢ, xⱼ)
//! ```
//!
//! with decision function `f(x) = Σ αᵢ k(xᵢ, x) − ρ`. Training points with
//! `f < 0` are outliers; at most a fraction ν of them can be, and at least a
//! fraction ν of the points carry nonzero weight.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::correlation::{representation_matrix, RepresentationMatrix, SignConfig};
use crate::corpus::{environment_pairs, Corpus, DEFAULT_P_T};
use crate::error::{Error, Result};
use crate::io::write_table;

/// Scores within this distance of zero are reported as exactly zero; the
/// solver's KKT tolerance is far below it, so free support vectors (which sit
/// on the boundary at the optimum) are not misclassified by rounding.
pub const SCORE_ZERO_TOL: f64 = 1e-8;

pub const DEFAULT_NU: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Rbf { gamma: f64 },
    Linear,
}

impl Kernel {
    fn eval_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::invalid(format!(
                "kernel arguments differ in length: {} vs {}",
                a.len(),
                b.len()
            )));
        }
        Ok(self.eval_unchecked(a, b))
    }
}

pub fn kernel_eval(a: &[f64], b: &[f64], kernel: &Kernel) -> Result<f64> {
    kernel.eval(a, b)
}

/// Dense kernel matrix of `rows`.
pub fn kernel_matrix(rows: &[Vec<f64>], kernel: &Kernel) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut q = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v = kernel.eval_unchecked(&rows[i], &rows[j]);
            q[i][j] = v;
            q[j][i] = v;
        }
    }
    q
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Stop when the maximal KKT violation drops to this value.
    pub tol: f64,
    /// Iteration cap is `max_iter_per_point * n`.
    pub max_iter_per_point: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-9,
            max_iter_per_point: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub kkt_residual: f64,
}

/// Solution of the one-class dual.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    /// `Qα` at the solution.
    pub gradient: Vec<f64>,
    pub upper_bound: f64,
    pub diagnostics: SolverDiagnostics,
}

fn check_nu(nu: f64) -> Result<()> {
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::invalid(format!("nu must lie in (0, 1], got {nu}")));
    }
    Ok(())
}

/// Maximal violating pair: `(i, j, gap)` with `i` the cheapest index to
/// increase and `j` the most expensive to decrease.
fn max_violating_pair(alpha: &[f64], g: &[f64], c: f64) -> (usize, usize, f64) {
    let mut i_up = usize::MAX;
    let mut g_min = f64::INFINITY;
    let mut j_low = usize::MAX;
    let mut g_max = f64::NEG_INFINITY;
    for k in 0..alpha.len() {
        if alpha[k] < c && g[k] < g_min {
            g_min = g[k];
            i_up = k;
        }
        if alpha[k] > 0.0 && g[k] > g_max {
            g_max = g[k];
            j_low = k;
        }
    }
    if i_up == usize::MAX || j_low == usize::MAX {
        return (0, 0, 0.0);
    }
    (i_up, j_low, (g_max - g_min).max(0.0))
}

fn offset_from_kkt(alpha: &[f64], g: &[f64], c: f64) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    let mut at_zero_min = f64::INFINITY;
    let mut at_bound_max = f64::NEG_INFINITY;
    for k in 0..alpha.len() {
        if alpha[k] > 0.0 && alpha[k] < c {
            sum += g[k];
            count += 1;
        } else if alpha[k] == 0.0 {
            at_zero_min = at_zero_min.min(g[k]);
        } else {
            at_bound_max = at_bound_max.max(g[k]);
        }
    }
    if count > 0 {
        sum / count as f64
    } else if at_zero_min.is_finite() && at_bound_max.is_finite() {
        0.5 * (at_zero_min + at_bound_max)
    } else if at_zero_min.is_finite() {
        at_zero_min
    } else {
        at_bound_max
    }
}

/// SMO on the one-class dual with maximal-violating-pair working sets.
pub fn solve_dual(q: &[Vec<f64>], nu: f64, config: &SolverConfig) -> Result<DualSolution> {
    check_nu(nu)?;
    let n = q.len();
    if n == 0 {
        return Err(Error::invalid("empty kernel matrix"));
    }
    let c = 1.0 / (nu * n as f64);

    // Feasible start: fill the first ⌊νn⌋ weights to the bound, remainder to the next.
    let mut alpha = vec![0.0; n];
    let mut remaining = 1.0;
    for a in alpha.iter_mut() {
        if remaining <= 0.0 {
            break;
        }
        let v = c.min(remaining);
        *a = if v >= c { c } else { v };
        remaining -= v;
    }

    let mut g: Vec<f64> = (0..n)
        .map(|k| (0..n).map(|l| q[k][l] * alpha[l]).sum())
        .collect();

    let max_iter = config.max_iter_per_point.saturating_mul(n);
    let mut iterations = 0;
    loop {
        let (i, j, gap) = max_violating_pair(&alpha, &g, c);
        if gap <= config.tol {
            break;
        }
        if iterations >= max_iter {
            return Err(Error::NotConverged {
                iterations,
                kkt_residual: gap,
            });
        }
        iterations += 1;

        let eta = (q[i][i] + q[j][j] - 2.0 * q[i][j]).max(1e-12);
        let room_i = c - alpha[i];
        let room_j = alpha[j];
        let mut t = gap / eta;
        if t >= room_i || t >= room_j {
            if room_i <= room_j {
                t = room_i;
                alpha[i] = c;
                alpha[j] = if room_i == room_j { 0.0 } else { alpha[j] - t };
            } else {
                t = room_j;
                alpha[j] = 0.0;
                alpha[i] += t;
            }
        } else {
            alpha[i] += t;
            alpha[j] -= t;
        }
        for k in 0..n {
            g[k] += t * (q[k][i] - q[k][j]);
        }
    }

    // Recompute the gradient to shed accumulated drift before reading off ρ.
    for k in 0..n {
        g[k] = (0..n).map(|l| q[k][l] * alpha[l]).sum();
    }
    let (_, _, kkt_residual) = max_violating_pair(&alpha, &g, c);
    let rho = offset_from_kkt(&alpha, &g, c);
    Ok(DualSolution {
        alpha,
        rho,
        gradient: g,
        upper_bound: c,
        diagnostics: SolverDiagnostics {
            iterations,
            kkt_residual,
        },
    })
}

/// A trained one-class estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcsvmModel {
    pub support_points: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
    pub rho: f64,
    pub kernel: Kernel,
    pub nu: f64,
    pub n_train: usize,
    pub diagnostics: SolverDiagnostics,
}

impl OcsvmModel {
    /// Raw decision value `Σ αᵢ k(xᵢ, x) − ρ`.
    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        let mut s = 0.0;
        for (sv, a) in self.support_points.iter().zip(&self.alphas) {
            s += a * self.kernel.eval(sv, x)?;
        }
        Ok(s - self.rho)
    }

    /// Decision value with `|f| ≤ SCORE_ZERO_TOL` snapped to zero.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        let f = self.decision(x)?;
        Ok(if f.abs() <= SCORE_ZERO_TOL { 0.0 } else { f })
    }

    pub fn is_outlier(&self, x: &[f64]) -> Result<bool> {
        Ok(self.score(x)? < 0.0)
    }

    pub fn n_support(&self) -> usize {
        self.support_points.len()
    }
}

pub fn train(rows: &[Vec<f64>], nu: f64, kernel: Kernel, config: &SolverConfig) -> Result<OcsvmModel> {
    check_nu(nu)?;
    if rows.len() < 2 {
        return Err(Error::invalid(format!(
            "one-class training needs at least 2 rows, got {}",
            rows.len()
        )));
    }
    let d = rows[0].len();
    if let Some(bad) = rows.iter().position(|r| r.len() != d) {
        return Err(Error::invalid(format!("row {bad} has length {}, expected {d}", rows[bad].len())));
    }
    if let Kernel::Rbf { gamma } = kernel {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("RBF gamma must be positive, got {gamma}")));
        }
    }
    let q = kernel_matrix(rows, &kernel);
    let sol = solve_dual(&q, nu, config)?;
    let (support_points, alphas) = rows
        .iter()
        .zip(&sol.alpha)
        .filter(|(_, &a)| a > 0.0)
        .map(|(r, &a)| (r.clone(), a))
        .unzip();
    Ok(OcsvmModel {
        support_points,
        alphas,
        rho: sol.rho,
        kernel,
        nu,
        n_train: rows.len(),
        diagnostics: sol.diagnostics,
    })
}

/// Kernel selection for outlier detection; an unset RBF γ means `1/d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum KernelChoice {
    Rbf { gamma: Option<f64> },
    Linear,
}

impl KernelChoice {
    pub fn resolve(&self, d: usize) -> Kernel {
        match *self {
            KernelChoice::Rbf { gamma } => Kernel::Rbf {
                gamma: gamma.unwrap_or(1.0 / d.max(1) as f64),
            },
            KernelChoice::Linear => Kernel::Linear,
        }
    }
}

impl Default for KernelChoice {
    fn default() -> Self {
        KernelChoice::Rbf { gamma: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub p_t: f64,
    pub symmetric_pairs: bool,
    pub nu: f64,
    pub kernel: KernelChoice,
    pub sign: SignConfig,
    pub solver: SolverConfig,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            p_t: DEFAULT_P_T,
            symmetric_pairs: true,
            nu: DEFAULT_NU,
            kernel: KernelChoice::default(),
            sign: SignConfig::default(),
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvScore {
    pub env_id: String,
    pub score: f64,
    pub outlier: bool,
}

/// Split of the environments into inliers and outliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub inliers: Vec<String>,
    pub outliers: Vec<String>,
    pub scores: Vec<EnvScore>,
    pub nu: f64,
    pub kernel: Option<Kernel>,
    /// Absent when fewer than three environments short-circuited training.
    pub diagnostics: Option<SolverDiagnostics>,
}

impl Partition {
    pub fn env_ids(&self) -> Vec<String> {
        self.scores.iter().map(|s| s.env_id.clone()).collect()
    }

    pub fn is_outlier(&self, env_id: &str) -> bool {
        self.outliers.iter().any(|o| o == env_id)
    }

    /// Every environment an inlier, scores zero.
    pub fn all_inliers(env_ids: &[String], nu: f64) -> Partition {
        Partition {
            inliers: env_ids.to_vec(),
            outliers: Vec::new(),
            scores: env_ids
                .iter()
                .map(|id| EnvScore {
                    env_id: id.clone(),
                    score: 0.0,
                    outlier: false,
                })
                .collect(),
            nu,
            kernel: None,
            diagnostics: None,
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header = ["env_id", "score", "status"].map(String::from).to_vec();
        let rows: Vec<Vec<String>> = self
            .scores
            .iter()
            .map(|s| {
                vec![
                    s.env_id.clone(),
                    s.score.to_string(),
                    if s.outlier { "outlier" } else { "inlier" }.to_string(),
                ]
            })
            .collect();
        write_table(path, &header, &rows)
    }
}

/// Trains on the representation rows and labels each environment by the sign of its score.
pub fn partition_representations(
    matrix: &RepresentationMatrix,
    nu: f64,
    kernel: KernelChoice,
    solver: &SolverConfig,
) -> Result<Partition> {
    check_nu(nu)?;
    let env_ids = matrix.env_ids();
    if env_ids.len() < 3 {
        log::warn!(
            "only {} environments; one-class estimation skipped, all treated as inliers",
            env_ids.len()
        );
        return Ok(Partition::all_inliers(&env_ids, nu));
    }
    let rows = matrix.to_f64_rows();
    let kernel = kernel.resolve(matrix.d());
    let model = train(&rows, nu, kernel, solver)?;
    let mut scores = Vec::with_capacity(rows.len());
    let (mut inliers, mut outliers) = (Vec::new(), Vec::new());
    for (id, row) in env_ids.into_iter().zip(&rows) {
        let score = model.score(row)?;
        let outlier = score < 0.0;
        if outlier {
            outliers.push(id.clone());
        } else {
            inliers.push(id.clone());
        }
        scores.push(EnvScore {
            env_id: id,
            score,
            outlier,
        });
    }
    Ok(Partition {
        inliers,
        outliers,
        scores,
        nu,
        kernel: Some(kernel),
        diagnostics: Some(model.diagnostics),
    })
}

/// Pairs → sign vectors → one-class SVM → partition.
pub fn detect_outliers(corpus: &Corpus, config: &DetectConfig) -> Result<Partition> {
    let pairsets = corpus
        .environments()
        .iter()
        .map(|e| environment_pairs(e, config.p_t, config.symmetric_pairs))
        .collect::<Result<Vec<_>>>()?;
    let matrix = representation_matrix(corpus, &pairsets, &config.sign)?;
    partition_representations(&matrix, config.nu, config.kernel, &config.solver)
}
