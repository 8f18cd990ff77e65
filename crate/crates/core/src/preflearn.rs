//! Linear (logistic) preference model over pair-difference vectors.
//!
//! Training minimises the mean logistic loss plus `reg/2 ‖w‖²` (bias not
//! penalised) by full-batch gradient descent with a backtracking Armijo
//! line search. Difference features are standardised with statistics from
//! the training pairs; those statistics travel with the model.
//!
//! Pair margins are evaluated as differences of per-window scores, so one
//! loss/gradient pass costs `O(windows·d + pairs)`.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::corpus::PairSet;
use crate::error::{Error, Result};
use crate::invariance::InvariantMask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub reg: f64,
    /// Stop when the gradient ∞-norm reaches this value.
    pub tol: f64,
    pub max_iter: usize,
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            reg: 1e-4,
            tol: 1e-6,
            max_iter: 10_000,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainDiagnostics {
    pub iterations: usize,
    pub final_loss: f64,
    pub grad_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefModel {
    pub d: usize,
    /// Feature indices the weights refer to, sorted.
    pub features: Vec<usize>,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Standardisation of each entry of `features`: `(x − mean) / scale`.
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub mask: Option<InvariantMask>,
    pub reg: f64,
    pub diagnostics: TrainDiagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: u8,
    pub probability: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl PrefModel {
    /// Zero weights and bias over all `d` features, no standardisation.
    pub fn zeros(d: usize) -> Self {
        PrefModel {
            d,
            features: (0..d).collect(),
            weights: vec![0.0; d],
            bias: 0.0,
            mean: vec![0.0; d],
            scale: vec![1.0; d],
            mask: None,
            reg: 0.0,
            diagnostics: TrainDiagnostics {
                iterations: 0,
                final_loss: f64::NAN,
                grad_norm: f64::NAN,
                converged: true,
            },
        }
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    /// Weights on the raw difference scale, as a length-`d` vector, plus the
    /// constant they absorb from standardisation.
    fn raw_weights(&self) -> (Array1<f64>, f64) {
        let mut v = Array1::zeros(self.d);
        let mut offset = 0.0;
        for (k, &f) in self.features.iter().enumerate() {
            let w = self.weights[k] / self.scale[k];
            v[f] = w;
            offset += w * self.mean[k];
        }
        (v, self.bias - offset)
    }

    pub fn margin(&self, diff: &[f64]) -> Result<f64> {
        if diff.len() != self.d {
            return Err(Error::invalid(format!(
                "difference vector has length {}, model expects {}",
                diff.len(),
                self.d
            )));
        }
        let mut z = self.bias;
        for (k, &f) in self.features.iter().enumerate() {
            z += self.weights[k] * (diff[f] - self.mean[k]) / self.scale[k];
        }
        Ok(z)
    }

    /// Margins of every pair in `pairs`.
    pub fn margins(&self, pairs: &PairSet) -> Result<Vec<f64>> {
        if pairs.d() != self.d {
            return Err(Error::invalid(format!(
                "pair set has dimensionality {}, model expects {}",
                pairs.d(),
                self.d
            )));
        }
        let (v, b) = self.raw_weights();
        let scores = pairs.windows().dot(&v);
        let (first, second) = pairs.indices();
        Ok(first
            .iter()
            .zip(second)
            .map(|(&a, &c)| scores[a] - scores[c] + b)
            .collect())
    }
}

/// Probability that the first window of the pair is preferred; label 1 iff it is at least 0.5.
pub fn predict(model: &PrefModel, diff: &[f64]) -> Result<Prediction> {
    let z = model.margin(diff)?;
    Ok(Prediction {
        label: u8::from(z >= 0.0),
        probability: sigmoid(z),
    })
}

/// Fraction of pairs whose predicted label equals the true label.
pub fn accuracy(model: &PrefModel, pairsets: &[&PairSet]) -> Result<f64> {
    let (correct, total) = correct_count(model, pairsets)?;
    if total == 0 {
        return Err(Error::invalid("accuracy needs at least one pair"));
    }
    Ok(correct as f64 / total as f64)
}

pub(crate) fn correct_count(model: &PrefModel, pairsets: &[&PairSet]) -> Result<(usize, usize)> {
    let mut correct = 0;
    let mut total = 0;
    for ps in pairsets {
        let margins = model.margins(ps)?;
        correct += margins
            .iter()
            .zip(ps.labels())
            .filter(|(&z, &y)| u8::from(z >= 0.0) == y)
            .count();
        total += ps.len();
    }
    Ok((correct, total))
}

struct SetData {
    /// Window features restricted to the active columns and divided by their scale.
    scaled: Array2<f64>,
    first: Vec<usize>,
    second: Vec<usize>,
    labels: Vec<u8>,
}

/// Regularised mean logistic loss over a collection of pair sets.
///
/// Parameters are laid out as `[w_0, …, w_{k−1}, b]` over the active
/// features (selected features whose difference column is not constant).
pub struct PreferenceObjective {
    d: usize,
    /// Selected features, in model order.
    features: Vec<usize>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// Positions in `features` that carry a free weight.
    active: Vec<usize>,
    /// `mean / scale` over the active features.
    offset: Array1<f64>,
    sets: Vec<SetData>,
    n_pairs: usize,
    reg: f64,
}

impl PreferenceObjective {
    pub fn new(pairsets: &[&PairSet], features: Vec<usize>, standardize: bool, reg: f64) -> Result<Self> {
        let Some(first_set) = pairsets.first() else {
            return Err(Error::invalid("no training pair sets"));
        };
        let d = first_set.d();
        if let Some(bad) = pairsets.iter().find(|p| p.d() != d) {
            return Err(Error::invalid(format!(
                "pair set '{}' has dimensionality {}, expected {d}",
                bad.env_id,
                bad.d()
            )));
        }
        if !(reg >= 0.0) {
            return Err(Error::invalid(format!("reg must be >= 0, got {reg}")));
        }
        if let Some(&f) = features.iter().find(|&&f| f >= d) {
            return Err(Error::invalid(format!("feature index {f} out of range for d = {d}")));
        }
        let n_pairs: usize = pairsets.iter().map(|p| p.len()).sum();
        if n_pairs == 0 {
            return Err(Error::invalid("training set has no pairs"));
        }

        let k = features.len();
        let mut mean = vec![0.0; k];
        let mut scale = vec![1.0; k];
        let mut sq = vec![0.0; k];
        for ps in pairsets {
            let (first, second) = ps.indices();
            let w = ps.windows();
            for (j, &f) in features.iter().enumerate() {
                let col = w.column(f);
                for (&a, &b) in first.iter().zip(second) {
                    mean[j] += col[a] - col[b];
                }
            }
        }
        for m in mean.iter_mut() {
            *m /= n_pairs as f64;
        }
        for ps in pairsets {
            let (first, second) = ps.indices();
            let w = ps.windows();
            for (j, &f) in features.iter().enumerate() {
                let col = w.column(f);
                for (&a, &b) in first.iter().zip(second) {
                    let c = col[a] - col[b] - mean[j];
                    sq[j] += c * c;
                }
            }
        }
        let mut active = Vec::with_capacity(k);
        for j in 0..k {
            let sd = (sq[j] / n_pairs as f64).sqrt();
            if sq[j] > 0.0 {
                active.push(j);
                if standardize {
                    scale[j] = sd;
                }
            }
            if !standardize {
                mean[j] = 0.0;
            }
        }

        let cols: Vec<usize> = active.iter().map(|&j| features[j]).collect();
        let inv_scale: Array1<f64> = active.iter().map(|&j| 1.0 / scale[j]).collect();
        let offset: Array1<f64> = active.iter().map(|&j| mean[j] / scale[j]).collect();
        let sets = pairsets
            .iter()
            .map(|ps| {
                let scaled = ps.windows().select(Axis(1), &cols) * &inv_scale;
                let (first, second) = ps.indices();
                SetData {
                    scaled,
                    first: first.to_vec(),
                    second: second.to_vec(),
                    labels: ps.labels().to_vec(),
                }
            })
            .collect();
        Ok(PreferenceObjective {
            d,
            features,
            mean,
            scale,
            active,
            offset,
            sets,
            n_pairs,
            reg,
        })
    }

    /// Number of parameters: active weights plus the bias.
    pub fn n_params(&self) -> usize {
        self.active.len() + 1
    }

    pub fn value(&self, params: &[f64]) -> f64 {
        self.evaluate(params, false).0
    }

    pub fn value_and_gradient(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let (v, g) = self.evaluate(params, true);
        (v, g.expect("gradient requested"))
    }

    fn evaluate(&self, params: &[f64], with_grad: bool) -> (f64, Option<Vec<f64>>) {
        let k = self.active.len();
        assert_eq!(params.len(), k + 1, "parameter vector has the wrong length");
        let w = Array1::from(params[..k].to_vec());
        let b = params[k];
        let shift = b - w.dot(&self.offset);

        let mut loss = 0.0;
        let mut grad_w = Array1::<f64>::zeros(k);
        let mut resid_sum = 0.0;
        for set in &self.sets {
            let scores = set.scaled.dot(&w);
            let mut coef = if with_grad {
                Array1::zeros(scores.len())
            } else {
                Array1::zeros(0)
            };
            for ((&a, &c), &y) in set.first.iter().zip(&set.second).zip(&set.labels) {
                let z = scores[a] - scores[c] + shift;
                let y = y as f64;
                loss += softplus(z) - y * z;
                if with_grad {
                    let r = sigmoid(z) - y;
                    coef[a] += r;
                    coef[c] -= r;
                    resid_sum += r;
                }
            }
            if with_grad {
                grad_w += &set.scaled.t().dot(&coef);
            }
        }
        let n = self.n_pairs as f64;
        let value = loss / n + 0.5 * self.reg * w.dot(&w);
        if !with_grad {
            return (value, None);
        }
        let grad_w = (grad_w - &self.offset * resid_sum) / n + &w * self.reg;
        let mut g = grad_w.to_vec();
        g.push(resid_sum / n);
        (value, Some(g))
    }

    fn into_model(self, params: &[f64], mask: Option<InvariantMask>, diagnostics: TrainDiagnostics) -> PrefModel {
        let mut weights = vec![0.0; self.features.len()];
        for (p, &j) in self.active.iter().enumerate() {
            weights[j] = params[p];
        }
        PrefModel {
            d: self.d,
            features: self.features,
            weights,
            bias: params[params.len() - 1],
            mean: self.mean,
            scale: self.scale,
            mask,
            reg: self.reg,
            diagnostics,
        }
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Gradient descent with Armijo backtracking; the trial step starts from the
/// Barzilai–Borwein estimate of the previous iteration. `on_accept` sees the
/// loss after every accepted step.
fn minimize(
    objective: &PreferenceObjective,
    config: &TrainConfig,
    mut on_accept: impl FnMut(f64),
) -> (Vec<f64>, TrainDiagnostics) {
    const ARMIJO: f64 = 1e-4;
    let mut x = vec![0.0; objective.n_params()];
    let (mut f, mut g) = objective.value_and_gradient(&x);
    let mut step = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let gnorm = inf_norm(&g);
        if gnorm <= config.tol {
            converged = true;
            break;
        }
        if iterations >= config.max_iter {
            break;
        }
        let g2: f64 = g.iter().map(|v| v * v).sum();
        let mut t = step;
        let accepted = loop {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - t * gi).collect();
            let ft = objective.value(&trial);
            if ft <= f - ARMIJO * t * g2 {
                break Some((trial, ft));
            }
            t *= 0.5;
            if t < 1e-20 {
                break None;
            }
        };
        let Some((trial, ft)) = accepted else {
            log::debug!("line search stalled at gradient norm {gnorm:e}");
            break;
        };
        let (_, gt) = objective.value_and_gradient(&trial);
        let (mut ss, mut sy) = (0.0, 0.0);
        for k in 0..x.len() {
            let s = trial[k] - x[k];
            ss += s * s;
            sy += s * (gt[k] - g[k]);
        }
        step = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e10) } else { t * 2.0 };
        x = trial;
        f = ft;
        g = gt;
        iterations += 1;
        on_accept(f);
    }
    let grad_norm = inf_norm(&g);
    if !converged {
        log::warn!(
            "preference model stopped after {iterations} iterations with gradient norm {grad_norm:e}"
        );
    }
    (
        x,
        TrainDiagnostics {
            iterations,
            final_loss: f,
            grad_norm,
            converged,
        },
    )
}

fn training_features(d: usize, mask: Option<&InvariantMask>) -> Result<Vec<usize>> {
    match mask {
        None => Ok((0..d).collect()),
        Some(m) => {
            if m.d() != d {
                return Err(Error::invalid(format!(
                    "mask covers {} features, data has {d}",
                    m.d()
                )));
            }
            Ok(m.selected.clone())
        }
    }
}

/// Trains on the union of `pairsets`, restricted to `mask` when given.
pub fn train(pairsets: &[&PairSet], mask: Option<&InvariantMask>, config: &TrainConfig) -> Result<PrefModel> {
    Ok(train_traced(pairsets, mask, config)?.0)
}

/// [`train`], also returning the loss after each accepted step.
pub fn train_traced(
    pairsets: &[&PairSet],
    mask: Option<&InvariantMask>,
    config: &TrainConfig,
) -> Result<(PrefModel, Vec<f64>)> {
    let d = pairsets
        .first()
        .map(|p| p.d())
        .ok_or_else(|| Error::invalid("no training pair sets"))?;
    let features = training_features(d, mask)?;
    let objective = PreferenceObjective::new(pairsets, features, config.standardize, config.reg)?;
    let mut trace = Vec::new();
    let (params, diagnostics) = minimize(&objective, config, |f| trace.push(f));
    Ok((objective.into_model(&params, mask.cloned(), diagnostics), trace))
}
