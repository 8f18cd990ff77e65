#![allow(dead_code)]

pub mod qp_oracle;

use invariant_affect::{PairSet, Session};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Session with `n` windows of `d` features and labels in [0, 1]; some labels
/// repeat so that ties and sub-threshold differences occur.
pub fn random_session(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Session {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let labels: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random_bool(0.2) {
                0.5
            } else {
                (rng.random_range(0..=20) as f64) / 20.0
            }
        })
        .collect();
    Session::from_rows("s", rows, labels).unwrap()
}

/// Reference loss of the preference model, computed from materialised pair
/// differences: population standardisation over the pairs, mean logistic
/// loss and an L2 penalty on the weights. Parameters are `[w over columns
/// with nonzero spread…, b]`.
pub struct ReferenceLoss {
    rows: Vec<Vec<f64>>,
    labels: Vec<f64>,
    reg: f64,
}

impl ReferenceLoss {
    pub fn new(sets: &[&PairSet], reg: f64) -> Self {
        let mut diffs: Vec<Vec<f64>> = Vec::new();
        let mut labels = Vec::new();
        for s in sets {
            let m = s.diffs();
            for (row, &y) in m.rows().into_iter().zip(s.labels()) {
                diffs.push(row.to_vec());
                labels.push(f64::from(y));
            }
        }
        let n = diffs.len() as f64;
        let d = diffs[0].len();
        let mut keep = Vec::new();
        let mut stats = Vec::new();
        for j in 0..d {
            let mean = diffs.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = diffs.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            if var > 0.0 {
                keep.push(j);
                stats.push((mean, var.sqrt()));
            }
        }
        let rows = diffs
            .iter()
            .map(|r| keep.iter().zip(&stats).map(|(&j, &(m, s))| (r[j] - m) / s).collect())
            .collect();
        ReferenceLoss { rows, labels, reg }
    }

    pub fn n_params(&self) -> usize {
        self.rows[0].len() + 1
    }

    pub fn value(&self, p: &[f64]) -> f64 {
        let k = p.len() - 1;
        let mut total = 0.0;
        for (x, &y) in self.rows.iter().zip(&self.labels) {
            let z: f64 = x.iter().zip(&p[..k]).map(|(a, b)| a * b).sum::<f64>() + p[k];
            // log(1 + e^z) − y z, evaluated stably
            let lse = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            total += lse - y * z;
        }
        total / self.rows.len() as f64 + 0.5 * self.reg * p[..k].iter().map(|w| w * w).sum::<f64>()
    }

    pub fn central_difference(&self, p: &[f64], h: f64) -> Vec<f64> {
        (0..p.len())
            .map(|i| {
                let mut a = p.to_vec();
                let mut b = p.to_vec();
                a[i] += h;
                b[i] -= h;
                (self.value(&a) - self.value(&b)) / (2.0 * h)
            })
            .collect()
    }
}

/// ‖a − b‖∞ / max(‖b‖∞, floor).
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let num = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let den = b.iter().fold(0.0f64, |m, y| m.max(y.abs())).max(floor);
    num / den
}
