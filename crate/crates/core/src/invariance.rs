//! Invariant-feature selection by counting correlation signs across environments.
//!
//! A feature is kept when the larger of its positive and negative counts
//! reaches `λ·|S|`, where `|S|` is the number of environments considered.
//! Zero signs count toward neither side, and features that are zero in every
//! environment are discarded outright.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::correlation::SignVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignCounts {
    pub c_pos: Vec<usize>,
    pub c_neg: Vec<usize>,
}

impl SignCounts {
    pub fn d(&self) -> usize {
        self.c_pos.len()
    }
}

/// Per-feature counts of +1 and −1 entries over the rows.
pub fn count_signs(rows: &[Vec<i8>]) -> Result<SignCounts> {
    let d = rows.first().map_or(0, Vec::len);
    let mut c_pos = vec![0; d];
    let mut c_neg = vec![0; d];
    for (r, row) in rows.iter().enumerate() {
        if row.len() != d {
            return Err(Error::invalid(format!("sign row {r} has length {}, expected {d}", row.len())));
        }
        for (i, &s) in row.iter().enumerate() {
            match s {
                1 => c_pos[i] += 1,
                -1 => c_neg[i] += 1,
                0 => {}
                other => return Err(Error::invalid(format!("sign entry {other} not in {{-1, 0, 1}}"))),
            }
        }
    }
    Ok(SignCounts { c_pos, c_neg })
}

pub fn count_sign_vectors<'a>(rows: impl IntoIterator<Item = &'a SignVector>) -> Result<SignCounts> {
    let rows: Vec<Vec<i8>> = rows.into_iter().map(|r| r.signs.clone()).collect();
    count_signs(&rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantMask {
    pub c_pos: Vec<usize>,
    pub c_neg: Vec<usize>,
    pub lambda: f64,
    pub n_envs: usize,
    /// Sorted indices of the selected features.
    pub selected: Vec<usize>,
}

impl InvariantMask {
    pub fn d(&self) -> usize {
        self.c_pos.len()
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn contains(&self, feature: usize) -> bool {
        self.selected.binary_search(&feature).is_ok()
    }

    /// Audit table: one row per selected feature with its counts.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let header = ["feature", "c_pos", "c_neg"].map(String::from).to_vec();
        let rows: Vec<Vec<String>> = self
            .selected
            .iter()
            .map(|&i| vec![i.to_string(), self.c_pos[i].to_string(), self.c_neg[i].to_string()])
            .collect();
        crate::io::write_table(path, &header, &rows)
    }
}

pub fn select_invariant(counts: &SignCounts, lambda: f64, n_envs: usize) -> Result<InvariantMask> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    if n_envs == 0 {
        return Err(Error::invalid("n_envs must be at least 1"));
    }
    if counts.c_neg.len() != counts.c_pos.len() {
        return Err(Error::invalid("c_pos and c_neg differ in length"));
    }
    if let Some(i) = (0..counts.d()).find(|&i| counts.c_pos[i] + counts.c_neg[i] > n_envs) {
        return Err(Error::invalid(format!("feature {i} has more signed entries than n_envs")));
    }
    let threshold = lambda * n_envs as f64;
    let selected = (0..counts.d())
        .filter(|&i| {
            let (p, n) = (counts.c_pos[i], counts.c_neg[i]);
            p + n > 0 && p.max(n) as f64 >= threshold
        })
        .collect();
    Ok(InvariantMask {
        c_pos: counts.c_pos.clone(),
        c_neg: counts.c_neg.clone(),
        lambda,
        n_envs,
        selected,
    })
}

/// Counts and selection over a set of environment sign vectors.
pub fn invariant_mask<'a>(
    rows: impl IntoIterator<Item = &'a SignVector>,
    lambda: f64,
) -> Result<InvariantMask> {
    let rows: Vec<&SignVector> = rows.into_iter().collect();
    let counts = count_sign_vectors(rows.iter().copied())?;
    select_invariant(&counts, lambda, rows.len())
}
