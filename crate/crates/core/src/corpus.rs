//! Corpus data model, annotation-trace preprocessing and pairwise
//! preference construction.

use std::collections::HashSet;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default minimum arousal difference for a window pair to be labelled.
pub const DEFAULT_P_T: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub window_id: usize,
    pub features: Vec<f64>,
    /// Mean normalised arousal of the window, in [0, 1].
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub windows: Vec<Window>,
}

impl Session {
    /// Builds a session from a feature matrix (one row per window) and per-window labels.
    pub fn from_rows(session_id: impl Into<String>, rows: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let windows = rows
            .into_iter()
            .zip(labels)
            .enumerate()
            .map(|(window_id, (features, label))| Window {
                window_id,
                features,
                label,
            })
            .collect();
        Ok(Session {
            session_id: session_id.into(),
            windows,
        })
    }

    pub fn labels(&self) -> Vec<f64> {
        self.windows.iter().map(|w| w.label).collect()
    }

    fn feature_matrix(&self, d: usize) -> Array2<f64> {
        let mut m = Array2::zeros((self.windows.len(), d));
        for (mut row, w) in m.rows_mut().into_iter().zip(&self.windows) {
            row.assign(&ArrayView1::from(&w.features[..]));
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub env_id: String,
    pub sessions: Vec<Session>,
}

impl Environment {
    pub fn n_windows(&self) -> usize {
        self.sessions.iter().map(|s| s.windows.len()).sum()
    }
}

/// A validated, immutable collection of environments sharing one feature dimensionality.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Corpus {
    environments: Vec<Environment>,
    d: usize,
}

impl Corpus {
    pub fn new(environments: Vec<Environment>) -> Result<Self> {
        if environments.len() < 2 {
            return Err(Error::invalid(format!(
                "a corpus needs at least 2 environments, got {}",
                environments.len()
            )));
        }
        let d = environments
            .iter()
            .flat_map(|e| e.sessions.iter())
            .flat_map(|s| s.windows.first())
            .map(|w| w.features.len())
            .next()
            .ok_or_else(|| Error::invalid("corpus contains no windows"))?;
        if d == 0 {
            return Err(Error::invalid("feature dimensionality must be positive"));
        }

        let mut seen = HashSet::new();
        for env in &environments {
            if !seen.insert(env.env_id.as_str()) {
                return Err(Error::invalid(format!("duplicate env_id '{}'", env.env_id)));
            }
            if !env.sessions.iter().any(|s| s.windows.len() >= 2) {
                return Err(Error::Ingest {
                    env_id: env.env_id.clone(),
                    session_id: String::new(),
                    row: None,
                    reason: "environment needs a session with at least two windows".into(),
                });
            }
            for session in &env.sessions {
                validate_session(&env.env_id, session, d)?;
            }
        }
        Ok(Corpus { environments, d })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn environments(&self) -> &[Environment] {
        &self.environments
    }

    pub fn env_ids(&self) -> Vec<String> {
        self.environments.iter().map(|e| e.env_id.clone()).collect()
    }

    pub fn environment(&self, env_id: &str) -> Option<&Environment> {
        self.environments.iter().find(|e| e.env_id == env_id)
    }

    /// A corpus made of the named environments, in corpus order.
    pub fn restricted_to(&self, env_ids: &[String]) -> Result<Corpus> {
        for id in env_ids {
            if self.environment(id).is_none() {
                return Err(Error::invalid(format!("unknown environment '{id}'")));
            }
        }
        let envs = self
            .environments
            .iter()
            .filter(|e| env_ids.contains(&e.env_id))
            .cloned()
            .collect();
        Corpus::new(envs)
    }

    pub fn into_environments(self) -> Vec<Environment> {
        self.environments
    }
}

fn validate_session(env_id: &str, session: &Session, d: usize) -> Result<()> {
    let err = |row: Option<usize>, reason: String| Error::Ingest {
        env_id: env_id.to_string(),
        session_id: session.session_id.clone(),
        row,
        reason,
    };
    for (i, w) in session.windows.iter().enumerate() {
        if w.window_id != i {
            return Err(err(
                Some(i),
                format!("window_id {} is not consecutive (expected {i})", w.window_id),
            ));
        }
        if w.features.len() != d {
            return Err(err(
                Some(i),
                format!("ragged features: {} columns, expected {d}", w.features.len()),
            ));
        }
        if let Some(bad) = w.features.iter().find(|v| !v.is_finite()) {
            return Err(err(Some(i), format!("non-finite feature value {bad}")));
        }
        if !(0.0..=1.0).contains(&w.label) {
            return Err(err(Some(i), format!("label {} outside [0, 1]", w.label)));
        }
    }
    Ok(())
}

/// Output of [`normalize_trace`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedTrace {
    pub values: Vec<f64>,
    /// Set when the trace was constant; every value is then 0.5.
    pub degenerate: bool,
}

/// Min-max normalisation of an annotation trace to [0, 1].
pub fn normalize_trace(trace: &[f64]) -> Result<NormalizedTrace> {
    if trace.is_empty() {
        return Err(Error::invalid("cannot normalise an empty trace"));
    }
    if trace.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("trace contains non-finite values"));
    }
    let (min, max) = trace
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if max == min {
        return Ok(NormalizedTrace {
            values: vec![0.5; trace.len()],
            degenerate: true,
        });
    }
    let range = max - min;
    let values = trace
        .iter()
        .map(|&v| ((v - min) / range).clamp(0.0, 1.0))
        .collect();
    Ok(NormalizedTrace {
        values,
        degenerate: false,
    })
}

/// Number of frames per window; `frame_rate * window_seconds` must be a positive integer.
pub fn window_length(frame_rate: f64, window_seconds: f64) -> Result<usize> {
    let w = frame_rate * window_seconds;
    let rounded = w.round();
    if !w.is_finite() || rounded < 1.0 || (w - rounded).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "frame_rate * window_seconds = {w} is not a positive integer"
        )));
    }
    Ok(rounded as usize)
}

/// Means of non-overlapping windows of `frame_rate * window_seconds` frames.
/// A trailing partial window is dropped.
pub fn window_trace(trace: &[f64], frame_rate: f64, window_seconds: f64) -> Result<Vec<f64>> {
    let w = window_length(frame_rate, window_seconds)?;
    Ok(window_means(trace, w))
}

/// Means of non-overlapping windows of `w` frames.
pub fn window_means(trace: &[f64], w: usize) -> Vec<f64> {
    assert!(w > 0, "window length must be positive");
    if w > trace.len() {
        log::warn!(
            "window length {w} exceeds trace length {}; no windows produced",
            trace.len()
        );
        return Vec::new();
    }
    trace
        .chunks_exact(w)
        .map(|c| c.iter().sum::<f64>() / w as f64)
        .collect()
}

/// Pairwise preference data for one environment.
///
/// Rows are differences `first − second` of two windows from the same
/// session. The differences are stored implicitly as indices into the
/// stacked window feature matrix; [`PairSet::diffs`] materialises them.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub env_id: String,
    pub p_t: f64,
    windows: Array2<f64>,
    first: Vec<usize>,
    second: Vec<usize>,
    labels: Vec<u8>,
}

impl PairSet {
    pub fn empty(env_id: impl Into<String>, d: usize, p_t: f64) -> Self {
        PairSet {
            env_id: env_id.into(),
            p_t,
            windows: Array2::zeros((0, d)),
            first: Vec::new(),
            second: Vec::new(),
            labels: Vec::new(),
        }
    }

    /// Builds a pair set directly from explicit difference rows.
    ///
    /// Each row is stored as its own window paired with a shared zero window,
    /// so `diff(k)` returns the row exactly.
    pub fn from_diffs(env_id: impl Into<String>, diffs: Array2<f64>, labels: Vec<u8>) -> Result<Self> {
        if diffs.nrows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} difference rows but {} labels",
                diffs.nrows(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::invalid(format!("pair label {bad} is not 0 or 1")));
        }
        let n = diffs.nrows();
        let d = diffs.ncols();
        let mut windows = Array2::zeros((n + 1, d));
        windows.slice_mut(ndarray::s![..n, ..]).assign(&diffs);
        Ok(PairSet {
            env_id: env_id.into(),
            p_t: 0.0,
            windows,
            first: (0..n).collect(),
            second: vec![n; n],
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn d(&self) -> usize {
        self.windows.ncols()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Stacked window features that the pair indices refer to.
    pub fn windows(&self) -> &Array2<f64> {
        &self.windows
    }

    /// `(first, second)` window indices of every pair.
    pub fn indices(&self) -> (&[usize], &[usize]) {
        (&self.first, &self.second)
    }

    pub fn diff(&self, k: usize) -> Array1<f64> {
        &self.windows.row(self.first[k]) - &self.windows.row(self.second[k])
    }

    /// Column `feature` of the difference matrix.
    pub fn diff_column(&self, feature: usize) -> Vec<f64> {
        let col = self.windows.column(feature);
        self.first
            .iter()
            .zip(&self.second)
            .map(|(&a, &b)| col[a] - col[b])
            .collect()
    }

    /// The full `n_pairs × d` difference matrix.
    pub fn diffs(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.len(), self.d()));
        for (k, mut row) in out.rows_mut().into_iter().enumerate() {
            row.assign(&self.diff(k));
        }
        out
    }

    pub fn positive_fraction(&self) -> f64 {
        if self.is_empty() {
            return f64::NAN;
        }
        self.labels.iter().map(|&l| l as usize).sum::<usize>() as f64 / self.len() as f64
    }

    /// Appends the pairs of `other`, re-basing its window indices.
    pub fn append(&mut self, other: PairSet) -> Result<()> {
        if other.d() != self.d() {
            return Err(Error::invalid(format!(
                "cannot merge pair sets of dimensionality {} and {}",
                self.d(),
                other.d()
            )));
        }
        let offset = self.windows.nrows();
        let mut windows = Array2::zeros((offset + other.windows.nrows(), self.d()));
        windows.slice_mut(ndarray::s![..offset, ..]).assign(&self.windows);
        windows.slice_mut(ndarray::s![offset.., ..]).assign(&other.windows);
        self.windows = windows;
        self.first.extend(other.first.iter().map(|i| i + offset));
        self.second.extend(other.second.iter().map(|i| i + offset));
        self.labels.extend(other.labels);
        Ok(())
    }

    /// Same pairs with every feature outside `keep` set to zero.
    pub fn with_zeroed_features(&self, keep: &[usize]) -> PairSet {
        let mut out = self.clone();
        for f in 0..self.d() {
            if !keep.contains(&f) {
                out.windows.column_mut(f).fill(0.0);
            }
        }
        out
    }
}

/// Preference pairs for one session.
///
/// Every unordered window pair `{i, j}`, `i < j`, whose label difference is
/// at least `p_t` yields `features_i − features_j` labelled 1 when window `i`
/// is more aroused and 0 otherwise. With `symmetric`, the reversed pair
/// (negated difference, flipped label) follows each emitted pair.
pub fn build_pairs(session: &Session, p_t: f64, symmetric: bool) -> Result<PairSet> {
    if !(p_t >= 0.0) || !p_t.is_finite() {
        return Err(Error::invalid(format!("p_t must be a finite value >= 0, got {p_t}")));
    }
    if session.windows.len() < 2 {
        return Err(Error::invalid(format!(
            "session '{}' has fewer than two windows",
            session.session_id
        )));
    }
    let d = session.windows[0].features.len();
    let labels = session.labels();
    let mut first = Vec::new();
    let mut second = Vec::new();
    let mut pair_labels = Vec::new();
    for i in 0..labels.len() {
        for j in (i + 1)..labels.len() {
            let delta = labels[i] - labels[j];
            if delta.abs() < p_t {
                continue;
            }
            let label = u8::from(delta > 0.0);
            first.push(i);
            second.push(j);
            pair_labels.push(label);
            if symmetric {
                first.push(j);
                second.push(i);
                pair_labels.push(1 - label);
            }
        }
    }
    Ok(PairSet {
        env_id: String::new(),
        p_t,
        windows: session.feature_matrix(d),
        first,
        second,
        labels: pair_labels,
    })
}

/// All within-session pairs of an environment, sessions in order.
/// Sessions with fewer than two windows contribute nothing.
pub fn environment_pairs(env: &Environment, p_t: f64, symmetric: bool) -> Result<PairSet> {
    let d = env
        .sessions
        .iter()
        .flat_map(|s| s.windows.first())
        .map(|w| w.features.len())
        .next()
        .ok_or_else(|| Error::invalid(format!("environment '{}' has no windows", env.env_id)))?;
    let mut out = PairSet::empty(env.env_id.clone(), d, p_t);
    for session in env.sessions.iter().filter(|s| s.windows.len() >= 2) {
        out.append(build_pairs(session, p_t, symmetric)?)?;
    }
    Ok(out)
}
