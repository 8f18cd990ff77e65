//! Corpus manifest: a JSON document listing environments and sessions, each
//! session pointing at a comma-separated window table with header
//! `window_id,f0,…,f{d-1},arousal`.
//!
//! In raw-trace mode a session also names a per-frame trace file (header
//! `arousal`); the trace is normalised per session and averaged over
//! windows of `frame_rate * window_seconds` frames, replacing the table's
//! arousal column (which may then be omitted).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_trace, window_trace, Corpus, Environment, Session, Window, DEFAULT_P_T};
use crate::error::{Error, Result};
use crate::io::{write_atomic, write_json};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestConfig {
    #[serde(default = "default_p_t")]
    pub p_t: f64,
    #[serde(default = "default_true")]
    pub symmetric_pairs: bool,
    /// Min-max normalise each session's arousal column on ingest.
    #[serde(default)]
    pub normalize_labels: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_seconds: Option<f64>,
}

fn default_p_t() -> f64 {
    DEFAULT_P_T
}

fn default_true() -> bool {
    true
}

impl Default for ManifestConfig {
    fn default() -> Self {
        ManifestConfig {
            p_t: DEFAULT_P_T,
            symmetric_pairs: true,
            normalize_labels: false,
            frame_rate: None,
            window_seconds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEntry {
    pub session_id: String,
    /// Window table, relative to the manifest directory.
    pub table: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentEntry {
    pub env_id: String,
    pub sessions: Vec<SessionEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub config: ManifestConfig,
    pub environments: Vec<EnvironmentEntry>,
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidManifest {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Loads and validates the corpus described by the manifest at `path`.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let manifest = load_manifest(path)?;
    let invalid = |reason: String| Error::InvalidManifest {
        path: path.to_path_buf(),
        reason,
    };
    if manifest.environments.len() < 2 {
        return Err(invalid(format!(
            "need at least 2 environments, found {}",
            manifest.environments.len()
        )));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut envs = Vec::with_capacity(manifest.environments.len());
    let mut d: Option<usize> = None;
    for entry in &manifest.environments {
        if entry.sessions.is_empty() {
            return Err(invalid(format!("environment '{}' lists no sessions", entry.env_id)));
        }
        let mut sessions = Vec::with_capacity(entry.sessions.len());
        for s in &entry.sessions {
            let session = read_session(base, &entry.env_id, s, &manifest.config, &mut d)?;
            sessions.push(session);
        }
        envs.push(Environment {
            env_id: entry.env_id.clone(),
            sessions,
        });
    }
    Corpus::new(envs)
}

fn read_session(
    base: &Path,
    env_id: &str,
    entry: &SessionEntry,
    config: &ManifestConfig,
    d: &mut Option<usize>,
) -> Result<Session> {
    let ingest = |row: Option<usize>, reason: String| Error::Ingest {
        env_id: env_id.to_string(),
        session_id: entry.session_id.clone(),
        row,
        reason,
    };
    let table_path = base.join(&entry.table);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(&table_path)
        .map_err(|e| ingest(None, format!("cannot open {}: {e}", table_path.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| ingest(None, format!("bad header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    if header.first().map(String::as_str) != Some("window_id") {
        return Err(ingest(None, "first column must be window_id".into()));
    }
    let has_arousal = header.last().map(String::as_str) == Some("arousal");
    let n_features = header.len() - 1 - usize::from(has_arousal);
    for (i, h) in header[1..1 + n_features].iter().enumerate() {
        if *h != format!("f{i}") {
            return Err(ingest(None, format!("expected column f{i}, found '{h}'")));
        }
    }
    match *d {
        None => *d = Some(n_features),
        Some(expected) if expected != n_features => {
            return Err(ingest(
                None,
                format!("table has {n_features} feature columns, corpus has {expected}"),
            ))
        }
        _ => {}
    }
    if entry.trace.is_none() && !has_arousal {
        return Err(ingest(None, "table has no arousal column and no trace is given".into()));
    }

    let mut windows = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| ingest(Some(row), e.to_string()))?;
        if record.len() != header.len() {
            return Err(ingest(
                Some(row),
                format!("ragged row: {} fields, header has {}", record.len(), header.len()),
            ));
        }
        let parse = |i: usize| -> Result<f64> {
            record[i]
                .trim()
                .parse::<f64>()
                .map_err(|e| ingest(Some(row), format!("column '{}': {e}", header[i])))
        };
        let window_id: usize = record[0]
            .trim()
            .parse()
            .map_err(|e| ingest(Some(row), format!("window_id: {e}")))?;
        let features = (1..=n_features).map(parse).collect::<Result<Vec<_>>>()?;
        let label = if has_arousal { parse(header.len() - 1)? } else { f64::NAN };
        windows.push(Window {
            window_id,
            features,
            label,
        });
    }

    if let Some(trace_path) = &entry.trace {
        let labels = windowed_trace_labels(&base.join(trace_path), config)
            .map_err(|e| ingest(None, e.to_string()))?;
        if labels.len() != windows.len() {
            return Err(ingest(
                None,
                format!(
                    "trace yields {} windows but the table has {}",
                    labels.len(),
                    windows.len()
                ),
            ));
        }
        for (w, l) in windows.iter_mut().zip(labels) {
            w.label = l;
        }
    } else if config.normalize_labels && !windows.is_empty() {
        let labels: Vec<f64> = windows.iter().map(|w| w.label).collect();
        let norm = normalize_trace(&labels).map_err(|e| ingest(None, e.to_string()))?;
        if norm.degenerate {
            log::warn!(
                "constant arousal in environment '{env_id}', session '{}'; labels set to 0.5",
                entry.session_id
            );
        }
        for (w, l) in windows.iter_mut().zip(norm.values) {
            w.label = l;
        }
    }

    Ok(Session {
        session_id: entry.session_id.clone(),
        windows,
    })
}

fn windowed_trace_labels(path: &Path, config: &ManifestConfig) -> Result<Vec<f64>> {
    let (Some(rate), Some(secs)) = (config.frame_rate, config.window_seconds) else {
        return Err(Error::invalid(
            "raw-trace sessions need frame_rate and window_seconds in the manifest config",
        ));
    };
    let mut reader = csv::Reader::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let mut trace = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let v: f64 = record
            .get(0)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|e| Error::invalid(format!("trace row {row}: {e}")))?;
        trace.push(v);
    }
    let norm = normalize_trace(&trace)?;
    if norm.degenerate {
        log::warn!("constant arousal trace in {}; labels set to 0.5", path.display());
    }
    window_trace(&norm.values, rate, secs)
}

/// Writes `corpus` as a manifest plus one window table per session under
/// `dir`, returning the manifest path.
pub fn write_corpus(corpus: &Corpus, config: &ManifestConfig, dir: &Path) -> Result<PathBuf> {
    let mut entries = Vec::with_capacity(corpus.environments().len());
    for env in corpus.environments() {
        let mut sessions = Vec::with_capacity(env.sessions.len());
        for session in &env.sessions {
            let rel = PathBuf::from("envs")
                .join(&env.env_id)
                .join(format!("{}.csv", session.session_id));
            write_session_table(&dir.join(&rel), session, corpus.d())?;
            sessions.push(SessionEntry {
                session_id: session.session_id.clone(),
                table: rel,
                trace: None,
            });
        }
        entries.push(EnvironmentEntry {
            env_id: env.env_id.clone(),
            sessions,
        });
    }
    let manifest = Manifest {
        config: config.clone(),
        environments: entries,
    };
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

fn write_session_table(path: &Path, session: &Session, d: usize) -> Result<()> {
    use std::fmt::Write as _;
    let mut out = String::from("window_id");
    for f in 0..d {
        let _ = write!(out, ",f{f}");
    }
    out.push_str(",arousal\n");
    for w in &session.windows {
        let _ = write!(out, "{}", w.window_id);
        for v in &w.features {
            let _ = write!(out, ",{v}");
        }
        let _ = writeln!(out, ",{}", w.label);
    }
    write_atomic(path, out.as_bytes())
}
