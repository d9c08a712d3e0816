//! Exemplar store and similarity ranking of alerts against annotated windows.

use std::cmp::Ordering;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::Source;
use crate::tcn::{infer_batch, TcnError, TcnParameters};
use crate::tensorize::WindowRef;

pub const DEFAULT_K: usize = 5;
const UNIT_TOLERANCE: f64 = 1e-9;
/// Cosine this close to 1 counts as the same representation.
pub const EXACT_MATCH: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum RankError {
    #[error("embedding is zero")]
    ZeroEmbedding,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("exemplar store is empty")]
    EmptyStore,
    #[error("vector is not unit length (norm {0})")]
    NotUnit(f64),
    #[error("exemplar label must be 1 or 2, got {0}")]
    InvalidLabel(u8),
    #[error("exemplar file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Tcn(#[from] TcnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn unit(mut v: Vec<f64>) -> Result<Vec<f64>, RankError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() || norm <= f64::MIN_POSITIVE {
        return Err(RankError::ZeroEmbedding);
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

/// Unit-length final-timestep embeddings of normalised windows, each `n x features`.
pub fn embed_batch(params: &TcnParameters, windows: &[Array2<f64>]) -> Result<Vec<Vec<f64>>, RankError> {
    let Some(first) = windows.first() else { return Ok(Vec::new()) };
    let (n, f) = first.dim();
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(256) {
        let mut x = Array2::zeros((chunk.len() * n, f));
        for (b, w) in chunk.iter().enumerate() {
            if w.dim() != (n, f) {
                return Err(TcnError::ShapeMismatch(format!("window {:?} among windows of {n}x{f}", w.dim())).into());
            }
            x.slice_mut(s![b * n..(b + 1) * n, ..]).assign(w);
        }
        let inf = infer_batch(params, &x, n)?;
        for row in inf.embedding.rows() {
            out.push(unit(row.to_vec())?);
        }
    }
    Ok(out)
}

pub fn embed(params: &TcnParameters, window: &Array2<f64>) -> Result<Vec<f64>, RankError> {
    Ok(embed_batch(params, std::slice::from_ref(window))?.remove(0))
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, RankError> {
    if a.len() != b.len() {
        return Err(RankError::DimMismatch { expected: a.len(), got: b.len() });
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub exemplar_id: u64,
    pub embedding: Vec<f64>,
    pub label: u8,
    pub source: Source,
    pub window: WindowRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub alert_id: u64,
    pub window: WindowRef,
    pub predicted_label: u8,
    /// Softmax probability of the predicted class.
    pub model_score: f64,
    pub similarity_score: f64,
    pub rank: usize,
    /// Set when no exemplar shared the predicted label and all were used.
    #[serde(default)]
    pub fallback: bool,
    pub embedding: Vec<f64>,
}

/// Mean of the `k` largest similarities between `query` and exemplars with
/// `label`, or all exemplars when none has it. An exemplar identical to the
/// query settles the score at 1. Returns the score and whether the fallback
/// was taken.
pub fn similarity(query: &[f64], label: u8, store: &[Exemplar], k: usize) -> Result<(f64, bool), RankError> {
    if store.is_empty() {
        return Err(RankError::EmptyStore);
    }
    let fallback = !store.iter().any(|e| e.label == label);
    let mut sims = store
        .iter()
        .filter(|e| fallback || e.label == label)
        .map(|e| cosine(query, &e.embedding))
        .collect::<Result<Vec<_>, _>>()?;
    sims.sort_by(|a, b| b.total_cmp(a));
    if sims[0] >= 1.0 - EXACT_MATCH {
        return Ok((1.0, fallback));
    }
    sims.truncate(k.max(1));
    Ok((sims.iter().sum::<f64>() / sims.len() as f64, fallback))
}

/// The `k` most similar exemplars with the given label, best first.
pub fn nearest(query: &[f64], label: u8, store: &[Exemplar], k: usize) -> Result<Vec<(u64, f64)>, RankError> {
    let mut sims = store
        .iter()
        .filter(|e| e.label == label)
        .map(|e| Ok((e.exemplar_id, cosine(query, &e.embedding)?)))
        .collect::<Result<Vec<_>, RankError>>()?;
    sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    sims.truncate(k);
    Ok(sims)
}

/// Descending similarity, then descending model score, then ascending id.
pub fn rank_order(a: &Alert, b: &Alert) -> Ordering {
    b.similarity_score
        .total_cmp(&a.similarity_score)
        .then(b.model_score.total_cmp(&a.model_score))
        .then(a.alert_id.cmp(&b.alert_id))
}

/// Scores every alert against the store, sorts and assigns ranks from 1.
pub fn rank_alerts(mut alerts: Vec<Alert>, store: &[Exemplar], k: usize) -> Result<Vec<Alert>, RankError> {
    if store.is_empty() {
        return Err(RankError::EmptyStore);
    }
    for a in &mut alerts {
        let (score, fallback) = similarity(&a.embedding, a.predicted_label, store, k)?;
        a.similarity_score = score;
        a.fallback = fallback;
    }
    alerts.sort_by(rank_order);
    for (i, a) in alerts.iter_mut().enumerate() {
        a.rank = i + 1;
    }
    Ok(alerts)
}

/// Area under the ROC curve for separating `pos` from `neg`, ties counting half.
pub fn auc(pos: &[f64], neg: &[f64]) -> f64 {
    if pos.is_empty() || neg.is_empty() {
        return f64::NAN;
    }
    let mut wins = 0.0;
    for p in pos {
        for q in neg {
            wins += match p.total_cmp(q) {
                Ordering::Greater => 1.0,
                Ordering::Equal => 0.5,
                Ordering::Less => 0.0,
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

/// Exemplars in memory, optionally mirrored to an append-only JSONL file.
#[derive(Debug, Default)]
pub struct ExemplarStore {
    path: Option<PathBuf>,
    items: Vec<Exemplar>,
}

impl ExemplarStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads the file if it exists; later additions are appended to it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, RankError> {
        let path = path.as_ref().to_path_buf();
        let mut store = ExemplarStore { path: None, items: Vec::new() };
        if path.exists() {
            for (i, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let e: Exemplar =
                    serde_json::from_str(&line).map_err(|e| RankError::Parse { line: i + 1, message: e.to_string() })?;
                store.check(&e).map_err(|e| RankError::Parse { line: i + 1, message: e.to_string() })?;
                store.items.push(e);
            }
        } else if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        store.path = Some(path);
        Ok(store)
    }

    pub fn all(&self) -> &[Exemplar] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.items.first().map(|e| e.embedding.len())
    }

    fn check(&self, e: &Exemplar) -> Result<(), RankError> {
        if !matches!(e.label, 1 | 2) {
            return Err(RankError::InvalidLabel(e.label));
        }
        if let Some(d) = self.dim() {
            if d != e.embedding.len() {
                return Err(RankError::DimMismatch { expected: d, got: e.embedding.len() });
            }
        }
        let norm = e.embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(RankError::NotUnit(norm));
        }
        Ok(())
    }

    /// Adds an exemplar with the next free id and returns that id.
    pub fn add(&mut self, embedding: Vec<f64>, label: u8, source: Source, window: WindowRef) -> Result<u64, RankError> {
        let exemplar_id = self.items.iter().map(|e| e.exemplar_id + 1).max().unwrap_or(1);
        let e = Exemplar { exemplar_id, embedding, label, source, window };
        self.check(&e)?;
        if let Some(path) = &self.path {
            let mut line = serde_json::to_vec(&e).map_err(|err| RankError::Parse { line: 0, message: err.to_string() })?;
            line.push(b'\n');
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            f.write_all(&line)?;
            f.sync_data()?;
        }
        self.items.push(e);
        Ok(exemplar_id)
    }
}
