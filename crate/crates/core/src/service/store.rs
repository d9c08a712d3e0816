//! Alerts, annotations and exemplars kept in append-only JSONL files and
//! rebuilt in memory on open.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::scan::Candidate;
use super::ServiceError;
use crate::book::{Side, LEVELS};
use crate::oracle::{Annotation, Source};
use crate::rank::{nearest, rank_order, similarity, Alert, Exemplar, ExemplarStore, DEFAULT_K};
use crate::tensorize::{Frame, WindowRef};

const ALERTS: &str = "alerts.jsonl";
const ANNOTATIONS: &str = "annotations.jsonl";
const EXEMPLARS: &str = "exemplars.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Status {
    New,
    Annotated,
    Dismissed,
}

impl std::str::FromStr for Status {
    type Err = ServiceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "new" => Ok(Status::New),
            "annotated" => Ok(Status::Annotated),
            "dismissed" => Ok(Status::Dismissed),
            _ => Err(ServiceError::BadRequest(format!("unknown status {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertRecord {
    #[serde(flatten)]
    pub alert: Alert,
    pub frames: Vec<Frame>,
    pub status: Status,
    pub annotations: Vec<Annotation>,
}

/// Row of the alert queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertSummary {
    pub alert_id: u64,
    pub instrument_id: u32,
    pub t_end: u64,
    pub predicted_label: u8,
    pub model_score: f64,
    pub similarity_score: f64,
    pub rank: usize,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarExemplar {
    pub exemplar_id: u64,
    pub similarity: f64,
}

/// Full alert view: frames as `[level, side, price, qty]` rows per timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertDetail {
    pub alert_id: u64,
    pub window: WindowRef,
    pub instrument_id: u32,
    pub t_end: u64,
    pub predicted_label: u8,
    pub model_score: f64,
    pub similarity_score: f64,
    pub rank: usize,
    pub fallback: bool,
    pub status: Status,
    pub annotations: Vec<Annotation>,
    pub frames: Vec<Vec<[i64; 4]>>,
    pub similar_exemplars: Vec<SimilarExemplar>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarSummary {
    pub exemplar_id: u64,
    pub label: u8,
    pub source: Source,
    pub window: WindowRef,
}

#[derive(Serialize, Deserialize)]
struct AnnotationEntry {
    alert_id: u64,
    annotation: Annotation,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ServiceError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ServiceError::Corrupt(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

fn append_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), ServiceError> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(|e| ServiceError::Corrupt(e.to_string()))?;
        buf.push(b'\n');
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(&buf)?;
    f.sync_data()?;
    Ok(())
}

pub struct Store {
    dir: PathBuf,
    alerts: BTreeMap<u64, AlertRecord>,
    exemplars: ExemplarStore,
    k: usize,
}

impl Store {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut alerts = BTreeMap::new();
        for rec in read_jsonl::<AlertRecord>(&dir.join(ALERTS))? {
            alerts.insert(rec.alert.alert_id, rec);
        }
        let exemplars = ExemplarStore::open(dir.join(EXEMPLARS))?;
        let mut store = Store { dir, alerts, exemplars, k: DEFAULT_K };
        for entry in read_jsonl::<AnnotationEntry>(&store.dir.join(ANNOTATIONS))? {
            let rec = store
                .alerts
                .get_mut(&entry.alert_id)
                .ok_or_else(|| ServiceError::Corrupt(format!("annotation for missing alert {}", entry.alert_id)))?;
            apply_status(rec, entry.annotation.label);
            rec.annotations.push(entry.annotation);
        }
        store.rerank()?;
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.alerts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alerts.is_empty()
    }

    /// Exemplars used for ranking: a human exemplar hides oracle ones for the same window.
    pub fn effective_exemplars(&self) -> Vec<Exemplar> {
        let human: HashSet<WindowRef> =
            self.exemplars.all().iter().filter(|e| e.source == Source::Human).map(|e| e.window).collect();
        self.exemplars.all().iter().filter(|e| e.source == Source::Human || !human.contains(&e.window)).cloned().collect()
    }

    pub fn exemplars(&self) -> Vec<ExemplarSummary> {
        self.exemplars
            .all()
            .iter()
            .map(|e| ExemplarSummary { exemplar_id: e.exemplar_id, label: e.label, source: e.source, window: e.window })
            .collect()
    }

    pub fn exemplar_count(&self) -> usize {
        self.exemplars.len()
    }

    /// Recomputes similarity scores and ranks over all alerts. With no
    /// exemplars every score is 0 and the order falls to model score.
    pub fn rerank(&mut self) -> Result<(), ServiceError> {
        let ex = self.effective_exemplars();
        for rec in self.alerts.values_mut() {
            let (score, fallback) =
                if ex.is_empty() { (0.0, false) } else { similarity(&rec.alert.embedding, rec.alert.predicted_label, &ex, self.k)? };
            rec.alert.similarity_score = score;
            rec.alert.fallback = fallback;
        }
        let mut order: Vec<&Alert> = self.alerts.values().map(|r| &r.alert).collect();
        order.sort_by(|a, b| rank_order(a, b));
        let ranks: Vec<(u64, usize)> = order.iter().enumerate().map(|(i, a)| (a.alert_id, i + 1)).collect();
        for (id, rank) in ranks {
            self.alerts.get_mut(&id).unwrap().alert.rank = rank;
        }
        Ok(())
    }

    /// Stores scan candidates as new alerts, skipping windows already
    /// present, and returns the new ids.
    pub fn add_candidates(&mut self, cands: Vec<Candidate>) -> Result<Vec<u64>, ServiceError> {
        let known: HashSet<WindowRef> = self.alerts.values().map(|r| r.alert.window).collect();
        let mut next = self.alerts.keys().next_back().map_or(1, |id| id + 1);
        let mut fresh = Vec::new();
        for c in cands {
            if known.contains(&c.window) {
                continue;
            }
            fresh.push(AlertRecord {
                alert: Alert {
                    alert_id: next,
                    window: c.window,
                    predicted_label: c.predicted_label,
                    model_score: c.model_score,
                    similarity_score: 0.0,
                    rank: 0,
                    fallback: false,
                    embedding: c.embedding,
                },
                frames: c.frames,
                status: Status::New,
                annotations: Vec::new(),
            });
            next += 1;
        }
        append_jsonl(&self.dir.join(ALERTS), &fresh)?;
        let ids = fresh.iter().map(|r| r.alert.alert_id).collect();
        for rec in fresh {
            self.alerts.insert(rec.alert.alert_id, rec);
        }
        self.rerank()?;
        Ok(ids)
    }

    pub fn annotate(&mut self, alert_id: u64, label: u8, source: Source, notes: Option<String>) -> Result<AlertDetail, ServiceError> {
        let rec = self.alerts.get(&alert_id).ok_or(ServiceError::UnknownAlert(alert_id))?;
        let annotation = Annotation {
            window: rec.alert.window,
            label,
            confidence: 1.0,
            source,
            rationale: Default::default(),
            created_at: now_ns(),
            notes,
        };
        self.record(alert_id, annotation)
    }

    /// Appends a prepared annotation, e.g. one produced by the oracle.
    pub fn record(&mut self, alert_id: u64, annotation: Annotation) -> Result<AlertDetail, ServiceError> {
        if annotation.label > 2 {
            return Err(ServiceError::InvalidLabel(annotation.label));
        }
        let rec = self.alerts.get(&alert_id).ok_or(ServiceError::UnknownAlert(alert_id))?;
        if rec.status == Status::Dismissed {
            return Err(ServiceError::AlreadyDismissed(alert_id));
        }
        let (embedding, window) = (rec.alert.embedding.clone(), rec.alert.window);
        append_jsonl(&self.dir.join(ANNOTATIONS), &[AnnotationEntry { alert_id, annotation: annotation.clone() }])?;
        if annotation.label != 0 {
            self.exemplars.add(embedding, annotation.label, annotation.source, window)?;
        }
        let rec = self.alerts.get_mut(&alert_id).unwrap();
        apply_status(rec, annotation.label);
        rec.annotations.push(annotation);
        self.rerank()?;
        self.detail(alert_id)
    }

    pub fn alerts(&self) -> impl Iterator<Item = &AlertRecord> {
        self.alerts.values()
    }

    pub fn get(&self, alert_id: u64) -> Option<&AlertRecord> {
        self.alerts.get(&alert_id)
    }

    /// Queue in rank order, optionally filtered by status.
    pub fn list(&self, status: Option<Status>, limit: Option<usize>) -> Vec<AlertSummary> {
        let mut recs: Vec<&AlertRecord> = self.alerts.values().filter(|r| status.is_none_or(|s| r.status == s)).collect();
        recs.sort_by_key(|r| r.alert.rank);
        recs.into_iter()
            .take(limit.unwrap_or(usize::MAX))
            .map(|r| AlertSummary {
                alert_id: r.alert.alert_id,
                instrument_id: r.alert.window.instrument_id,
                t_end: r.alert.window.t_end,
                predicted_label: r.alert.predicted_label,
                model_score: r.alert.model_score,
                similarity_score: r.alert.similarity_score,
                rank: r.alert.rank,
                status: r.status,
            })
            .collect()
    }

    pub fn detail(&self, alert_id: u64) -> Result<AlertDetail, ServiceError> {
        let r = self.alerts.get(&alert_id).ok_or(ServiceError::UnknownAlert(alert_id))?;
        let ex = self.effective_exemplars();
        let similar = nearest(&r.alert.embedding, r.alert.predicted_label, &ex, self.k)?
            .into_iter()
            .map(|(exemplar_id, similarity)| SimilarExemplar { exemplar_id, similarity })
            .collect();
        Ok(AlertDetail {
            alert_id,
            window: r.alert.window,
            instrument_id: r.alert.window.instrument_id,
            t_end: r.alert.window.t_end,
            predicted_label: r.alert.predicted_label,
            model_score: r.alert.model_score,
            similarity_score: r.alert.similarity_score,
            rank: r.alert.rank,
            fallback: r.alert.fallback,
            status: r.status,
            annotations: r.annotations.clone(),
            frames: r.frames.iter().map(frame_rows).collect(),
            similar_exemplars: similar,
        })
    }
}

fn apply_status(rec: &mut AlertRecord, label: u8) {
    if rec.status == Status::New {
        rec.status = if label == 0 { Status::Dismissed } else { Status::Annotated };
    }
}

fn frame_rows(frame: &Frame) -> Vec<[i64; 4]> {
    let mut rows = Vec::new();
    for level in 0..LEVELS {
        for side in [Side::Bid, Side::Ask] {
            let [qty, price] = frame[level][side.index()];
            if qty > 0 {
                rows.push([level as i64, side.index() as i64, price, qty]);
            }
        }
    }
    rows
}

fn now_ns() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_nanos() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rank::unit;

    fn cand(start: usize, label: u8, p: f64, e: Vec<f64>) -> Candidate {
        let mut frame = [[[0i64; 2]; 2]; LEVELS];
        frame[0] = [[5, 99], [7, 101]];
        Candidate {
            window: WindowRef { instrument_id: 2, start_index: start, end_index: start + 9, t_start: 10, t_end: 20 },
            predicted_label: label,
            model_score: p,
            embedding: unit(e).unwrap(),
            frames: vec![frame; 10],
        }
    }

    fn seeded(dir: &Path) -> Store {
        let mut s = Store::open(dir).unwrap();
        let ids = s
            .add_candidates(vec![
                cand(0, 1, 0.9, vec![1.0, 0.0, 0.0]),
                cand(20, 1, 0.8, vec![0.0, 1.0, 0.0]),
                cand(40, 2, 0.95, vec![0.0, 0.0, 1.0]),
            ])
            .unwrap();
        assert_eq!(ids, vec![1, 2, 3]);
        s
    }

    #[test]
    fn without_exemplars_rank_by_model_score() {
        let dir = tempfile::tempdir().unwrap();
        let s = seeded(dir.path());
        let ids: Vec<u64> = s.list(None, None).iter().map(|a| a.alert_id).collect();
        assert_eq!(ids, vec![3, 1, 2]);
    }

    #[test]
    fn annotation_creates_exemplar_and_reranks() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = seeded(dir.path());
        let d = s.annotate(2, 1, Source::Human, Some("layering".into())).unwrap();
        assert_eq!(d.status, Status::Annotated);
        assert_eq!(s.exemplar_count(), 1);
        assert_eq!(s.list(None, None)[0].alert_id, 2);
        assert_eq!(d.similar_exemplars, vec![SimilarExemplar { exemplar_id: 1, similarity: 1.0 }]);
        assert_eq!(d.frames[0], vec![[0, 0, 99, 5], [0, 1, 101, 7]]);

        let d = s.annotate(1, 0, Source::Human, None).unwrap();
        assert_eq!(d.status, Status::Dismissed);
        assert_eq!(s.exemplar_count(), 1);
        assert!(matches!(s.annotate(1, 1, Source::Human, None), Err(ServiceError::AlreadyDismissed(1))));
        assert!(matches!(s.annotate(9, 1, Source::Human, None), Err(ServiceError::UnknownAlert(9))));
        assert!(matches!(s.annotate(3, 7, Source::Human, None), Err(ServiceError::InvalidLabel(7))));
        assert_eq!(s.list(Some(Status::New), None).len(), 1);
    }

    #[test]
    fn second_annotation_kept_first_status_wins() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = seeded(dir.path());
        s.annotate(3, 2, Source::Human, None).unwrap();
        let d = s.annotate(3, 0, Source::Human, None).unwrap();
        assert_eq!(d.status, Status::Annotated);
        assert_eq!(d.annotations.len(), 2);
    }

    #[test]
    fn reopen_restores_everything() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = seeded(dir.path());
        s.annotate(2, 1, Source::Human, None).unwrap();
        s.annotate(1, 0, Source::Oracle, None).unwrap();
        let before: Vec<AlertRecord> = s.alerts().cloned().collect();
        drop(s);
        let r = Store::open(dir.path()).unwrap();
        assert_eq!(r.alerts().cloned().collect::<Vec<_>>(), before);
        assert_eq!(r.exemplar_count(), 1);
        let mut r = r;
        assert_eq!(r.add_candidates(vec![cand(0, 1, 0.9, vec![1.0, 0.0, 0.0])]).unwrap(), Vec::<u64>::new());
        assert_eq!(r.add_candidates(vec![cand(60, 1, 0.9, vec![1.0, 1.0, 0.0])]).unwrap(), vec![4]);
    }

    #[test]
    fn human_exemplar_hides_oracle_for_same_window() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = seeded(dir.path());
        s.annotate(3, 2, Source::Oracle, None).unwrap();
        s.annotate(3, 1, Source::Human, None).unwrap();
        let ex = s.effective_exemplars();
        assert_eq!(ex.len(), 1);
        assert_eq!((ex[0].source, ex[0].label), (Source::Human, 1));
    }
}
