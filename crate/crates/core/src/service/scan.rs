//! Stride-1 scanning of a feed with a trained checkpoint.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::ServiceError;
use crate::book::{replay, BookEvent};
use crate::feed::split_by_instrument;
use crate::rank::unit;
use crate::tcn::{infer_batch, Checkpoint};
use crate::tensorize::{frame_from_snapshot, window_starts, Frame, WindowRef, SCAN_STRIDE};

pub const DEFAULT_THRESHOLD: f64 = 0.7;
const SCAN_BATCH: usize = 512;

/// A window the model flagged, before it is stored as an alert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub window: WindowRef,
    pub predicted_label: u8,
    pub model_score: f64,
    pub embedding: Vec<f64>,
    pub frames: Vec<Frame>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Progress {
    pub processed: usize,
    pub total: usize,
}

/// Runs the model over every window of every instrument in `events` and
/// returns merged candidates in instrument, then time order.
pub fn scan_events(
    events: &[BookEvent],
    ckpt: &Checkpoint,
    threshold: f64,
    mut progress: impl FnMut(Progress),
) -> Result<Vec<Candidate>, ServiceError> {
    let n = ckpt.window;
    let streams = split_by_instrument(events);
    let total: usize = streams.iter().map(|(_, ev)| ev.len().saturating_sub(n - 1)).sum();
    let mut done = 0;
    progress(Progress { processed: 0, total });
    let mut out = Vec::new();
    for (instrument_id, events) in &streams {
        let snaps = replay(events)?;
        let Ok(starts) = window_starts(snaps.len(), n, SCAN_STRIDE) else { continue };
        let starts: Vec<usize> = starts.collect();
        let mut flagged = Vec::new();
        for chunk in starts.chunks(SCAN_BATCH) {
            let mut kept = Vec::with_capacity(chunk.len());
            let mut x = Array2::zeros((chunk.len() * n, ckpt.params.config.in_features));
            for &start in chunk {
                let frames: Vec<Frame> = snaps[start..start + n].iter().map(frame_from_snapshot).collect();
                // Windows opening on a one-sided book have no reference mid and are not scored.
                let Ok(w) = ckpt.norm.normalize_frames(&frames) else { continue };
                let b = kept.len();
                x.slice_mut(s![b * n..(b + 1) * n, ..]).assign(&w);
                kept.push(start);
            }
            if !kept.is_empty() {
                let x = x.slice(s![..kept.len() * n, ..]).to_owned();
                let inf = infer_batch(&ckpt.params, &x, n)?;
                for (b, &start) in kept.iter().enumerate() {
                    let probs = inf.probs.row(b);
                    let class = (0..probs.len()).fold(0, |m, k| if probs[k] > probs[m] { k } else { m });
                    let label = ckpt.class_mode.label(class);
                    if label == 0 || probs[class] < threshold {
                        continue;
                    }
                    let end = start + n - 1;
                    flagged.push(Candidate {
                        window: WindowRef {
                            instrument_id: *instrument_id,
                            start_index: start,
                            end_index: end,
                            t_start: snaps[start].timestamp,
                            t_end: snaps[end].timestamp,
                        },
                        predicted_label: label,
                        model_score: probs[class],
                        embedding: unit(inf.embedding.row(b).to_vec())?,
                        frames: Vec::new(),
                    });
                }
            }
            done += chunk.len();
            progress(Progress { processed: done, total });
        }
        for mut c in merge_overlapping(flagged) {
            c.frames = snaps[c.window.start_index..=c.window.end_index].iter().map(frame_from_snapshot).collect();
            out.push(c);
        }
    }
    Ok(out)
}

/// Collapses chains of overlapping candidates on one instrument into the
/// highest-probability member; the earlier window wins ties.
pub fn merge_overlapping(mut cands: Vec<Candidate>) -> Vec<Candidate> {
    cands.sort_by_key(|c| (c.window.instrument_id, c.window.start_index));
    let mut out: Vec<Candidate> = Vec::new();
    let mut reach = 0;
    for c in cands {
        match out.last_mut() {
            Some(best) if best.window.instrument_id == c.window.instrument_id && c.window.start_index <= reach => {
                reach = reach.max(c.window.end_index);
                if c.model_score > best.model_score {
                    *best = c;
                }
            }
            _ => {
                reach = c.window.end_index;
                out.push(c);
            }
        }
    }
    out
}
