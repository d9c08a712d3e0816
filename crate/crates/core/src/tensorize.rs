//! Stacked book-state windows and their normalisation.
//!
//! A window is `n` consecutive snapshots of one instrument, each a
//! `LEVELS x 2 x 2` block (level, side, plane) with plane 0 = quantity and
//! plane 1 = price. The network consumes a window flattened to `n x 120`.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::book::{Side, Snapshot, LEVELS};

/// Features per flattened frame: levels x sides x planes.
pub const FRAME_FEATURES: usize = LEVELS * 2 * 2;

/// One frame as stored in datasets: `[level][side][plane]`, plane 0 = qty, 1 = price.
pub type Frame = [[[i64; 2]; 2]; LEVELS];

pub const DEFAULT_WINDOW: usize = 10;
pub const TRAIN_STRIDE: usize = 5;
pub const SCAN_STRIDE: usize = 1;
pub const DEFAULT_PRICE_SCALE: f64 = 50.0;
/// Neutral windows kept per non-neutral window when training on three classes.
pub const NEUTRAL_RATIO: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum TensorizeError {
    #[error("stream of {len} snapshots is shorter than window {n}")]
    TooShort { len: usize, n: usize },
    #[error("snapshot and label tracks differ in length ({snapshots} vs {labels})")]
    LengthMismatch { snapshots: usize, labels: usize },
    #[error("window length and stride must be at least 1")]
    InvalidGeometry,
    #[error("class count must be 2 or 3, got {0}")]
    InvalidClassCount(usize),
    #[error("no samples for class label {0}")]
    EmptyClass(u8),
    #[error("first frame has an empty side; mid price undefined")]
    DegenerateBook,
}

pub fn frame_from_snapshot(snap: &Snapshot) -> Frame {
    let mut frame = [[[0i64; 2]; 2]; LEVELS];
    for (level, cell) in frame.iter_mut().enumerate() {
        for side in 0..2 {
            cell[side] = [snap.qty[level][side] as i64, snap.price[level][side]];
        }
    }
    frame
}

fn frame_best(frame: &Frame, side: Side) -> Option<i64> {
    let [qty, price] = frame[0][side.index()];
    (qty > 0).then_some(price)
}

fn frame_mid(frame: &Frame) -> Option<f64> {
    Some((frame_best(frame, Side::Bid)? as f64 + frame_best(frame, Side::Ask)? as f64) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct WindowMeta {
    /// Index of the first snapshot in the instrument stream.
    pub start_index: usize,
    /// Index of the last snapshot (inclusive).
    pub end_index: usize,
    pub t_start: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub instrument_id: u32,
    pub t_end: u64,
    pub frames: Vec<Frame>,
    pub labels: Vec<u8>,
    pub meta: WindowMeta,
}

/// Locates a window inside its instrument's snapshot stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WindowRef {
    pub instrument_id: u32,
    pub start_index: usize,
    pub end_index: usize,
    pub t_start: u64,
    pub t_end: u64,
}

impl WindowSample {
    pub fn window_ref(&self) -> WindowRef {
        WindowRef {
            instrument_id: self.instrument_id,
            start_index: self.meta.start_index,
            end_index: self.meta.end_index,
            t_start: self.meta.t_start,
            t_end: self.t_end,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn final_label(&self) -> u8 {
        *self.labels.last().expect("non-empty window")
    }
}

/// Start offsets `0, stride, 2*stride, ...` of every full window.
pub fn window_starts(len: usize, n: usize, stride: usize) -> Result<impl Iterator<Item = usize>, TensorizeError> {
    if n == 0 || stride == 0 {
        return Err(TensorizeError::InvalidGeometry);
    }
    if len < n {
        return Err(TensorizeError::TooShort { len, n });
    }
    Ok((0..=len - n).step_by(stride))
}

pub fn window_at(instrument_id: u32, snapshots: &[Snapshot], labels: &[u8], start: usize, n: usize) -> WindowSample {
    let span = &snapshots[start..start + n];
    WindowSample {
        instrument_id,
        t_end: span[n - 1].timestamp,
        frames: span.iter().map(frame_from_snapshot).collect(),
        labels: labels[start..start + n].to_vec(),
        meta: WindowMeta { start_index: start, end_index: start + n - 1, t_start: span[0].timestamp },
    }
}

/// Cuts one instrument's labelled snapshot stream into windows.
pub fn build_windows(
    instrument_id: u32,
    snapshots: &[Snapshot],
    labels: &[u8],
    n: usize,
    stride: usize,
) -> Result<Vec<WindowSample>, TensorizeError> {
    if snapshots.len() != labels.len() {
        return Err(TensorizeError::LengthMismatch { snapshots: snapshots.len(), labels: labels.len() });
    }
    Ok(window_starts(snapshots.len(), n, stride)?
        .map(|start| window_at(instrument_id, snapshots, labels, start, n))
        .collect())
}

/// Windows for several instrument streams; no window crosses a stream boundary.
pub fn build_windows_multi(
    streams: &[(u32, &[Snapshot], &[u8])],
    n: usize,
    stride: usize,
) -> Result<Vec<WindowSample>, TensorizeError> {
    let mut out = Vec::new();
    for &(instrument_id, snapshots, labels) in streams {
        match build_windows(instrument_id, snapshots, labels, n, stride) {
            Ok(w) => out.extend(w),
            Err(TensorizeError::TooShort { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// How raw labels map onto classifier outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassMode {
    /// Only spoof windows; label 1 -> class 0, label 2 -> class 1.
    SpoofOnly,
    /// Neutral, bid-side spoof and ask-side spoof as classes 0, 1, 2.
    WithNeutral,
}

impl ClassMode {
    pub fn from_count(c: usize) -> Result<Self, TensorizeError> {
        match c {
            2 => Ok(ClassMode::SpoofOnly),
            3 => Ok(ClassMode::WithNeutral),
            other => Err(TensorizeError::InvalidClassCount(other)),
        }
    }

    pub fn classes(self) -> usize {
        match self {
            ClassMode::SpoofOnly => 2,
            ClassMode::WithNeutral => 3,
        }
    }

    /// Training target for a raw label; `None` means the timestep is masked.
    pub fn target(self, label: u8) -> Option<usize> {
        match (self, label) {
            (ClassMode::SpoofOnly, 1 | 2) => Some(label as usize - 1),
            (ClassMode::SpoofOnly, _) => None,
            (ClassMode::WithNeutral, 0..=2) => Some(label as usize),
            (ClassMode::WithNeutral, _) => None,
        }
    }

    /// Raw label for a classifier output.
    pub fn label(self, class: usize) -> u8 {
        match self {
            ClassMode::SpoofOnly => class as u8 + 1,
            ClassMode::WithNeutral => class as u8,
        }
    }

    fn requested_labels(self) -> &'static [u8] {
        match self {
            ClassMode::SpoofOnly => &[1, 2],
            ClassMode::WithNeutral => &[0, 1, 2],
        }
    }
}

/// Chooses which windows (by their final label) enter a dataset.
///
/// Returns ascending indices into `final_labels`. `SpoofOnly` keeps labels
/// 1 and 2. `WithNeutral` keeps every spoof window and a seeded random
/// subset of at most `NEUTRAL_RATIO` neutral windows per spoof window.
pub fn class_select(final_labels: &[u8], mode: ClassMode, seed: u64) -> Result<Vec<usize>, TensorizeError> {
    for &label in mode.requested_labels() {
        if !final_labels.contains(&label) {
            return Err(TensorizeError::EmptyClass(label));
        }
    }
    let (spoof, neutral): (Vec<usize>, Vec<usize>) =
        (0..final_labels.len()).filter(|&i| final_labels[i] <= 2).partition(|&i| final_labels[i] != 0);
    let mut keep = spoof;
    if mode == ClassMode::WithNeutral {
        let mut neutral = neutral;
        let cap = NEUTRAL_RATIO * keep.len();
        if neutral.len() > cap {
            neutral.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            neutral.truncate(cap);
        }
        keep.extend(neutral);
    }
    keep.sort_unstable();
    Ok(keep)
}

pub fn class_filter(samples: Vec<WindowSample>, c: usize, seed: u64) -> Result<Vec<WindowSample>, TensorizeError> {
    let mode = ClassMode::from_count(c)?;
    let finals: Vec<u8> = samples.iter().map(WindowSample::final_label).collect();
    let keep = class_select(&finals, mode, seed)?;
    let mut keep = keep.into_iter().peekable();
    Ok(samples
        .into_iter()
        .enumerate()
        .filter_map(|(i, s)| {
            if keep.peek() == Some(&i) {
                keep.next();
                Some(s)
            } else {
                None
            }
        })
        .collect())
}

/// Normalisation constants, fitted on the training split and persisted with a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    /// Ticks per unit of normalised price offset from the first frame's mid.
    pub price_scale: f64,
    /// 95th percentile of non-zero level quantities in the training set.
    pub qty_q95: f64,
    /// `ln(1 + qty_q95)`.
    pub qty_scale: f64,
}

impl NormParams {
    pub fn from_q95(qty_q95: f64, price_scale: f64) -> Self {
        let qty_q95 = qty_q95.max(1.0);
        NormParams { price_scale, qty_q95, qty_scale: qty_q95.ln_1p() }
    }

    /// Nearest-rank 95th percentile of non-zero quantities over all frames.
    pub fn fit<'a>(samples: impl IntoIterator<Item = &'a WindowSample>, price_scale: f64) -> Self {
        let mut qtys: Vec<i64> = samples
            .into_iter()
            .flat_map(|s| s.frames.iter())
            .flat_map(|f| f.iter().flat_map(|lvl| lvl.iter().map(|cell| cell[0])))
            .filter(|&q| q > 0)
            .collect();
        if qtys.is_empty() {
            return Self::from_q95(1.0, price_scale);
        }
        let rank = ((0.95 * qtys.len() as f64).ceil() as usize).clamp(1, qtys.len()) - 1;
        let (_, q95, _) = qtys.select_nth_unstable(rank);
        Self::from_q95(*q95 as f64, price_scale)
    }

    pub fn normalize(&self, sample: &WindowSample) -> Result<Array2<f64>, TensorizeError> {
        self.normalize_frames(&sample.frames)
    }

    /// Flattens frames to `n x FRAME_FEATURES`, index `level*4 + side*2 + plane`.
    pub fn normalize_frames(&self, frames: &[Frame]) -> Result<Array2<f64>, TensorizeError> {
        let mut out = Array2::zeros((frames.len(), FRAME_FEATURES));
        if frames.is_empty() {
            return Ok(out);
        }
        let Some(mid) = frame_mid(&frames[0]) else {
            // An empty book throughout has nothing to centre; any other window needs a frame-0 mid.
            let empty = frames.iter().all(|f| f.iter().all(|lvl| lvl.iter().all(|c| c[0] == 0)));
            return if empty { Ok(out) } else { Err(TensorizeError::DegenerateBook) };
        };
        for (t, frame) in frames.iter().enumerate() {
            for (level, cells) in frame.iter().enumerate() {
                for (side, &[qty, price]) in cells.iter().enumerate() {
                    if qty == 0 {
                        continue;
                    }
                    let base = level * 4 + side * 2;
                    out[[t, base]] = (qty as f64).ln_1p() / self.qty_scale;
                    out[[t, base + 1]] = (price as f64 - mid) / self.price_scale;
                }
            }
        }
        Ok(out)
    }
}

/// The same normalised window seen with bid and ask exchanged: side
/// columns swap and price offsets from the mid change sign.
pub fn mirror_normalized(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        for level in 0..LEVELS {
            let bid = level * 4;
            let ask = bid + 2;
            row.swap(bid, ask);
            row.swap(bid + 1, ask + 1);
            row[bid + 1] = -row[bid + 1];
            row[ask + 1] = -row[ask + 1];
        }
    }
    out
}
