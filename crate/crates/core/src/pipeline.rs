//! Glue between simulation, labelling, windowing and training.
//!
//! Streams are processed one instrument at a time so only one instrument's
//! snapshots are resident; windows are chosen by their final label first
//! and materialised in a second pass.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::book::{replay, BookEvent, ReplayError, Snapshot};
use crate::labeler::{label_stream, variant_params, LabelError, LabelerParams};
use crate::sim::{InstrumentStream, SimConfig};
use crate::tcn::{evaluate, prepare, train_with, Checkpoint, EpochRecord, Metrics, Prepared, TcnConfig, TcnError, TrainHyper};
use crate::tensorize::{
    class_select, window_at, window_starts, ClassMode, NormParams, TensorizeError, WindowSample, DEFAULT_PRICE_SCALE,
    DEFAULT_WINDOW, TRAIN_STRIDE,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Tensorize(#[from] TensorizeError),
    #[error(transparent)]
    Tcn(#[from] TcnError),
}

/// End-to-end experiment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    /// Rule for training labels; validation labels use its variant.
    pub labeler: LabelerParams,
    pub window: usize,
    pub stride: usize,
    /// Leading fraction of each instrument's timeline used for training.
    pub train_fraction: f64,
    pub price_scale: f64,
    pub tcn: TcnConfig,
    pub hyper: TrainHyper,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            sim: SimConfig::default(),
            labeler: LabelerParams::default(),
            window: DEFAULT_WINDOW,
            stride: TRAIN_STRIDE,
            train_fraction: 0.8,
            price_scale: DEFAULT_PRICE_SCALE,
            tcn: TcnConfig::default(),
            hyper: TrainHyper::default(),
        }
    }
}

pub fn label_instrument(events: &[BookEvent], params: &LabelerParams) -> Result<(Vec<Snapshot>, Vec<u8>, Vec<u8>), PipelineError> {
    let snapshots = replay(events)?;
    let train = label_stream(events, &snapshots, params)?;
    let val = label_stream(events, &snapshots, &variant_params(params))?;
    Ok((snapshots, train, val))
}

/// Window start offsets for the two time splits of one stream of `len`
/// snapshots; windows straddling the split point are dropped.
pub fn split_starts(len: usize, n: usize, stride: usize, train_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let cut = ((len as f64) * train_fraction).floor() as usize;
    let train = window_starts(cut, n, stride).map(|it| it.collect()).unwrap_or_default();
    let val = if len >= cut + n {
        window_starts(len - cut, n, stride).map(|it| it.map(|s| s + cut).collect()).unwrap_or_default()
    } else {
        Vec::new()
    };
    (train, val)
}

/// One instrument's events, from a simulation or a decoded feed.
#[derive(Debug, Clone, Copy)]
pub struct StreamRef<'a> {
    pub instrument_id: u32,
    pub events: &'a [BookEvent],
}

impl<'a> From<&'a InstrumentStream> for StreamRef<'a> {
    fn from(s: &'a InstrumentStream) -> Self {
        StreamRef { instrument_id: s.instrument_id, events: &s.events }
    }
}

impl<'a> From<&'a (u32, Vec<BookEvent>)> for StreamRef<'a> {
    fn from(s: &'a (u32, Vec<BookEvent>)) -> Self {
        StreamRef { instrument_id: s.0, events: &s.1 }
    }
}

pub fn stream_refs<'a, T>(streams: &'a [T]) -> Vec<StreamRef<'a>>
where
    &'a T: Into<StreamRef<'a>>,
{
    streams.iter().map(Into::into).collect()
}

#[derive(Debug, Clone)]
pub struct SplitData {
    pub train: Vec<WindowSample>,
    pub val: Vec<WindowSample>,
}

struct Candidates {
    /// (instrument position, start)
    train: Vec<(usize, usize)>,
    train_final: Vec<u8>,
    val: Vec<(usize, usize)>,
    val_final: Vec<u8>,
}

/// Builds class-filtered training and validation windows from simulated
/// streams: training windows come from the first part of every instrument
/// with training labels, validation windows from the rest with variant labels.
pub fn build_split(streams: &[StreamRef<'_>], cfg: &ExperimentConfig, mode: ClassMode) -> Result<SplitData, PipelineError> {
    let n = cfg.window;
    let per: Vec<(Vec<u8>, Vec<u8>)> = streams
        .par_iter()
        .map(|s| label_instrument(&s.events, &cfg.labeler).map(|(_, a, b)| (a, b)))
        .collect::<Result<_, _>>()?;

    let mut c = Candidates { train: vec![], train_final: vec![], val: vec![], val_final: vec![] };
    for (pos, (tl, vl)) in per.iter().enumerate() {
        let (tr, va) = split_starts(tl.len(), n, cfg.stride, cfg.train_fraction);
        for s in tr {
            c.train.push((pos, s));
            c.train_final.push(tl[s + n - 1]);
        }
        for s in va {
            c.val.push((pos, s));
            c.val_final.push(vl[s + n - 1]);
        }
    }
    let keep_train: Vec<(usize, usize)> =
        class_select(&c.train_final, mode, cfg.sim.seed)?.into_iter().map(|i| c.train[i]).collect();
    let keep_val: Vec<(usize, usize)> =
        class_select(&c.val_final, mode, cfg.sim.seed.wrapping_add(1))?.into_iter().map(|i| c.val[i]).collect();

    let mut train = Vec::with_capacity(keep_train.len());
    let mut val = Vec::with_capacity(keep_val.len());
    for (pos, stream) in streams.iter().enumerate() {
        let snapshots = replay(&stream.events)?;
        let (tl, vl) = &per[pos];
        for &(p, s) in keep_train.iter().filter(|(p, _)| *p == pos) {
            train.push(window_at(streams[p].instrument_id, &snapshots, tl, s, n));
        }
        for &(p, s) in keep_val.iter().filter(|(p, _)| *p == pos) {
            val.push(window_at(streams[p].instrument_id, &snapshots, vl, s, n));
        }
    }
    Ok(SplitData { train, val })
}

/// Normalisation fitted on the training split only.
pub fn fit_norm(split: &SplitData, price_scale: f64) -> NormParams {
    NormParams::fit(&split.train, price_scale)
}

pub fn prepared(split: &SplitData, norm: &NormParams, mode: ClassMode) -> (Vec<Prepared>, Vec<Prepared>, usize) {
    let (train, a) = prepare(&split.train, norm, mode);
    let (val, b) = prepare(&split.val, norm, mode);
    (train, val, a + b)
}

/// Builds both splits, fits normalisation and trains a model for `mode`.
/// The TCN class count follows the mode.
pub fn train_model(
    streams: &[StreamRef<'_>],
    cfg: &ExperimentConfig,
    mode: ClassMode,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<Checkpoint, PipelineError> {
    let split = build_split(streams, cfg, mode)?;
    let norm = fit_norm(&split, cfg.price_scale);
    let (train, val, skipped) = prepared(&split, &norm, mode);
    if skipped > 0 {
        tracing::warn!(skipped, "windows with a one-sided first frame skipped");
    }
    let tcn = TcnConfig { classes: mode.classes(), ..cfg.tcn.clone() };
    let out = train_with(&tcn, &cfg.hyper, &train, &val, on_epoch)?;
    Ok(Checkpoint {
        params: out.params,
        norm,
        class_mode: mode,
        window: cfg.window,
        class_weights: out.class_weights,
        metrics: Some(out.validation),
        history: out.history,
    })
}

/// Metrics of a trained model on the validation split of `streams`.
pub fn evaluate_model(streams: &[StreamRef<'_>], cfg: &ExperimentConfig, ckpt: &Checkpoint) -> Result<Metrics, PipelineError> {
    let cfg = ExperimentConfig { window: ckpt.window, ..cfg.clone() };
    let split = build_split(streams, &cfg, ckpt.class_mode)?;
    let (val, _) = prepare(&split.val, &ckpt.norm, ckpt.class_mode);
    let weights = Some(ckpt.class_weights.as_slice()).filter(|w| w.len() == ckpt.params.config.classes);
    Ok(evaluate(&ckpt.params, &val, weights)?)
}
