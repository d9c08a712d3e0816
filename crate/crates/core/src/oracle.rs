//! Expert stand-in: the weak rule re-run with a wider level band, deletion
//! matching across separate bursts and linking of repeated same-side
//! episodes, reporting a label, confidence and rationale per window.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::book::{BookEvent, Side, Snapshot};
use crate::labeler::{detect, merge, paint, BurstChain, Episode, LabelError, LabelerParams, Rule, StreamIndex, LOOKBACK_NS};
use crate::tensorize::WindowRef;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("context does not cover the window and labeller horizons: {0}")]
    InsufficientContext(String),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error("invalid oracle params: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tag {
    MultiDeletion,
    TopOfBook,
    ContinuousPattern,
    Classic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    Human,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub window: WindowRef,
    pub label: u8,
    pub confidence: f64,
    pub source: Source,
    pub rationale: BTreeSet<Tag>,
    /// Nanoseconds; oracle annotations carry the window's end time so
    /// they stay a pure function of the stream.
    pub created_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleParams {
    /// The weak rule being relaxed.
    pub base: LabelerParams,
    pub level_band: [i64; 2],
    /// Removals closer than this form one deletion burst.
    pub burst_gap_ns: u64,
    pub max_bursts: usize,
    /// Same-side episodes starting within this of the previous one's end are linked.
    pub cycle_gap_ns: u64,
    pub min_cycles: usize,
    /// Share of participating size at the inside that marks a top-of-book spoof.
    pub inside_share: f64,
    /// Confidence given to windows where no rule fires.
    pub neutral_confidence: f64,
}

impl Default for OracleParams {
    fn default() -> Self {
        OracleParams {
            base: LabelerParams::default(),
            level_band: [0, 12],
            burst_gap_ns: 150_000_000,
            max_bursts: 5,
            cycle_gap_ns: 5_000_000_000,
            min_cycles: 3,
            inside_share: 0.5,
            neutral_confidence: 0.9,
        }
    }
}

impl OracleParams {
    pub fn validate(&self) -> Result<(), OracleError> {
        self.base.validate()?;
        let [lo, hi] = self.level_band;
        if lo < 0 || lo > hi || lo > self.base.level_band[0] || hi < self.base.level_band[1] {
            return Err(OracleError::InvalidParams(format!("level band {:?} must contain the base band", self.level_band)));
        }
        if self.max_bursts == 0 || self.min_cycles < 2 {
            return Err(OracleError::InvalidParams("max_bursts must be positive and min_cycles at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.inside_share) || !(0.0..=1.0).contains(&self.neutral_confidence) {
            return Err(OracleError::InvalidParams("shares and confidences must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn relaxed_rule(&self) -> Rule {
        Rule {
            params: LabelerParams { level_band: self.level_band, ..self.base },
            bursts: Some(BurstChain { gap_ns: self.burst_gap_ns, max_bursts: self.max_bursts }),
            // Widening where adds may sit must not also raise the bar they are measured against.
            depth_ticks: self.base.level_band[1],
        }
    }

    /// Time after a window's end the oracle may need to see.
    pub fn tail_horizon(&self) -> u64 {
        self.base.exec_horizon + self.base.cancel_horizon * self.max_bursts as u64
    }
}

/// One oracle episode, in stream event indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub side: Side,
    pub start: usize,
    pub end: usize,
    pub qty: u64,
    pub confidence: f64,
    pub tags: BTreeSet<Tag>,
    pub cycles: usize,
}

impl Finding {
    pub fn label(&self) -> u8 {
        self.side.spoof_label()
    }

    fn overlap(&self, a: usize, b: usize) -> usize {
        (self.end.min(b) + 1).saturating_sub(self.start.max(a))
    }
}

/// Prominence mapped onto [0.5, 1]: just clearing the size threshold gives
/// 0.5, twice the threshold or more gives 1.
pub fn confidence(qty: u64, reference: f64, size_mult: f64) -> f64 {
    let ratio = qty as f64 / (size_mult * reference.max(1.0));
    0.5 + 0.5 * (ratio - 1.0).clamp(0.0, 1.0)
}

fn tags_of(ep: &Episode, p: &OracleParams) -> BTreeSet<Tag> {
    let mut tags = BTreeSet::new();
    if ep.members.iter().any(|d| d.bursts >= 3) {
        tags.insert(Tag::MultiDeletion);
    }
    if ep.members.iter().any(|d| d.participating_qty > 0 && d.inside_qty as f64 >= p.inside_share * d.participating_qty as f64) {
        tags.insert(Tag::TopOfBook);
    }
    tags
}

/// Groups runs of same-side episodes separated by short gaps.
fn link_cycles(ix: &StreamIndex<'_>, episodes: &[Episode], p: &OracleParams) -> Vec<Vec<usize>> {
    let mut groups = Vec::new();
    for side in [Side::Bid, Side::Ask] {
        let mut run: Vec<usize> = Vec::new();
        for (i, e) in episodes.iter().enumerate().filter(|(_, e)| e.side == side) {
            let linked = run.last().is_some_and(|&k| {
                let prev = &episodes[k];
                ix.timestamps[e.start] <= ix.timestamps[prev.end] + p.cycle_gap_ns
            });
            if !linked && !run.is_empty() {
                groups.push(std::mem::take(&mut run));
            }
            run.push(i);
        }
        if !run.is_empty() {
            groups.push(run);
        }
    }
    groups.sort_by_key(|g| episodes[g[0]].start);
    groups
}

fn findings_indexed(ix: &StreamIndex<'_>, p: &OracleParams) -> (Vec<Finding>, Vec<u8>) {
    let weak = detect(ix, &Rule::plain(p.base));
    let mut all = weak.clone();
    all.extend(detect(ix, &p.relaxed_rule()));
    let weak_track = paint(ix.events.len(), &merge(weak));
    let episodes = merge(all);

    let mut findings = Vec::new();
    let mut spans = Vec::new();
    for group in link_cycles(ix, &episodes, p) {
        let eps: Vec<&Episode> = group.iter().map(|&i| &episodes[i]).collect();
        let continuous = eps.len() >= p.min_cycles;
        let parts: Vec<Vec<&Episode>> = if continuous { vec![eps] } else { eps.into_iter().map(|e| vec![e]).collect() };
        for part in parts {
            let mut tags = BTreeSet::new();
            let mut conf: f64 = 0.0;
            for e in &part {
                tags.extend(tags_of(e, p));
                for d in &e.members {
                    conf = conf.max(confidence(d.qty, d.reference, p.base.size_mult));
                }
            }
            if continuous {
                tags.insert(Tag::ContinuousPattern);
            }
            if tags.is_empty() {
                tags.insert(Tag::Classic);
            }
            let f = Finding {
                side: part[0].side,
                start: part[0].start,
                end: part.iter().map(|e| e.end).max().unwrap(),
                qty: part.iter().map(|e| e.qty).max().unwrap(),
                confidence: conf,
                tags,
                cycles: part.len(),
            };
            spans.push(Episode { side: f.side, start: f.start, end: f.end, qty: f.qty, members: vec![] });
            findings.push(f);
        }
    }
    let mut track = paint(ix.events.len(), &spans);
    // Relaxation never drops a weak positive, even where a new opposite-side span ties it.
    for (t, w) in track.iter_mut().zip(&weak_track) {
        if *t == 0 && *w != 0 {
            *t = *w;
        }
    }
    (findings, track)
}

/// Precomputed oracle view of one instrument stream; windows are then
/// assessed by lookup.
#[derive(Debug, Clone)]
pub struct OracleAssessor {
    pub instrument_id: u32,
    params: OracleParams,
    findings: Vec<Finding>,
    track: Vec<u8>,
}

impl OracleAssessor {
    pub fn new(instrument_id: u32, events: &[BookEvent], snapshots: &[Snapshot], params: &OracleParams) -> Result<Self, OracleError> {
        params.validate()?;
        let ix = StreamIndex::new(events, snapshots)?;
        let (findings, track) = findings_indexed(&ix, params);
        Ok(OracleAssessor { instrument_id, params: *params, findings, track })
    }

    pub fn findings(&self) -> &[Finding] {
        &self.findings
    }

    /// Per-timestep oracle labels.
    pub fn labels(&self) -> &[u8] {
        &self.track
    }

    /// Annotation for a window given in this stream's indices.
    pub fn assess(&self, window: &WindowRef) -> Result<Annotation, OracleError> {
        if window.end_index >= self.track.len() || window.start_index > window.end_index {
            return Err(OracleError::InsufficientContext(format!(
                "window {}..={} outside stream of {} events",
                window.start_index,
                window.end_index,
                self.track.len()
            )));
        }
        let (a, b) = (window.start_index, window.end_index);
        let final_label = self.track[b];
        let overlapping = self.findings.iter().filter(|f| f.overlap(a, b) > 0);
        let chosen = if final_label != 0 {
            overlapping
                .filter(|f| f.label() == final_label && f.start <= b && f.end >= b)
                .max_by(|x, y| x.qty.cmp(&y.qty).then(y.start.cmp(&x.start)))
        } else {
            overlapping.max_by(|x, y| x.overlap(a, b).cmp(&y.overlap(a, b)).then(x.qty.cmp(&y.qty)).then(y.start.cmp(&x.start)))
        };
        Ok(match chosen {
            Some(f) => Annotation {
                window: *window,
                label: f.label(),
                confidence: f.confidence,
                source: Source::Oracle,
                rationale: f.tags.clone(),
                created_at: window.t_end,
                notes: None,
            },
            // A weak-only positive not represented by a finding cannot occur; neutral otherwise.
            None => Annotation {
                window: *window,
                label: 0,
                confidence: self.params.neutral_confidence,
                source: Source::Oracle,
                rationale: BTreeSet::new(),
                created_at: window.t_end,
                notes: None,
            },
        })
    }

    pub fn assess_all(&self, windows: &[WindowRef]) -> Result<Vec<Annotation>, OracleError> {
        windows.par_iter().map(|w| self.assess(w)).collect()
    }
}

/// Events around a window: `first_index` is the stream index of
/// `events[0]`; `stream_end` says the slice runs to the end of the stream.
#[derive(Debug, Clone, Copy)]
pub struct EventContext<'a> {
    pub first_index: usize,
    pub events: &'a [BookEvent],
    pub snapshots: &'a [Snapshot],
    pub stream_end: bool,
}

/// Assesses one window from a slice of surrounding events.
pub fn assess(window: &WindowRef, ctx: &EventContext<'_>, params: &OracleParams) -> Result<Annotation, OracleError> {
    params.validate()?;
    let short = |m: String| Err(OracleError::InsufficientContext(m));
    let Some(last) = ctx.events.last() else { return short("no events".into()) };
    if window.start_index < ctx.first_index || window.end_index >= ctx.first_index + ctx.events.len() {
        return short(format!("window {}..={} not inside context", window.start_index, window.end_index));
    }
    if ctx.first_index > 0 {
        let head = window.t_start.saturating_sub(2 * LOOKBACK_NS);
        let before = ctx.events.partition_point(|e| e.timestamp < head);
        if before < params.base.depth_window {
            return short(format!("need {} events before {head}, have {before}", params.base.depth_window));
        }
    }
    if !ctx.stream_end && last.timestamp < window.t_end + params.tail_horizon() {
        return short(format!("context ends at {} before {}", last.timestamp, window.t_end + params.tail_horizon()));
    }
    let oracle = OracleAssessor::new(window.instrument_id, ctx.events, ctx.snapshots, params)?;
    let local = WindowRef {
        start_index: window.start_index - ctx.first_index,
        end_index: window.end_index - ctx.first_index,
        ..*window
    };
    let mut ann = oracle.assess(&local)?;
    ann.window = *window;
    Ok(ann)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::book::{replay, EventKind};
    use crate::labeler::label_stream;
    use crate::sim::{generate, EpisodeMix, EpisodeVariant, SimConfig, SimOutput};

    fn sim(seed: u64, episodes: usize, mix: EpisodeMix) -> SimOutput {
        generate(&SimConfig { seed, instruments: 2, session_length: 40_000, episode_count: episodes, episode_mix: mix, ..SimConfig::default() })
            .unwrap()
    }

    fn index_of(events: &[BookEvent], ts: u64) -> usize {
        events.iter().position(|e| e.timestamp == ts).unwrap()
    }

    fn window(instrument_id: u32, snaps: &[Snapshot], a: usize, b: usize) -> WindowRef {
        WindowRef { instrument_id, start_index: a, end_index: b, t_start: snaps[a].timestamp, t_end: snaps[b].timestamp }
    }

    #[test]
    fn confidence_scale() {
        assert_eq!(confidence(300, 100.0, 3.0), 0.5);
        assert_eq!(confidence(450, 100.0, 3.0), 0.75);
        assert_eq!(confidence(6000, 100.0, 3.0), 1.0);
        assert_eq!(confidence(3, 0.0, 3.0), 0.5);
    }

    #[test]
    fn top_of_book_found_with_tag() {
        let out = sim(31, 6, EpisodeMix::only(EpisodeVariant::TopOfBook));
        let p = OracleParams::default();
        for s in &out.streams {
            let snaps = replay(&s.events).unwrap();
            let o = OracleAssessor::new(s.instrument_id, &s.events, &snaps, &p).unwrap();
            for ep in out.episodes_for(s.instrument_id) {
                let b = s.events.iter().rposition(|e| e.timestamp == ep.t_end).unwrap();
                let exec = index_of(&s.events, ep.t_start) + 1;
                let exec = exec + s.events[exec..].iter().position(|e| e.order_id == ep.exec_order_id && e.kind == EventKind::Execute).unwrap();
                let ann = o.assess(&window(s.instrument_id, &snaps, exec - 9, exec)).unwrap();
                assert_eq!(ann.label, ep.intended_label, "{ep:?}");
                assert!(ann.rationale.contains(&Tag::TopOfBook));
                assert!((0.5..=1.0).contains(&ann.confidence));
                assert!(o.labels()[exec..=b].iter().all(|&y| y == ep.intended_label));
            }
        }
    }

    #[test]
    fn background_windows_are_neutral() {
        let out = sim(32, 0, EpisodeMix::default());
        let s = &out.streams[0];
        let snaps = replay(&s.events).unwrap();
        let o = OracleAssessor::new(0, &s.events, &snaps, &OracleParams::default()).unwrap();
        let neutral = (0..200).map(|k| 100 + k * 150).filter(|&a| {
            let ann = o.assess(&window(0, &snaps, a, a + 9)).unwrap();
            ann.label == 0 && ann.confidence == 0.9 && ann.rationale.is_empty()
        });
        assert!(neutral.count() >= 198);
    }

    #[test]
    fn continuous_pattern_is_one_finding() {
        let out = generate(&SimConfig {
            seed: 33,
            instruments: 2,
            session_length: 60_000,
            episode_count: 6,
            episode_mix: EpisodeMix::only(EpisodeVariant::ContinuousPattern),
            ..SimConfig::default()
        })
        .unwrap();
        let mut checked = 0;
        for s in &out.streams {
            let snaps = replay(&s.events).unwrap();
            let o = OracleAssessor::new(s.instrument_id, &s.events, &snaps, &OracleParams::default()).unwrap();
            for ep in out.episodes_for(s.instrument_id) {
                let a = index_of(&s.events, ep.t_start);
                let b = s.events.iter().rposition(|e| e.timestamp == ep.t_end).unwrap();
                let hits: Vec<&Finding> = o.findings().iter().filter(|f| f.start <= b && f.end >= a).collect();
                assert_eq!(hits.len(), 1, "{ep:?}");
                let f = hits[0];
                assert!(f.tags.contains(&Tag::ContinuousPattern));
                assert_eq!(f.cycles, ep.cycles as usize);
                assert_eq!((f.start, f.end), (a, b));
                assert_eq!(f.label(), ep.intended_label);
                checked += 1;
            }
        }
        assert!(checked >= 10);
    }

    #[test]
    fn multi_deletion_tagged() {
        let out = sim(34, 6, EpisodeMix::only(EpisodeVariant::MultiDeletion));
        for s in &out.streams {
            let snaps = replay(&s.events).unwrap();
            let o = OracleAssessor::new(s.instrument_id, &s.events, &snaps, &OracleParams::default()).unwrap();
            for ep in out.episodes_for(s.instrument_id) {
                let a = index_of(&s.events, ep.t_start);
                let f = o.findings().iter().find(|f| f.start == a).expect("episode found");
                assert!(f.tags.contains(&Tag::MultiDeletion), "{f:?}");
            }
        }
    }

    #[test]
    fn positives_superset_weak_labels() {
        let out = generate(&SimConfig { seed: 35, instruments: 2, session_length: 60_000, episode_count: 16, ..SimConfig::default() }).unwrap();
        for s in &out.streams {
            let snaps = replay(&s.events).unwrap();
            let weak = label_stream(&s.events, &snaps, &LabelerParams::default()).unwrap();
            let o = OracleAssessor::new(s.instrument_id, &s.events, &snaps, &OracleParams::default()).unwrap();
            assert!(weak.iter().zip(o.labels()).all(|(w, y)| *w == 0 || *y != 0));
            assert!(o.labels().iter().filter(|&&y| y != 0).count() > weak.iter().filter(|&&y| y != 0).count());
        }
    }

    #[test]
    fn sliced_context_matches_full_stream() {
        let out = sim(36, 6, EpisodeMix::default());
        let s = &out.streams[0];
        let snaps = replay(&s.events).unwrap();
        let p = OracleParams::default();
        let full = OracleAssessor::new(0, &s.events, &snaps, &p).unwrap();
        for ep in out.episodes_for(0) {
            let b = s.events.iter().rposition(|e| e.timestamp == ep.t_end).unwrap();
            let w = window(0, &snaps, b - 9, b);
            let lo = b - 4000;
            let ctx = EventContext { first_index: lo, events: &s.events[lo..b + 4000], snapshots: &snaps[lo..b + 4000], stream_end: false };
            let ann = assess(&w, &ctx, &p).unwrap();
            assert_eq!(ann, full.assess(&w).unwrap());
        }
    }

    #[test]
    fn short_context_rejected() {
        let out = sim(37, 0, EpisodeMix::default());
        let s = &out.streams[0];
        let snaps = replay(&s.events).unwrap();
        let p = OracleParams::default();
        let w = window(0, &snaps, 5000, 5009);
        let ctx = EventContext { first_index: 4990, events: &s.events[4990..9000], snapshots: &snaps[4990..9000], stream_end: false };
        assert!(matches!(assess(&w, &ctx, &p), Err(OracleError::InsufficientContext(_))));
        let ctx = EventContext { first_index: 0, events: &s.events[..5020], snapshots: &snaps[..5020], stream_end: false };
        assert!(matches!(assess(&w, &ctx, &p), Err(OracleError::InsufficientContext(_))));
        let ctx = EventContext { first_index: 0, events: &s.events[..5020], snapshots: &snaps[..5020], stream_end: true };
        assert_eq!(assess(&w, &ctx, &p).unwrap().label, 0);
    }

    #[test]
    fn invalid_params_rejected() {
        let p = OracleParams { level_band: [3, 12], ..Default::default() };
        assert!(p.validate().is_err());
        let p = OracleParams { min_cycles: 1, ..Default::default() };
        assert!(p.validate().is_err());
    }
}
