//! Rule-based weak labeller for layering-style spoofing.
//!
//! A candidate is a group of Adds on one side, placed away from the inside
//! within a one-second lookback, whose aggregate size dwarfs the side's
//! rolling depth. It is confirmed when an opposite-side execution follows
//! quickly and most of the candidate size is then pulled from the book.

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::book::{BookEvent, EventKind, Side, Snapshot};

pub const LOOKBACK_NS: u64 = 1_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelerParams {
    /// α: aggregate candidate size relative to rolling depth.
    pub size_mult: f64,
    /// Inclusive band of tick offsets from the same-side best.
    pub level_band: [i64; 2],
    pub exec_horizon: u64,
    pub cancel_horizon: u64,
    /// β: fraction of candidate size that must be deleted or cancelled.
    pub cancel_frac: f64,
    pub depth_window: usize,
}

impl Default for LabelerParams {
    fn default() -> Self {
        LabelerParams {
            size_mult: 3.0,
            level_band: [2, 10],
            exec_horizon: 500_000_000,
            cancel_horizon: 2_000_000_000,
            cancel_frac: 0.75,
            depth_window: 100,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("{events} events but {snapshots} snapshots")]
    AlignmentError { events: usize, snapshots: usize },
    #[error("invalid labeller parameters: {0}")]
    InvalidParams(String),
    #[error("cannot read parameters: {0}")]
    Config(String),
}

impl LabelerParams {
    pub fn validate(&self) -> Result<(), LabelError> {
        let bad = |m: &str| Err(LabelError::InvalidParams(m.to_string()));
        if !(self.size_mult > 1.0) {
            return bad("size_mult must exceed 1");
        }
        if self.level_band[0] > self.level_band[1] {
            return bad("level_band lower bound exceeds upper bound");
        }
        if !(self.cancel_frac > 0.0 && self.cancel_frac <= 1.0) {
            return bad("cancel_frac must lie in (0, 1]");
        }
        if self.exec_horizon == 0 || self.cancel_horizon == 0 {
            return bad("horizons must be positive");
        }
        if self.depth_window == 0 {
            return bad("depth_window must be positive");
        }
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, LabelError> {
        let text = std::fs::read_to_string(path).map_err(|e| LabelError::Config(e.to_string()))?;
        let p: LabelerParams = serde_json::from_str(&text).map_err(|e| LabelError::Config(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }
}

/// The perturbed rule used to label validation data.
pub fn variant_params(p: &LabelerParams) -> LabelerParams {
    LabelerParams {
        size_mult: 0.85 * p.size_mult,
        level_band: [(p.level_band[0] - 1).max(1), p.level_band[1] + 2],
        exec_horizon: (p.exec_horizon as f64 * 1.5).round() as u64,
        cancel_horizon: (p.cancel_horizon as f64 * 1.5).round() as u64,
        cancel_frac: 0.9 * p.cancel_frac,
        depth_window: p.depth_window,
    }
}

/// Aggregation of deletions arriving in separate bursts after the execution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct BurstChain {
    /// Removals closer than this belong to the same burst.
    pub gap_ns: u64,
    pub max_bursts: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Rule {
    pub params: LabelerParams,
    pub bursts: Option<BurstChain>,
    /// Ticks from the best counted in the rolling depth.
    pub depth_ticks: i64,
}

impl Rule {
    pub fn plain(params: LabelerParams) -> Self {
        Rule { params, bursts: None, depth_ticks: params.level_band[1] }
    }
}

/// One confirmed trigger: a candidate group plus the execution that confirmed it.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub side: Side,
    /// Event index of the earliest participating Add.
    pub start: usize,
    /// Event index of the last counted removal.
    pub end: usize,
    /// Aggregate candidate size.
    pub qty: u64,
    /// Rolling depth the size was compared against.
    pub reference: f64,
    pub exec_index: usize,
    /// Orders with at least one counted removal.
    pub order_ids: Vec<u64>,
    /// Participating size placed at or through the best.
    pub inside_qty: u64,
    pub participating_qty: u64,
    /// Deletion bursts that contributed removals.
    pub bursts: usize,
}

/// Per-stream lookups shared by every rule evaluated on the same events.
pub(crate) struct StreamIndex<'a> {
    pub events: &'a [BookEvent],
    pub snapshots: &'a [Snapshot],
    pub timestamps: Vec<u64>,
    /// Offset from the pre-event same-side best, for Adds.
    pub offsets: Vec<Option<i64>>,
    /// Size taken off the book by each event.
    pub taken: Vec<u64>,
    /// Size taken by Delete/Cancel events only.
    pub removed: Vec<u64>,
    touches: HashMap<u64, Vec<usize>>,
    removals: HashMap<u64, Vec<usize>>,
    executes: [Vec<usize>; 2],
}

impl<'a> StreamIndex<'a> {
    pub fn new(events: &'a [BookEvent], snapshots: &'a [Snapshot]) -> Result<Self, LabelError> {
        if events.len() != snapshots.len() {
            return Err(LabelError::AlignmentError { events: events.len(), snapshots: snapshots.len() });
        }
        let n = events.len();
        let mut order: HashMap<u64, (Side, u64)> = HashMap::new();
        let mut offsets = Vec::with_capacity(n);
        let mut taken = vec![0; n];
        let mut removed = vec![0; n];
        let mut touches: HashMap<u64, Vec<usize>> = HashMap::new();
        let mut removals: HashMap<u64, Vec<usize>> = HashMap::new();
        let mut executes = [Vec::new(), Vec::new()];
        for (i, ev) in events.iter().enumerate() {
            let mut offset = None;
            match ev.kind {
                EventKind::Add => {
                    if let Some(s) = ev.side {
                        order.insert(ev.order_id, (s, ev.qty as u64));
                        let best = if i == 0 { None } else { snapshots[i - 1].best(s) };
                        offset = best.map(|b| match s {
                            Side::Bid => b - ev.price,
                            Side::Ask => ev.price - b,
                        });
                    }
                }
                kind => {
                    if let Some((s, rem)) = order.get_mut(&ev.order_id) {
                        let take = match kind {
                            EventKind::Delete => *rem,
                            _ => (ev.qty as u64).min(*rem),
                        };
                        *rem -= take;
                        taken[i] = take;
                        touches.entry(ev.order_id).or_default().push(i);
                        match kind {
                            EventKind::Execute => executes[s.index()].push(i),
                            _ => {
                                removed[i] = take;
                                removals.entry(ev.order_id).or_default().push(i);
                            }
                        }
                        if *rem == 0 {
                            order.remove(&ev.order_id);
                        }
                    }
                }
            }
            offsets.push(offset);
        }
        Ok(StreamIndex {
            events,
            snapshots,
            timestamps: events.iter().map(|e| e.timestamp).collect(),
            offsets,
            taken,
            removed,
            touches,
            removals,
            executes,
        })
    }

    /// First event index with timestamp strictly greater than `t`.
    pub fn after(&self, t: u64) -> usize {
        self.timestamps.partition_point(|&x| x <= t)
    }

    /// Prefix sums of same-side depth within `ticks` of the best.
    fn depth_prefix(&self, side: Side, ticks: i64) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.snapshots.len() + 1);
        let mut acc = 0.0;
        p.push(0.0);
        for s in self.snapshots {
            acc += s.depth_within(side, ticks) as f64;
            p.push(acc);
        }
        p
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    index: usize,
    order_id: u64,
    qty: u64,
}

pub(crate) fn detect(ix: &StreamIndex<'_>, rule: &Rule) -> Vec<Detection> {
    let p = &rule.params;
    let mut out = Vec::new();
    for side in [Side::Bid, Side::Ask] {
        let prefix = ix.depth_prefix(side, rule.depth_ticks);
        let mut window: VecDeque<Candidate> = VecDeque::new();
        for j in 0..ix.events.len() {
            let ev = &ix.events[j];
            if ev.kind != EventKind::Add || ev.side != Some(side) {
                continue;
            }
            let Some(off) = ix.offsets[j] else { continue };
            if off < p.level_band[0] || off > p.level_band[1] {
                continue;
            }
            let tj = ev.timestamp;
            window.push_back(Candidate { index: j, order_id: ev.order_id, qty: ev.qty as u64 });
            while window.front().is_some_and(|c| c.index != j && ix.timestamps[c.index] + LOOKBACK_NS <= tj) {
                window.pop_front();
            }
            let pool: Vec<Candidate> = window.iter().copied().filter(|c| resting_at(ix, c, j)).collect();
            let sum: u64 = pool.iter().map(|c| c.qty).sum();

            let f = ix.after(tj.saturating_sub(LOOKBACK_NS));
            let lo = f.saturating_sub(p.depth_window);
            let reference = if f > lo { (prefix[f] - prefix[lo]) / (f - lo) as f64 } else { 0.0 };
            if (sum as f64) < p.size_mult * reference.max(1.0) {
                continue;
            }

            let execs = &ix.executes[side.opposite().index()];
            let from = execs.partition_point(|&x| ix.timestamps[x] <= tj);
            let to = execs.partition_point(|&x| ix.timestamps[x] <= tj + p.exec_horizon);
            for &x in &execs[from..to] {
                if let Some(d) = confirm(ix, rule, side, &pool, sum, reference, x) {
                    out.push(d);
                }
            }
        }
    }
    out
}

fn resting_at(ix: &StreamIndex<'_>, c: &Candidate, j: usize) -> bool {
    let mut left = c.qty;
    for &r in ix.touches.get(&c.order_id).map(Vec::as_slice).unwrap_or(&[]) {
        if r > j {
            break;
        }
        left = left.saturating_sub(ix.taken[r]);
    }
    left > 0
}

fn confirm(
    ix: &StreamIndex<'_>,
    rule: &Rule,
    side: Side,
    pool: &[Candidate],
    sum: u64,
    reference: f64,
    x: usize,
) -> Option<Detection> {
    let p = &rule.params;
    let tx = ix.timestamps[x];
    let mut counted: Vec<usize> = Vec::new();
    for c in pool {
        for &r in ix.removals.get(&c.order_id).map(Vec::as_slice).unwrap_or(&[]) {
            if r > x && ix.timestamps[r] <= tx + p.cancel_horizon {
                counted.push(r);
            }
        }
    }
    let mut bursts = usize::from(!counted.is_empty());
    if let Some(chain) = rule.bursts {
        let (chained, n) = chain_bursts(ix, pool, x, &chain, p.cancel_horizon);
        counted.extend(chained);
        counted.sort_unstable();
        counted.dedup();
        bursts = bursts.max(n);
    }
    let removed: u64 = counted.iter().map(|&r| ix.removed[r]).sum();
    if counted.is_empty() || (removed as f64) < p.cancel_frac * sum as f64 {
        return None;
    }
    let mut ids: Vec<u64> = counted.iter().map(|&r| ix.events[r].order_id).collect();
    ids.sort_unstable();
    ids.dedup();
    let participants: Vec<&Candidate> = pool.iter().filter(|c| ids.binary_search(&c.order_id).is_ok()).collect();
    let start = participants.iter().map(|c| c.index).min().unwrap();
    let end = *counted.iter().max().unwrap();
    let participating_qty = participants.iter().map(|c| c.qty).sum();
    let inside_qty = participants.iter().filter(|c| ix.offsets[c.index].is_some_and(|o| o <= 0)).map(|c| c.qty).sum();
    Some(Detection {
        side,
        start,
        end,
        qty: sum,
        reference,
        exec_index: x,
        order_ids: ids,
        inside_qty,
        participating_qty,
        bursts,
    })
}

/// Removals of pool orders after `x`, grouped into bursts and chained while
/// each burst starts within `horizon` of the previous one's end.
fn chain_bursts(
    ix: &StreamIndex<'_>,
    pool: &[Candidate],
    x: usize,
    chain: &BurstChain,
    horizon: u64,
) -> (Vec<usize>, usize) {
    let mut rs: Vec<usize> = pool
        .iter()
        .flat_map(|c| ix.removals.get(&c.order_id).map(Vec::as_slice).unwrap_or(&[]).iter().copied())
        .filter(|&r| r > x)
        .collect();
    rs.sort_unstable();
    let mut out = Vec::new();
    let mut anchor = ix.timestamps[x];
    let mut bursts = 0;
    let mut i = 0;
    while i < rs.len() && bursts < chain.max_bursts {
        if ix.timestamps[rs[i]] > anchor + horizon {
            break;
        }
        let mut k = i + 1;
        while k < rs.len() && ix.timestamps[rs[k]] - ix.timestamps[rs[k - 1]] <= chain.gap_ns {
            k += 1;
        }
        out.extend_from_slice(&rs[i..k]);
        anchor = ix.timestamps[rs[k - 1]];
        bursts += 1;
        i = k;
    }
    (out, bursts)
}

/// Detections on one side merged into disjoint event-index spans.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub side: Side,
    pub start: usize,
    pub end: usize,
    pub qty: u64,
    pub members: Vec<Detection>,
}

pub(crate) fn merge(mut detections: Vec<Detection>) -> Vec<Episode> {
    detections.sort_by_key(|d| (d.side.index(), d.start, d.end));
    let mut out: Vec<Episode> = Vec::new();
    for d in detections {
        match out.last_mut() {
            Some(e) if e.side == d.side && d.start <= e.end => {
                e.end = e.end.max(d.end);
                e.qty = e.qty.max(d.qty);
                e.members.push(d);
            }
            _ => out.push(Episode { side: d.side, start: d.start, end: d.end, qty: d.qty, members: vec![d] }),
        }
    }
    out
}

/// Paints episodes onto a per-timestep track. Where opposite sides overlap
/// the larger candidate wins, then the earlier start; a full tie stays 0.
pub(crate) fn paint(len: usize, episodes: &[Episode]) -> Vec<u8> {
    let mut claim: [Vec<Option<(u64, usize)>>; 2] = [vec![None; len], vec![None; len]];
    for e in episodes {
        let c = &mut claim[e.side.index()];
        for slot in &mut c[e.start..=e.end.min(len - 1)] {
            let cand = (e.qty, e.start);
            *slot = Some(match *slot {
                Some(prev) if prev.0 >= cand.0 => prev,
                _ => cand,
            });
        }
    }
    (0..len)
        .map(|t| match (claim[0][t], claim[1][t]) {
            (None, None) => 0,
            (Some(_), None) => Side::Bid.spoof_label(),
            (None, Some(_)) => Side::Ask.spoof_label(),
            (Some(b), Some(a)) => {
                if b.0 != a.0 {
                    if b.0 > a.0 { 1 } else { 2 }
                } else if b.1 != a.1 {
                    if b.1 < a.1 { 1 } else { 2 }
                } else {
                    0
                }
            }
        })
        .collect()
}

pub fn label_stream(events: &[BookEvent], snapshots: &[Snapshot], params: &LabelerParams) -> Result<Vec<u8>, LabelError> {
    params.validate()?;
    let ix = StreamIndex::new(events, snapshots)?;
    Ok(label_indexed(&ix, params))
}

pub(crate) fn label_indexed(ix: &StreamIndex<'_>, params: &LabelerParams) -> Vec<u8> {
    let rule = Rule::plain(*params);
    paint(ix.events.len(), &merge(detect(ix, &rule)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::book::replay;
    use crate::sim::{generate, EpisodeMix, EpisodeVariant, SimConfig};

    const MS: u64 = 1_000_000;

    /// A quiet two-sided book, then a bid-side layering episode.
    fn scripted(delete_delay: u64) -> Vec<BookEvent> {
        let mut ev = Vec::new();
        let mut t = 0;
        let mut id = 0;
        let mut next = |dt: u64| {
            t += dt;
            id += 1;
            (t, id)
        };
        for k in 0..20 {
            let (ts, i) = next(10 * MS);
            ev.push(BookEvent::add(ts, i, Side::Bid, 99 - (k % 5), 10, 0));
            let (ts, i) = next(10 * MS);
            ev.push(BookEvent::add(ts, i, Side::Ask, 101 + (k % 5), 10, 0));
        }
        let mut spoof = Vec::new();
        for k in 0..4 {
            let (ts, i) = next(20 * MS);
            ev.push(BookEvent::add(ts, i, Side::Bid, 95 - k, 100, 0));
            spoof.push(i);
        }
        let (ts, _) = next(30 * MS);
        ev.push(BookEvent::execute(ts, 2, 5, 0));
        let mut dt = 20 * MS + delete_delay;
        for &i in &spoof {
            let (ts, _) = next(dt);
            ev.push(BookEvent::delete(ts, i, 0));
            dt = 20 * MS;
        }
        for k in 0..5 {
            let (ts, i) = next(10 * MS);
            ev.push(BookEvent::add(ts, i, Side::Ask, 103 + k, 10, 0));
        }
        ev
    }

    fn mirror(events: &[BookEvent]) -> Vec<BookEvent> {
        events
            .iter()
            .map(|e| BookEvent {
                side: e.side.map(Side::opposite),
                price: if e.kind == EventKind::Add { 20_000 - e.price } else { e.price },
                ..*e
            })
            .collect()
    }

    fn label(events: &[BookEvent], p: &LabelerParams) -> Vec<u8> {
        let snaps = replay(events).unwrap();
        label_stream(events, &snaps, p).unwrap()
    }

    #[test]
    fn variant_of_defaults() {
        let v = variant_params(&LabelerParams::default());
        assert!((v.size_mult - 2.55).abs() < 1e-12);
        assert_eq!(v.level_band, [1, 12]);
        assert!((v.cancel_frac - 0.675).abs() < 1e-12);
        assert_eq!(v.cancel_horizon, 3_000_000_000);
        assert_eq!(v.exec_horizon, 750_000_000);
        assert_ne!(variant_params(&v), v);
    }

    #[test]
    fn invalid_params_rejected() {
        let ev = scripted(0);
        let snaps = replay(&ev).unwrap();
        for p in [
            LabelerParams { size_mult: 1.0, ..Default::default() },
            LabelerParams { level_band: [5, 2], ..Default::default() },
            LabelerParams { cancel_frac: 0.0, ..Default::default() },
            LabelerParams { exec_horizon: 0, ..Default::default() },
        ] {
            assert!(matches!(label_stream(&ev, &snaps, &p), Err(LabelError::InvalidParams(_))));
        }
        assert!(matches!(
            label_stream(&ev, &snaps[1..], &LabelerParams::default()),
            Err(LabelError::AlignmentError { .. })
        ));
    }

    #[test]
    fn params_load_from_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        std::fs::write(&path, r#"{"size_mult": 4.0, "level_band": [1, 8]}"#).unwrap();
        let p = LabelerParams::from_json_file(&path).unwrap();
        assert_eq!(p.size_mult, 4.0);
        assert_eq!(p.level_band, [1, 8]);
        assert_eq!(p.depth_window, 100);
        std::fs::write(&path, r#"{"cancel_frac": 2.0}"#).unwrap();
        assert!(LabelerParams::from_json_file(&path).is_err());
    }

    #[test]
    fn scripted_episode_labelled_from_first_add_to_last_delete() {
        let ev = scripted(0);
        let labels = label(&ev, &LabelerParams::default());
        let first = ev.iter().position(|e| e.qty == 100).unwrap();
        let last = ev.iter().rposition(|e| e.kind == EventKind::Delete).unwrap();
        for (t, &y) in labels.iter().enumerate() {
            assert_eq!(y, if (first..=last).contains(&t) { 1 } else { 0 }, "t={t}");
        }
    }

    #[test]
    fn late_deletions_are_not_labelled() {
        let ev = scripted(2_500 * MS);
        assert!(label(&ev, &LabelerParams::default()).iter().all(|&y| y == 0));
    }

    #[test]
    fn mirrored_stream_swaps_labels() {
        let ev = scripted(0);
        let a = label(&ev, &LabelerParams::default());
        let b = label(&mirror(&ev), &LabelerParams::default());
        assert!(a.iter().any(|&y| y != 0));
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(*y, [0, 2, 1][*x as usize]);
        }
    }

    #[test]
    fn opposite_overlap_prefers_larger_then_earlier() {
        let ep = |side, start, end, qty| Episode { side, start, end, qty, members: vec![] };
        let y = paint(10, &[ep(Side::Bid, 0, 5, 100), ep(Side::Ask, 3, 8, 200)]);
        assert_eq!(y, vec![1, 1, 1, 2, 2, 2, 2, 2, 2, 0]);
        let y = paint(6, &[ep(Side::Bid, 2, 4, 100), ep(Side::Ask, 1, 3, 100)]);
        assert_eq!(y, vec![0, 2, 2, 2, 1, 0]);
        let y = paint(3, &[ep(Side::Bid, 0, 2, 7), ep(Side::Ask, 0, 2, 7)]);
        assert_eq!(y, vec![0, 0, 0]);
    }

    fn sim(seed: u64, episodes: usize, mix: EpisodeMix) -> crate::sim::SimOutput {
        generate(&SimConfig {
            seed,
            instruments: 2,
            session_length: 40_000,
            episode_count: episodes,
            episode_mix: mix,
            ..SimConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn background_only_is_almost_all_zero() {
        let out = sim(21, 0, EpisodeMix::default());
        for s in &out.streams {
            let y = label(&s.events, &LabelerParams::default());
            let zeros = y.iter().filter(|&&v| v == 0).count();
            assert!(zeros as f64 >= 0.99 * y.len() as f64);
        }
    }

    #[test]
    fn classic_episodes_cover_ground_truth() {
        let out = sim(22, 6, EpisodeMix::only(EpisodeVariant::Classic));
        for s in &out.streams {
            let y = label(&s.events, &LabelerParams::default());
            for ep in out.episodes_for(s.instrument_id) {
                let a = s.events.iter().position(|e| e.timestamp == ep.t_start).unwrap();
                let b = s.events.iter().rposition(|e| e.timestamp == ep.t_end).unwrap();
                let lab = ep.intended_label;
                assert!(y[a..=b].iter().all(|&v| v == lab), "episode {ep:?} not covered: {:?}", &y[a..=b]);
                assert!(a == 0 || y[a - 2] == 0 || y[a - 1] == 0);
                assert!(y.get(b + 2).map_or(true, |&v| v == 0) || y.get(b + 1).map_or(true, |&v| v == 0));
            }
        }
    }

    #[test]
    fn top_of_book_episodes_missed_by_default_rule() {
        let out = sim(23, 4, EpisodeMix::only(EpisodeVariant::TopOfBook));
        for s in &out.streams {
            let y = label(&s.events, &LabelerParams::default());
            for ep in out.episodes_for(s.instrument_id) {
                let a = s.events.iter().position(|e| e.timestamp == ep.t_start).unwrap();
                let b = s.events.iter().rposition(|e| e.timestamp == ep.t_end).unwrap();
                assert!(y[a..=b].iter().all(|&v| v == 0));
            }
        }
    }

    #[test]
    fn raising_alpha_shrinks_positive_set() {
        let out = sim(24, 6, EpisodeMix::default());
        let ev = &out.streams[0].events;
        let snaps = replay(ev).unwrap();
        let mut prev: Option<Vec<u8>> = None;
        for alpha in [2.0, 3.0, 4.5, 6.0, 9.0] {
            let y = label_stream(ev, &snaps, &LabelerParams { size_mult: alpha, ..Default::default() }).unwrap();
            if let Some(p) = &prev {
                for (a, b) in p.iter().zip(&y) {
                    assert!(*b == 0 || *a != 0);
                }
            }
            prev = Some(y);
        }
    }

    #[test]
    fn simulated_mirror_swaps_labels() {
        let out = sim(25, 5, EpisodeMix::default());
        let ev = &out.streams[1].events;
        let a = label(ev, &LabelerParams::default());
        let b = label(&mirror(ev), &LabelerParams::default());
        assert!(a.iter().any(|&y| y != 0));
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(*y, [0, 2, 1][*x as usize]);
        }
    }
}
