//! Seeded synthetic market with injected spoofing episodes.
//!
//! Each instrument runs its own PRNG stream. Background flow is a mix of
//! limit adds placed geometrically around a reflected random-walk mid,
//! cancellations of sufficiently old orders, and executions at the best
//! price. Episodes follow the layering template: large adds on one side,
//! an execution on the other side, then removal of the large adds, with
//! background events interleaved between every episode step.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Geometric, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::book::{BookEvent, OrderBook, Side};
use crate::labeler::LOOKBACK_NS;

/// Ticks from the best price used for the rolling depth measure.
pub const DEPTH_BAND_TICKS: i64 = 10;
/// Snapshots in the rolling depth mean used to size spoof orders.
pub const DEPTH_WINDOW: usize = 100;

const WARMUP_EVENTS: usize = 1_500;
const TAIL_EVENTS: usize = 2_500;
/// Longest possible episode script in events, with margin.
const MAX_EPISODE_EVENTS: usize = 2_400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LiquidityProfile {
    Liquid,
    Illiquid,
}

struct ProfileParams {
    size: (u32, u32),
    level_p: f64,
    target_orders: f64,
}

impl LiquidityProfile {
    fn params(self) -> ProfileParams {
        match self {
            LiquidityProfile::Liquid => ProfileParams { size: (40, 200), level_p: 0.35, target_orders: 240.0 },
            LiquidityProfile::Illiquid => ProfileParams { size: (5, 30), level_p: 0.15, target_orders: 160.0 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowRates {
    pub add: f64,
    pub cancel: f64,
    pub execute: f64,
}

impl Default for FlowRates {
    fn default() -> Self {
        FlowRates { add: 0.55, cancel: 0.35, execute: 0.10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EpisodeVariant {
    Classic,
    MultiDeletion,
    TopOfBook,
    ContinuousPattern,
}

impl EpisodeVariant {
    pub const ALL: [EpisodeVariant; 4] = [
        EpisodeVariant::Classic,
        EpisodeVariant::MultiDeletion,
        EpisodeVariant::TopOfBook,
        EpisodeVariant::ContinuousPattern,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMix {
    pub classic: f64,
    pub multi_deletion: f64,
    pub top_of_book: f64,
    pub continuous_pattern: f64,
}

impl Default for EpisodeMix {
    fn default() -> Self {
        EpisodeMix { classic: 0.55, multi_deletion: 0.15, top_of_book: 0.15, continuous_pattern: 0.15 }
    }
}

impl EpisodeMix {
    fn weights(&self) -> [f64; 4] {
        [self.classic, self.multi_deletion, self.top_of_book, self.continuous_pattern]
    }

    pub fn only(variant: EpisodeVariant) -> Self {
        let mut w = [0.0; 4];
        w[EpisodeVariant::ALL.iter().position(|v| *v == variant).unwrap()] = 1.0;
        EpisodeMix { classic: w[0], multi_deletion: w[1], top_of_book: w[2], continuous_pattern: w[3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub instruments: usize,
    /// Events per instrument.
    pub session_length: usize,
    pub base_price: i64,
    /// Standard deviation of one mid random-walk step, in ticks.
    pub tick_volatility: f64,
    /// Events between mid random-walk steps.
    pub mid_step_interval: usize,
    pub mean_interarrival_ns: f64,
    /// Per-instrument profile; when empty, even instruments are liquid and odd ones illiquid.
    pub liquidity: Vec<LiquidityProfile>,
    /// Intensity ratios at the profile's reference book size.
    pub rates: FlowRates,
    /// Background cancels only touch orders at least this old.
    pub min_cancel_age_ns: u64,
    /// Episodes per instrument.
    pub episode_count: usize,
    pub episode_mix: EpisodeMix,
    /// Spoof aggregate size as a multiple of rolling depth, drawn uniformly.
    pub size_mult_range: (f64, f64),
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 42,
            instruments: 5,
            session_length: 200_000,
            base_price: 10_000,
            tick_volatility: 1.5,
            mid_step_interval: 100,
            mean_interarrival_ns: 10_000_000.0,
            liquidity: Vec::new(),
            rates: FlowRates::default(),
            min_cancel_age_ns: 5_000_000_000,
            episode_count: 40,
            episode_mix: EpisodeMix::default(),
            size_mult_range: (3.0, 6.0),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

impl SimConfig {
    pub fn profile(&self, instrument: usize) -> LiquidityProfile {
        self.liquidity.get(instrument).copied().unwrap_or(if instrument % 2 == 0 {
            LiquidityProfile::Liquid
        } else {
            LiquidityProfile::Illiquid
        })
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidConfig(msg));
        let r = self.rates;
        if [r.add, r.cancel, r.execute].iter().any(|x| !(*x >= 0.0)) || ((r.add + r.cancel + r.execute) - 1.0).abs() > 1e-9 {
            return bad(format!("flow rates must be non-negative and sum to 1, got {r:?}"));
        }
        if r.add <= 0.0 {
            return bad("add rate must be positive".into());
        }
        if self.instruments == 0 {
            return bad("at least one instrument".into());
        }
        if !(self.tick_volatility >= 0.0) || self.mid_step_interval == 0 || !(self.mean_interarrival_ns >= 1.0) {
            return bad("volatility, step interval and inter-arrival must be positive".into());
        }
        if self.base_price < 100 {
            return bad("base price must be at least 100 ticks".into());
        }
        let (lo, hi) = self.size_mult_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad(format!("size multiplier range {lo}..{hi}"));
        }
        if self.episode_count > 0 {
            let w = self.episode_mix.weights();
            if w.iter().any(|x| !(*x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                return bad("episode mix weights must be non-negative with positive sum".into());
            }
            let usable = self.session_length.saturating_sub(WARMUP_EVENTS + TAIL_EVENTS);
            if usable / self.episode_count < MAX_EPISODE_EVENTS {
                return bad(format!(
                    "session of {} events cannot hold {} episodes (need {} events each after warm-up)",
                    self.session_length, self.episode_count, MAX_EPISODE_EVENTS
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub instrument_id: u32,
    pub variant: EpisodeVariant,
    pub spoof_side: Side,
    pub t_start: u64,
    pub t_end: u64,
    /// Sorted ascending.
    pub spoof_order_ids: Vec<u64>,
    pub exec_order_id: u64,
    pub intended_label: u8,
    pub size_mult: f64,
    pub cycles: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentStream {
    pub instrument_id: u32,
    pub profile: LiquidityProfile,
    pub events: Vec<BookEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub streams: Vec<InstrumentStream>,
    pub episodes: Vec<EpisodeRecord>,
}

impl SimOutput {
    /// All instruments' events, one stream after another.
    pub fn all_events(&self) -> impl Iterator<Item = &BookEvent> {
        self.streams.iter().flat_map(|s| s.events.iter())
    }

    pub fn episodes_for(&self, instrument_id: u32) -> impl Iterator<Item = &EpisodeRecord> {
        self.episodes.iter().filter(move |e| e.instrument_id == instrument_id)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn generate(config: &SimConfig) -> Result<SimOutput, SimError> {
    config.validate()?;
    let results: Vec<(InstrumentStream, Vec<EpisodeRecord>)> = (0..config.instruments)
        .into_par_iter()
        .map(|i| InstrumentSim::new(config, i).run())
        .collect();
    let mut streams = Vec::with_capacity(results.len());
    let mut episodes = Vec::new();
    for (s, e) in results {
        streams.push(s);
        episodes.extend(e);
    }
    Ok(SimOutput { streams, episodes })
}

pub fn write_episodes(path: impl AsRef<std::path::Path>, episodes: &[EpisodeRecord]) -> std::io::Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in episodes {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_episodes(path: impl AsRef<std::path::Path>) -> std::io::Result<Vec<EpisodeRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(std::io::Error::from))
        .collect()
}

#[derive(Debug, Clone, Copy)]
enum Action {
    SpoofAdd { cycle: usize, slot: usize },
    Execute,
    Delete { cycle: usize, slot: usize },
}

#[derive(Debug, Clone, Copy)]
struct Step {
    gap: usize,
    action: Action,
}

struct ActiveEpisode {
    variant: EpisodeVariant,
    side: Side,
    size_mult: f64,
    cycles: usize,
    sizes: Vec<Vec<u32>>,
    ids: Vec<Vec<u64>>,
    exec_order_id: Option<u64>,
    t_start: Option<u64>,
    steps: VecDeque<Step>,
}

/// Per-event depth history, used to size spoofs against the same
/// reference window the labeller later measures.
struct DepthTracker {
    timestamps: Vec<u64>,
    prefix: [Vec<u64>; 2],
}

impl DepthTracker {
    fn new(capacity: usize) -> Self {
        let mut prefix = [Vec::with_capacity(capacity + 1), Vec::with_capacity(capacity + 1)];
        prefix[0].push(0);
        prefix[1].push(0);
        DepthTracker { timestamps: Vec::with_capacity(capacity), prefix }
    }

    fn push(&mut self, book: &OrderBook, ts: u64) {
        self.timestamps.push(ts);
        for side in [Side::Bid, Side::Ask] {
            let p = &mut self.prefix[side.index()];
            let d = book.depth_within(side, DEPTH_BAND_TICKS);
            p.push(p.last().unwrap() + d);
        }
    }

    /// Mean depth over the `DEPTH_WINDOW` snapshots preceding the first
    /// event later than `now − LOOKBACK_NS`.
    fn reference(&self, side: Side, now: u64) -> f64 {
        let f = self.timestamps.partition_point(|&t| t + LOOKBACK_NS <= now);
        let lo = f.saturating_sub(DEPTH_WINDOW);
        if f == lo {
            return 0.0;
        }
        let p = &self.prefix[side.index()];
        (p[f] - p[lo]) as f64 / (f - lo) as f64
    }
}

/// Background orders indexed for uniform sampling and FIFO access per level.
#[derive(Default)]
struct BackgroundOrders {
    ids: Vec<u64>,
    pos: HashMap<u64, usize>,
    born: HashMap<u64, u64>,
    levels: [BTreeMap<i64, VecDeque<u64>>; 2],
    price: HashMap<u64, (Side, i64)>,
}

impl BackgroundOrders {
    fn insert(&mut self, id: u64, side: Side, price: i64, ts: u64) {
        self.pos.insert(id, self.ids.len());
        self.ids.push(id);
        self.born.insert(id, ts);
        self.price.insert(id, (side, price));
        self.levels[side.index()].entry(price).or_default().push_back(id);
    }

    fn remove(&mut self, id: u64) {
        let Some(at) = self.pos.remove(&id) else {
            return;
        };
        self.ids.swap_remove(at);
        if at < self.ids.len() {
            self.pos.insert(self.ids[at], at);
        }
        self.born.remove(&id);
        let (side, price) = self.price.remove(&id).unwrap();
        let ladder = &mut self.levels[side.index()];
        let level = ladder.get_mut(&price).unwrap();
        level.retain(|&o| o != id);
        if level.is_empty() {
            ladder.remove(&price);
        }
    }

    fn len(&self) -> usize {
        self.ids.len()
    }

    /// Oldest background order at exactly `price` on `side`.
    fn front_at(&self, side: Side, price: i64) -> Option<u64> {
        self.levels[side.index()].get(&price).and_then(|q| q.front().copied())
    }
}

struct InstrumentSim<'a> {
    config: &'a SimConfig,
    instrument_id: u32,
    profile: LiquidityProfile,
    params: ProfileParams,
    rng: ChaCha8Rng,
    book: OrderBook,
    ts: u64,
    mid: i64,
    next_id: u64,
    bg: BackgroundOrders,
    spoof_ids: HashSet<u64>,
    depth: DepthTracker,
    events: Vec<BookEvent>,
    interarrival: Exp<f64>,
    step: Normal<f64>,
    level: Geometric,
}

impl<'a> InstrumentSim<'a> {
    fn new(config: &'a SimConfig, instrument: usize) -> Self {
        let profile = config.profile(instrument);
        let params = profile.params();
        let seed = splitmix64(config.seed ^ splitmix64(instrument as u64 + 1));
        InstrumentSim {
            config,
            instrument_id: instrument as u32,
            profile,
            rng: ChaCha8Rng::seed_from_u64(seed),
            book: OrderBook::new(),
            ts: 0,
            mid: config.base_price,
            next_id: 1,
            bg: BackgroundOrders::default(),
            spoof_ids: HashSet::new(),
            depth: DepthTracker::new(config.session_length),
            events: Vec::with_capacity(config.session_length),
            interarrival: Exp::new(1.0 / config.mean_interarrival_ns).unwrap(),
            step: Normal::new(0.0, config.tick_volatility.max(0.0)).unwrap(),
            level: Geometric::new(params.level_p).unwrap(),
            params,
        }
    }

    fn run(mut self) -> (InstrumentStream, Vec<EpisodeRecord>) {
        let cfg = self.config;
        let starts = self.schedule();
        let weights = WeightedIndex::new(cfg.episode_mix.weights()).ok();
        let mut next_start = starts.into_iter().peekable();
        let mut active: Option<ActiveEpisode> = None;
        let mut records = Vec::new();

        while self.events.len() < cfg.session_length {
            if active.is_none() && next_start.peek().is_some_and(|&s| self.events.len() >= s) {
                next_start.next();
                let variant = EpisodeVariant::ALL[weights.as_ref().unwrap().sample(&mut self.rng)];
                active = Some(self.plan_episode(variant));
            }
            let due = match active.as_mut().and_then(|ep| ep.steps.front_mut()) {
                Some(step) if step.gap == 0 => true,
                Some(step) => {
                    step.gap -= 1;
                    false
                }
                None => false,
            };
            if due {
                let ep = active.as_mut().unwrap();
                let step = ep.steps.pop_front().unwrap();
                self.perform(ep, step.action);
                if ep.steps.is_empty() {
                    records.push(self.finish(active.take().unwrap()));
                }
            } else {
                self.background();
            }
        }
        let stream = InstrumentStream { instrument_id: self.instrument_id, profile: self.profile, events: self.events };
        (stream, records)
    }

    fn schedule(&mut self) -> Vec<usize> {
        let cfg = self.config;
        if cfg.episode_count == 0 {
            return Vec::new();
        }
        let usable = cfg.session_length - WARMUP_EVENTS - TAIL_EVENTS;
        let slot = usable / cfg.episode_count;
        let jitter = (slot - MAX_EPISODE_EVENTS).max(1);
        (0..cfg.episode_count).map(|e| WARMUP_EVENTS + e * slot + self.rng.random_range(0..jitter)).collect()
    }

    fn emit(&mut self, ev: BookEvent) {
        self.book.apply(&ev).unwrap_or_else(|e| panic!("simulator produced invalid event {ev:?}: {e}"));
        self.events.push(ev);
        self.depth.push(&self.book, ev.timestamp);
    }

    fn tick(&mut self) -> u64 {
        let dt = self.interarrival.sample(&mut self.rng).round().max(1.0) as u64;
        self.ts += dt;
        if self.events.len() % self.config.mid_step_interval == 0 {
            let lo = self.config.base_price / 2;
            let hi = self.config.base_price * 3 / 2;
            let mut mid = self.mid + self.step.sample(&mut self.rng).round() as i64;
            if mid < lo {
                mid = 2 * lo - mid;
            }
            if mid > hi {
                mid = 2 * hi - mid;
            }
            self.mid = mid.clamp(lo, hi);
        }
        self.ts
    }

    fn new_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn background(&mut self) {
        let r = self.config.rates;
        let cancel = r.cancel * self.bg.len() as f64 / self.params.target_orders;
        let total = r.add + cancel + r.execute;
        let u = self.rng.random::<f64>() * total;
        let done = if u < r.add {
            false
        } else if u < r.add + cancel {
            self.background_cancel()
        } else {
            self.background_execute()
        };
        if !done {
            self.background_add();
        }
    }

    fn background_add(&mut self) {
        let side = if self.rng.random::<bool>() { Side::Bid } else { Side::Ask };
        let qty = self.rng.random_range(self.params.size.0..=self.params.size.1);
        let offset = 1 + self.level.sample(&mut self.rng) as i64;
        let price = match side {
            Side::Bid => self.mid.min(self.book.best_ask().unwrap_or(i64::MAX)) - offset,
            Side::Ask => self.mid.max(self.book.best_bid().unwrap_or(i64::MIN)) + offset,
        };
        let id = self.new_id();
        let ts = self.tick();
        self.emit(BookEvent::add(ts, id, side, price, qty, self.instrument_id));
        self.bg.insert(id, side, price, ts);
    }

    fn background_cancel(&mut self) -> bool {
        if self.bg.len() == 0 {
            return false;
        }
        for _ in 0..8 {
            let id = self.bg.ids[self.rng.random_range(0..self.bg.len())];
            if self.ts.saturating_sub(self.bg.born[&id]) < self.config.min_cancel_age_ns {
                continue;
            }
            let remaining = self.book.order(id).unwrap().remaining;
            let ts = self.tick();
            if remaining >= 2 && self.rng.random::<f64>() < 0.3 {
                let qty = self.rng.random_range(1..remaining) as u32;
                self.emit(BookEvent::cancel(ts, id, qty, self.instrument_id));
            } else {
                self.emit(BookEvent::delete(ts, id, self.instrument_id));
                self.bg.remove(id);
            }
            return true;
        }
        false
    }

    /// Oldest background order at the book's best price on `side`.
    fn executable(&self, side: Side) -> Option<u64> {
        let best = self.book.best(side)?;
        self.bg.front_at(side, best)
    }

    fn background_execute(&mut self) -> bool {
        // Lean towards consuming the side left stale by mid moves.
        let book_mid = match (self.book.best_bid(), self.book.best_ask()) {
            (Some(b), Some(a)) => (b + a) as f64 / 2.0,
            _ => self.mid as f64,
        };
        let p_ask = if book_mid < self.mid as f64 - 1.0 {
            0.75
        } else if book_mid > self.mid as f64 + 1.0 {
            0.25
        } else {
            0.5
        };
        let first = if self.rng.random::<f64>() < p_ask { Side::Ask } else { Side::Bid };
        let Some(id) = self.executable(first).or_else(|| self.executable(first.opposite())) else {
            return false;
        };
        self.execute_order(id);
        true
    }

    fn execute_order(&mut self, id: u64) {
        let remaining = self.book.order(id).unwrap().remaining;
        let qty = self.rng.random_range(1..=remaining) as u32;
        let ts = self.tick();
        self.emit(BookEvent::execute(ts, id, qty, self.instrument_id));
        if qty as u64 == remaining {
            self.bg.remove(id);
        }
    }

    fn plan_episode(&mut self, variant: EpisodeVariant) -> ActiveEpisode {
        let side = if self.rng.random::<bool>() { Side::Bid } else { Side::Ask };
        let (lo, hi) = self.config.size_mult_range;
        let size_mult = if hi > lo { self.rng.random_range(lo..=hi) } else { lo };
        let reference = self.depth.reference(side, self.ts).max(1.0);
        let total = (size_mult * reference).ceil() as u64;
        let cycles = if variant == EpisodeVariant::ContinuousPattern { self.rng.random_range(3..=6) } else { 1 };

        let mut steps = VecDeque::new();
        let mut sizes = Vec::with_capacity(cycles);
        for cycle in 0..cycles {
            let k = self.rng.random_range(3..=8usize);
            let mut parts: Vec<u64> = (0..k)
                .map(|_| ((total as f64 / k as f64) * self.rng.random_range(0.85..=1.15)).round().max(1.0) as u64)
                .collect();
            let sum: u64 = parts.iter().sum();
            if sum < total {
                parts[k - 1] += total - sum;
            }
            sizes.push(parts.into_iter().map(|q| q.min(u32::MAX as u64) as u32).collect::<Vec<_>>());

            let first_gap = if cycle == 0 { 1 } else { self.rng.random_range(250..=350) };
            for slot in 0..k {
                let gap = if slot == 0 { first_gap } else { self.rng.random_range(1..=4) };
                steps.push_back(Step { gap, action: Action::SpoofAdd { cycle, slot } });
            }
            steps.push_back(Step { gap: self.rng.random_range(2..=10), action: Action::Execute });

            let mut order: Vec<usize> = (0..k).collect();
            rand::seq::SliceRandom::shuffle(&mut order[..], &mut self.rng);
            let burst_starts = if variant == EpisodeVariant::MultiDeletion {
                let bursts = self.rng.random_range(3..=k.min(5));
                let mut cuts: Vec<usize> = (1..k).collect();
                rand::seq::SliceRandom::shuffle(&mut cuts[..], &mut self.rng);
                let mut cuts: Vec<usize> = cuts.into_iter().take(bursts - 1).collect();
                cuts.sort_unstable();
                cuts
            } else {
                Vec::new()
            };
            for (i, slot) in order.into_iter().enumerate() {
                let gap = if i == 0 {
                    self.rng.random_range(2..=10)
                } else if burst_starts.contains(&i) {
                    self.rng.random_range(30..=50)
                } else {
                    self.rng.random_range(1..=3)
                };
                steps.push_back(Step { gap, action: Action::Delete { cycle, slot } });
            }
        }
        ActiveEpisode {
            variant,
            side,
            size_mult,
            cycles,
            ids: sizes.iter().map(|s| vec![0; s.len()]).collect(),
            sizes,
            exec_order_id: None,
            t_start: None,
            steps,
        }
    }

    fn perform(&mut self, ep: &mut ActiveEpisode, action: Action) {
        match action {
            Action::SpoofAdd { cycle, slot } => {
                let side = ep.side;
                let offset = if ep.variant == EpisodeVariant::TopOfBook { 0 } else { self.rng.random_range(2..=10) };
                let best = self.book.best(side).unwrap_or(match side {
                    Side::Bid => self.mid - 1,
                    Side::Ask => self.mid + 1,
                });
                let price = match side {
                    Side::Bid => best - offset,
                    Side::Ask => best + offset,
                };
                let id = self.new_id();
                let ts = self.tick();
                if slot + 1 == ep.sizes[cycle].len() {
                    // Top up the closing add so the cycle clears the multiple of depth seen from here.
                    let placed: u64 = ep.sizes[cycle][..slot].iter().map(|&q| q as u64).sum();
                    let need = (ep.size_mult * self.depth.reference(side, ts).max(1.0)).ceil() as u64;
                    let q = &mut ep.sizes[cycle][slot];
                    *q = (*q as u64).max(need.saturating_sub(placed)).min(u32::MAX as u64) as u32;
                }
                self.emit(BookEvent::add(ts, id, side, price, ep.sizes[cycle][slot], self.instrument_id));
                self.spoof_ids.insert(id);
                ep.ids[cycle][slot] = id;
                ep.t_start.get_or_insert(ts);
            }
            Action::Execute => {
                let side = ep.side.opposite();
                let id = match self.executable(side) {
                    Some(id) => id,
                    None => {
                        // Nothing executable at the opposite best: rest a fresh order there first.
                        let price = match (side, self.book.best(side)) {
                            (_, Some(p)) => p,
                            (Side::Ask, None) => self.book.best_bid().unwrap_or(self.mid) + 1,
                            (Side::Bid, None) => self.book.best_ask().unwrap_or(self.mid) - 1,
                        };
                        let id = self.new_id();
                        let qty = self.rng.random_range(self.params.size.0..=self.params.size.1);
                        let ts = self.tick();
                        self.emit(BookEvent::add(ts, id, side, price, qty, self.instrument_id));
                        self.bg.insert(id, side, price, ts);
                        id
                    }
                };
                ep.exec_order_id.get_or_insert(id);
                self.execute_order(id);
            }
            Action::Delete { cycle, slot } => {
                let id = ep.ids[cycle][slot];
                let ts = self.tick();
                self.emit(BookEvent::delete(ts, id, self.instrument_id));
                self.spoof_ids.remove(&id);
            }
        }
    }

    fn finish(&self, ep: ActiveEpisode) -> EpisodeRecord {
        let mut ids: Vec<u64> = ep.ids.into_iter().flatten().collect();
        ids.sort_unstable();
        EpisodeRecord {
            instrument_id: self.instrument_id,
            variant: ep.variant,
            spoof_side: ep.side,
            t_start: ep.t_start.unwrap(),
            t_end: self.ts,
            spoof_order_ids: ids,
            exec_order_id: ep.exec_order_id.unwrap(),
            intended_label: ep.side.spoof_label(),
            size_mult: ep.size_mult,
            cycles: ep.cycles,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::book::EventKind;

    fn small(seed: u64, episodes: usize) -> SimConfig {
        SimConfig { seed, instruments: 2, session_length: 30_000, episode_count: episodes, ..SimConfig::default() }
    }

    #[test]
    fn default_config_is_valid() {
        SimConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = SimConfig::default();
        c.rates.add = 0.9;
        assert!(generate(&c).is_err());
        let c = SimConfig { session_length: 10_000, episode_count: 40, ..SimConfig::default() };
        assert!(matches!(c.validate(), Err(SimError::InvalidConfig(_))));
        let c = SimConfig { instruments: 0, ..SimConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn same_seed_same_output() {
        let a = generate(&small(3, 4)).unwrap();
        let b = generate(&small(3, 4)).unwrap();
        assert_eq!(a, b);
        let c = generate(&small(4, 4)).unwrap();
        assert_ne!(a.streams[0].events, c.streams[0].events);
    }

    #[test]
    fn zero_episodes_yields_no_records() {
        let out = generate(&small(1, 0)).unwrap();
        assert!(out.episodes.is_empty());
        assert_eq!(out.streams[0].events.len(), 30_000);
    }

    #[test]
    fn streams_replay_and_episodes_are_consistent() {
        let out = generate(&small(11, 8)).unwrap();
        assert_eq!(out.episodes.len(), 16);
        for stream in &out.streams {
            let mut book = OrderBook::new();
            let mut add_ts = HashMap::new();
            let mut gone_ts = HashMap::new();
            let mut last = 0;
            for ev in &stream.events {
                assert!(ev.timestamp >= last);
                last = ev.timestamp;
                let side = book.order(ev.order_id).map(|o| o.side);
                book.apply(ev).unwrap();
                match ev.kind {
                    EventKind::Add => {
                        add_ts.insert(ev.order_id, (ev.timestamp, ev.side.unwrap()));
                    }
                    _ if book.order(ev.order_id).is_none() => {
                        gone_ts.insert(ev.order_id, (ev.timestamp, ev.kind, side));
                    }
                    _ => {}
                }
            }
            for ep in out.episodes_for(stream.instrument_id) {
                assert!(ep.t_start < ep.t_end);
                assert!(!ep.spoof_order_ids.is_empty());
                assert_eq!(ep.intended_label == 1, ep.spoof_side == Side::Bid);
                for id in &ep.spoof_order_ids {
                    let (t_add, side) = add_ts[id];
                    let (t_gone, kind, _) = gone_ts[id];
                    assert_eq!(side, ep.spoof_side);
                    assert_eq!(kind, EventKind::Delete);
                    assert!(ep.t_start <= t_add && t_gone <= ep.t_end);
                }
                let (_, exec_side) = add_ts[&ep.exec_order_id];
                assert_eq!(exec_side, ep.spoof_side.opposite());
            }
        }
    }

    #[test]
    fn episodes_interleave_background() {
        let out = generate(&small(5, 6)).unwrap();
        for stream in &out.streams {
            for ep in out.episodes_for(stream.instrument_id) {
                let ids: HashSet<u64> = ep.spoof_order_ids.iter().copied().collect();
                let mut prev_was_spoof = false;
                for ev in stream.events.iter().filter(|e| e.timestamp >= ep.t_start && e.timestamp <= ep.t_end) {
                    let is_spoof = ids.contains(&ev.order_id);
                    assert!(!(is_spoof && prev_was_spoof), "consecutive episode steps without background");
                    prev_was_spoof = is_spoof;
                }
            }
        }
    }

    #[test]
    fn liquid_books_are_deeper() {
        let cfg = SimConfig { seed: 9, instruments: 2, session_length: 20_000, episode_count: 0, ..SimConfig::default() };
        let out = generate(&cfg).unwrap();
        let mean_top10 = |events: &[BookEvent]| {
            let snaps = crate::book::replay(events).unwrap();
            let total: u64 = snaps.iter().map(|s| (0..10).map(|r| s.qty[r][0] + s.qty[r][1]).sum::<u64>()).sum();
            total as f64 / snaps.len() as f64
        };
        assert_eq!(out.streams[0].profile, LiquidityProfile::Liquid);
        assert_eq!(out.streams[1].profile, LiquidityProfile::Illiquid);
        let liquid = mean_top10(&out.streams[0].events);
        let illiquid = mean_top10(&out.streams[1].events);
        assert!(liquid >= 5.0 * illiquid, "liquid {liquid} vs illiquid {illiquid}");
    }

    #[test]
    fn episode_file_round_trip() {
        let out = generate(&small(2, 3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("episodes.jsonl");
        write_episodes(&path, &out.episodes).unwrap();
        assert_eq!(read_episodes(&path).unwrap(), out.episodes);
        let line = std::fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        for key in ["instrument_id", "variant", "spoof_side", "t_start", "t_end", "spoof_order_ids", "intended_label"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
}
