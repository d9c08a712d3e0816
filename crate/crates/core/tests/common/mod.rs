#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use lobwatch::book::{BookEvent, Side, Snapshot, LEVELS};
use lobwatch::pipeline::{stream_refs, train_model, ExperimentConfig};
use lobwatch::sim::{generate, SimConfig, SimOutput};
use lobwatch::tcn::{Checkpoint, TcnConfig, TrainHyper};
use lobwatch::tensorize::ClassMode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random but always-valid single-instrument event stream. Returns the
/// events with the resting orders after each one, for brute-force checks.
pub struct RandomFeed {
    rng: ChaCha8Rng,
    pub orders: HashMap<u64, (Side, i64, u64)>,
    ids: Vec<u64>,
    next_id: u64,
    ts: u64,
}

impl RandomFeed {
    pub fn new(seed: u64) -> Self {
        RandomFeed { rng: ChaCha8Rng::seed_from_u64(seed), orders: HashMap::new(), ids: Vec::new(), next_id: 1, ts: 0 }
    }

    fn best(&self, side: Side) -> Option<i64> {
        let prices = self.orders.values().filter(|o| o.0 == side).map(|o| o.1);
        match side {
            Side::Bid => prices.max(),
            Side::Ask => prices.min(),
        }
    }

    pub fn next_event(&mut self) -> BookEvent {
        self.ts += self.rng.random_range(0..3);
        let roll: f64 = self.rng.random();
        if self.ids.is_empty() || roll < 0.5 {
            let side = if self.rng.random::<bool>() { Side::Bid } else { Side::Ask };
            let price = match side {
                Side::Bid => {
                    let cap = self.best(Side::Ask).map_or(1_010, |a| a - 1);
                    cap - self.rng.random_range(0..45)
                }
                Side::Ask => {
                    let floor = self.best(Side::Bid).map_or(990, |b| b + 1);
                    floor + self.rng.random_range(0..45)
                }
            };
            let qty = self.rng.random_range(1..500u32);
            let id = self.next_id;
            self.next_id += 1;
            self.orders.insert(id, (side, price, qty as u64));
            self.ids.push(id);
            return BookEvent::add(self.ts, id, side, price, qty, 0);
        }
        let pos = self.rng.random_range(0..self.ids.len());
        let id = self.ids[pos];
        let remaining = self.orders[&id].2;
        let ev = if roll < 0.7 {
            BookEvent::delete(self.ts, id, 0)
        } else {
            let qty = self.rng.random_range(1..=remaining) as u32;
            if roll < 0.85 {
                BookEvent::cancel(self.ts, id, qty, 0)
            } else {
                BookEvent::execute(self.ts, id, qty, 0)
            }
        };
        let taken = if roll < 0.7 { remaining } else { ev.qty as u64 };
        if taken == remaining {
            self.orders.remove(&id);
            self.ids.swap_remove(pos);
        } else {
            self.orders.get_mut(&id).unwrap().2 -= taken;
        }
        ev
    }

    /// Re-aggregates resting orders from scratch.
    pub fn brute_snapshot(&self) -> Snapshot {
        let mut snap = Snapshot::empty(self.ts);
        for side in [Side::Bid, Side::Ask] {
            let mut levels: BTreeMap<i64, u64> = BTreeMap::new();
            for o in self.orders.values().filter(|o| o.0 == side) {
                *levels.entry(o.1).or_insert(0) += o.2;
            }
            let rows: Vec<(i64, u64)> = match side {
                Side::Bid => levels.into_iter().rev().take(LEVELS).collect(),
                Side::Ask => levels.into_iter().take(LEVELS).collect(),
            };
            for (r, (p, q)) in rows.into_iter().enumerate() {
                snap.price[r][side.index()] = p;
                snap.qty[r][side.index()] = q;
            }
        }
        snap
    }
}

pub fn small_sim(seed: u64, instruments: usize, session_length: usize, episodes: usize) -> SimOutput {
    generate(&SimConfig { seed, instruments, session_length, episode_count: episodes, ..SimConfig::default() }).unwrap()
}

/// A quickly trained three-class model, good enough to raise alerts.
pub fn quick_checkpoint(sim: &SimOutput) -> Checkpoint {
    let cfg = ExperimentConfig {
        tcn: TcnConfig { filters: 16, dilations: vec![1, 2, 4, 8], ..TcnConfig::default() },
        hyper: TrainHyper { epochs: 10, patience: 10, ..TrainHyper::default() },
        ..ExperimentConfig::default()
    };
    train_model(&stream_refs(&sim.streams), &cfg, ClassMode::WithNeutral, |_| {}).unwrap()
}
