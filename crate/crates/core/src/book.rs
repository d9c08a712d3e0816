//! Market-by-order book reconstruction and depth-capped snapshots.
//!
//! Prices are integer ticks and quantities integer units. The book is a
//! reconstructor, not a matching engine: an `Add` that would cross the
//! opposite best price is rejected instead of being matched.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of price levels per side kept in a [`Snapshot`].
pub const LEVELS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Bid,
    Ask,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Bid => Side::Ask,
            Side::Ask => Side::Bid,
        }
    }

    /// Column index in snapshot planes: bid = 0, ask = 1.
    pub fn index(self) -> usize {
        match self {
            Side::Bid => 0,
            Side::Ask => 1,
        }
    }

    /// Spoof label for spoof orders resting on this side (bid = 1, ask = 2).
    pub fn spoof_label(self) -> u8 {
        match self {
            Side::Bid => 1,
            Side::Ask => 2,
        }
    }

    pub fn from_spoof_label(label: u8) -> Option<Side> {
        match label {
            1 => Some(Side::Bid),
            2 => Some(Side::Ask),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Add,
    Cancel,
    Delete,
    Execute,
}

/// One order-level feed message.
///
/// `side` and `price` are only meaningful for `Add`; the other kinds resolve
/// the side through `order_id`. `qty` is the added size for `Add`, the
/// reduction for `Cancel`, the executed size for `Execute` and zero for
/// `Delete`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BookEvent {
    pub kind: EventKind,
    pub timestamp: u64,
    pub order_id: u64,
    pub side: Option<Side>,
    pub price: i64,
    pub qty: u32,
    pub instrument_id: u32,
}

impl BookEvent {
    pub fn add(timestamp: u64, order_id: u64, side: Side, price: i64, qty: u32, instrument_id: u32) -> Self {
        BookEvent {
            kind: EventKind::Add,
            timestamp,
            order_id,
            side: Some(side),
            price,
            qty,
            instrument_id,
        }
    }

    pub fn cancel(timestamp: u64, order_id: u64, qty: u32, instrument_id: u32) -> Self {
        BookEvent {
            kind: EventKind::Cancel,
            timestamp,
            order_id,
            side: None,
            price: 0,
            qty,
            instrument_id,
        }
    }

    pub fn delete(timestamp: u64, order_id: u64, instrument_id: u32) -> Self {
        BookEvent {
            kind: EventKind::Delete,
            timestamp,
            order_id,
            side: None,
            price: 0,
            qty: 0,
            instrument_id,
        }
    }

    pub fn execute(timestamp: u64, order_id: u64, qty: u32, instrument_id: u32) -> Self {
        BookEvent {
            kind: EventKind::Execute,
            timestamp,
            order_id,
            side: None,
            price: 0,
            qty,
            instrument_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BookError {
    #[error("unknown order id {0}")]
    UnknownOrderId(u64),
    #[error("order {order_id}: reduction of {requested} exceeds remaining {remaining}")]
    OverReduce { order_id: u64, requested: u64, remaining: u64 },
    #[error("{side:?} add at {price} crosses opposite best {opposite_best}")]
    CrossingAdd { side: Side, price: i64, opposite_best: i64 },
    #[error("timestamp {timestamp} precedes last applied timestamp {last}")]
    StaleTimestamp { timestamp: u64, last: u64 },
    #[error("order id {0} is already resting")]
    DuplicateOrderId(u64),
    #[error("malformed event: {0}")]
    InvalidEvent(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RestingOrder {
    pub side: Side,
    pub price: i64,
    pub remaining: u64,
}

/// Market-by-order book for a single instrument.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OrderBook {
    bids: BTreeMap<i64, u64>,
    asks: BTreeMap<i64, u64>,
    orders: HashMap<u64, RestingOrder>,
    last_timestamp: Option<u64>,
}

impl OrderBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn best_bid(&self) -> Option<i64> {
        self.bids.keys().next_back().copied()
    }

    pub fn best_ask(&self) -> Option<i64> {
        self.asks.keys().next().copied()
    }

    pub fn best(&self, side: Side) -> Option<i64> {
        match side {
            Side::Bid => self.best_bid(),
            Side::Ask => self.best_ask(),
        }
    }

    pub fn last_timestamp(&self) -> Option<u64> {
        self.last_timestamp
    }

    pub fn order(&self, order_id: u64) -> Option<&RestingOrder> {
        self.orders.get(&order_id)
    }

    /// All resting orders, in unspecified order.
    pub fn orders(&self) -> impl Iterator<Item = (u64, &RestingOrder)> {
        self.orders.iter().map(|(id, o)| (*id, o))
    }

    pub fn order_count(&self) -> usize {
        self.orders.len()
    }

    /// Price levels on one side, best first.
    pub fn levels(&self, side: Side) -> Box<dyn Iterator<Item = (i64, u64)> + '_> {
        match side {
            Side::Bid => Box::new(self.bids.iter().rev().map(|(p, q)| (*p, *q))),
            Side::Ask => Box::new(self.asks.iter().map(|(p, q)| (*p, *q))),
        }
    }

    /// Aggregate quantity on `side` within `ticks` of that side's best price.
    pub fn depth_within(&self, side: Side, ticks: i64) -> u64 {
        let Some(best) = self.best(side) else {
            return 0;
        };
        self.levels(side)
            .take_while(|(p, _)| (best - p).abs() <= ticks)
            .map(|(_, q)| q)
            .sum()
    }

    /// Applies one event. On error the book is left unchanged.
    pub fn apply(&mut self, ev: &BookEvent) -> Result<(), BookError> {
        if let Some(last) = self.last_timestamp {
            if ev.timestamp < last {
                return Err(BookError::StaleTimestamp { timestamp: ev.timestamp, last });
            }
        }
        match ev.kind {
            EventKind::Add => self.apply_add(ev)?,
            EventKind::Cancel | EventKind::Execute => {
                if ev.qty == 0 {
                    return Err(BookError::InvalidEvent("zero reduction quantity"));
                }
                self.reduce(ev.order_id, ev.qty as u64)?;
            }
            EventKind::Delete => {
                let remaining = self
                    .orders
                    .get(&ev.order_id)
                    .ok_or(BookError::UnknownOrderId(ev.order_id))?
                    .remaining;
                self.reduce(ev.order_id, remaining)?;
            }
        }
        self.last_timestamp = Some(ev.timestamp);
        Ok(())
    }

    /// Functional form of [`OrderBook::apply`].
    pub fn applied(&self, ev: &BookEvent) -> Result<OrderBook, BookError> {
        let mut next = self.clone();
        next.apply(ev)?;
        Ok(next)
    }

    fn apply_add(&mut self, ev: &BookEvent) -> Result<(), BookError> {
        let side = ev.side.ok_or(BookError::InvalidEvent("add without side"))?;
        if ev.qty == 0 {
            return Err(BookError::InvalidEvent("zero add quantity"));
        }
        if self.orders.contains_key(&ev.order_id) {
            return Err(BookError::DuplicateOrderId(ev.order_id));
        }
        let crosses = match side {
            Side::Bid => self.best_ask().filter(|&a| ev.price >= a),
            Side::Ask => self.best_bid().filter(|&b| ev.price <= b),
        };
        if let Some(opposite_best) = crosses {
            return Err(BookError::CrossingAdd { side, price: ev.price, opposite_best });
        }
        self.orders.insert(
            ev.order_id,
            RestingOrder { side, price: ev.price, remaining: ev.qty as u64 },
        );
        *self.ladder_mut(side).entry(ev.price).or_insert(0) += ev.qty as u64;
        Ok(())
    }

    fn reduce(&mut self, order_id: u64, qty: u64) -> Result<(), BookError> {
        let order = *self.orders.get(&order_id).ok_or(BookError::UnknownOrderId(order_id))?;
        if qty > order.remaining {
            return Err(BookError::OverReduce { order_id, requested: qty, remaining: order.remaining });
        }
        let ladder = self.ladder_mut(order.side);
        let level = ladder.get_mut(&order.price).expect("ladder level for resting order");
        *level -= qty;
        if *level == 0 {
            ladder.remove(&order.price);
        }
        if qty == order.remaining {
            self.orders.remove(&order_id);
        } else {
            self.orders.get_mut(&order_id).unwrap().remaining -= qty;
        }
        Ok(())
    }

    fn ladder_mut(&mut self, side: Side) -> &mut BTreeMap<i64, u64> {
        match side {
            Side::Bid => &mut self.bids,
            Side::Ask => &mut self.asks,
        }
    }

    /// Copies the top [`LEVELS`] levels of each side; missing levels are zero.
    pub fn take_snapshot(&self) -> Snapshot {
        let mut snap = Snapshot::empty(self.last_timestamp.unwrap_or(0));
        for side in [Side::Bid, Side::Ask] {
            for (row, (price, qty)) in self.levels(side).take(LEVELS).enumerate() {
                snap.price[row][side.index()] = price;
                snap.qty[row][side.index()] = qty;
            }
        }
        snap
    }
}

/// One book state: `LEVELS` rows from the top of book, columns `[bid, ask]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Snapshot {
    pub timestamp: u64,
    pub qty: [[u64; 2]; LEVELS],
    pub price: [[i64; 2]; LEVELS],
}

impl Snapshot {
    pub fn empty(timestamp: u64) -> Self {
        Snapshot { timestamp, qty: [[0; 2]; LEVELS], price: [[0; 2]; LEVELS] }
    }

    pub fn best(&self, side: Side) -> Option<i64> {
        let c = side.index();
        (self.qty[0][c] > 0).then_some(self.price[0][c])
    }

    /// Midpoint in ticks, or `None` when either side is empty.
    pub fn mid(&self) -> Option<f64> {
        Some((self.best(Side::Bid)? as f64 + self.best(Side::Ask)? as f64) / 2.0)
    }

    /// Same measure as [`OrderBook::depth_within`], restricted to captured levels.
    pub fn depth_within(&self, side: Side, ticks: i64) -> u64 {
        let c = side.index();
        let Some(best) = self.best(side) else {
            return 0;
        };
        (0..LEVELS)
            .take_while(|&r| self.qty[r][c] > 0 && (best - self.price[r][c]).abs() <= ticks)
            .map(|r| self.qty[r][c])
            .sum()
    }
}

/// Replays a single-instrument stream, returning the snapshot after each event.
pub fn replay(events: &[BookEvent]) -> Result<Vec<Snapshot>, ReplayError> {
    let mut book = OrderBook::new();
    events
        .iter()
        .enumerate()
        .map(|(index, ev)| {
            book.apply(ev).map_err(|source| ReplayError { index, source })?;
            Ok(book.take_snapshot())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("event {index}: {source}")]
pub struct ReplayError {
    pub index: usize,
    #[source]
    pub source: BookError,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn book_from(events: &[BookEvent]) -> OrderBook {
        let mut book = OrderBook::new();
        for ev in events {
            book.apply(ev).unwrap();
        }
        book
    }

    #[test]
    fn single_add_sets_best_bid() {
        let book = book_from(&[BookEvent::add(0, 1, Side::Bid, 100, 50, 0)]);
        assert_eq!(book.best_bid(), Some(100));
        assert_eq!(book.levels(Side::Bid).collect::<Vec<_>>(), vec![(100, 50)]);
        assert_eq!(book.best_ask(), None);
    }

    #[test]
    fn over_execute_is_rejected_and_book_unchanged() {
        let mut book = book_from(&[BookEvent::add(0, 1, Side::Bid, 100, 50, 0)]);
        let before = book.clone();
        let err = book.apply(&BookEvent::execute(1, 1, 60, 0)).unwrap_err();
        assert_eq!(err, BookError::OverReduce { order_id: 1, requested: 60, remaining: 50 });
        assert_eq!(book, before);
    }

    #[test]
    fn error_paths() {
        let mut book = book_from(&[
            BookEvent::add(10, 1, Side::Bid, 100, 5, 0),
            BookEvent::add(10, 2, Side::Ask, 102, 5, 0),
        ]);
        assert_eq!(book.apply(&BookEvent::delete(11, 9, 0)), Err(BookError::UnknownOrderId(9)));
        assert!(matches!(
            book.apply(&BookEvent::add(11, 3, Side::Bid, 102, 1, 0)),
            Err(BookError::CrossingAdd { side: Side::Bid, price: 102, opposite_best: 102 })
        ));
        assert!(matches!(
            book.apply(&BookEvent::add(11, 3, Side::Ask, 99, 1, 0)),
            Err(BookError::CrossingAdd { .. })
        ));
        assert_eq!(
            book.apply(&BookEvent::add(9, 3, Side::Bid, 99, 1, 0)),
            Err(BookError::StaleTimestamp { timestamp: 9, last: 10 })
        );
        assert_eq!(
            book.apply(&BookEvent::add(11, 1, Side::Bid, 99, 1, 0)),
            Err(BookError::DuplicateOrderId(1))
        );
        assert!(matches!(
            book.apply(&BookEvent::add(11, 4, Side::Bid, 99, 0, 0)),
            Err(BookError::InvalidEvent(_))
        ));
    }

    #[test]
    fn partial_cancel_then_execute_removes_level() {
        let mut book = book_from(&[
            BookEvent::add(0, 1, Side::Ask, 105, 10, 0),
            BookEvent::add(0, 2, Side::Ask, 105, 4, 0),
        ]);
        book.apply(&BookEvent::cancel(1, 1, 3, 0)).unwrap();
        assert_eq!(book.levels(Side::Ask).collect::<Vec<_>>(), vec![(105, 11)]);
        book.apply(&BookEvent::execute(2, 1, 7, 0)).unwrap();
        assert!(book.order(1).is_none());
        book.apply(&BookEvent::delete(3, 2, 0)).unwrap();
        assert_eq!(book.best_ask(), None);
        assert_eq!(book.order_count(), 0);
        assert_eq!(book.last_timestamp(), Some(3));
    }

    #[test]
    fn four_state_spoof_sequence_leaves_no_spoof_orders() {
        // Resting background, large bids away from the inside, an execution on
        // the ask side, then removal of the large bids.
        let mut events = vec![
            BookEvent::add(0, 1, Side::Bid, 100, 20, 0),
            BookEvent::add(1, 2, Side::Ask, 101, 20, 0),
            BookEvent::add(2, 3, Side::Ask, 102, 15, 0),
        ];
        let spoof_ids = [10, 11, 12];
        for (i, id) in spoof_ids.iter().enumerate() {
            events.push(BookEvent::add(3 + i as u64, *id, Side::Bid, 97 - i as i64, 500, 0));
            events.push(BookEvent::add(3 + i as u64, 20 + *id, Side::Bid, 99, 3, 0));
        }
        events.push(BookEvent::execute(10, 2, 20, 0));
        events.push(BookEvent::add(11, 40, Side::Ask, 103, 5, 0));
        for (i, id) in spoof_ids.iter().enumerate() {
            events.push(BookEvent::delete(12 + i as u64, *id, 0));
        }
        let book = book_from(&events);
        for id in spoof_ids {
            assert!(book.order(id).is_none());
        }
        assert_eq!(book.best_ask(), Some(102));
        assert_eq!(book.depth_within(Side::Bid, 10), 20 + 9);
    }

    #[test]
    fn snapshot_of_empty_book_is_zero() {
        let snap = OrderBook::new().take_snapshot();
        assert_eq!(snap, Snapshot::empty(0));
        assert_eq!(snap.mid(), None);
    }

    #[test]
    fn snapshot_copies_levels_in_ladder_order() {
        let book = book_from(&[
            BookEvent::add(0, 1, Side::Bid, 100, 5, 0),
            BookEvent::add(0, 2, Side::Bid, 99, 7, 0),
            BookEvent::add(0, 3, Side::Ask, 101, 3, 0),
        ]);
        let snap = book.take_snapshot();
        assert_eq!(snap.price[0], [100, 101]);
        assert_eq!(snap.qty[0], [5, 3]);
        assert_eq!(snap.price[1], [99, 0]);
        assert_eq!(snap.qty[1], [7, 0]);
        for row in 2..LEVELS {
            assert_eq!(snap.price[row], [0, 0]);
            assert_eq!(snap.qty[row], [0, 0]);
        }
        assert_eq!(snap.mid(), Some(100.5));
        assert_eq!(snap.depth_within(Side::Bid, 1), 12);
        assert_eq!(snap.depth_within(Side::Bid, 0), 5);
    }

    #[test]
    fn snapshot_truncates_deep_ask_ladder() {
        let events: Vec<_> = (0..40)
            .map(|i| BookEvent::add(0, i, Side::Ask, 200 + 2 * i as i64, 1 + i as u32, 0))
            .collect();
        let book = book_from(&events);
        let snap = book.take_snapshot();
        for row in 0..LEVELS {
            assert_eq!(snap.price[row][1], 200 + 2 * row as i64);
            assert_eq!(snap.qty[row][1], 1 + row as u64);
        }
    }

    #[test]
    fn applied_is_pure() {
        let book = book_from(&[BookEvent::add(0, 1, Side::Bid, 100, 5, 0)]);
        let ev = BookEvent::add(1, 2, Side::Ask, 103, 2, 0);
        let a = book.applied(&ev).unwrap();
        let b = book.applied(&ev).unwrap();
        assert_eq!(a, b);
        assert_eq!(book.best_ask(), None);
    }

    #[test]
    fn replay_reports_failing_index() {
        let events = [BookEvent::add(0, 1, Side::Bid, 100, 5, 0), BookEvent::delete(1, 2, 0)];
        let err = replay(&events).unwrap_err();
        assert_eq!(err.index, 1);
    }
}
