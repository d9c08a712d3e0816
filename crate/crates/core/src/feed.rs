//! The `LOB1` binary event feed.
//!
//! A feed is an 8-byte header (`b"LOB1"` followed by a little-endian `u32`
//! version) and a sequence of fixed 34-byte little-endian records:
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 1    | kind (1 Add, 2 Cancel, 3 Delete, 4 Execute) |
//! | 1      | 8    | timestamp, ns                          |
//! | 9      | 8    | order id                               |
//! | 17     | 1    | side (0 Bid, 1 Ask, 255 unused)        |
//! | 18     | 8    | price, ticks (0 unless Add)            |
//! | 26     | 4    | qty (0 for Delete)                     |
//! | 30     | 4    | instrument id                          |

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::book::{BookEvent, EventKind, Side};

pub const MAGIC: [u8; 4] = *b"LOB1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 8;
pub const RECORD_LEN: usize = 34;

const SIDE_UNUSED: u8 = 255;

#[derive(Debug, Error)]
pub enum FeedError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported feed version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated message at byte {offset}: {len} of {RECORD_LEN} bytes")]
    TruncatedMessage { offset: u64, len: usize },
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("invalid side byte {side} for {kind:?}")]
    BadSide { kind: EventKind, side: u8 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn encode_header() -> [u8; HEADER_LEN] {
    let mut out = [0u8; HEADER_LEN];
    out[..4].copy_from_slice(&MAGIC);
    out[4..].copy_from_slice(&VERSION.to_le_bytes());
    out
}

pub fn encode_event(ev: &BookEvent) -> [u8; RECORD_LEN] {
    let mut out = [0u8; RECORD_LEN];
    out[0] = match ev.kind {
        EventKind::Add => 1,
        EventKind::Cancel => 2,
        EventKind::Delete => 3,
        EventKind::Execute => 4,
    };
    out[1..9].copy_from_slice(&ev.timestamp.to_le_bytes());
    out[9..17].copy_from_slice(&ev.order_id.to_le_bytes());
    let is_add = ev.kind == EventKind::Add;
    out[17] = match ev.side {
        Some(side) if is_add => side.index() as u8,
        _ => SIDE_UNUSED,
    };
    let price = if is_add { ev.price } else { 0 };
    out[18..26].copy_from_slice(&price.to_le_bytes());
    let qty = if ev.kind == EventKind::Delete { 0 } else { ev.qty };
    out[26..30].copy_from_slice(&qty.to_le_bytes());
    out[30..34].copy_from_slice(&ev.instrument_id.to_le_bytes());
    out
}

pub fn decode_event(buf: &[u8; RECORD_LEN]) -> Result<BookEvent, FeedError> {
    let kind = match buf[0] {
        1 => EventKind::Add,
        2 => EventKind::Cancel,
        3 => EventKind::Delete,
        4 => EventKind::Execute,
        other => return Err(FeedError::UnknownKind(other)),
    };
    let u64_at = |at: usize| u64::from_le_bytes(buf[at..at + 8].try_into().unwrap());
    let u32_at = |at: usize| u32::from_le_bytes(buf[at..at + 4].try_into().unwrap());
    let side = match (kind, buf[17]) {
        (EventKind::Add, 0) => Some(Side::Bid),
        (EventKind::Add, 1) => Some(Side::Ask),
        (EventKind::Add, side) => return Err(FeedError::BadSide { kind, side }),
        (_, SIDE_UNUSED) => None,
        (_, side) => return Err(FeedError::BadSide { kind, side }),
    };
    Ok(BookEvent {
        kind,
        timestamp: u64_at(1),
        order_id: u64_at(9),
        side,
        price: u64_at(18) as i64,
        qty: u32_at(26),
        instrument_id: u32_at(30),
    })
}

/// Streaming reader over a `LOB1` feed.
///
/// Yields events until a clean end of stream on a record boundary. A partial
/// trailing record yields one `TruncatedMessage` error and then ends.
pub struct FeedReader<R> {
    inner: R,
    offset: u64,
    done: bool,
}

impl<R: Read> FeedReader<R> {
    pub fn new(mut inner: R) -> Result<Self, FeedError> {
        let mut header = [0u8; HEADER_LEN];
        let n = read_full(&mut inner, &mut header)?;
        if n < HEADER_LEN {
            let mut magic = [0u8; 4];
            magic[..n.min(4)].copy_from_slice(&header[..n.min(4)]);
            return Err(FeedError::BadMagic(magic));
        }
        let magic: [u8; 4] = header[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(FeedError::BadMagic(magic));
        }
        let version = u32::from_le_bytes(header[4..].try_into().unwrap());
        if version != VERSION {
            return Err(FeedError::UnsupportedVersion(version));
        }
        Ok(FeedReader { inner, offset: HEADER_LEN as u64, done: false })
    }
}

impl<R: Read> Iterator for FeedReader<R> {
    type Item = Result<BookEvent, FeedError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut buf = [0u8; RECORD_LEN];
        let n = match read_full(&mut self.inner, &mut buf) {
            Ok(n) => n,
            Err(e) => {
                self.done = true;
                return Some(Err(e.into()));
            }
        };
        let offset = self.offset;
        self.offset += n as u64;
        match n {
            0 => {
                self.done = true;
                None
            }
            RECORD_LEN => Some(decode_event(&buf)),
            len => {
                self.done = true;
                Some(Err(FeedError::TruncatedMessage { offset, len }))
            }
        }
    }
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

pub fn read_feed<R: Read>(reader: R) -> Result<Vec<BookEvent>, FeedError> {
    FeedReader::new(reader)?.collect()
}

pub fn write_feed<'a, W: Write>(
    mut writer: W,
    events: impl IntoIterator<Item = &'a BookEvent>,
) -> io::Result<()> {
    writer.write_all(&encode_header())?;
    for ev in events {
        writer.write_all(&encode_event(ev))?;
    }
    writer.flush()
}

pub fn read_feed_file(path: impl AsRef<std::path::Path>) -> Result<Vec<BookEvent>, FeedError> {
    let file = std::fs::File::open(path)?;
    read_feed(io::BufReader::new(file))
}

pub fn write_feed_file<'a>(
    path: impl AsRef<std::path::Path>,
    events: impl IntoIterator<Item = &'a BookEvent>,
) -> io::Result<()> {
    let file = std::fs::File::create(path)?;
    write_feed(io::BufWriter::new(file), events)
}

/// Splits a mixed feed into per-instrument streams, preserving event order.
/// Streams are returned sorted by instrument id.
pub fn split_by_instrument(events: &[BookEvent]) -> Vec<(u32, Vec<BookEvent>)> {
    let mut streams: std::collections::BTreeMap<u32, Vec<BookEvent>> = Default::default();
    for ev in events {
        streams.entry(ev.instrument_id).or_default().push(*ev);
    }
    streams.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn add_layout_is_bit_exact() {
        let bytes = encode_event(&BookEvent::add(0, 1, Side::Bid, 100, 50, 7));
        let mut expected = vec![0x01];
        expected.extend([0u8; 8]);
        expected.extend([0x01, 0, 0, 0, 0, 0, 0, 0]);
        expected.push(0x00);
        expected.extend([0x64, 0, 0, 0, 0, 0, 0, 0]);
        expected.extend([0x32, 0, 0, 0]);
        expected.extend([0x07, 0, 0, 0]);
        assert_eq!(bytes.to_vec(), expected);
    }

    #[test]
    fn delete_layout() {
        let bytes = encode_event(&BookEvent::delete(5, 1, 7));
        assert_eq!(bytes[0], 3);
        assert_eq!(&bytes[1..9], &5u64.to_le_bytes());
        assert_eq!(bytes[17], 255);
        assert_eq!(&bytes[18..26], &[0; 8]);
        assert_eq!(&bytes[26..30], &[0; 4]);
    }

    fn feed_bytes(events: &[BookEvent]) -> Vec<u8> {
        let mut out = Vec::new();
        write_feed(&mut out, events).unwrap();
        out
    }

    #[test]
    fn header_only_is_empty() {
        assert!(read_feed(&encode_header()[..]).unwrap().is_empty());
    }

    #[test]
    fn reads_events_in_file_order() {
        let events = [
            BookEvent::add(1, 1, Side::Bid, 100, 5, 0),
            BookEvent::cancel(2, 1, 2, 0),
            BookEvent::execute(3, 1, 3, 0),
        ];
        assert_eq!(read_feed(&feed_bytes(&events)[..]).unwrap(), events);
    }

    #[test]
    fn trailing_garbage_is_truncated_message() {
        let mut bytes = feed_bytes(&[BookEvent::add(1, 1, Side::Ask, 100, 5, 0)]);
        bytes.extend([0xAA; 10]);
        let mut reader = FeedReader::new(&bytes[..]).unwrap();
        assert!(reader.next().unwrap().is_ok());
        match reader.next() {
            Some(Err(FeedError::TruncatedMessage { offset, len })) => {
                assert_eq!(offset, (HEADER_LEN + RECORD_LEN) as u64);
                assert_eq!(len, 10);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
        assert!(reader.next().is_none());
    }

    #[test]
    fn header_errors() {
        assert!(matches!(FeedReader::new(&b"LOB2\x01\0\0\0"[..]), Err(FeedError::BadMagic(m)) if &m == b"LOB2"));
        assert!(matches!(FeedReader::new(&b"LOB1\x02\0\0\0"[..]), Err(FeedError::UnsupportedVersion(2))));
        assert!(matches!(FeedReader::new(&b"LO"[..]), Err(FeedError::BadMagic(_))));
    }

    #[test]
    fn unknown_kind_and_bad_side() {
        let mut rec = encode_event(&BookEvent::delete(1, 1, 0));
        rec[0] = 9;
        assert!(matches!(decode_event(&rec), Err(FeedError::UnknownKind(9))));
        let mut rec = encode_event(&BookEvent::add(1, 1, Side::Bid, 1, 1, 0));
        rec[17] = 255;
        assert!(matches!(decode_event(&rec), Err(FeedError::BadSide { .. })));
    }

    #[test]
    fn split_preserves_order() {
        let events = [
            BookEvent::add(1, 1, Side::Bid, 100, 5, 3),
            BookEvent::add(1, 1, Side::Bid, 100, 5, 1),
            BookEvent::delete(2, 1, 3),
        ];
        let streams = split_by_instrument(&events);
        assert_eq!(streams.len(), 2);
        assert_eq!(streams[0].0, 1);
        assert_eq!(streams[1].1, vec![events[0], events[2]]);
    }

    fn arb_event() -> impl Strategy<Value = BookEvent> {
        (0u8..4, any::<u64>(), any::<u64>(), any::<bool>(), any::<i64>(), 1u32.., any::<u32>()).prop_map(
            |(k, ts, id, bid, price, qty, instr)| {
                let side = if bid { Side::Bid } else { Side::Ask };
                match k {
                    0 => BookEvent::add(ts, id, side, price, qty, instr),
                    1 => BookEvent::cancel(ts, id, qty, instr),
                    2 => BookEvent::delete(ts, id, instr),
                    _ => BookEvent::execute(ts, id, qty, instr),
                }
            },
        )
    }

    proptest! {
        #[test]
        fn codec_round_trip(ev in arb_event()) {
            prop_assert_eq!(decode_event(&encode_event(&ev)).unwrap(), ev);
        }

        #[test]
        fn concatenated_blocks_read_as_concatenation(
            a in proptest::collection::vec(arb_event(), 0..20),
            b in proptest::collection::vec(arb_event(), 0..20),
        ) {
            let mut bytes = encode_header().to_vec();
            for ev in a.iter().chain(&b) {
                bytes.extend(encode_event(ev));
            }
            let all = read_feed(&bytes[..]).unwrap();
            let mut expected = read_feed(&feed_bytes(&a)[..]).unwrap();
            expected.extend(read_feed(&feed_bytes(&b)[..]).unwrap());
            prop_assert_eq!(all, expected);
        }
    }
}
