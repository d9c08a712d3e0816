//! C interface to lobwatch.
//!
//! Books and models are opaque handles created and released by this
//! library. Every fallible call returns an [`LwStatus`]; on failure the
//! message is available from [`lw_last_error`] on the same thread until the
//! next failing call. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lobwatch::book::{BookEvent, EventKind, OrderBook, Side, Snapshot, LEVELS};
use lobwatch::feed::{decode_event, encode_event, RECORD_LEN};
use lobwatch::rank::unit;
use lobwatch::tcn::{infer_batch, load_checkpoint, Checkpoint};
use lobwatch::tensorize::{frame_from_snapshot, Frame};

/// Price levels per side in an [`LwSnapshot`].
pub const LW_LEVELS: usize = 30;
/// Bytes in one encoded feed record.
pub const LW_RECORD_LEN: usize = 34;

const _: () = assert!(LW_LEVELS == LEVELS && LW_RECORD_LEN == RECORD_LEN);

pub const LW_KIND_ADD: u8 = 1;
pub const LW_KIND_CANCEL: u8 = 2;
pub const LW_KIND_DELETE: u8 = 3;
pub const LW_KIND_EXECUTE: u8 = 4;

pub const LW_SIDE_BID: u8 = 0;
pub const LW_SIDE_ASK: u8 = 1;
/// Side of non-add events.
pub const LW_SIDE_NONE: u8 = 255;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// The book rejected the event; the book is unchanged.
    BookRejected = 3,
    Decode = 4,
    Io = 5,
    Model = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// One feed message. `side` and `price` are only read for adds.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LwEvent {
    /// One of the `LW_KIND_*` values.
    pub kind: u8,
    /// One of the `LW_SIDE_*` values.
    pub side: u8,
    pub qty: u32,
    pub instrument_id: u32,
    pub timestamp: u64,
    pub order_id: u64,
    pub price: i64,
}

/// Top `LW_LEVELS` levels per side, columns `[bid, ask]`; missing levels are zero.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LwSnapshot {
    pub timestamp: u64,
    pub qty: [[u64; 2]; LW_LEVELS],
    pub price: [[i64; 2]; LW_LEVELS],
}

/// Opaque order book.
pub struct LwBook(OrderBook);

/// Opaque trained model.
pub struct LwModel(Checkpoint);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: LwStatus, msg: impl Into<String>) -> LwStatus {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
    status
}

fn guard(f: impl FnOnce() -> LwStatus) -> LwStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(LwStatus::Panic, "internal panic"))
}

fn to_event(ev: &LwEvent) -> Result<BookEvent, LwStatus> {
    let kind = match ev.kind {
        LW_KIND_ADD => EventKind::Add,
        LW_KIND_CANCEL => EventKind::Cancel,
        LW_KIND_DELETE => EventKind::Delete,
        LW_KIND_EXECUTE => EventKind::Execute,
        k => return Err(fail(LwStatus::InvalidArgument, format!("unknown event kind {k}"))),
    };
    let side = match (kind, ev.side) {
        (EventKind::Add, LW_SIDE_BID) => Some(Side::Bid),
        (EventKind::Add, LW_SIDE_ASK) => Some(Side::Ask),
        (EventKind::Add, s) => return Err(fail(LwStatus::InvalidArgument, format!("add with side {s}"))),
        _ => None,
    };
    let is_add = kind == EventKind::Add;
    Ok(BookEvent {
        kind,
        timestamp: ev.timestamp,
        order_id: ev.order_id,
        side,
        price: if is_add { ev.price } else { 0 },
        qty: if kind == EventKind::Delete { 0 } else { ev.qty },
        instrument_id: ev.instrument_id,
    })
}

fn from_event(ev: &BookEvent) -> LwEvent {
    LwEvent {
        kind: match ev.kind {
            EventKind::Add => LW_KIND_ADD,
            EventKind::Cancel => LW_KIND_CANCEL,
            EventKind::Delete => LW_KIND_DELETE,
            EventKind::Execute => LW_KIND_EXECUTE,
        },
        side: ev.side.map_or(LW_SIDE_NONE, |s| s.index() as u8),
        qty: ev.qty,
        instrument_id: ev.instrument_id,
        timestamp: ev.timestamp,
        order_id: ev.order_id,
        price: ev.price,
    }
}

fn from_snapshot(s: &Snapshot) -> LwSnapshot {
    LwSnapshot { timestamp: s.timestamp, qty: s.qty, price: s.price }
}

/// Message of the last failing call on this thread; empty if none. Valid
/// until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn lw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn lw_book_new() -> *mut LwBook {
    Box::into_raw(Box::new(LwBook(OrderBook::new())))
}

/// Releases a book; null is ignored.
///
/// # Safety
/// `book` must come from [`lw_book_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lw_book_free(book: *mut LwBook) {
    if !book.is_null() {
        drop(Box::from_raw(book));
    }
}

/// Applies one event. A rejected event leaves the book unchanged.
///
/// # Safety
/// Pointers must be null or valid for the call.
#[no_mangle]
pub unsafe extern "C" fn lw_book_apply(book: *mut LwBook, event: *const LwEvent) -> LwStatus {
    guard(|| {
        let (Some(book), Some(ev)) = (book.as_mut(), event.as_ref()) else {
            return fail(LwStatus::NullPointer, "null book or event");
        };
        match to_event(ev) {
            Ok(ev) => match book.0.apply(&ev) {
                Ok(()) => LwStatus::Ok,
                Err(e) => fail(LwStatus::BookRejected, e.to_string()),
            },
            Err(status) => status,
        }
    })
}

/// # Safety
/// Pointers must be null or valid for the call.
#[no_mangle]
pub unsafe extern "C" fn lw_book_snapshot(book: *const LwBook, out: *mut LwSnapshot) -> LwStatus {
    guard(|| {
        let (Some(book), false) = (book.as_ref(), out.is_null()) else {
            return fail(LwStatus::NullPointer, "null book or output");
        };
        out.write(from_snapshot(&book.0.take_snapshot()));
        LwStatus::Ok
    })
}

/// Number of resting orders, or 0 for a null book.
///
/// # Safety
/// `book` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn lw_book_order_count(book: *const LwBook) -> usize {
    book.as_ref().map_or(0, |b| b.0.order_count())
}

/// Writes the `LW_RECORD_LEN`-byte feed record for `event` into `out`.
///
/// # Safety
/// `out` must hold `out_len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lw_event_encode(event: *const LwEvent, out: *mut u8, out_len: usize) -> LwStatus {
    guard(|| {
        let Some(ev) = event.as_ref() else {
            return fail(LwStatus::NullPointer, "null event");
        };
        if out.is_null() {
            return fail(LwStatus::NullPointer, "null output");
        }
        if out_len < RECORD_LEN {
            return fail(LwStatus::BufferTooSmall, format!("need {RECORD_LEN} bytes, got {out_len}"));
        }
        match to_event(ev) {
            Ok(ev) => {
                ptr::copy_nonoverlapping(encode_event(&ev).as_ptr(), out, RECORD_LEN);
                LwStatus::Ok
            }
            Err(status) => status,
        }
    })
}

/// Decodes one feed record of exactly `LW_RECORD_LEN` bytes.
///
/// # Safety
/// `buf` must hold `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lw_event_decode(buf: *const u8, len: usize, out: *mut LwEvent) -> LwStatus {
    guard(|| {
        if buf.is_null() || out.is_null() {
            return fail(LwStatus::NullPointer, "null buffer or output");
        }
        if len != RECORD_LEN {
            return fail(LwStatus::InvalidArgument, format!("record must be {RECORD_LEN} bytes, got {len}"));
        }
        let bytes: &[u8; RECORD_LEN] = &*buf.cast();
        match decode_event(bytes) {
            Ok(ev) => {
                out.write(from_event(&ev));
                LwStatus::Ok
            }
            Err(e) => fail(LwStatus::Decode, e.to_string()),
        }
    })
}

/// Loads a checkpoint directory into `*out`.
///
/// # Safety
/// `dir` must be a NUL-terminated path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lw_model_load(dir: *const c_char, out: *mut *mut LwModel) -> LwStatus {
    guard(|| {
        if dir.is_null() || out.is_null() {
            return fail(LwStatus::NullPointer, "null path or output");
        }
        out.write(ptr::null_mut());
        let Ok(path) = CStr::from_ptr(dir).to_str() else {
            return fail(LwStatus::InvalidArgument, "path is not UTF-8");
        };
        match load_checkpoint(path) {
            Ok(ckpt) => {
                out.write(Box::into_raw(Box::new(LwModel(ckpt))));
                LwStatus::Ok
            }
            Err(e) => fail(LwStatus::Io, e.to_string()),
        }
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from [`lw_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lw_model_free(model: *mut LwModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Embedding length, or 0 for a null model.
///
/// # Safety
/// `model` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn lw_model_embed_dim(model: *const LwModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.params.config.embed_dim)
}

/// Number of output classes (2 or 3), or 0 for a null model.
///
/// # Safety
/// `model` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn lw_model_classes(model: *const LwModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.params.config.classes)
}

/// Frames per window the model was trained on, or 0 for a null model.
///
/// # Safety
/// `model` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn lw_model_window(model: *const LwModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.window)
}

/// Scores one window of `n` consecutive snapshots, oldest first. Writes the
/// final-timestep class probabilities to `probs` and the unit-norm embedding
/// to `embedding`. For two-class models, class 0 is bid-side and class 1
/// ask-side spoofing; for three-class models, classes are neutral, bid, ask.
///
/// # Safety
/// `frames` must hold `n` snapshots; `probs` and `embedding` must hold
/// `probs_len` and `embedding_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lw_model_infer(
    model: *const LwModel,
    frames: *const LwSnapshot,
    n: usize,
    probs: *mut f64,
    probs_len: usize,
    embedding: *mut f64,
    embedding_len: usize,
) -> LwStatus {
    guard(|| {
        let Some(model) = model.as_ref() else {
            return fail(LwStatus::NullPointer, "null model");
        };
        if frames.is_null() || probs.is_null() || embedding.is_null() {
            return fail(LwStatus::NullPointer, "null frames or outputs");
        }
        let ckpt = &model.0;
        let cfg = &ckpt.params.config;
        if n == 0 {
            return fail(LwStatus::InvalidArgument, "empty window");
        }
        if probs_len < cfg.classes || embedding_len < cfg.embed_dim {
            return fail(LwStatus::BufferTooSmall, format!("need {} probabilities and {} embedding values", cfg.classes, cfg.embed_dim));
        }
        let snaps = std::slice::from_raw_parts(frames, n);
        let frames: Vec<Frame> = snaps
            .iter()
            .map(|s| frame_from_snapshot(&Snapshot { timestamp: s.timestamp, qty: s.qty, price: s.price }))
            .collect();
        let x = match ckpt.norm.normalize_frames(&frames) {
            Ok(x) => x,
            Err(e) => return fail(LwStatus::InvalidArgument, e.to_string()),
        };
        let inf = match infer_batch(&ckpt.params, &x, n) {
            Ok(inf) => inf,
            Err(e) => return fail(LwStatus::Model, e.to_string()),
        };
        let e = match unit(inf.embedding.row(0).to_vec()) {
            Ok(e) => e,
            Err(e) => return fail(LwStatus::Model, e.to_string()),
        };
        ptr::copy_nonoverlapping(inf.probs.row(0).to_vec().as_ptr(), probs, cfg.classes);
        ptr::copy_nonoverlapping(e.as_ptr(), embedding, cfg.embed_dim);
        LwStatus::Ok
    })
}
