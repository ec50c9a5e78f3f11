//! Buffer messages and the metrics derived from them.
//!
//! A [`BufferMessage`] is a peer's offset (the chunk at its buffer head) plus a
//! presence bitmap where bit `i` stands for chunk `offset + i`. The bitmap
//! always ends on a stored chunk, so its last position is the peer's scope.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default hard cap on bitmap positions.
pub const DEFAULT_MAX_WIDTH: usize = 4096;

/// Sequence number of a chunk in the stream.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ChunkId(pub u64);

impl ChunkId {
    pub const fn new(v: u64) -> Self {
        ChunkId(v)
    }

    pub const fn get(self) -> u64 {
        self.0
    }

    /// The chunk `n` positions later.
    pub const fn plus(self, n: u64) -> Self {
        ChunkId(self.0 + n)
    }

    /// Signed distance `self - other`.
    pub fn diff(self, other: ChunkId) -> i64 {
        self.0 as i64 - other.0 as i64
    }
}

impl fmt::Display for ChunkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<u64> for ChunkId {
    fn from(v: u64) -> Self {
        ChunkId(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BufferError {
    #[error("chunk {chunk} is below the buffer head {offset}")]
    BelowOffset { chunk: ChunkId, offset: ChunkId },
    #[error("chunk {chunk} needs {needed} bitmap positions, cap is {max}")]
    TooWide {
        chunk: ChunkId,
        needed: usize,
        max: usize,
    },
    #[error("bitmap must end with a stored chunk")]
    TrailingZero,
    #[error("service head {service} is below the buffer head {offset}")]
    InconsistentTrace { service: ChunkId, offset: ChunkId },
}

/// Width, fill and playable video of one buffer message, in chunks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BufferMetrics {
    /// `scope - offset`; zero for an empty buffer.
    pub width: u64,
    /// Number of stored chunks.
    pub fill: u64,
    /// Length of the stored run starting at the offset.
    pub playable: u64,
}

/// Progress lags of a peer against the service curve, in chunks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LagSet {
    pub offset_lag: i64,
    pub scope_lag: i64,
    pub download_lag: i64,
    pub playable_lag: i64,
}

/// A peer's buffer head plus its chunk presence bitmap.
///
/// Fill and playable counters are maintained incrementally; [`metrics`]
/// re-derives them from the bitmap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BufferMessage {
    offset: ChunkId,
    bits: Vec<bool>,
    fill: usize,
    playable: usize,
    max_width: usize,
}

impl BufferMessage {
    /// An empty buffer whose head is `offset`.
    pub fn empty(offset: ChunkId) -> Self {
        Self::with_max_width(offset, DEFAULT_MAX_WIDTH)
    }

    pub fn with_max_width(offset: ChunkId, max_width: usize) -> Self {
        BufferMessage {
            offset,
            bits: Vec::new(),
            fill: 0,
            playable: 0,
            max_width,
        }
    }

    /// Builds a message from an explicit bitmap.
    pub fn from_bits(offset: ChunkId, bits: Vec<bool>) -> Result<Self, BufferError> {
        Self::from_bits_capped(offset, bits, DEFAULT_MAX_WIDTH)
    }

    pub fn from_bits_capped(
        offset: ChunkId,
        bits: Vec<bool>,
        max_width: usize,
    ) -> Result<Self, BufferError> {
        if bits.last() == Some(&false) {
            return Err(BufferError::TrailingZero);
        }
        if bits.len() > max_width {
            return Err(BufferError::TooWide {
                chunk: offset.plus(bits.len() as u64 - 1),
                needed: bits.len(),
                max: max_width,
            });
        }
        let m = metrics_of(&bits);
        Ok(BufferMessage {
            offset,
            fill: m.fill as usize,
            playable: m.playable as usize,
            bits,
            max_width,
        })
    }

    /// A buffer holding every chunk in `first..=last`.
    pub fn contiguous(
        first: ChunkId,
        last: ChunkId,
        max_width: usize,
    ) -> Result<Self, BufferError> {
        let mut bm = Self::with_max_width(first, max_width);
        if last >= first {
            let n = (last.0 - first.0 + 1) as usize;
            if n > max_width {
                return Err(BufferError::TooWide {
                    chunk: last,
                    needed: n,
                    max: max_width,
                });
            }
            bm.bits = vec![true; n];
            bm.fill = n;
            bm.playable = n;
        }
        Ok(bm)
    }

    pub fn offset(&self) -> ChunkId {
        self.offset
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// `|BM|`, the number of bitmap positions.
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn max_width(&self) -> usize {
        self.max_width
    }

    /// Highest stored chunk, if any.
    pub fn scope(&self) -> Option<ChunkId> {
        if self.bits.is_empty() {
            None
        } else {
            Some(self.offset.plus(self.bits.len() as u64 - 1))
        }
    }

    pub fn has(&self, id: ChunkId) -> bool {
        if id < self.offset {
            return false;
        }
        let idx = (id.0 - self.offset.0) as usize;
        self.bits.get(idx).copied().unwrap_or(false)
    }

    pub fn fill(&self) -> u64 {
        self.fill as u64
    }

    pub fn playable(&self) -> u64 {
        self.playable as u64
    }

    pub fn width(&self) -> u64 {
        self.bits.len().saturating_sub(1) as u64
    }

    /// Counters as maintained by `write`/`dec`.
    pub fn cached_metrics(&self) -> BufferMetrics {
        BufferMetrics {
            width: self.width(),
            fill: self.fill as u64,
            playable: self.playable as u64,
        }
    }

    /// `u_p = f_p + U_p`.
    pub fn download_head(&self) -> ChunkId {
        self.offset.plus(self.fill as u64)
    }

    /// `v_p = f_p + V_p`.
    pub fn playable_head(&self) -> ChunkId {
        self.offset.plus(self.playable as u64)
    }

    /// Marks chunk `x` as stored, expanding the bitmap when `x` lies past
    /// its end. Writing a stored chunk is a no-op.
    pub fn write(&mut self, x: ChunkId) -> Result<(), BufferError> {
        if x < self.offset {
            return Err(BufferError::BelowOffset {
                chunk: x,
                offset: self.offset,
            });
        }
        let idx = (x.0 - self.offset.0) as usize;
        if idx >= self.max_width {
            return Err(BufferError::TooWide {
                chunk: x,
                needed: idx + 1,
                max: self.max_width,
            });
        }
        if idx >= self.bits.len() {
            self.bits.resize(idx + 1, false);
        } else if self.bits[idx] {
            return Ok(());
        }
        self.bits[idx] = true;
        self.fill += 1;
        if idx == self.playable {
            while self.playable < self.bits.len() && self.bits[self.playable] {
                self.playable += 1;
            }
        }
        Ok(())
    }

    /// Value form of [`write`](Self::write).
    pub fn with_chunk(mut self, x: ChunkId) -> Result<Self, BufferError> {
        self.write(x)?;
        Ok(self)
    }

    /// Drops the head chunk and advances the offset by one. Returns whether
    /// the dropped position held a chunk.
    pub fn dec(&mut self) -> bool {
        self.offset = self.offset.plus(1);
        if self.bits.is_empty() {
            return false;
        }
        let head = self.bits.remove(0);
        if head {
            self.fill -= 1;
            self.playable -= 1;
        } else {
            // playable was 0; the new head may start a stored run
            self.playable = self.bits.iter().take_while(|b| **b).count();
        }
        head
    }

    /// Drops head chunks until the offset reaches `target`, returning the
    /// number of dropped positions that were not stored.
    pub fn advance_to(&mut self, target: ChunkId) -> u64 {
        let mut holes = 0;
        while self.offset < target {
            if self.bits.is_empty() {
                holes += target.0 - self.offset.0;
                self.offset = target;
                break;
            }
            if !self.dec() {
                holes += 1;
            }
        }
        holes
    }
}

fn metrics_of(bits: &[bool]) -> BufferMetrics {
    let fill = bits.iter().filter(|b| **b).count() as u64;
    let playable = bits.iter().take_while(|b| **b).count() as u64;
    let width = match bits.iter().rposition(|b| *b) {
        Some(i) => i as u64,
        None => 0,
    };
    BufferMetrics {
        width,
        fill,
        playable,
    }
}

/// Re-derives width, fill and playable video from the bitmap alone.
pub fn metrics(bm: &BufferMessage) -> BufferMetrics {
    metrics_of(&bm.bits)
}

/// Lags of `bm` against service head `s`; `downloaded_head` is `u_p`.
pub fn lags(
    bm: &BufferMessage,
    s: ChunkId,
    downloaded_head: ChunkId,
) -> Result<LagSet, BufferError> {
    if s < bm.offset {
        return Err(BufferError::InconsistentTrace {
            service: s,
            offset: bm.offset,
        });
    }
    let f = bm.offset;
    let scope = bm.scope().unwrap_or(f);
    Ok(LagSet {
        offset_lag: s.diff(f),
        scope_lag: s.diff(scope),
        download_lag: s.diff(downloaded_head),
        playable_lag: s.diff(bm.playable_head()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bm(offset: u64, bits: &[u8]) -> BufferMessage {
        BufferMessage::from_bits(ChunkId(offset), bits.iter().map(|b| *b == 1).collect()).unwrap()
    }

    #[test]
    fn metrics_examples() {
        let m = metrics(&bm(0, &[1, 1, 1, 0, 1]));
        assert_eq!((m.playable, m.fill, m.width), (3, 4, 4));
        let m = metrics(&BufferMessage::empty(ChunkId(7)));
        assert_eq!((m.playable, m.fill, m.width), (0, 0, 0));
        let m = metrics(&bm(0, &[0, 1, 1]));
        assert_eq!((m.playable, m.fill, m.width), (0, 2, 2));
    }

    #[test]
    fn write_expands_and_is_idempotent() {
        let b = bm(100, &[1]).with_chunk(ChunkId(105)).unwrap();
        assert_eq!(b, bm(100, &[1, 0, 0, 0, 0, 1]));
        let again = b.clone().with_chunk(ChunkId(105)).unwrap();
        assert_eq!(b, again);
    }

    #[test]
    fn write_below_head_fails() {
        let mut b = bm(100, &[1]);
        assert_eq!(
            b.write(ChunkId(99)),
            Err(BufferError::BelowOffset {
                chunk: ChunkId(99),
                offset: ChunkId(100)
            })
        );
    }

    #[test]
    fn write_past_cap_fails() {
        let mut b = BufferMessage::with_max_width(ChunkId(0), 8);
        assert!(b.write(ChunkId(7)).is_ok());
        assert!(matches!(
            b.write(ChunkId(8)),
            Err(BufferError::TooWide { .. })
        ));
    }

    #[test]
    fn trailing_zero_rejected() {
        assert_eq!(
            BufferMessage::from_bits(ChunkId(0), vec![true, false]),
            Err(BufferError::TrailingZero)
        );
    }

    #[test]
    fn dec_examples() {
        let mut b = bm(100, &[1, 1, 0, 1]);
        b.dec();
        assert_eq!(b, bm(101, &[1, 0, 1]));
        assert_eq!(b.playable(), 1);

        let mut b = bm(100, &[1, 0, 1]);
        b.dec();
        assert_eq!(b.offset(), ChunkId(101));
        assert_eq!(b.bits(), &[false, true]);
        assert_eq!(b.playable(), 0);

        let mut b = BufferMessage::empty(ChunkId(5));
        b.dec();
        assert_eq!(b.offset(), ChunkId(6));
        assert!(b.is_empty());
    }

    #[test]
    fn dec_exposes_stored_run() {
        let mut b = bm(0, &[0, 1, 1, 1]);
        assert!(!b.dec());
        assert_eq!(b.playable(), 3);
    }

    #[test]
    fn lag_examples() {
        // offset 790, 190 contiguous chunks then 10 more after a hole
        let mut bits = vec![true; 190];
        bits.push(false);
        bits.extend(std::iter::repeat(true).take(10));
        let b = BufferMessage::from_bits(ChunkId(790), bits).unwrap();
        assert_eq!((b.fill(), b.playable()), (200, 190));
        let l = lags(&b, ChunkId(1000), b.download_head()).unwrap();
        assert_eq!(l.offset_lag, 210);
        assert_eq!(l.download_lag, 10);
        assert_eq!(l.playable_lag, 20);

        let scope = b.scope().unwrap();
        assert_eq!(lags(&b, scope, b.download_head()).unwrap().scope_lag, 0);

        let e = BufferMessage::empty(ChunkId(40));
        assert_eq!(
            lags(&e, ChunkId(40), e.download_head()).unwrap(),
            LagSet::default()
        );
        assert!(lags(&e, ChunkId(39), e.download_head()).is_err());
    }

    #[derive(Debug, Clone)]
    enum Op {
        Write(u64),
        Dec,
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![3 => (0u64..96).prop_map(Op::Write), 1 => Just(Op::Dec)]
    }

    proptest! {
        #[test]
        fn incremental_counters_match_rederived(start in 0u64..50, ops in prop::collection::vec(op(), 0..200)) {
            let mut b = BufferMessage::with_max_width(ChunkId(start), 128);
            for o in ops {
                let before = b.cached_metrics();
                let off = b.offset();
                match o {
                    Op::Write(d) => {
                        let x = off.plus(d);
                        b.write(x).unwrap();
                        let after = b.cached_metrics();
                        prop_assert!(after.fill >= before.fill);
                        prop_assert!(after.playable >= before.playable);
                        prop_assert!(after.width >= before.width);
                        prop_assert!(b.has(x));
                    }
                    Op::Dec => {
                        b.dec();
                        prop_assert_eq!(b.offset(), off.plus(1));
                        prop_assert!(b.fill() <= before.fill);
                    }
                }
                let m = metrics(&b);
                prop_assert_eq!(m, b.cached_metrics());
                prop_assert!(m.playable <= m.fill);
                prop_assert!(m.fill <= m.width + 1);
                prop_assert_eq!(m.playable >= 1, b.bits().first() == Some(&true));
                prop_assert!(b.bits().last() != Some(&false));
            }
        }
    }
}
