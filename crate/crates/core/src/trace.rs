//! Time-stamped buffer-message traces and their JSONL form.
//!
//! A trace line is one JSON object:
//! `{"t":5.0,"peer":"host","offset":3600,"bits":"1x200,0x3,1x7", ...}`.
//! Only `t`, `peer`, `offset` and `bits` are required; `fill`, `playable` and
//! `width` are checked against the bitmap when present, `downloaded` and
//! `service_head` are optional.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::buffer::{BufferError, BufferMessage, ChunkId, DEFAULT_MAX_WIDTH};
use crate::rle::Rle;
use crate::scheduler::Fetch;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {what}")]
    Invalid { line: usize, what: String },
    #[error("peer {peer}: {what} at t={t}")]
    Order {
        peer: String,
        t: f64,
        what: &'static str,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn peer_id<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        S(String),
        N(u64),
    }
    Ok(match Id::deserialize(d)? {
        Id::S(s) => s,
        Id::N(n) => n.to_string(),
    })
}

/// A bare buffer message with its time stamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferRecord {
    pub t: f64,
    #[serde(deserialize_with = "peer_id")]
    pub peer: String,
    pub offset: ChunkId,
    pub bits: Rle,
}

/// One buffer report of a peer.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgressSample {
    pub t: f64,
    pub offset: ChunkId,
    pub bits: Rle,
    pub fill: u64,
    pub playable: u64,
    pub width: u64,
    /// Cumulative chunks fetched since joining.
    pub downloaded: Option<u64>,
    /// Service head `s` at report time, when the reporter knows it.
    pub service_head: Option<ChunkId>,
}

impl ProgressSample {
    pub fn from_buffer(t: f64, bm: &BufferMessage) -> Self {
        ProgressSample {
            t,
            offset: bm.offset(),
            bits: Rle::from_bits(bm.bits()),
            fill: bm.fill(),
            playable: bm.playable(),
            width: bm.width(),
            downloaded: None,
            service_head: None,
        }
    }

    /// Sample of a peer holding exactly `[offset, offset + len)`.
    pub fn contiguous(t: f64, offset: ChunkId, len: u64) -> Self {
        ProgressSample {
            t,
            offset,
            bits: Rle::ones(len),
            fill: len,
            playable: len,
            width: len.saturating_sub(1),
            downloaded: None,
            service_head: None,
        }
    }

    /// Offset `f`.
    pub fn f(&self) -> f64 {
        self.offset.0 as f64
    }

    /// Download head `u = f + U`.
    pub fn u(&self) -> f64 {
        (self.offset.0 + self.fill) as f64
    }

    /// Playable head `v = f + V`.
    pub fn v(&self) -> f64 {
        (self.offset.0 + self.playable) as f64
    }

    /// Scope `xi = f + W`.
    pub fn xi(&self) -> f64 {
        (self.offset.0 + self.width) as f64
    }

    pub fn buffer(&self) -> Result<BufferMessage, BufferError> {
        BufferMessage::from_bits_capped(self.offset, self.bits.to_bits(), usize::MAX)
    }
}

#[derive(Serialize, Deserialize)]
struct SampleLine {
    t: f64,
    #[serde(deserialize_with = "peer_id")]
    peer: String,
    offset: ChunkId,
    bits: Rle,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fill: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    playable: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    width: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    downloaded: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    service_head: Option<ChunkId>,
}

/// One peer's samples in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    peer: String,
    samples: Vec<ProgressSample>,
}

impl Trace {
    pub fn new(peer: impl Into<String>) -> Self {
        Trace {
            peer: peer.into(),
            samples: Vec::new(),
        }
    }

    pub fn from_samples(
        peer: impl Into<String>,
        samples: Vec<ProgressSample>,
    ) -> Result<Self, TraceError> {
        let mut tr = Trace::new(peer);
        for s in samples {
            tr.push(s)?;
        }
        Ok(tr)
    }

    /// Appends a sample, rejecting time reversal, offset regression and
    /// shrinking download counts.
    pub fn push(&mut self, s: ProgressSample) -> Result<(), TraceError> {
        if let Some(prev) = self.samples.last() {
            let err = |what| TraceError::Order {
                peer: self.peer.clone(),
                t: s.t,
                what,
            };
            if !(s.t > prev.t) {
                return Err(err("non-increasing time"));
            }
            if s.offset < prev.offset {
                return Err(err("offset moved backwards"));
            }
            if let (Some(a), Some(b)) = (prev.downloaded, s.downloaded) {
                if b < a {
                    return Err(err("downloaded count decreased"));
                }
            }
        }
        self.samples.push(s);
        Ok(())
    }

    pub fn peer(&self) -> &str {
        &self.peer
    }

    pub fn samples(&self) -> &[ProgressSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Copy restricted to samples with `t <= t_max`.
    pub fn truncated(&self, t_max: f64) -> Trace {
        Trace {
            peer: self.peer.clone(),
            samples: self
                .samples
                .iter()
                .filter(|s| s.t <= t_max)
                .cloned()
                .collect(),
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), TraceError> {
        for s in &self.samples {
            let line = SampleLine {
                t: s.t,
                peer: self.peer.clone(),
                offset: s.offset,
                bits: s.bits.clone(),
                fill: Some(s.fill),
                playable: Some(s.playable),
                width: Some(s.width),
                downloaded: s.downloaded,
                service_head: s.service_head,
            };
            serde_json::to_writer(&mut w, &line).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }
}

/// Parses JSONL sample lines, grouping them by peer (ordered by peer id).
/// Blank lines are skipped.
pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<Trace>, TraceError> {
    let mut by_peer: BTreeMap<String, Trace> = BTreeMap::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: SampleLine =
            serde_json::from_str(&line).map_err(|source| TraceError::Json { line: n, source })?;
        let bits = raw.bits.to_bits();
        if bits.last() == Some(&false) {
            return Err(TraceError::Invalid {
                line: n,
                what: "bitmap ends with a missing chunk".into(),
            });
        }
        let sample = ProgressSample {
            t: raw.t,
            offset: raw.offset,
            fill: raw.bits.fill(),
            playable: raw.bits.playable(),
            width: raw.bits.width(),
            bits: raw.bits,
            downloaded: raw.downloaded,
            service_head: raw.service_head,
        };
        for (name, given, derived) in [
            ("fill", raw.fill, sample.fill),
            ("playable", raw.playable, sample.playable),
            ("width", raw.width, sample.width),
        ] {
            if given.is_some_and(|g| g != derived) {
                return Err(TraceError::Invalid {
                    line: n,
                    what: format!(
                        "{name} {} disagrees with bitmap ({derived})",
                        given.unwrap()
                    ),
                });
            }
        }
        if !raw.t.is_finite() {
            return Err(TraceError::Invalid {
                line: n,
                what: "non-finite time".into(),
            });
        }
        by_peer
            .entry(raw.peer.clone())
            .or_insert_with(|| Trace::new(raw.peer))
            .push(sample)?;
    }
    Ok(by_peer.into_values().collect())
}

/// Parses a whole JSONL document.
pub fn parse_jsonl(text: &str) -> Result<Vec<Trace>, TraceError> {
    read_jsonl(text.as_bytes())
}

/// A logged scheduler request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub t: f64,
    #[serde(flatten)]
    pub fetch: Fetch,
}

/// Decodes a bitmap record into a buffer message with the default cap.
pub fn record_buffer(rec: &BufferRecord) -> Result<BufferMessage, BufferError> {
    BufferMessage::from_bits_capped(rec.offset, rec.bits.to_bits(), DEFAULT_MAX_WIDTH)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: f64, offset: u64, bits: &str) -> ProgressSample {
        let bits: Rle = bits.parse().unwrap();
        ProgressSample {
            t,
            offset: ChunkId(offset),
            fill: bits.fill(),
            playable: bits.playable(),
            width: bits.width(),
            bits,
            downloaded: Some(0),
            service_head: Some(ChunkId(5000)),
        }
    }

    #[test]
    fn record_round_trip_is_exact() {
        let line = r#"{"t":5.5,"peer":"host","offset":3600,"bits":"1x200,0x3,1x7"}"#;
        let rec: BufferRecord = serde_json::from_str(line).unwrap();
        assert_eq!(serde_json::to_string(&rec).unwrap(), line);
        let bm = record_buffer(&rec).unwrap();
        assert_eq!((bm.fill(), bm.playable(), bm.width()), (207, 200, 209));
    }

    #[test]
    fn numeric_peer_ids_are_accepted() {
        let rec: BufferRecord =
            serde_json::from_str(r#"{"t":0,"peer":17,"offset":0,"bits":""}"#).unwrap();
        assert_eq!(rec.peer, "17");
    }

    #[test]
    fn jsonl_groups_by_peer() {
        let mut a = Trace::new("a");
        a.push(sample(0.0, 10, "1x3")).unwrap();
        a.push(sample(5.0, 11, "1x2,0x1,1x1")).unwrap();
        let mut b = Trace::new("b");
        b.push(sample(0.0, 7, "")).unwrap();
        let text = format!("{}\n{}", a.to_jsonl(), b.to_jsonl());
        let back = parse_jsonl(&text).unwrap();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn rejects_inconsistent_lines() {
        let bad_fill = r#"{"t":0,"peer":"h","offset":0,"bits":"1x3","fill":2}"#;
        assert!(matches!(
            parse_jsonl(bad_fill),
            Err(TraceError::Invalid { .. })
        ));
        let trailing = r#"{"t":0,"peer":"h","offset":0,"bits":"1x3,0x2"}"#;
        assert!(matches!(
            parse_jsonl(trailing),
            Err(TraceError::Invalid { .. })
        ));
        let backwards = "{\"t\":1,\"peer\":\"h\",\"offset\":5,\"bits\":\"\"}\n{\"t\":2,\"peer\":\"h\",\"offset\":4,\"bits\":\"\"}";
        assert!(matches!(
            parse_jsonl(backwards),
            Err(TraceError::Order { .. })
        ));
        assert!(matches!(
            parse_jsonl("{"),
            Err(TraceError::Json { line: 1, .. })
        ));
    }

    #[test]
    fn decision_record_layout() {
        let d = DecisionRecord {
            t: 1.5,
            fetch: Fetch::Tracker(ChunkId(2000)),
        };
        let s = serde_json::to_string(&d).unwrap();
        assert_eq!(s, r#"{"t":1.5,"decision":"tracker","chunk":2000}"#);
        assert_eq!(serde_json::from_str::<DecisionRecord>(&s).unwrap(), d);
    }
}
