//! Threshold Bipolar chunk fetching.
//!
//! While the playable video is at or below the threshold `C_sch` the host
//! fetches the lowest chunk it is missing that some neighbor advertises.
//! Above the threshold it fetches the highest such chunk and, in parallel,
//! the tracker's newest chunk when that lies beyond its own bitmap.
//!
//! The scheduler is a pure function of the host state and a neighbor
//! snapshot; request pacing, rejection and latency belong to the simulator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::buffer::{BufferError, BufferMessage, ChunkId};

/// Design parameters of the protocol, in normalized (seconds of video) units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TbParams {
    /// Turnover threshold factor, `C_sch / r`.
    pub beta: f64,
    /// Offset setup time in seconds.
    pub tau_off: f64,
    /// Initial offset headroom in seconds; `None` means `w_star / 3`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    /// Saturated buffer width in seconds of content.
    pub w_star: f64,
}

impl Default for TbParams {
    fn default() -> Self {
        TbParams {
            beta: 90.0,
            tau_off: 70.0,
            theta: None,
            w_star: 210.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("{field} must be {expect} (got {value})")]
    OutOfRange {
        field: &'static str,
        expect: &'static str,
        value: f64,
    },
}

impl TbParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        let check = |field, ok: bool, expect, value| {
            if ok {
                Ok(())
            } else {
                Err(ParamError::OutOfRange {
                    field,
                    expect,
                    value,
                })
            }
        };
        check(
            "beta",
            self.beta > 0.0 && self.beta.is_finite(),
            "positive",
            self.beta,
        )?;
        check(
            "tau_off",
            self.tau_off > 0.0 && self.tau_off.is_finite(),
            "positive",
            self.tau_off,
        )?;
        check(
            "w_star",
            self.w_star > self.beta && self.w_star.is_finite(),
            "greater than beta",
            self.w_star,
        )?;
        if let Some(theta) = self.theta {
            check(
                "theta",
                (0.0..self.w_star).contains(&theta),
                "in [0, w_star)",
                theta,
            )?;
        }
        Ok(())
    }

    /// Initial offset headroom in seconds.
    pub fn theta_secs(&self) -> f64 {
        self.theta.unwrap_or(self.w_star / 3.0)
    }

    /// `C_sch = round(beta * r)`, at least one chunk.
    pub fn threshold_chunks(&self, r: f64) -> u64 {
        ((self.beta * r).round() as u64).max(1)
    }
}

/// Which loop of the protocol a state is in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Playable video at or below the threshold: head-first.
    Low,
    /// Playable video above the threshold: tail-first plus tracker.
    High,
}

/// A joining peer running the protocol.
#[derive(Debug, Clone)]
pub struct HostState {
    bm: BufferMessage,
    threshold_chunks: u64,
    draining: bool,
    up_time: f64,
    tau_off: f64,
    theta: ChunkId,
    downloaded: u64,
    duplicates: u64,
    wasted: u64,
    misses: u64,
    first_miss: Option<ChunkId>,
}

/// What happened to a completed fetch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FetchOutcome {
    Stored,
    /// Already held; state unchanged.
    Duplicate,
    /// Arrived after its position was drained.
    Late,
}

impl HostState {
    pub fn new(
        theta: ChunkId,
        threshold_chunks: u64,
        up_time: f64,
        tau_off: f64,
        max_width: usize,
    ) -> Self {
        HostState {
            bm: BufferMessage::with_max_width(theta, max_width),
            threshold_chunks: threshold_chunks.max(1),
            draining: false,
            up_time,
            tau_off,
            theta,
            downloaded: 0,
            duplicates: 0,
            wasted: 0,
            misses: 0,
            first_miss: None,
        }
    }

    /// Host with an explicit buffer, mostly useful for tests.
    pub fn with_buffer(bm: BufferMessage, threshold_chunks: u64) -> Self {
        let theta = bm.offset();
        let mut h = HostState::new(theta, threshold_chunks, 0.0, f64::INFINITY, bm.max_width());
        h.downloaded = bm.fill();
        h.bm = bm;
        h
    }

    pub fn bm(&self) -> &BufferMessage {
        &self.bm
    }

    pub fn offset(&self) -> ChunkId {
        self.bm.offset()
    }

    pub fn playable(&self) -> u64 {
        self.bm.playable()
    }

    pub fn threshold_chunks(&self) -> u64 {
        self.threshold_chunks
    }

    pub fn draining(&self) -> bool {
        self.draining
    }

    pub fn up_time(&self) -> f64 {
        self.up_time
    }

    pub fn theta(&self) -> ChunkId {
        self.theta
    }

    /// Chunks stored so far (duplicates and late arrivals excluded).
    pub fn downloaded(&self) -> u64 {
        self.downloaded
    }

    pub fn duplicates(&self) -> u64 {
        self.duplicates
    }

    pub fn wasted(&self) -> u64 {
        self.wasted
    }

    /// Head positions drained while missing.
    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn first_miss(&self) -> Option<ChunkId> {
        self.first_miss
    }

    pub fn mode(&self) -> Mode {
        if self.playable() <= self.threshold_chunks {
            Mode::Low
        } else {
            Mode::High
        }
    }

    /// Applies a completed fetch of `id`.
    pub fn on_fetch_complete(&mut self, id: ChunkId) -> Result<FetchOutcome, BufferError> {
        if id < self.bm.offset() {
            self.wasted += 1;
            return Ok(FetchOutcome::Late);
        }
        if self.bm.has(id) {
            self.duplicates += 1;
            return Ok(FetchOutcome::Duplicate);
        }
        self.bm.write(id)?;
        self.downloaded += 1;
        Ok(FetchOutcome::Stored)
    }

    /// Drains the buffer at rate `r` once the offset setup time has passed:
    /// the offset follows `theta + round(r * (now - up_time - tau_off))`.
    /// Returns the number of playback misses this call added.
    pub fn drain_tick(&mut self, now: f64, r: f64) -> u64 {
        let since = now - self.up_time - self.tau_off;
        if since < 0.0 {
            return 0;
        }
        self.draining = true;
        let target = self.theta.plus((r * since).round() as u64);
        let mut added = 0;
        while self.bm.offset() < target {
            let head = self.bm.offset();
            if !self.bm.dec() {
                added += 1;
                self.first_miss.get_or_insert(head);
            }
        }
        self.misses += added;
        added
    }
}

/// Chunks the host lacks that at least one neighbor advertises, in
/// ascending order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CandidateSet {
    ids: Vec<ChunkId>,
}

impl CandidateSet {
    pub fn from_ids<I: IntoIterator<Item = ChunkId>>(ids: I) -> Self {
        let mut ids: Vec<ChunkId> = ids.into_iter().collect();
        ids.sort_unstable();
        ids.dedup();
        CandidateSet { ids }
    }

    pub fn min(&self) -> Option<ChunkId> {
        self.ids.first().copied()
    }

    pub fn max(&self) -> Option<ChunkId> {
        self.ids.last().copied()
    }

    pub fn contains(&self, id: ChunkId) -> bool {
        self.ids.binary_search(&id).is_ok()
    }

    /// Removes `id`, returning whether it was present.
    pub fn remove(&mut self, id: ChunkId) -> bool {
        match self.ids.binary_search(&id) {
            Ok(i) => {
                self.ids.remove(i);
                true
            }
            Err(_) => false,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ChunkId> + '_ {
        self.ids.iter().copied()
    }
}

/// Builds the availability set `X_h` in absolute chunk IDs.
pub fn candidate_set<'a, I>(host: &HostState, neighbors: I) -> CandidateSet
where
    I: IntoIterator<Item = &'a BufferMessage>,
{
    let neighbors: Vec<&BufferMessage> = neighbors.into_iter().collect();
    let lo = host.offset();
    let Some(hi) = neighbors.iter().filter_map(|n| n.scope()).max() else {
        return CandidateSet::default();
    };
    let mut ids = Vec::new();
    let mut id = lo;
    while id <= hi {
        if !host.bm.has(id) && neighbors.iter().any(|n| n.has(id)) {
            ids.push(id);
        }
        id = id.plus(1);
    }
    CandidateSet { ids }
}

/// A single chunk request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "chunk", rename_all = "lowercase")]
pub enum Fetch {
    Low(ChunkId),
    High(ChunkId),
    Tracker(ChunkId),
}

impl Fetch {
    pub fn chunk(self) -> ChunkId {
        match self {
            Fetch::Low(c) | Fetch::High(c) | Fetch::Tracker(c) => c,
        }
    }
}

/// Output of one scheduler invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Idle,
    /// Head-first fetch of the lowest candidate.
    Low(ChunkId),
    /// Tail-first fetch of the highest candidate and/or the tracker head.
    /// At least one side is set.
    High {
        max: Option<ChunkId>,
        tracker: Option<ChunkId>,
    },
}

impl Decision {
    /// The requests this decision issues, in issue order.
    pub fn fetches(&self) -> impl Iterator<Item = Fetch> {
        let pair = match *self {
            Decision::Idle => [None, None],
            Decision::Low(id) => [Some(Fetch::Low(id)), None],
            Decision::High { max, tracker } => [max.map(Fetch::High), tracker.map(Fetch::Tracker)],
        };
        pair.into_iter().flatten()
    }

    pub fn mode(&self) -> Option<Mode> {
        match self {
            Decision::Idle => None,
            Decision::Low(_) => Some(Mode::Low),
            Decision::High { .. } => Some(Mode::High),
        }
    }
}

/// One scheduler step. `tracker_newest` is the newest chunk the tracker
/// reports; it is fetched in high mode when it lies beyond `f + |BM|`.
pub fn next_request(
    host: &HostState,
    candidates: &CandidateSet,
    tracker_newest: Option<ChunkId>,
) -> Decision {
    match host.mode() {
        // Every position in [f, f+V) is held, so the minimum candidate is
        // already at or past the playable frontier.
        Mode::Low => candidates.min().map_or(Decision::Idle, Decision::Low),
        Mode::High => {
            let max = candidates.max();
            let end = host.offset().plus(host.bm.len() as u64);
            let tracker = tracker_newest.filter(|s| *s > end && Some(*s) != max);
            if max.is_none() && tracker.is_none() {
                Decision::Idle
            } else {
                Decision::High { max, tracker }
            }
        }
    }
}
