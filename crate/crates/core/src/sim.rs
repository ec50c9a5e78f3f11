//! Slotted swarm simulator: a tracker injecting chunks at rate `r`, stable
//! peers holding a fixed window behind the service head, and one joining
//! host running the TB scheduler.
//!
//! The service head `s` is the injection frontier: chunks `< s` exist. Stable
//! peers hold `[s - W*, s - 1 - scope_lag]`, the tracker holds
//! `[s - W_tk, s - 1]`. The host joins at time 0 with offset
//! `s - W* + theta` and starts draining `tau_off` seconds later.
//!
//! Each slot: the tracker advances, the stable window follows, the host
//! spends its request budget on scheduler decisions, the host drains, and a
//! sample is taken every `report_interval`.

use std::collections::{BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analytic::{self, ModelParams, RateGroup};
use crate::buffer::ChunkId;
use crate::scheduler::{next_request, CandidateSet, Fetch, HostState, ParamError, TbParams};
use crate::trace::{DecisionRecord, ProgressSample, Trace};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid config field {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("stream too young to join: head {head} is below the saturated width {needed}")]
    JoinTooEarly { head: ChunkId, needed: u64 },
}

impl SimError {
    fn invalid(field: &str, reason: impl Into<String>) -> Self {
        SimError::Invalid {
            field: field.to_owned(),
            reason: reason.into(),
        }
    }

    /// Name of the offending config field, if any.
    pub fn field(&self) -> Option<&str> {
        match self {
            SimError::Invalid { field, .. } => Some(field),
            SimError::JoinTooEarly { .. } => Some("initial_head"),
        }
    }
}

impl From<ParamError> for SimError {
    fn from(e: ParamError) -> Self {
        let ParamError::OutOfRange { field, .. } = &e;
        SimError::invalid(&format!("tb.{field}"), e.to_string())
    }
}

/// Simulation scenario. Field names are the JSON config keys; missing keys
/// take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwarmConfig {
    /// Playback rate, chunks/s.
    pub r: f64,
    /// Host download rate as a multiple of `r`.
    pub gamma_p: f64,
    pub tb: TbParams,
    pub n_stable: usize,
    /// Chunks by which stable peers trail the newest chunk.
    pub scope_lag: u64,
    /// Probability a stable peer refuses a request.
    pub reject_prob: f64,
    pub report_interval: f64,
    pub slot: f64,
    pub duration: f64,
    pub seed: u64,
    /// Fetch latency, seconds; rounded to whole slots.
    pub rtt: f64,
    /// Delay before the host's first fetch, seconds.
    pub preroll: f64,
    /// Service head at time 0.
    pub initial_head: u64,
    pub max_width: usize,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        SwarmConfig {
            r: 10.0,
            gamma_p: 3.0,
            tb: TbParams::default(),
            n_stable: 4,
            scope_lag: 0,
            reject_prob: 0.0,
            report_interval: 5.0,
            slot: 0.1,
            duration: 300.0,
            seed: 1,
            rtt: 0.0,
            preroll: 0.0,
            initial_head: 10_000,
            max_width: crate::buffer::DEFAULT_MAX_WIDTH,
        }
    }
}

fn whole_slots(x: f64, slot: f64) -> Option<u64> {
    let n = (x / slot).round();
    ((x / slot - n).abs() < 1e-6).then_some(n as u64)
}

impl SwarmConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let finite = |field: &str, x: f64| {
            if x.is_finite() {
                Ok(())
            } else {
                Err(SimError::invalid(field, "must be finite"))
            }
        };
        finite("r", self.r)?;
        if self.r <= 0.0 {
            return Err(SimError::invalid(
                "r",
                format!("must be positive, got {}", self.r),
            ));
        }
        finite("gamma_p", self.gamma_p)?;
        if self.gamma_p < 0.0 {
            return Err(SimError::invalid("gamma_p", "must be non-negative"));
        }
        self.tb.validate()?;
        finite("slot", self.slot)?;
        if self.slot <= 0.0 {
            return Err(SimError::invalid("slot", "must be positive"));
        }
        finite("report_interval", self.report_interval)?;
        if self.report_interval < self.slot {
            return Err(SimError::invalid(
                "report_interval",
                "must be at least one slot",
            ));
        }
        if whole_slots(self.report_interval, self.slot).is_none() {
            return Err(SimError::invalid(
                "report_interval",
                "must be a whole number of slots",
            ));
        }
        finite("duration", self.duration)?;
        if self.duration < 0.0 {
            return Err(SimError::invalid("duration", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.reject_prob) {
            return Err(SimError::invalid("reject_prob", "must be in [0, 1)"));
        }
        finite("rtt", self.rtt)?;
        if self.rtt < 0.0 {
            return Err(SimError::invalid("rtt", "must be non-negative"));
        }
        finite("preroll", self.preroll)?;
        if self.preroll < 0.0 {
            return Err(SimError::invalid("preroll", "must be non-negative"));
        }
        let w = self.w_star_chunks();
        if self.initial_head < w {
            return Err(SimError::JoinTooEarly {
                head: ChunkId(self.initial_head),
                needed: w,
            });
        }
        if self.scope_lag >= w {
            return Err(SimError::invalid(
                "scope_lag",
                "must be below the saturated width",
            ));
        }
        let theta = (self.tb.theta_secs() * self.r).round() as u64;
        let setup = (self.tb.tau_off * self.r).round() as u64;
        let needed = (w + setup).saturating_sub(theta) as usize + 2;
        if self.max_width < needed {
            return Err(SimError::invalid(
                "max_width",
                format!("must be at least {needed} for this scenario"),
            ));
        }
        Ok(())
    }

    /// `W*` in chunks.
    pub fn w_star_chunks(&self) -> u64 {
        (self.tb.w_star * self.r).round() as u64
    }

    pub fn r_p(&self) -> f64 {
        self.gamma_p * self.r
    }

    /// The analytic model of this scenario in chunk units, origin at the
    /// stable peers' offset at time 0.
    pub fn model_params(&self) -> ModelParams {
        ModelParams {
            r: self.r,
            r_p: self.r_p(),
            c_sch: self.tb.threshold_chunks(self.r) as f64,
            tau_off: self.tb.tau_off,
            theta: (self.tb.theta_secs() * self.r).round(),
            w_star: self.w_star_chunks() as f64,
            scope_lag: self.scope_lag as f64,
        }
    }

    /// Hex SHA-256 of the config's JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// The tracker: owns the service head and a fixed-width window behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState {
    head: ChunkId,
    width: u64,
    carry: f64,
}

impl TrackerState {
    pub fn new(head: ChunkId, r: f64) -> Self {
        TrackerState {
            head,
            width: analytic::tracker_width(r),
            carry: 0.0,
        }
    }

    /// Service head `s`: one past the newest chunk.
    pub fn head(&self) -> ChunkId {
        self.head
    }

    pub fn width(&self) -> u64 {
        self.width
    }

    pub fn offset(&self) -> ChunkId {
        ChunkId(self.head.0.saturating_sub(self.width))
    }

    pub fn newest(&self) -> Option<ChunkId> {
        self.head.0.checked_sub(1).map(ChunkId)
    }

    pub fn holds(&self, id: ChunkId) -> bool {
        id >= self.offset() && id < self.head
    }

    /// Injects the chunks produced during one slot.
    pub fn advance(&mut self, r: f64, slot: f64) {
        let (n, carry) = host_budget(r, slot, self.carry);
        self.head = self.head.plus(n);
        self.carry = carry;
    }
}

/// Whole requests available in one slot at rate `r_p`, carrying the
/// fractional remainder.
pub fn host_budget(r_p: f64, slot: f64, carry: f64) -> (u64, f64) {
    let total = r_p * slot + carry;
    let n = (total + 1e-9).floor().max(0.0);
    (n as u64, (total - n).max(0.0))
}

/// Initial host offset: join `W*` behind the head with `theta` seconds of
/// headroom.
pub fn choose_initial_offset(
    tracker: &TrackerState,
    tb: &TbParams,
    r: f64,
) -> Result<ChunkId, SimError> {
    let w = (tb.w_star * r).round() as u64;
    let head = tracker.head();
    if head.0 < w {
        return Err(SimError::JoinTooEarly { head, needed: w });
    }
    let theta = (tb.theta_secs() * r).round() as u64;
    Ok(ChunkId(head.0 - w + theta))
}

/// Chunks in `[max(f, lo), hi]` the host lacks, excluding `skip`.
fn window_candidates(
    host: &HostState,
    lo: ChunkId,
    hi: ChunkId,
    skip: &BTreeSet<ChunkId>,
) -> CandidateSet {
    let start = lo.max(host.offset());
    if start > hi {
        return CandidateSet::default();
    }
    CandidateSet::from_ids(
        (start.0..=hi.0)
            .map(ChunkId)
            .filter(|id| !host.bm().has(*id) && !skip.contains(id)),
    )
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SimStats {
    pub requests: u64,
    pub rejected: u64,
    pub tracker_fetches: u64,
    pub stored: u64,
    pub duplicates: u64,
    pub wasted: u64,
    pub misses: u64,
    pub first_miss: Option<ChunkId>,
    /// Granted requests per stable peer.
    pub uploads: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub host: Trace,
    pub stable: Vec<Trace>,
    pub decisions: Vec<DecisionRecord>,
    pub stats: SimStats,
    /// Host offset at join.
    pub theta: ChunkId,
    /// Stable peers' offset at time 0; zero of the model's chunk axis.
    pub origin: ChunkId,
}

pub struct Simulation {
    cfg: SwarmConfig,
    rng: ChaCha8Rng,
    tick: u64,
    total_ticks: u64,
    report_ticks: u64,
    rtt_ticks: u64,
    start_tick: u64,
    tracker: TrackerState,
    host: HostState,
    carry: f64,
    pending: VecDeque<(u64, ChunkId)>,
    pending_ids: BTreeSet<ChunkId>,
    host_trace: Trace,
    stable_traces: Vec<Trace>,
    decisions: Vec<DecisionRecord>,
    stats: SimStats,
    theta: ChunkId,
    origin: ChunkId,
}

impl Simulation {
    pub fn new(cfg: SwarmConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let tracker = TrackerState::new(ChunkId(cfg.initial_head), cfg.r);
        let theta = choose_initial_offset(&tracker, &cfg.tb, cfg.r)?;
        let host = HostState::new(
            theta,
            cfg.tb.threshold_chunks(cfg.r),
            cfg.preroll,
            cfg.tb.tau_off,
            cfg.max_width,
        );
        let mut sim = Simulation {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            tick: 0,
            total_ticks: whole_slots(cfg.duration, cfg.slot)
                .unwrap_or_else(|| (cfg.duration / cfg.slot).round() as u64),
            report_ticks: whole_slots(cfg.report_interval, cfg.slot)
                .unwrap_or(1)
                .max(1),
            rtt_ticks: (cfg.rtt / cfg.slot).round() as u64,
            start_tick: (cfg.preroll / cfg.slot).round() as u64,
            origin: ChunkId(cfg.initial_head - cfg.w_star_chunks()),
            host_trace: Trace::new("host"),
            stable_traces: (0..cfg.n_stable)
                .map(|i| Trace::new(format!("stable-{i}")))
                .collect(),
            decisions: Vec::new(),
            stats: SimStats {
                uploads: vec![0; cfg.n_stable],
                ..SimStats::default()
            },
            pending: VecDeque::new(),
            pending_ids: BTreeSet::new(),
            carry: 0.0,
            tracker,
            host,
            theta,
            cfg,
        };
        sim.record();
        Ok(sim)
    }

    pub fn config(&self) -> &SwarmConfig {
        &self.cfg
    }

    pub fn tracker(&self) -> &TrackerState {
        &self.tracker
    }

    pub fn host(&self) -> &HostState {
        &self.host
    }

    pub fn now(&self) -> f64 {
        analytic::round9(self.tick as f64 * self.cfg.slot)
    }

    pub fn is_done(&self) -> bool {
        self.tick >= self.total_ticks
    }

    /// Chunks every stable peer holds, inclusive; `None` when there are no
    /// stable peers or the window is empty.
    pub fn stable_window(&self) -> Option<(ChunkId, ChunkId)> {
        if self.cfg.n_stable == 0 {
            return None;
        }
        let s = self.tracker.head().0;
        let lo = s.saturating_sub(self.cfg.w_star_chunks());
        let hi = s.checked_sub(1 + self.cfg.scope_lag)?;
        (hi >= lo).then_some((ChunkId(lo), ChunkId(hi)))
    }

    /// Advances one slot.
    pub fn step(&mut self) {
        self.tick += 1;
        let now = self.now();
        self.tracker.advance(self.cfg.r, self.cfg.slot);

        while let Some(&(due, id)) = self.pending.front() {
            if due > self.tick {
                break;
            }
            self.pending.pop_front();
            self.pending_ids.remove(&id);
            self.complete(id);
        }

        if self.tick > self.start_tick {
            self.fetch_slot(now);
        }

        let before = self.host.misses();
        self.host.drain_tick(now, self.cfg.r);
        self.stats.misses += self.host.misses() - before;
        self.stats.first_miss = self.host.first_miss();

        if self.tick % self.report_ticks == 0 {
            self.record();
        }
    }

    fn fetch_slot(&mut self, now: f64) {
        let (mut left, carry) = host_budget(self.cfg.r_p(), self.cfg.slot, self.carry);
        self.carry = carry;
        let window = self.stable_window();
        let mut cands = match window {
            Some((lo, hi)) => window_candidates(&self.host, lo, hi, &self.pending_ids),
            None => CandidateSet::default(),
        };
        while left > 0 {
            let newest = self
                .tracker
                .newest()
                .filter(|id| !self.pending_ids.contains(id));
            let decision = next_request(&self.host, &cands, newest);
            if decision.mode().is_none() {
                break;
            }
            for fetch in decision.fetches() {
                if left == 0 {
                    break;
                }
                left -= 1;
                self.stats.requests += 1;
                self.decisions.push(DecisionRecord { t: now, fetch });
                let id = fetch.chunk();
                let granted = match fetch {
                    Fetch::Tracker(_) => {
                        self.stats.tracker_fetches += 1;
                        true
                    }
                    Fetch::Low(_) | Fetch::High(_) => {
                        let holder = self.rng.random_range(0..self.cfg.n_stable);
                        let refused = self.cfg.reject_prob > 0.0
                            && self.rng.random_bool(self.cfg.reject_prob);
                        if !refused {
                            self.stats.uploads[holder] += 1;
                        }
                        !refused
                    }
                };
                if !granted {
                    self.stats.rejected += 1;
                    continue;
                }
                cands.remove(id);
                if self.rtt_ticks == 0 {
                    self.complete(id);
                } else {
                    self.pending.push_back((self.tick + self.rtt_ticks, id));
                    self.pending_ids.insert(id);
                }
            }
        }
    }

    fn complete(&mut self, id: ChunkId) {
        use crate::scheduler::FetchOutcome;
        match self.host.on_fetch_complete(id) {
            Ok(FetchOutcome::Stored) => self.stats.stored += 1,
            Ok(FetchOutcome::Duplicate) => self.stats.duplicates += 1,
            Ok(FetchOutcome::Late) => self.stats.wasted += 1,
            // max_width is validated against the scenario, so this only
            // happens for chunks far beyond any reachable scope
            Err(_) => self.stats.wasted += 1,
        }
    }

    fn record(&mut self) {
        let t = self.now();
        let s = self.tracker.head();
        let mut hs = ProgressSample::from_buffer(t, self.host.bm());
        hs.downloaded = Some(self.host.downloaded());
        hs.service_head = Some(s);
        self.host_trace
            .push(hs)
            .expect("simulation samples are ordered");
        let window = self.stable_window();
        for tr in &mut self.stable_traces {
            let mut ss = match window {
                Some((lo, hi)) => ProgressSample::contiguous(t, lo, hi.0 - lo.0 + 1),
                None => ProgressSample::contiguous(t, ChunkId(s.0.saturating_sub(1)), 0),
            };
            ss.service_head = Some(s);
            tr.push(ss).expect("simulation samples are ordered");
        }
    }

    pub fn finish(self) -> SimOutput {
        SimOutput {
            host: self.host_trace,
            stable: self.stable_traces,
            decisions: self.decisions,
            stats: self.stats,
            theta: self.theta,
            origin: self.origin,
        }
    }
}

/// Runs a scenario to completion.
pub fn run(cfg: &SwarmConfig) -> Result<SimOutput, SimError> {
    let mut sim = Simulation::new(cfg.clone())?;
    while !sim.is_done() {
        sim.step();
    }
    Ok(sim.finish())
}

/// Description of a simulation run written next to its traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub c_sch: u64,
    pub tau_sch: Option<f64>,
    pub tau_cvg: Option<f64>,
    pub group: Option<RateGroup>,
    pub files: Vec<String>,
}

impl RunManifest {
    pub fn new(cfg: &SwarmConfig, files: Vec<String>) -> Self {
        let p = cfg.model_params();
        RunManifest {
            version: env!("CARGO_PKG_VERSION").to_owned(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            c_sch: cfg.tb.threshold_chunks(cfg.r),
            tau_sch: analytic::scheduling_turnover(&p).ok(),
            tau_cvg: analytic::convergence_time(&p).ok(),
            group: analytic::classify(&p).ok(),
            files,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::buffer::BufferMessage;
    use crate::scheduler::candidate_set;
    use proptest::prelude::*;

    #[test]
    fn budget_examples() {
        assert_eq!(host_budget(2.5, 1.0, 0.0), (2, 0.5));
        assert_eq!(host_budget(0.0, 1.0, 0.25), (0, 0.25));
        let mut carry = 0.0;
        let mut total = 0;
        for _ in 0..10 {
            let (n, c) = host_budget(2.5, 1.0, carry);
            total += n;
            carry = c;
        }
        assert_eq!(total, 25);
    }

    #[test]
    fn initial_offset_examples() {
        let tb = TbParams::default();
        let t = TrackerState::new(ChunkId(5000), 10.0);
        assert_eq!(choose_initial_offset(&t, &tb, 10.0).unwrap(), ChunkId(3600));
        let t = TrackerState::new(ChunkId(1000), 1.0);
        assert_eq!(choose_initial_offset(&t, &tb, 1.0).unwrap(), ChunkId(860));
        let t = TrackerState::new(ChunkId(2000), 10.0);
        assert!(matches!(
            choose_initial_offset(&t, &tb, 10.0),
            Err(SimError::JoinTooEarly { .. })
        ));
    }

    #[test]
    fn tracker_window() {
        let mut t = TrackerState::new(ChunkId(5000), 6.0);
        assert_eq!(t.width(), 720);
        assert_eq!(t.offset(), ChunkId(4280));
        for _ in 0..10 {
            t.advance(6.0, 0.1);
        }
        assert_eq!(t.head(), ChunkId(5006));
        assert!(t.holds(ChunkId(5005)) && !t.holds(ChunkId(5006)));
        assert_eq!(t.head().0 - t.offset().0, 720);
    }

    #[test]
    fn validation_names_fields() {
        let field = |f: fn(&mut SwarmConfig)| {
            let mut c = SwarmConfig::default();
            f(&mut c);
            c.validate().unwrap_err().field().map(str::to_owned)
        };
        assert_eq!(field(|c| c.r = -1.0).as_deref(), Some("r"));
        assert_eq!(field(|c| c.slot = 0.0).as_deref(), Some("slot"));
        assert_eq!(
            field(|c| c.report_interval = 0.25).as_deref(),
            Some("report_interval")
        );
        assert_eq!(
            field(|c| c.reject_prob = 1.0).as_deref(),
            Some("reject_prob")
        );
        assert_eq!(field(|c| c.tb.beta = 0.0).as_deref(), Some("tb.beta"));
        assert_eq!(
            field(|c| c.initial_head = 100).as_deref(),
            Some("initial_head")
        );
        assert_eq!(field(|c| c.max_width = 100).as_deref(), Some("max_width"));
        assert!(SwarmConfig::default().validate().is_ok());
    }

    #[test]
    fn config_json_defaults_and_unknown_keys() {
        let c: SwarmConfig = serde_json::from_str(r#"{"gamma_p": 2.0}"#).unwrap();
        assert_eq!(c.gamma_p, 2.0);
        assert_eq!(c.r, 10.0);
        assert!(serde_json::from_str::<SwarmConfig>(r#"{"gama_p": 2.0}"#).is_err());
        assert_eq!(c.hash(), c.clone().hash());
        assert_ne!(c.hash(), SwarmConfig::default().hash());
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = SwarmConfig {
            reject_prob: 0.2,
            duration: 60.0,
            ..SwarmConfig::default()
        };
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a.host, b.host);
        assert_eq!(a.decisions, b.decisions);
        let c = run(&SwarmConfig { seed: 2, ..cfg }).unwrap();
        assert_ne!(a.decisions, c.decisions);
    }

    #[test]
    fn no_stable_peers_means_no_downloads() {
        let cfg = SwarmConfig {
            n_stable: 0,
            duration: 30.0,
            ..SwarmConfig::default()
        };
        let out = run(&cfg).unwrap();
        assert_eq!(out.stats.requests, 0);
        assert!(out.host.samples().iter().all(|s| s.fill == 0));
    }

    #[test]
    fn sequential_before_turnover() {
        let out = run(&SwarmConfig {
            duration: 29.0,
            report_interval: 0.1,
            ..SwarmConfig::default()
        })
        .unwrap();
        let mut prev: Option<ChunkId> = None;
        for d in &out.decisions {
            assert!(matches!(d.fetch, Fetch::Low(_)));
            if let Some(p) = prev {
                assert_eq!(d.fetch.chunk(), p.plus(1));
            }
            prev = Some(d.fetch.chunk());
        }
        for s in out.host.samples() {
            assert_eq!(s.width + u64::from(s.fill > 0), s.fill);
            assert_eq!(s.fill, s.playable);
        }
    }

    #[test]
    fn rtt_delays_completion() {
        let cfg = SwarmConfig {
            rtt: 0.5,
            duration: 20.0,
            report_interval: 0.5,
            ..SwarmConfig::default()
        };
        let out = run(&cfg).unwrap();
        assert_eq!(out.stats.duplicates, 0);
        let at_half = &out.host.samples()[1];
        assert_eq!(at_half.fill, 0);
        assert!(out.host.samples()[2].fill > 0);
    }

    proptest! {
        #[test]
        fn window_candidates_match_scan(
            held in prop::collection::btree_set(100u64..160, 0..40),
            lo in 90u64..150,
            len in 0u64..60,
        ) {
            let mut bm = BufferMessage::with_max_width(ChunkId(100), 4096);
            for id in &held {
                bm.write(ChunkId(*id)).unwrap();
            }
            let host = HostState::with_buffer(bm, 10);
            let hi = ChunkId(lo + len);
            let neighbors = vec![BufferMessage::contiguous(ChunkId(lo), hi, 4096).unwrap(); 2];
            let fast = window_candidates(&host, ChunkId(lo), hi, &BTreeSet::new());
            prop_assert_eq!(fast, candidate_set(&host, &neighbors));
        }
    }
}
