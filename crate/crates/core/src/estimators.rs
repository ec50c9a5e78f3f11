//! Recovering TB design parameters from a joining host's buffer trace:
//! offset setup time, turnover threshold, download rate, saturation
//! statistics and the resulting rate group.
//!
//! Every estimate carries a validity flag; invalid estimates carry the
//! reason and no value.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::{classify, ModelParams, RateGroup};
use crate::trace::Trace;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("offset never changes; no drain observed")]
    NoDrainObserved,
    #[error("offset already moving at the first sample; host joined before tracing")]
    LeftCensored,
    #[error("turnover not observed")]
    TurnoverNotObserved,
    #[error("fewer than two usable samples")]
    InsufficientData,
    #[error("no saturated segment of at least {min_secs} s")]
    NotSaturated { min_secs: f64 },
    #[error("initial fill {fill} is not below the host threshold {limit}")]
    NotAHost { fill: u64, limit: u64 },
    #[error("service head missing from the trace")]
    NoServiceHead,
    #[error("playback rate must be positive")]
    BadRate,
    #[error("cannot classify: {0}")]
    Unclassifiable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TauOffMethod {
    /// Midpoint of the first pair of samples with different offsets.
    #[serde(rename = "AA")]
    Aa,
    /// Back-projection of the first moved offset along the drain line.
    #[serde(rename = "LI")]
    Li,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaMethod {
    WidthJump,
    DvTurn,
    FlatMean,
    PvJump,
}

impl BetaMethod {
    pub const ALL: [BetaMethod; 4] = [
        BetaMethod::WidthJump,
        BetaMethod::DvTurn,
        BetaMethod::FlatMean,
        BetaMethod::PvJump,
    ];
}

impl fmt::Display for BetaMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BetaMethod::WidthJump => "width-jump",
            BetaMethod::DvTurn => "dv-turn",
            BetaMethod::FlatMean => "flat-mean",
            BetaMethod::PvJump => "pv-jump",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RateMethod {
    /// End-to-end average over the pre-saturation window.
    #[serde(rename = "E2E")]
    E2e,
    /// Mean of per-interval rates over the same window.
    #[serde(rename = "Seg")]
    Seg,
}

/// Detector tuning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    /// A trace is a joining host when its first fill is below this.
    pub screen_fill: u64,
    /// A jump is growth beyond fill growth exceeding
    /// `jump_factor * r * dt`.
    pub jump_factor: f64,
    /// Right/left slope ratio below which playable growth has turned.
    pub dv_ratio: f64,
    /// Saturation band half-width, chunks.
    pub saturation_tol: f64,
    /// Minimum saturated duration, seconds.
    pub min_saturation: f64,
    /// Added to offset setup estimates when the first sample is not the
    /// first fetch.
    pub tau_off_correction: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            screen_fill: 100,
            jump_factor: 3.0,
            dv_ratio: 0.25,
            saturation_tol: 5.0,
            min_saturation: 300.0,
            tau_off_correction: 0.0,
        }
    }
}

/// Columns of a trace as floats.
struct Series {
    t: Vec<f64>,
    f: Vec<f64>,
    u: Vec<f64>,
    fill: Vec<f64>,
    playable: Vec<f64>,
    width: Vec<f64>,
    /// Extent of stored data `xi + 1 - f`; 0 for an empty buffer.
    extent: Vec<f64>,
    s: Option<Vec<f64>>,
}

impl Series {
    fn new(tr: &Trace) -> Self {
        let ss = tr.samples();
        let col = |g: &dyn Fn(&crate::trace::ProgressSample) -> f64| ss.iter().map(g).collect();
        Series {
            t: col(&|s| s.t),
            f: col(&|s| s.f()),
            u: col(&|s| s.u()),
            fill: col(&|s| s.fill as f64),
            playable: col(&|s| s.playable as f64),
            width: col(&|s| s.width as f64),
            extent: col(&|s| {
                if s.fill > 0 {
                    s.width as f64 + 1.0
                } else {
                    0.0
                }
            }),
            s: ss
                .iter()
                .map(|s| s.service_head.map(|h| h.0 as f64))
                .collect(),
        }
    }

    fn len(&self) -> usize {
        self.t.len()
    }

    /// First index whose growth exceeds fill growth by more than
    /// `factor * r * dt`.
    fn first_jump(&self, curve: &[f64], r: f64, factor: f64) -> Option<usize> {
        (1..self.len()).find(|&j| {
            let dt = self.t[j] - self.t[j - 1];
            let excess = (curve[j] - curve[j - 1]) - (self.fill[j] - self.fill[j - 1]);
            excess > factor * r * dt
        })
    }

    /// First index where the offset differs from its predecessor.
    fn first_move(&self) -> Option<usize> {
        (1..self.len()).find(|&j| self.f[j] != self.f[j - 1])
    }
}

fn check_rate(r: f64) -> Result<(), EstimatorError> {
    if r > 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(EstimatorError::BadRate)
    }
}

/// Offset setup time in seconds after the first sample.
pub fn estimate_tau_off(
    trace: &Trace,
    method: TauOffMethod,
    r: f64,
    cfg: &EstimatorConfig,
) -> Result<f64, EstimatorError> {
    check_rate(r)?;
    let s = Series::new(trace);
    if s.len() < 2 {
        return Err(EstimatorError::InsufficientData);
    }
    let j = s.first_move().ok_or(EstimatorError::NoDrainObserved)?;
    if j == 1 {
        return Err(EstimatorError::LeftCensored);
    }
    let (t1, t2) = (s.t[j - 1], s.t[j]);
    let t = match method {
        TauOffMethod::Aa => 0.5 * (t1 + t2),
        TauOffMethod::Li => t2 - (s.f[j] - s.f[j - 1]) / r,
    };
    Ok(t - s.t[0] + cfg.tau_off_correction)
}

/// Least-squares slope through the points `i..i+3`.
fn slope3(t: &[f64], y: &[f64], i: usize) -> f64 {
    let tm = (t[i] + t[i + 1] + t[i + 2]) / 3.0;
    let ym = (y[i] + y[i + 1] + y[i + 2]) / 3.0;
    let (mut num, mut den) = (0.0, 0.0);
    for k in i..i + 3 {
        num += (t[k] - tm) * (y[k] - ym);
        den += (t[k] - tm) * (t[k] - tm);
    }
    num / den
}

/// Index of the boundary sample where playable growth turns: the fit over
/// `[b-2, b]` against the fit over `[b+1, b+3]`.
fn dv_turn(s: &Series, cfg: &EstimatorConfig) -> Option<usize> {
    let n = s.len();
    if n < 6 {
        return None;
    }
    let ratio = |b: usize| -> Option<f64> {
        if b < 2 || b + 3 >= n {
            return None;
        }
        let left = slope3(&s.t, &s.playable, b - 2);
        let right = slope3(&s.t, &s.playable, b + 1);
        (left > 0.0).then(|| right / left)
    };
    let first = (2..n - 3).find(|&b| ratio(b).is_some_and(|q| q < cfg.dv_ratio))?;
    let mut best = first;
    let mut best_q = ratio(first).unwrap();
    for b in first + 1..=first + 2 {
        if let Some(q) = ratio(b) {
            if q < best_q {
                best = b;
                best_q = q;
            }
        }
    }
    Some(best)
}

/// Turnover threshold factor `beta = C_sch / r`.
pub fn estimate_beta(
    trace: &Trace,
    method: BetaMethod,
    r: f64,
    cfg: &EstimatorConfig,
) -> Result<f64, EstimatorError> {
    check_rate(r)?;
    let s = Series::new(trace);
    if s.len() < 2 {
        return Err(EstimatorError::InsufficientData);
    }
    let v_jump = || s.first_jump(&s.playable, r, cfg.jump_factor);
    let c = match method {
        BetaMethod::WidthJump => {
            let j = s
                .first_jump(&s.width, r, cfg.jump_factor)
                .ok_or(EstimatorError::TurnoverNotObserved)?;
            s.extent[j - 1]
        }
        BetaMethod::DvTurn => {
            let b = dv_turn(&s, cfg).ok_or(EstimatorError::TurnoverNotObserved)?;
            s.playable[b + 1]
        }
        BetaMethod::FlatMean => {
            let b = dv_turn(&s, cfg).ok_or(EstimatorError::TurnoverNotObserved)?;
            let start = b + 1;
            let end = match v_jump() {
                Some(j) if j > start => j - 1,
                Some(_) => return Err(EstimatorError::TurnoverNotObserved),
                None => s.len() - 1,
            };
            let seg = &s.playable[start..=end];
            seg.iter().sum::<f64>() / seg.len() as f64
        }
        BetaMethod::PvJump => {
            let j = v_jump().ok_or(EstimatorError::TurnoverNotObserved)?;
            s.playable[j - 1]
        }
    };
    Ok(c / r)
}

/// Last index of the pre-saturation window.
fn rate_window_end(s: &Series, r: f64, cfg: &EstimatorConfig) -> usize {
    let tol = r * 1.0;
    let last = s.len() - 1;
    if let Some(sh) = &s.s {
        return match (0..s.len()).find(|&i| sh[i] - s.u[i] <= tol) {
            Some(0) => 0,
            Some(k) => k - 1,
            None => last,
        };
    }
    let Some(j) = s.first_jump(&s.width, r, cfg.jump_factor) else {
        return last;
    };
    match (j..s.len()).find(|&i| s.f[i] + s.extent[i] - s.u[i] <= tol) {
        Some(k) => k - 1,
        None => last,
    }
}

/// Download rate as a multiple of `r`, with `u = f + U`.
pub fn estimate_rate(
    trace: &Trace,
    method: RateMethod,
    r: f64,
    cfg: &EstimatorConfig,
) -> Result<f64, EstimatorError> {
    check_rate(r)?;
    let s = Series::new(trace);
    if s.len() < 2 {
        return Err(EstimatorError::InsufficientData);
    }
    let end = rate_window_end(&s, r, cfg);
    if end < 1 {
        return Err(EstimatorError::InsufficientData);
    }
    let rate = match method {
        RateMethod::E2e => (s.u[end] - s.u[0]) / (s.t[end] - s.t[0]),
        RateMethod::Seg => {
            let sum: f64 = (1..=end)
                .map(|i| (s.u[i] - s.u[i - 1]) / (s.t[i] - s.t[i - 1]))
                .sum();
            sum / end as f64
        }
    };
    Ok(rate / r)
}

/// Playback rate implied by the service head's growth.
pub fn infer_rate(trace: &Trace) -> Option<f64> {
    let ss = trace.samples();
    let (a, b) = (ss.first()?, ss.last()?);
    let (ha, hb) = (a.service_head?, b.service_head?);
    (b.t > a.t).then(|| (hb.0 as f64 - ha.0 as f64) / (b.t - a.t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
}

impl Moments {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len().max(1) as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Moments {
            mean,
            std: var.sqrt(),
        }
    }
}

/// A saturated suffix of a trace, by sample index (inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturatedSegment {
    pub start: usize,
    pub end: usize,
    pub duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagStats {
    pub offset: Moments,
    pub scope: Moments,
    pub download: Moments,
    pub playable: Moments,
    /// Every sample has `offset > playable >= download >= 0` and
    /// `scope >= 0`.
    pub ordered: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationStats {
    pub segment: SaturatedSegment,
    /// Chunks spanned from the offset to the newest held chunk.
    pub width: Moments,
    pub fill: Moments,
    pub playable: Moments,
    /// Present when every sample in the segment carries a service head.
    pub lags: Option<LagStats>,
}

/// Longest suffix whose widths all lie strictly within `saturation_tol` of
/// the suffix mean, if it lasts at least `min_saturation` seconds.
pub fn saturation_stats(
    trace: &Trace,
    cfg: &EstimatorConfig,
) -> Result<SaturationStats, EstimatorError> {
    let s = Series::new(trace);
    let n = s.len();
    let not_sat = EstimatorError::NotSaturated {
        min_secs: cfg.min_saturation,
    };
    if n == 0 {
        return Err(not_sat);
    }
    let (mut sum, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
    let mut start = n;
    for i in (0..n).rev() {
        let w = s.width[i];
        let (sum2, lo2, hi2) = (sum + w, lo.min(w), hi.max(w));
        let mean = sum2 / (n - i) as f64;
        if hi2 - mean >= cfg.saturation_tol || mean - lo2 >= cfg.saturation_tol {
            break;
        }
        (sum, lo, hi, start) = (sum2, lo2, hi2, i);
    }
    if start == n {
        return Err(not_sat);
    }
    let duration = s.t[n - 1] - s.t[start];
    if duration < cfg.min_saturation {
        return Err(not_sat);
    }
    let seg = start..n;
    let lags = s.s.as_ref().map(|sh| {
        let lag = |head: &dyn Fn(usize) -> f64| -> Vec<f64> {
            seg.clone().map(|i| sh[i] - head(i)).collect()
        };
        let offset = lag(&|i| s.f[i]);
        let scope = lag(&|i| s.f[i] + s.width[i]);
        let download = lag(&|i| s.u[i]);
        let playable = lag(&|i| s.f[i] + s.playable[i]);
        let ordered = (0..offset.len()).all(|k| {
            offset[k] > playable[k]
                && playable[k] >= download[k]
                && download[k] >= 0.0
                && scope[k] >= 0.0
        });
        LagStats {
            offset: Moments::of(&offset),
            scope: Moments::of(&scope),
            download: Moments::of(&download),
            playable: Moments::of(&playable),
            ordered,
        }
    });
    Ok(SaturationStats {
        segment: SaturatedSegment {
            start,
            end: n - 1,
            duration,
        },
        width: Moments::of(&s.extent[seg.clone()]),
        fill: Moments::of(&s.fill[seg.clone()]),
        playable: Moments::of(&s.playable[seg]),
        lags,
    })
}

/// A value with a validity flag; invalid estimates have a reason instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate<T = f64> {
    pub valid: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl<T> Estimate<T> {
    pub fn ok(value: T) -> Self {
        Estimate {
            valid: true,
            value: Some(value),
            reason: None,
        }
    }

    pub fn invalid(e: &EstimatorError) -> Self {
        Estimate {
            valid: false,
            value: None,
            reason: Some(e.to_string()),
        }
    }

    pub fn from_result(r: Result<T, EstimatorError>) -> Self {
        match r {
            Ok(v) => Estimate::ok(v),
            Err(e) => Estimate::invalid(&e),
        }
    }
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    Some(if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    })
}

/// Saturated width and initial headroom in seconds, from the offset lag
/// after draining starts.
fn width_and_theta(trace: &Trace, r: f64) -> Result<(f64, f64), EstimatorError> {
    let s = Series::new(trace);
    let sh = s.s.as_ref().ok_or(EstimatorError::NoServiceHead)?;
    let j = s.first_move().ok_or(EstimatorError::NoDrainObserved)?;
    let lags: Vec<f64> = (j..s.len()).map(|i| sh[i] - s.f[i]).collect();
    let w = median(lags).ok_or(EstimatorError::InsufficientData)? / r;
    let theta = w - (sh[0] - s.f[0]) / r;
    Ok((w, theta))
}

/// All estimates for one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub peer: String,
    pub r: f64,
    pub samples: usize,
    /// Whether the trace passed the joining-host screen.
    pub host: bool,
    pub tau_off_aa: Estimate,
    pub tau_off_li: Estimate,
    pub beta: BTreeMap<BetaMethod, Estimate>,
    pub gamma_e2e: Estimate,
    pub gamma_seg: Estimate,
    pub w_star: Estimate,
    pub theta: Estimate,
    pub group: Estimate<RateGroup>,
    pub saturation: Estimate<SaturationStats>,
}

impl EstimatorReport {
    /// Median of the valid turnover estimates.
    pub fn beta_median(&self) -> Option<f64> {
        median(self.beta.values().filter_map(|e| e.value).collect())
    }

    /// Spread of the valid turnover estimates.
    pub fn beta_spread(&self) -> Option<f64> {
        let vals: Vec<f64> = self.beta.values().filter_map(|e| e.value).collect();
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        (!vals.is_empty()).then_some(hi - lo)
    }
}

/// Runs every estimator on `trace` at playback rate `r`.
pub fn analyze(trace: &Trace, r: f64, cfg: &EstimatorConfig) -> EstimatorReport {
    let screen = match trace.samples().first() {
        None => Err(EstimatorError::InsufficientData),
        Some(s) if s.fill >= cfg.screen_fill => Err(EstimatorError::NotAHost {
            fill: s.fill,
            limit: cfg.screen_fill,
        }),
        Some(_) => check_rate(r),
    };
    let saturation = Estimate::from_result(saturation_stats(trace, cfg));
    let mut report = EstimatorReport {
        peer: trace.peer().to_owned(),
        r,
        samples: trace.len(),
        host: screen.is_ok(),
        tau_off_aa: Estimate::from_result(estimate_tau_off(trace, TauOffMethod::Aa, r, cfg)),
        tau_off_li: Estimate::from_result(estimate_tau_off(trace, TauOffMethod::Li, r, cfg)),
        beta: BetaMethod::ALL
            .iter()
            .map(|m| (*m, Estimate::from_result(estimate_beta(trace, *m, r, cfg))))
            .collect(),
        gamma_e2e: Estimate::from_result(estimate_rate(trace, RateMethod::E2e, r, cfg)),
        gamma_seg: Estimate::from_result(estimate_rate(trace, RateMethod::Seg, r, cfg)),
        w_star: Estimate::invalid(&EstimatorError::InsufficientData),
        theta: Estimate::invalid(&EstimatorError::InsufficientData),
        group: Estimate::invalid(&EstimatorError::InsufficientData),
        saturation,
    };
    if let Err(e) = screen {
        let bad = Estimate::invalid(&e);
        report.tau_off_aa = bad.clone();
        report.tau_off_li = bad.clone();
        report.beta.values_mut().for_each(|v| *v = bad.clone());
        report.gamma_e2e = bad.clone();
        report.gamma_seg = bad.clone();
        report.w_star = bad.clone();
        report.theta = bad;
        report.group = Estimate::invalid(&e);
        return report;
    }
    match width_and_theta(trace, r) {
        Ok((w, th)) => {
            report.w_star = Estimate::ok(w);
            report.theta = Estimate::ok(th);
        }
        Err(e) => {
            report.w_star = Estimate::invalid(&e);
            report.theta = Estimate::invalid(&e);
        }
    }
    report.group = Estimate::from_result(group_of(&report));
    report
}

fn group_of(rep: &EstimatorReport) -> Result<RateGroup, EstimatorError> {
    let missing = |what: &str| EstimatorError::Unclassifiable(format!("no valid {what}"));
    let gamma = rep
        .gamma_e2e
        .value
        .ok_or_else(|| missing("download rate"))?;
    let beta = rep
        .beta_median()
        .ok_or_else(|| missing("turnover factor"))?;
    let tau_off = rep
        .tau_off_li
        .value
        .or(rep.tau_off_aa.value)
        .ok_or_else(|| missing("offset setup time"))?;
    let w = rep.w_star.value.ok_or_else(|| missing("saturated width"))?;
    let theta = rep.theta.value.ok_or_else(|| missing("initial offset"))?;
    let p = ModelParams::normalized(gamma, beta, tau_off, theta, w);
    classify(&p).map_err(|e| EstimatorError::Unclassifiable(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::buffer::ChunkId;
    use crate::rle::Rle;
    use crate::trace::ProgressSample;

    /// Contiguous-buffer trace from `(t, f, fill, s)` rows.
    fn trace(rows: &[(f64, u64, u64, u64)]) -> Trace {
        let samples = rows
            .iter()
            .map(|&(t, f, n, s)| {
                let mut x = ProgressSample::contiguous(t, ChunkId(f), n);
                x.service_head = Some(ChunkId(s));
                x
            })
            .collect();
        Trace::from_samples("h", samples).unwrap()
    }

    #[test]
    fn tau_off_pair_rules() {
        let tr = trace(&[
            (0.0, 10, 0, 100),
            (5.0, 10, 5, 105),
            (10.0, 10, 10, 110),
            (15.0, 13, 12, 115),
        ]);
        let cfg = EstimatorConfig::default();
        assert_eq!(estimate_tau_off(&tr, TauOffMethod::Aa, 1.0, &cfg), Ok(12.5));
        assert_eq!(estimate_tau_off(&tr, TauOffMethod::Li, 1.0, &cfg), Ok(12.0));
    }

    #[test]
    fn tau_off_errors() {
        let cfg = EstimatorConfig::default();
        let flat = trace(&[(0.0, 10, 0, 0), (5.0, 10, 3, 0), (10.0, 10, 6, 0)]);
        assert_eq!(
            estimate_tau_off(&flat, TauOffMethod::Li, 1.0, &cfg),
            Err(EstimatorError::NoDrainObserved)
        );
        let moving = trace(&[(0.0, 10, 0, 0), (5.0, 12, 3, 0)]);
        assert_eq!(
            estimate_tau_off(&moving, TauOffMethod::Aa, 1.0, &cfg),
            Err(EstimatorError::LeftCensored)
        );
    }

    #[test]
    fn constant_u_has_zero_rate() {
        let tr = trace(&[(0.0, 10, 5, 1000), (5.0, 10, 5, 1005), (10.0, 10, 5, 1010)]);
        let cfg = EstimatorConfig::default();
        assert_eq!(estimate_rate(&tr, RateMethod::E2e, 1.0, &cfg), Ok(0.0));
        assert_eq!(estimate_rate(&tr, RateMethod::Seg, 1.0, &cfg), Ok(0.0));
    }

    #[test]
    fn e2e_equals_seg_for_constant_rate() {
        let rows: Vec<_> = (0..10)
            .map(|i| (i as f64 * 2.0, 10, 6 * i, 10_000))
            .collect();
        let tr = trace(&rows);
        let cfg = EstimatorConfig::default();
        let a = estimate_rate(&tr, RateMethod::E2e, 1.0, &cfg).unwrap();
        let b = estimate_rate(&tr, RateMethod::Seg, 1.0, &cfg).unwrap();
        assert_eq!(a, 3.0);
        assert_eq!(a, b);
    }

    #[test]
    fn beta_from_hand_built_turnover() {
        // fill at 2 chunks/s to 20, then the scope jumps to 60 while the
        // playable video holds at 20; converges at t = 16
        let cfg = EstimatorConfig {
            jump_factor: 3.0,
            ..EstimatorConfig::default()
        };
        let mut samples = Vec::new();
        for i in 0..=20u64 {
            let t = i as f64;
            let bits = if i <= 10 {
                Rle::ones(2 * i)
            } else if i < 16 {
                let top = i - 10;
                format!("1x20,0x{},1x{}", 40 + i - 20 - top, top)
                    .parse()
                    .unwrap()
            } else {
                Rle::ones(40 + i)
            };
            let mut s = ProgressSample {
                t,
                offset: ChunkId(0),
                fill: bits.fill(),
                playable: bits.playable(),
                width: bits.width(),
                bits,
                downloaded: None,
                service_head: None,
            };
            s.downloaded = Some(s.fill);
            samples.push(s);
        }
        let tr = Trace::from_samples("h", samples).unwrap();
        for m in BetaMethod::ALL {
            let b = estimate_beta(&tr, m, 1.0, &cfg).unwrap();
            assert!((b - 20.0).abs() < 1e-9, "{m}: {b}");
        }
        let short = tr.truncated(9.0);
        for m in BetaMethod::ALL {
            assert_eq!(
                estimate_beta(&short, m, 1.0, &cfg),
                Err(EstimatorError::TurnoverNotObserved),
                "{m}"
            );
        }
    }

    #[test]
    fn saturation_needs_duration() {
        let rows: Vec<_> = (0..100).map(|i| (i as f64, 100 + i, 50, 150 + i)).collect();
        let cfg = EstimatorConfig::default();
        assert!(matches!(
            saturation_stats(&trace(&rows), &cfg),
            Err(EstimatorError::NotSaturated { .. })
        ));
        let rows: Vec<_> = (0..400).map(|i| (i as f64, 100 + i, 50, 150 + i)).collect();
        let st = saturation_stats(&trace(&rows), &cfg).unwrap();
        assert_eq!(st.segment.start, 0);
        assert_eq!(st.width.mean, 50.0);
        let lags = st.lags.unwrap();
        assert_eq!(lags.offset.mean, 50.0);
        assert_eq!(lags.download.mean, 0.0);
        assert!(lags.ordered);
    }

    #[test]
    fn screen_rejects_full_buffers() {
        let rows: Vec<_> = (0..10).map(|i| (i as f64, 100 + i, 500, 700 + i)).collect();
        let rep = analyze(&trace(&rows), 1.0, &EstimatorConfig::default());
        assert!(!rep.host);
        assert!(!rep.gamma_e2e.valid && rep.gamma_e2e.value.is_none());
        assert!(rep.gamma_e2e.reason.as_deref().unwrap().contains("host"));
    }

    #[test]
    fn estimate_serializes_without_value_when_invalid() {
        let e: Estimate = Estimate::invalid(&EstimatorError::TurnoverNotObserved);
        assert_eq!(
            serde_json::to_string(&e).unwrap(),
            r#"{"valid":false,"reason":"turnover not observed"}"#
        );
        let ok = Estimate::ok(RateGroup::G1);
        assert_eq!(
            serde_json::to_string(&ok).unwrap(),
            r#"{"valid":true,"value":"Γ1"}"#
        );
    }
}
