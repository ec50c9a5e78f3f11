//! Piecewise-line model of a joining peer's progress under TB.
//!
//! Time is measured from the host's first fetch. Chunk positions are measured
//! from the offset of the stable peers at that instant, so the service curve
//! is `s(t) = r t + W*` and the host starts with offset `theta`.
//!
//! Peer progress curves (`f`, `xi`, `v`, `u`) are lines between the break
//! points `tau_sch`, `tau_off` and `tau_cvg`; `xi` jumps at `tau_sch` and `v`
//! jumps at `tau_cvg`. Buffer progress is the difference to the offset:
//! `W = xi - f`, `U = u - f`, `V = v - f`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Seconds of content a tracker buffers per channel.
pub const TRACKER_BUFFER_SECS: f64 = 120.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model parameter {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("download rate never reaches the turnover threshold")]
    NeverReached,
    #[error("download rate does not exceed the playback rate, progress never converges")]
    NonConverging,
    #[error("infeasible design: lower bound {lower} exceeds upper bound {upper}")]
    InfeasibleDesign { lower: f64, upper: f64 },
}

/// The six parameters that fix every progress curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Playback rate, chunks/s.
    pub r: f64,
    /// Host download rate, chunks/s.
    pub r_p: f64,
    /// Turnover threshold, chunks.
    pub c_sch: f64,
    /// Offset setup time, seconds.
    pub tau_off: f64,
    /// Initial offset, chunks above the stable peers' offset.
    pub theta: f64,
    /// Saturated width (offset lag), chunks.
    pub w_star: f64,
    /// Optional scope-lag correction subtracted from the scope after
    /// turnover, chunks.
    #[serde(default)]
    pub scope_lag: f64,
}

impl ModelParams {
    /// Normalized model (`r = 1`): rates are multiples of `r`, buffers are
    /// seconds of content.
    pub fn normalized(gamma: f64, beta: f64, tau_off: f64, theta: f64, w_star: f64) -> Self {
        ModelParams {
            r: 1.0,
            r_p: gamma,
            c_sch: beta,
            tau_off,
            theta,
            w_star,
            scope_lag: 0.0,
        }
    }

    /// Normalized model with `beta = 90`, `tau_off = 70`, `W* = 210`,
    /// `theta = W*/3`.
    pub fn reference(gamma: f64) -> Self {
        Self::normalized(gamma, 90.0, 70.0, 70.0, 210.0)
    }

    /// Scales every chunk quantity by `r`.
    pub fn at_rate(self, r: f64) -> Self {
        ModelParams {
            r: self.r * r,
            r_p: self.r_p * r,
            c_sch: self.c_sch * r,
            theta: self.theta * r,
            w_star: self.w_star * r,
            scope_lag: self.scope_lag * r,
            tau_off: self.tau_off,
        }
    }

    /// `gamma_p = r_p / r`.
    pub fn gamma(&self) -> f64 {
        self.r_p / self.r
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        fn bad(field: &'static str, reason: impl Into<String>) -> Result<(), ModelError> {
            Err(ModelError::Invalid {
                field,
                reason: reason.into(),
            })
        }
        let all = [
            self.r,
            self.r_p,
            self.c_sch,
            self.tau_off,
            self.theta,
            self.w_star,
            self.scope_lag,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return bad("params", "all parameters must be finite");
        }
        if self.r <= 0.0 {
            return bad("r", format!("must be positive, got {}", self.r));
        }
        if self.r_p < 0.0 {
            return bad("r_p", format!("must be non-negative, got {}", self.r_p));
        }
        if self.c_sch <= 0.0 {
            return bad("c_sch", format!("must be positive, got {}", self.c_sch));
        }
        if self.tau_off <= 0.0 {
            return bad("tau_off", format!("must be positive, got {}", self.tau_off));
        }
        if self.theta < 0.0 {
            return bad("theta", format!("must be non-negative, got {}", self.theta));
        }
        if self.theta + self.c_sch >= self.w_star {
            return bad(
                "w_star",
                format!(
                    "threshold curve must start below the service curve: theta + c_sch = {} >= w_star = {}",
                    self.theta + self.c_sch,
                    self.w_star
                ),
            );
        }
        if self.scope_lag < 0.0 {
            return bad("scope_lag", "must be non-negative");
        }
        Ok(())
    }

    pub fn service(&self, t: f64) -> f64 {
        self.r * t + self.w_star
    }

    pub fn offset(&self, t: f64) -> f64 {
        self.theta + self.r * (t - self.tau_off).max(0.0)
    }

    pub fn threshold_curve(&self, t: f64) -> f64 {
        self.offset(t) + self.c_sch
    }

    /// Unclamped download line `r_p t + theta`.
    pub fn download_line(&self, t: f64) -> f64 {
        self.r_p * t + self.theta
    }
}

/// Rate groups by the ordering of `tau_off`, `tau_sch` and `tau_cvg`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RateGroup {
    /// `tau_off <= tau_sch < tau_cvg`.
    #[serde(rename = "Γ0")]
    G0,
    /// `tau_sch < tau_off <= tau_cvg`.
    #[serde(rename = "Γ1")]
    G1,
    /// `tau_sch < tau_cvg < tau_off`.
    #[serde(rename = "Γ2")]
    G2,
}

impl fmt::Display for RateGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RateGroup::G0 => "Γ0",
            RateGroup::G1 => "Γ1",
            RateGroup::G2 => "Γ2",
        })
    }
}

/// First time the download curve meets the threshold curve.
pub fn scheduling_turnover(p: &ModelParams) -> Result<f64, ModelError> {
    p.validate()?;
    if p.c_sch <= p.r_p * p.tau_off {
        Ok(p.c_sch / p.r_p)
    } else if p.r_p > p.r {
        Ok((p.c_sch - p.r * p.tau_off) / (p.r_p - p.r))
    } else {
        Err(ModelError::NeverReached)
    }
}

/// First time the download curve meets the service curve.
pub fn convergence_time(p: &ModelParams) -> Result<f64, ModelError> {
    p.validate()?;
    if p.r_p > p.r {
        Ok((p.w_star - p.theta) / (p.r_p - p.r))
    } else {
        Err(ModelError::NonConverging)
    }
}

/// Download-rate boundaries `(Γ0|Γ1, Γ1|Γ2)` in chunks/s.
pub fn group_boundaries(p: &ModelParams) -> (f64, f64) {
    (p.c_sch / p.tau_off, p.r + (p.w_star - p.theta) / p.tau_off)
}

/// Classifies the download rate. The upper boundary of each group belongs to
/// that group, so `gamma = 9/7` is Γ0 and `gamma = 3` is Γ1 with the
/// reference constants.
pub fn classify(p: &ModelParams) -> Result<RateGroup, ModelError> {
    p.validate()?;
    if p.r_p <= p.r {
        return Err(ModelError::NonConverging);
    }
    if p.r_p * p.tau_off <= p.c_sch {
        Ok(RateGroup::G0)
    } else if (p.r_p - p.r) * p.tau_off > p.w_star - p.theta {
        Ok(RateGroup::G2)
    } else {
        Ok(RateGroup::G1)
    }
}

/// Curve values at one instant, in model chunks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub t: f64,
    pub s: f64,
    pub f: f64,
    pub xi: f64,
    pub v: f64,
    pub u: f64,
}

impl Progress {
    /// Buffer width `W = xi - f`.
    pub fn width(&self) -> f64 {
        self.xi - self.f
    }

    /// Buffer fill `U = u - f`.
    pub fn fill(&self) -> f64 {
        self.u - self.f
    }

    /// Playable video `V = v - f`.
    pub fn playable(&self) -> f64 {
        self.v - self.f
    }
}

/// Evaluates every curve at `t`. Values are right-continuous: at
/// `t = tau_sch` the scope has already jumped to the service curve.
///
/// Non-converging parameters are accepted; the playable head is then kept at
/// or below the download curve.
pub fn predict(p: &ModelParams, t: f64) -> Progress {
    let tau_sch = scheduling_turnover(p).ok();
    let tau_cvg = convergence_time(p).ok();
    predict_with(p, t, tau_sch, tau_cvg)
}

fn predict_with(p: &ModelParams, t: f64, tau_sch: Option<f64>, tau_cvg: Option<f64>) -> Progress {
    let s = p.service(t);
    let f = p.offset(t);
    let u = p.download_line(t).min(s);
    let turned = tau_sch.is_some_and(|ts| t >= ts);
    let converged = tau_cvg.is_some_and(|tc| t >= tc);
    let xi = if turned { s - p.scope_lag } else { u };
    let v = if converged {
        s
    } else if turned {
        (f + p.c_sch).min(u)
    } else {
        u
    };
    Progress { t, s, f, xi, v, u }
}

/// A line segment of one curve on `[t_start, t_end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t_start: f64,
    /// `f64::INFINITY` for the final segment.
    pub t_end: f64,
    pub slope: f64,
    pub value_at_start: f64,
    /// Right value at `t_end` minus the left limit; zero where continuous.
    pub jump_at_end: f64,
}

impl Segment {
    pub fn value_at(&self, t: f64) -> f64 {
        self.value_at_start + self.slope * (t - self.t_start)
    }
}

/// Full piecewise description of every curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseProgress {
    pub tau_sch: f64,
    pub tau_off: f64,
    pub tau_cvg: f64,
    pub group: RateGroup,
    pub offset: Vec<Segment>,
    pub scope: Vec<Segment>,
    pub playable_head: Vec<Segment>,
    pub download: Vec<Segment>,
    pub width: Vec<Segment>,
    pub fill: Vec<Segment>,
    pub playable: Vec<Segment>,
}

#[derive(Clone, Copy)]
struct Slopes {
    f: f64,
    xi: f64,
    v: f64,
    u: f64,
}

fn slopes_in(p: &ModelParams, mid: f64, tau_sch: f64, tau_cvg: f64) -> Slopes {
    let f = if mid > p.tau_off { p.r } else { 0.0 };
    let u = if mid < tau_cvg { p.r_p } else { p.r };
    let xi = if mid > tau_sch { p.r } else { u };
    let v = if mid > tau_cvg {
        p.r
    } else if mid > tau_sch {
        f
    } else {
        u
    };
    Slopes { f, xi, v, u }
}

/// Segment list for every curve between the ordered break points.
pub fn piecewise_table(p: &ModelParams) -> Result<PiecewiseProgress, ModelError> {
    let tau_sch = scheduling_turnover(p)?;
    let tau_cvg = convergence_time(p)?;
    let group = classify(p)?;

    let mut breaks = vec![0.0, tau_sch, p.tau_off, tau_cvg];
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    breaks.push(f64::INFINITY);

    let at = |t: f64| predict_with(p, t, Some(tau_sch), Some(tau_cvg));
    let mut table = PiecewiseProgress {
        tau_sch,
        tau_off: p.tau_off,
        tau_cvg,
        group,
        offset: vec![],
        scope: vec![],
        playable_head: vec![],
        download: vec![],
        width: vec![],
        fill: vec![],
        playable: vec![],
    };
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = if b.is_finite() {
            0.5 * (a + b)
        } else {
            a + 1.0
        };
        let k = slopes_in(p, mid, tau_sch, tau_cvg);
        let start = at(a);
        let end = b.is_finite().then(|| at(b));
        let seg = |value: f64, slope: f64, right: Option<f64>| Segment {
            t_start: a,
            t_end: b,
            slope,
            value_at_start: value,
            jump_at_end: right.map_or(0.0, |r| r - (value + slope * (b - a))),
        };
        table.offset.push(seg(start.f, k.f, end.map(|e| e.f)));
        table.scope.push(seg(start.xi, k.xi, end.map(|e| e.xi)));
        table
            .playable_head
            .push(seg(start.v, k.v, end.map(|e| e.v)));
        table.download.push(seg(start.u, k.u, end.map(|e| e.u)));
        table
            .width
            .push(seg(start.width(), k.xi - k.f, end.map(|e| e.width())));
        table
            .fill
            .push(seg(start.fill(), k.u - k.f, end.map(|e| e.fill())));
        table
            .playable
            .push(seg(start.playable(), k.v - k.f, end.map(|e| e.playable())));
    }
    Ok(table)
}

/// Predicted curves sampled every `step` seconds over `[0, duration]` as CSV
/// with columns `t,f,xi,v,u,W,U,V`.
pub fn prediction_csv(p: &ModelParams, step: f64, duration: f64) -> Result<String, ModelError> {
    p.validate()?;
    if !(step > 0.0) {
        return Err(ModelError::Invalid {
            field: "step",
            reason: "must be positive".into(),
        });
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| ModelError::Invalid {
        field: "csv",
        reason: e.to_string(),
    };
    w.write_record(["t", "f", "xi", "v", "u", "W", "U", "V"])
        .map_err(io)?;
    let n = (duration / step + 1e-9).floor() as u64;
    for i in 0..=n {
        let t = round9(i as f64 * step);
        let q = predict(p, t);
        let row = [t, q.f, q.xi, q.v, q.u, q.width(), q.fill(), q.playable()];
        w.write_record(row.iter().map(|x| fmt_num(*x)))
            .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| ModelError::Invalid {
        field: "csv",
        reason: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub(crate) fn round9(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

pub(crate) fn fmt_num(x: f64) -> String {
    let r = round9(x);
    if r == r.trunc() && r.abs() < 1e15 {
        format!("{}", r as i64)
    } else {
        format!("{r}")
    }
}

/// Minimal average download rate (multiples of `r`) that fetches the first
/// `b` chunks before they expire from every peer: `b / (tau_off + b)`.
pub fn min_download_rate(b: f64, tau_off: f64) -> f64 {
    if b <= 0.0 {
        0.0
    } else {
        b / (tau_off + b)
    }
}

/// Feasible interval for the turnover factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaBounds {
    pub lower: f64,
    pub upper: f64,
}

/// Lower bound keeps the threshold curve at or above the tracker offset;
/// upper bound keeps it below the neighbors' playable video with margin
/// `alpha` standard deviations.
pub fn beta_bounds(
    w_star: f64,
    tracker_duration: f64,
    v_star: f64,
    sigma_v: f64,
    alpha: f64,
    tau_off: f64,
) -> Result<BetaBounds, ModelError> {
    let lower = w_star - tracker_duration;
    let upper = v_star - alpha * sigma_v - tau_off;
    if lower > upper {
        Err(ModelError::InfeasibleDesign { lower, upper })
    } else {
        Ok(BetaBounds { lower, upper })
    }
}

/// Initial offset headroom: one third of the saturated width, which equals
/// the offset setup time when the host's drained offset meets the stable
/// peers' offset curve.
pub fn initial_offset_rule(w_star: f64) -> f64 {
    w_star / 3.0
}

/// Tracker width for playback rate `r`, chunks.
pub fn tracker_width(r: f64) -> u64 {
    (TRACKER_BUFFER_SECS * r).round() as u64
}

/// Playback rate implied by a tracker's advertised width.
pub fn rate_from_tracker_width(width: u64) -> f64 {
    width as f64 / TRACKER_BUFFER_SECS
}
