use tblab_core::{ModelParams, TbParams};

use crate::Failure;

/// Model parameters on the command line. Buffer sizes are seconds of
/// content; `--r 1` (the default) gives the normalized model.
#[derive(clap::Args, Debug, Clone)]
pub struct ModelArgs {
    /// Download rate as a multiple of the playback rate.
    #[arg(long, default_value_t = 3.0)]
    pub gamma: f64,
    /// Turnover threshold factor, seconds.
    #[arg(long, default_value_t = 90.0)]
    pub beta: f64,
    /// Offset setup time, seconds.
    #[arg(long = "tau-off", default_value_t = 70.0)]
    pub tau_off: f64,
    /// Saturated buffer width, seconds.
    #[arg(long = "w-star", default_value_t = 210.0)]
    pub w_star: f64,
    /// Initial offset headroom, seconds [default: w-star / 3].
    #[arg(long)]
    pub theta: Option<f64>,
    /// Playback rate, chunks/s.
    #[arg(long, default_value_t = 1.0)]
    pub r: f64,
    /// Chunks by which the scope trails the service head after turnover.
    #[arg(long = "scope-lag", default_value_t = 0.0)]
    pub scope_lag: f64,
}

impl ModelArgs {
    pub fn tb(&self) -> Result<TbParams, Failure> {
        let tb = TbParams {
            beta: self.beta,
            tau_off: self.tau_off,
            theta: self.theta,
            w_star: self.w_star,
        };
        tb.validate().map_err(Failure::invalid)?;
        Ok(tb)
    }

    /// Model in chunk units. With `whole_chunks` the threshold, headroom and
    /// width are rounded as a simulated peer would.
    pub fn params(&self, whole_chunks: bool) -> Result<ModelParams, Failure> {
        if !(self.r.is_finite() && self.r > 0.0) {
            return Err(Failure::invalid(format!(
                "r must be positive (got {})",
                self.r
            )));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Failure::invalid(format!(
                "gamma must be non-negative (got {})",
                self.gamma
            )));
        }
        let tb = self.tb()?;
        let round = |x: f64| if whole_chunks { x.round() } else { x };
        let p = ModelParams {
            r: self.r,
            r_p: self.gamma * self.r,
            c_sch: if whole_chunks {
                tb.threshold_chunks(self.r) as f64
            } else {
                self.beta * self.r
            },
            tau_off: self.tau_off,
            theta: round(tb.theta_secs() * self.r),
            w_star: round(self.w_star * self.r),
            scope_lag: round(self.scope_lag),
        };
        p.validate().map_err(Failure::invalid)?;
        Ok(p)
    }
}
