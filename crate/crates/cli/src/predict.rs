use std::path::PathBuf;

use serde::Serialize;
use tblab_core::analytic::{classify, convergence_time, prediction_csv, scheduling_turnover};
use tblab_core::{ModelError, ModelParams, RateGroup};

use crate::model::ModelArgs;
use crate::output::{ensure_dir, tidy, write_atomic, write_json, Format};
use crate::Failure;

#[derive(clap::Args, Debug)]
#[command(allow_negative_numbers = true)]
pub struct Args {
    #[command(flatten)]
    model: ModelArgs,
    /// Sampling step of the predicted curves, seconds.
    #[arg(long, default_value_t = 1.0)]
    step: f64,
    /// Length of the predicted curves, seconds.
    #[arg(long, default_value_t = 300.0)]
    duration: f64,
    /// Write prediction.csv and prediction.json here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// What to print when no output directory is given.
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Debug, Serialize)]
struct Summary {
    tau_sch: Option<f64>,
    tau_cvg: Option<f64>,
    c_sch: f64,
    group: Option<RateGroup>,
    non_converging: bool,
    params: ModelParams,
}

fn summary(p: &ModelParams) -> Summary {
    let ok = |r: Result<f64, ModelError>| r.ok().map(tidy);
    Summary {
        tau_sch: ok(scheduling_turnover(p)),
        tau_cvg: ok(convergence_time(p)),
        c_sch: p.c_sch,
        group: classify(p).ok(),
        non_converging: p.r_p <= p.r,
        params: *p,
    }
}

pub fn run(a: Args) -> Result<(), Failure> {
    let p = a.model.params(false)?;
    if !(a.duration.is_finite() && a.duration >= 0.0) {
        return Err(Failure::invalid("duration must be non-negative"));
    }
    let curves = prediction_csv(&p, a.step, a.duration).map_err(Failure::invalid)?;
    let s = summary(&p);
    match a.out {
        Some(dir) => {
            ensure_dir(&dir)?;
            write_atomic(&dir.join("prediction.csv"), curves.as_bytes())?;
            write_json(&dir.join("prediction.json"), &s)?;
            let show = |x: Option<f64>| x.map_or("none".into(), |x| x.to_string());
            println!(
                "tau_sch {} tau_cvg {} group {}",
                show(s.tau_sch),
                show(s.tau_cvg),
                s.group.map_or("none".into(), |g| g.to_string())
            );
        }
        None => match a.format {
            Format::Csv => print!("{curves}"),
            Format::Json => println!(
                "{}",
                serde_json::to_string_pretty(&s).map_err(anyhow::Error::from)?
            ),
        },
    }
    Ok(())
}
