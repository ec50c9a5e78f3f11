use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use anyhow::Context;
use serde::Serialize;
use tblab_core::analytic::predict;
use tblab_core::estimators::infer_rate;
use tblab_core::trace::read_jsonl;
use tblab_core::{ModelParams, Trace};

use crate::model::ModelArgs;
use crate::output::{ensure_dir, tidy, write_atomic, write_json, write_rows, Format};
use crate::Failure;

/// Largest relative gap tolerated between the trace's playback rate and
/// `--r`.
const RATE_TOLERANCE: f64 = 0.01;

#[derive(clap::Args, Debug)]
#[command(allow_negative_numbers = true)]
pub struct Args {
    /// JSONL trace file.
    trace: PathBuf,
    /// Peer to compare [default: "host", else the first peer].
    #[arg(long)]
    peer: Option<String>,
    #[command(flatten)]
    model: ModelArgs,
    /// Sampling lag allowed between trace and model, seconds. Residuals
    /// are the smaller of those at t and t - slot.
    #[arg(long, default_value_t = 0.1)]
    slot: f64,
    #[arg(long, default_value = "compare")]
    out: PathBuf,
    /// Also write overlay.dat with trace and model columns side by side.
    #[arg(long)]
    overlay: bool,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Debug, Serialize)]
struct Residual {
    t: f64,
    width: u64,
    width_model: f64,
    width_res: f64,
    fill: u64,
    fill_model: f64,
    fill_res: f64,
    playable: u64,
    playable_model: f64,
    playable_res: f64,
}

#[derive(Debug, Default, Serialize)]
struct Stat {
    max: f64,
    mean: f64,
    /// Time of the largest residual.
    t_max: f64,
}

#[derive(Debug, Serialize)]
struct Summary {
    peer: String,
    samples: usize,
    width: Stat,
    fill: Stat,
    playable: Stat,
    params: ModelParams,
}

fn residuals(tr: &Trace, p: &ModelParams, slot: f64) -> Vec<Residual> {
    let model = |t: f64| {
        let q = predict(p, t.max(0.0));
        [q.width(), q.fill(), q.playable()]
    };
    tr.samples()
        .iter()
        .map(|s| {
            let now = model(s.t);
            let before = model(s.t - slot);
            let obs = [s.width as f64, s.fill as f64, s.playable as f64];
            let res: Vec<f64> = (0..3)
                .map(|k| (obs[k] - now[k]).abs().min((obs[k] - before[k]).abs()))
                .collect();
            Residual {
                t: s.t,
                width: s.width,
                width_model: tidy(now[0]),
                width_res: tidy(res[0]),
                fill: s.fill,
                fill_model: tidy(now[1]),
                fill_res: tidy(res[1]),
                playable: s.playable,
                playable_model: tidy(now[2]),
                playable_res: tidy(res[2]),
            }
        })
        .collect()
}

fn stat(rows: &[Residual], f: impl Fn(&Residual) -> f64) -> Stat {
    let mut st = Stat::default();
    for r in rows {
        let x = f(r);
        if x > st.max {
            (st.max, st.t_max) = (x, r.t);
        }
        st.mean += x;
    }
    st.mean = tidy(st.mean / rows.len().max(1) as f64);
    st
}

fn overlay(rows: &[Residual]) -> String {
    let mut s = String::from("# t W W_model U U_model V V_model\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {}",
            r.t, r.width, r.width_model, r.fill, r.fill_model, r.playable, r.playable_model
        );
    }
    s
}

pub fn run(a: Args) -> Result<(), Failure> {
    let p = a.model.params(true)?;
    if !(a.slot.is_finite() && a.slot >= 0.0) {
        return Err(Failure::invalid("slot must be non-negative"));
    }
    let f = File::open(&a.trace).with_context(|| format!("opening {}", a.trace.display()))?;
    let traces = read_jsonl(BufReader::new(f))
        .map_err(|e| Failure::invalid(format!("{}: {e}", a.trace.display())))?;
    let tr = match &a.peer {
        Some(id) => traces.iter().find(|t| t.peer() == id),
        None => traces
            .iter()
            .find(|t| t.peer() == "host")
            .or_else(|| traces.first()),
    };
    let Some(tr) = tr.filter(|t| !t.is_empty()) else {
        return Err(Failure::missing(format!(
            "{}: no samples{}",
            a.trace.display(),
            a.peer
                .as_ref()
                .map_or(String::new(), |id| format!(" for peer {id}"))
        )));
    };
    match infer_rate(tr) {
        Some(rt) if (rt - p.r).abs() > RATE_TOLERANCE * p.r => {
            return Err(Failure::invalid(format!(
                "trace plays at {} chunks/s but --r is {}",
                tidy(rt),
                p.r
            )));
        }
        Some(_) => {}
        None => log::warn!("trace has no service head, playback rate not checked"),
    }

    let rows = residuals(tr, &p, a.slot);
    let summary = Summary {
        peer: tr.peer().to_owned(),
        samples: rows.len(),
        width: stat(&rows, |r| r.width_res),
        fill: stat(&rows, |r| r.fill_res),
        playable: stat(&rows, |r| r.playable_res),
        params: p,
    };
    ensure_dir(&a.out)?;
    write_rows(&a.out, "residuals", a.format, &rows)?;
    write_json(&a.out.join("summary.json"), &summary)?;
    if a.overlay {
        write_atomic(&a.out.join("overlay.dat"), overlay(&rows).as_bytes())?;
    }
    println!(
        "max residual W {} U {} V {} chunks; mean W {} U {} V {}",
        summary.width.max,
        summary.fill.max,
        summary.playable.max,
        summary.width.mean,
        summary.fill.mean,
        summary.playable.mean
    );
    Ok(())
}
