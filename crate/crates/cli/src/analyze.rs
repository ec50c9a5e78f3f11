use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use tblab_core::estimators::infer_rate;
use tblab_core::trace::read_jsonl;
use tblab_core::{analyze, BetaMethod, EstimatorConfig, EstimatorReport, Trace};

use crate::output::{ensure_dir, tidy, write_atomic, write_json, write_rows, Format};
use crate::Failure;

#[derive(clap::Args, Debug)]
#[command(allow_negative_numbers = true)]
pub struct Args {
    /// Glob of JSONL trace files, e.g. 'runs/*/trace-*.jsonl'.
    traces: String,
    #[arg(long, default_value = "reports")]
    out: PathBuf,
    /// Playback rate, chunks/s; inferred from each trace's service head
    /// when omitted.
    #[arg(long)]
    r: Option<f64>,
    /// Histogram bin width for turnover factors and setup times, seconds.
    #[arg(long = "bin-width", default_value_t = 5.0)]
    bin_width: f64,
    /// Histogram bin width for download rates.
    #[arg(long = "gamma-bin-width", default_value_t = 0.25)]
    gamma_bin_width: f64,
    /// Seconds subtracted from setup-time estimates (join latency of
    /// crawled peers).
    #[arg(long = "tau-off-correction", default_value_t = 0.0)]
    tau_off_correction: f64,
    /// Format of the aggregate estimates table.
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

/// One line of the aggregate table; `None` is an invalid estimate.
#[derive(Debug, Serialize)]
struct Row {
    file: String,
    peer: String,
    samples: usize,
    host: bool,
    r: f64,
    tau_off_aa: Option<f64>,
    tau_off_li: Option<f64>,
    beta_width_jump: Option<f64>,
    beta_dv_turn: Option<f64>,
    beta_flat_mean: Option<f64>,
    beta_pv_jump: Option<f64>,
    beta_median: Option<f64>,
    gamma_e2e: Option<f64>,
    gamma_seg: Option<f64>,
    w_star: Option<f64>,
    theta: Option<f64>,
    group: Option<String>,
}

impl Row {
    fn new(file: &str, rep: &EstimatorReport) -> Self {
        let beta = |m: BetaMethod| rep.beta.get(&m).and_then(|e| e.value).map(tidy);
        let v = |e: &tblab_core::Estimate| e.value.map(tidy);
        Row {
            file: file.to_owned(),
            peer: rep.peer.clone(),
            samples: rep.samples,
            host: rep.host,
            r: tidy(rep.r),
            tau_off_aa: v(&rep.tau_off_aa),
            tau_off_li: v(&rep.tau_off_li),
            beta_width_jump: beta(BetaMethod::WidthJump),
            beta_dv_turn: beta(BetaMethod::DvTurn),
            beta_flat_mean: beta(BetaMethod::FlatMean),
            beta_pv_jump: beta(BetaMethod::PvJump),
            beta_median: rep.beta_median().map(tidy),
            gamma_e2e: v(&rep.gamma_e2e),
            gamma_seg: v(&rep.gamma_seg),
            w_star: v(&rep.w_star),
            theta: v(&rep.theta),
            group: rep.group.value.map(|g| g.to_string()),
        }
    }
}

#[derive(Debug, Serialize)]
struct Bin {
    quantity: &'static str,
    lo: f64,
    hi: f64,
    count: usize,
}

/// Contiguous bins from the lowest to the highest value, empty ones
/// included so the table plots directly.
fn histogram(quantity: &'static str, xs: &[f64], width: f64) -> Vec<Bin> {
    let mut counts = BTreeMap::new();
    for x in xs {
        *counts.entry((x / width).floor() as i64).or_insert(0) += 1;
    }
    let (Some(&lo), Some(&hi)) = (counts.keys().next(), counts.keys().next_back()) else {
        return Vec::new();
    };
    (lo..=hi)
        .map(|k| Bin {
            quantity,
            lo: tidy(k as f64 * width),
            hi: tidy((k + 1) as f64 * width),
            count: counts.get(&k).copied().unwrap_or(0),
        })
        .collect()
}

fn read_traces(path: &Path) -> anyhow::Result<Vec<Trace>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let traces = read_jsonl(BufReader::new(f)).with_context(|| format!("{}", path.display()))?;
    anyhow::ensure!(!traces.is_empty(), "{}: no samples", path.display());
    Ok(traces)
}

fn report_name(path: &Path, peer: &str, taken: &mut HashSet<String>) -> String {
    let stem = path
        .file_stem()
        .map_or("trace".into(), |s| s.to_string_lossy());
    let clean = |s: &str| -> String {
        s.chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                    c
                } else {
                    '_'
                }
            })
            .collect()
    };
    let base = format!("{}.{}", clean(&stem), clean(peer));
    let mut name = format!("{base}.json");
    let mut n = 1;
    while !taken.insert(name.clone()) {
        n += 1;
        name = format!("{base}-{n}.json");
    }
    name
}

pub fn run(a: Args) -> Result<(), Failure> {
    if !(a.bin_width > 0.0 && a.gamma_bin_width > 0.0) {
        return Err(Failure::invalid("bin widths must be positive"));
    }
    if let Some(r) = a.r {
        if !(r.is_finite() && r > 0.0) {
            return Err(Failure::invalid(format!("r must be positive (got {r})")));
        }
    }
    let paths: Vec<PathBuf> = glob::glob(&a.traces)
        .map_err(|e| Failure::invalid(format!("bad pattern {}: {e}", a.traces)))?
        .filter_map(|p| p.map_err(|e| log::warn!("{e}")).ok())
        .filter(|p| p.is_file())
        .collect();
    if paths.is_empty() {
        return Err(Failure::missing(format!(
            "no trace files match {}",
            a.traces
        )));
    }
    let cfg = EstimatorConfig {
        tau_off_correction: a.tau_off_correction,
        ..EstimatorConfig::default()
    };

    ensure_dir(&a.out)?;
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    let mut taken = HashSet::new();
    for path in &paths {
        let traces = match read_traces(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("skipped: {e:#}");
                failed.push(path.display().to_string());
                continue;
            }
        };
        for tr in &traces {
            let Some(r) = a.r.or_else(|| infer_rate(tr)).filter(|r| *r > 0.0) else {
                eprintln!(
                    "skipped: {} peer {}: cannot infer the playback rate, pass --r",
                    path.display(),
                    tr.peer()
                );
                failed.push(format!("{}#{}", path.display(), tr.peer()));
                continue;
            };
            let rep = analyze(tr, r, &cfg);
            let name = report_name(path, tr.peer(), &mut taken);
            write_json(&a.out.join(&name), &rep)?;
            rows.push(Row::new(&path.display().to_string(), &rep));
        }
    }

    write_rows(&a.out, "estimates", a.format, &rows)?;
    let hosts: Vec<&Row> = rows.iter().filter(|r| r.host).collect();
    let pick = |f: &dyn Fn(&Row) -> Option<f64>| -> Vec<f64> {
        hosts.iter().filter_map(|r| f(r)).collect()
    };
    let mut bins = histogram("beta", &pick(&|r| r.beta_median), a.bin_width);
    bins.extend(histogram("tau_off", &pick(&|r| r.tau_off_li), a.bin_width));
    bins.extend(histogram(
        "gamma",
        &pick(&|r| r.gamma_e2e),
        a.gamma_bin_width,
    ));
    write_atomic(
        &a.out.join("histograms.csv"),
        &crate::output::csv_bytes(&bins)?,
    )?;

    println!(
        "{} traces analyzed ({} hosts) into {}",
        rows.len(),
        hosts.len(),
        a.out.display()
    );
    if failed.is_empty() {
        Ok(())
    } else if rows.is_empty() {
        Err(Failure::invalid(format!(
            "no trace could be analyzed: {}",
            failed.join(", ")
        )))
    } else {
        Err(Failure::partial(format!(
            "{} of {} inputs failed: {}",
            failed.len(),
            failed.len() + rows.len(),
            failed.join(", ")
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_fills_gaps() {
        let bins = histogram("beta", &[88.0, 91.0, 104.0], 5.0);
        let counts: Vec<usize> = bins.iter().map(|b| b.count).collect();
        assert_eq!(counts, [1, 1, 0, 1]);
        assert_eq!((bins[0].lo, bins[3].hi), (85.0, 105.0));
        assert!(histogram("beta", &[], 5.0).is_empty());
    }

    #[test]
    fn report_names_are_unique() {
        let mut taken = HashSet::new();
        let a = report_name(Path::new("a/trace.jsonl"), "host", &mut taken);
        let b = report_name(Path::new("b/trace.jsonl"), "host", &mut taken);
        let c = report_name(Path::new("x.jsonl"), "peer 7/2", &mut taken);
        assert_eq!(a, "trace.host.json");
        assert_eq!(b, "trace.host-2.json");
        assert_eq!(c, "x.peer_7_2.json");
    }
}
