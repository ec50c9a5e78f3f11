use std::path::{Path, PathBuf};

use anyhow::Context;
use tblab_core::{sim, RunManifest, SwarmConfig};

use crate::output::{ensure_dir, write_atomic, write_json};
use crate::Failure;

#[derive(clap::Args, Debug)]
#[command(allow_negative_numbers = true)]
pub struct Args {
    /// JSON scenario; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "run")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Host download rate as a multiple of the playback rate.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long = "tau-off")]
    tau_off: Option<f64>,
    #[arg(long = "w-star")]
    w_star: Option<f64>,
    /// Playback rate, chunks/s.
    #[arg(long)]
    r: Option<f64>,
}

fn load(path: Option<&Path>) -> Result<SwarmConfig, Failure> {
    let Some(path) = path else {
        return Ok(SwarmConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::invalid(format!("config {}: {e}", path.display())))
}

pub fn run(a: Args) -> Result<(), Failure> {
    let mut cfg = load(a.config.as_deref())?;
    if let Some(x) = a.seed {
        cfg.seed = x;
    }
    if let Some(x) = a.gamma {
        cfg.gamma_p = x;
    }
    if let Some(x) = a.beta {
        cfg.tb.beta = x;
    }
    if let Some(x) = a.tau_off {
        cfg.tb.tau_off = x;
    }
    if let Some(x) = a.w_star {
        cfg.tb.w_star = x;
    }
    if let Some(x) = a.r {
        cfg.r = x;
    }
    let out = sim::run(&cfg).map_err(Failure::invalid)?;
    log::info!(
        "simulated {} s: {} requests, {} stored, {} misses",
        cfg.duration,
        out.stats.requests,
        out.stats.stored,
        out.stats.misses
    );

    ensure_dir(&a.out)?;
    let mut files = Vec::new();
    let mut put = |name: String, bytes: &[u8]| -> anyhow::Result<()> {
        write_atomic(&a.out.join(&name), bytes)?;
        files.push(name);
        Ok(())
    };
    put("trace-host.jsonl".into(), out.host.to_jsonl().as_bytes())?;
    for (i, t) in out.stable.iter().enumerate() {
        put(format!("trace-stable-{i}.jsonl"), t.to_jsonl().as_bytes())?;
    }
    let mut decisions = String::new();
    for d in &out.decisions {
        decisions.push_str(&serde_json::to_string(d).context("encoding decision")?);
        decisions.push('\n');
    }
    put("host-decisions.jsonl".into(), decisions.as_bytes())?;
    let mut config = serde_json::to_string_pretty(&cfg).context("encoding config")?;
    config.push('\n');
    put("config.json".into(), config.as_bytes())?;
    let mut stats = serde_json::to_string_pretty(&out.stats).context("encoding stats")?;
    stats.push('\n');
    put("stats.json".into(), stats.as_bytes())?;

    let manifest = RunManifest::new(&cfg, files);
    write_json(&a.out.join("manifest.json"), &manifest)?;
    println!(
        "{} traces in {} (config {})",
        out.stable.len() + 1,
        a.out.display(),
        &manifest.config_hash[..12]
    );
    Ok(())
}
