use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde_json::{json, Value};

use explore_core::engine::{
    build_environment, Engine, EngineConfig, IterationMetrics, Mode, QueryTrace, StaticDescriptors,
};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Engine config file (key = value lines).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    iterations: u32,
    /// Overrides the config mode: random, ours, ours_plus_plus, labels_only,
    /// labels_plus_relevant.
    #[arg(long)]
    mode: Option<String>,
    /// Directory for metrics.csv, manifest.json and optional outputs.
    #[arg(long, default_value = "explore_out")]
    out_dir: PathBuf,
    /// Also write a per-query trace.csv.
    #[arg(long)]
    trace: bool,
    /// Save a buffer and state checkpoint under <out-dir>/checkpoint.
    #[arg(long)]
    checkpoint: bool,
    /// Continue from a checkpoint directory.
    #[arg(long)]
    resume: Option<PathBuf>,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

fn write_manifest(path: &Path, m: &Value) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_string_pretty(m)? + "\n")?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn run(a: Args, seed: Option<u64>) -> Result<()> {
    let mut cfg = EngineConfig::load(&a.config)?;
    if let Some(m) = &a.mode {
        cfg.mode = m.parse::<Mode>()?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if a.iterations == 0 {
        return Err(crate::usage("--iterations must be at least 1"));
    }
    cfg.validate()?;

    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let metrics_path = a.out_dir.join("metrics.csv");
    let trace_path = a.trace.then(|| a.out_dir.join("trace.csv"));
    let ckpt_path = a.checkpoint.then(|| a.out_dir.join("checkpoint"));
    let manifest_path = a.out_dir.join("manifest.json");
    let mut manifest = json!({
        "artifact": "explorer",
        "version": env!("CARGO_PKG_VERSION"),
        "status": "running",
        "started_at": now(),
        "finished_at": null,
        "config_path": a.config.display().to_string(),
        "config": cfg.to_config_string(),
        "mode": cfg.mode.as_str(),
        "seed": cfg.seed,
        "world_seed": cfg.world_spec().map(|w| w.seed),
        "iterations": a.iterations,
        "resumed_from": a.resume.as_ref().map(|p| p.display().to_string()),
        "outputs": {
            "metrics": metrics_path.display().to_string(),
            "trace": trace_path.as_ref().map(|p| p.display().to_string()),
            "checkpoint": ckpt_path.as_ref().map(|p| p.display().to_string()),
        },
    });
    write_manifest(&manifest_path, &manifest)?;

    let result = drive(
        &a,
        cfg,
        &metrics_path,
        trace_path.as_deref(),
        ckpt_path.as_deref(),
    );
    manifest["finished_at"] = json!(now());
    match &result {
        Ok(summary) => {
            manifest["status"] = json!("ok");
            manifest["summary"] = summary.clone();
        }
        Err(e) => {
            manifest["status"] = json!("failed");
            manifest["error"] = json!(format!("{e:#}"));
        }
    }
    write_manifest(&manifest_path, &manifest)?;
    result.map(|_| ())
}

fn drive(
    a: &Args,
    cfg: EngineConfig,
    metrics_path: &Path,
    trace_path: Option<&Path>,
    ckpt_path: Option<&Path>,
) -> Result<Value> {
    let env = build_environment(&cfg)?;
    let desc = StaticDescriptors::for_source(cfg.descriptors);
    let mut engine = match &a.resume {
        Some(dir) => Engine::resume(cfg, env.as_ref(), &desc, dir)?,
        None => Engine::new(cfg, env.as_ref(), &desc)?,
    };
    let mut metrics = BufWriter::new(File::create(metrics_path)?);
    writeln!(metrics, "{}", IterationMetrics::HEADER)?;
    let mut trace = match trace_path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            writeln!(w, "{}", QueryTrace::HEADER)?;
            Some(w)
        }
        None => None,
    };
    let rows = engine.run_with(a.iterations, |o| {
        writeln!(metrics, "{}", o.metrics.to_csv())?;
        metrics.flush()?;
        if let Some(w) = trace.as_mut() {
            for t in &o.trace {
                writeln!(w, "{}", t.to_csv(o.metrics.fidelity, o.metrics.accuracy))?;
            }
        }
        log::info!(
            "iteration {} accepted {} accuracy {:?}",
            o.metrics.iteration,
            o.metrics.accepted_images,
            o.metrics.accuracy
        );
        Ok(())
    })?;
    if let Some(mut w) = trace {
        w.flush()?;
    }
    if let Some(dir) = ckpt_path {
        engine.checkpoint(dir)?;
    }
    let last = rows.last().expect("at least one iteration");
    let st = engine.state();
    Ok(json!({
        "rows": rows.len(),
        "final_iteration": last.iteration,
        "final_accuracy": last.accuracy,
        "final_fidelity": last.fidelity,
        "clusters_discovered": last.clusters_discovered,
        "all_clusters_discovered_at": st.discovered_at,
        "queries_total": st.queries_total,
        "buffer_size": st.buffer.len(),
        "discovery_threshold": engine.discovery_threshold(),
    }))
}
