use anyhow::{bail, Result};

use explore_core::analysis::{analytic_times, lemma_rows, LemmaRow};
use explore_core::concept_model::{check_against_oracle, KernelKind, OracleCheck};

#[derive(clap::Args, Debug)]
pub struct LemmaArgs {
    /// Vocabulary size.
    #[arg(long)]
    n: u64,
    /// Number of relevant clusters.
    #[arg(long)]
    c: u64,
    /// Concepts per cluster.
    #[arg(long)]
    s: u64,
    /// Monte Carlo trials per mode.
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    /// Skip the simulation.
    #[arg(long)]
    analytic_only: bool,
    /// Fail when a simulated mean is more than 3 standard errors off.
    #[arg(long)]
    check: bool,
}

pub fn lemma(a: LemmaArgs, seed: Option<u64>) -> Result<()> {
    let t = analytic_times(a.n, a.c, a.s)?;
    let trials = (!a.analytic_only).then_some(a.trials);
    if trials == Some(0) {
        return Err(crate::usage("--trials must be at least 1"));
    }
    let rows = lemma_rows(a.n, a.c, a.s, trials, seed.unwrap_or(0))?;
    println!("{}", LemmaRow::HEADER);
    for r in &rows {
        println!("{}", r.to_csv());
    }
    eprintln!(
        "t_base = {}  t_gpr = {}  speedup = {}",
        t.t_base, t.t_gpr, t.speedup
    );
    if a.check {
        for r in &rows {
            if let Some(dev) = r.deviation_sigmas() {
                if dev > 3.0 {
                    bail!(
                        "{} mode: empirical mean is {dev:.2} standard errors from analytic",
                        r.mode.as_str()
                    );
                }
            }
        }
    }
    Ok(())
}

#[derive(clap::Args, Debug)]
pub struct GprArgs {
    #[arg(long, default_value_t = 100)]
    instances: usize,
    /// Observations per instance are drawn from 1..=max-obs.
    #[arg(long, default_value_t = 50)]
    max_obs: usize,
    /// Embedding dimension is drawn from 1..=dim.
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Random query points per instance.
    #[arg(long, default_value_t = 20)]
    queries: usize,
    /// euclidean (exp(-|a-b|/2)) or squared (exp(-|a-b|^2/2)).
    #[arg(long, default_value = "euclidean")]
    kernel: String,
    /// Fail when deviation exceeds 1e-8 or std at data exceeds 1e-3.
    #[arg(long)]
    check: bool,
}

pub fn gpr_check(a: GprArgs, seed: Option<u64>) -> Result<()> {
    let kernel = match a.kernel.as_str() {
        "euclidean" => KernelKind::Euclidean,
        "squared" => KernelKind::Squared,
        k => return Err(crate::usage(format!("unknown kernel {k:?}"))),
    };
    let probe = vec![0.25; a.dim.max(1)];
    let rep = check_against_oracle(&OracleCheck {
        instances: a.instances,
        max_observations: a.max_obs,
        max_dimension: a.dim,
        queries: a.queries,
        kernel,
        seed: seed.unwrap_or(0),
    })?;
    println!("kernel self-value {:?}", kernel.eval(&probe, &probe));
    println!("instances {}", rep.instances);
    println!("max mean deviation {:e}", rep.max_mean_deviation);
    println!("max std deviation {:e}", rep.max_std_deviation);
    println!("max std at observed points {:e}", rep.max_std_at_observed);
    println!("min std {:e}", rep.min_std);
    if a.check {
        let dev = rep.max_mean_deviation.max(rep.max_std_deviation);
        if dev > 1e-8 {
            bail!("posterior deviates from the oracle by {dev:e}");
        }
        if rep.max_std_at_observed > 1e-3 {
            bail!("std at observed points is {:e}", rep.max_std_at_observed);
        }
        if rep.min_std < 0.0 {
            bail!("negative std");
        }
    }
    Ok(())
}
