//! Acceptance suite: ten end-to-end checks, each with a runtime bound. Runs
//! sequentially so timings are not skewed by other tests.

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use explore_core::analysis::{
    analytic_times, discovery_times, harmonic, simulate_discovery, DiscoveryConfig, DiscoveryMode,
};
use explore_core::concept_model::{check_against_oracle, OracleCheck};
use explore_core::dedup::{count_collisions, dhash, DHash, GrayImage};
use explore_core::engine::{Engine, EngineConfig, Mode, SimEnvironment, StaticDescriptors};
use explore_core::relevance::{image_reward, infonce_from_logits, infonce_loss, TargetSet};
use explore_core::scheduler::{SamplingPlan, TierSpec};
use explore_core::search_index::{recall, CaptionIndex, IndexMode, SyntheticCorpus};
use explore_core::simulator::make_world;
use explore_core::vector::{cosine, dot, normalized};

type Check = Result<String, String>;

/// Name, check and runtime limit in seconds.
type Criterion = (&'static str, fn() -> Check, u64);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn config_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/sim_pets.cfg")
}

fn lemma_analytic() -> Check {
    let t = analytic_times(150_000, 2, 150).map_err(|e| e.to_string())?;
    ensure(t.t_gpr == 1500.0, || format!("t_gpr = {}", t.t_gpr))?;
    let want = 150_000.0 * harmonic(300).unwrap();
    ensure(t.t_base == want, || format!("t_base = {}", t.t_base))?;
    Ok(format!("t_gpr = {}, t_base = {:.1}", t.t_gpr, t.t_base))
}

fn lemma_monte_carlo() -> Check {
    let mut out = Vec::new();
    for mode in [DiscoveryMode::Base, DiscoveryMode::Gpr] {
        let cfg = DiscoveryConfig {
            n: 1000,
            c: 5,
            s: 20,
            mode,
            trials: 1000,
            seed: 2024,
        };
        let est = simulate_discovery(&cfg).map_err(|e| e.to_string())?;
        let want = cfg.analytic().unwrap();
        let rel = (est.mean_time - want).abs() / want;
        let se = (est.mean_time - want).abs() / est.std_error;
        ensure(rel <= 0.05 && se <= 3.0, || {
            format!(
                "{}: {:.2} vs {want:.2} ({rel:.3}, {se:.2} SE)",
                mode.as_str(),
                est.mean_time
            )
        })?;
        out.push(format!(
            "{} {:.1} vs {:.1}",
            mode.as_str(),
            est.mean_time,
            want
        ));
    }
    let grid = [
        (100, 2, 5),
        (200, 4, 10),
        (500, 5, 20),
        (1000, 5, 20),
        (300, 1, 30),
        (2000, 10, 10),
    ];
    for (n, c, s) in grid {
        let base = DiscoveryConfig {
            n,
            c,
            s,
            mode: DiscoveryMode::Base,
            trials: 200,
            seed: 7,
        };
        let gpr = DiscoveryConfig {
            mode: DiscoveryMode::Gpr,
            ..base
        };
        let (b, g) = (
            discovery_times(&base).unwrap(),
            discovery_times(&gpr).unwrap(),
        );
        ensure(b.iter().zip(&g).all(|(b, g)| g <= b), || {
            format!("paired gpr > base at ({n},{c},{s})")
        })?;
    }
    out.push("paired gpr <= base on 6 configs".into());
    Ok(out.join("; "))
}

fn gpr_oracle() -> Check {
    let rep = check_against_oracle(&OracleCheck::default()).map_err(|e| e.to_string())?;
    let dev = rep.max_mean_deviation.max(rep.max_std_deviation);
    ensure(dev <= 1e-8, || format!("deviation {dev:e}"))?;
    ensure(rep.max_std_at_observed <= 1e-3, || {
        format!("std at data {:e}", rep.max_std_at_observed)
    })?;
    ensure(rep.min_std >= 0.0, || format!("min std {:e}", rep.min_std))?;
    Ok(format!(
        "{} instances, max deviation {dev:.1e}, std at data <= {:.1e}",
        rep.instances, rep.max_std_at_observed
    ))
}

fn reward_subsets() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let d = rng.random_range(1..=6);
        let m = rng.random_range(1..=8);
        let mut v = || -> Vec<f64> { (0..d).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let y = v();
        let t: Vec<Vec<f64>> = (0..m).map(|_| v()).collect();
        let k = rng.random_range(1..=4usize).min(t.len());
        let sims: Vec<f64> = t.iter().map(|x| cosine(&y, x).unwrap()).collect();
        let mut best = f64::NEG_INFINITY;
        for mask in 0u32..(1 << t.len()) {
            if mask.count_ones() as usize == k {
                let s: f64 = (0..t.len())
                    .filter(|i| mask >> i & 1 == 1)
                    .map(|i| sims[i])
                    .sum();
                best = best.max(s / k as f64);
            }
        }
        let r = image_reward(&y, &TargetSet::new(t).unwrap(), k).unwrap();
        worst = worst.max((r - best).abs());
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("1000 instances, max deviation {worst:.1e}"))
}

fn tiering() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tiers = TierSpec::default();
    for n in [4usize, 1000, 20_000] {
        let scored: Vec<(usize, f64)> = (0..n).map(|i| (i, rng.random::<f64>())).collect();
        let plan = SamplingPlan::build(&scored, 3.0, &tiers).map_err(|e| e.to_string())?;
        let res = tiers.resolve(n);
        let p = &plan.probabilities;
        for ((a, b), m) in res.ranges.iter().zip(&res.masses) {
            let mass: f64 = p[*a..*b].iter().sum();
            ensure((mass - m).abs() <= 1e-12, || {
                format!("N={n} tier {a}..{b}: {mass}")
            })?;
            for i in *a..*b {
                let r = (p[i] / p[*a]) / (plan.softmax[i] / plan.softmax[*a]);
                ensure((r - 1.0).abs() <= 1e-9, || format!("N={n} ratio {r}"))?;
            }
        }
        let (lo, hi) = plan
            .softmax
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(l, h), &x| (l.min(x), h.max(x)));
        ensure((hi / lo - 3f64.exp()).abs() <= 1e-4, || {
            format!("N={n} max/min {}", hi / lo)
        })?;
    }
    Ok("masses, within-tier ratios and exp(3) ratio hold for N = 4, 1000, 20000".into())
}

fn infonce() -> Check {
    let l = infonce_loss(&[0.6, -0.2], &[1.0, 0.5], &[vec![1.0, 0.5]], 1.0)
        .map_err(|e| e.to_string())?;
    ensure((l.loss - 2f64.ln()).abs() <= 1e-12, || {
        format!("symmetric loss {}", l.loss)
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = 1e-5;
    for _ in 0..100 {
        let pos = rng.random_range(-2.0..2.0);
        let negs: Vec<f64> = (0..rng.random_range(1..8))
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let f = |p: f64, n: &[f64]| infonce_from_logits(p, n, 1.0).unwrap().loss;
        let base = f(pos, &negs);
        ensure(f(pos + h, &negs) < base, || {
            format!("not decreasing in q.k+ at {pos}")
        })?;
        for j in 0..negs.len() {
            let mut up = negs.clone();
            up[j] += h;
            ensure(f(pos, &up) > base, || {
                format!("not increasing in q.k- at {pos}")
            })?;
        }
    }
    Ok(format!(
        "symmetric loss {:.15}; monotone at 100 points",
        l.loss
    ))
}

fn simulated_ordering() -> Check {
    let base = EngineConfig::load(config_path()).map_err(|e| e.to_string())?;
    let iterations = 15;
    let seeds = 10u64;
    let (mut ordered, mut disc_random, mut disc_ours) = (0, 0.0, 0.0);
    let mut lines = Vec::new();
    for seed in 0..seeds {
        let mut acc = Vec::new();
        for mode in [Mode::Random, Mode::Ours, Mode::OursPlusPlus] {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.mode = mode;
            let env = SimEnvironment::new(make_world(&cfg.world_spec().unwrap()).unwrap());
            let d = StaticDescriptors::for_source(cfg.descriptors);
            let mut e = Engine::new(cfg, &env, &d).map_err(|e| e.to_string())?;
            let rows = e.run(iterations).map_err(|e| e.to_string())?;
            acc.push(rows.last().unwrap().accuracy.unwrap());
            // Runs that never discover every cluster are censored at the budget.
            let st = e.state();
            let disc = st.discovered_at.unwrap_or(st.queries_total) as f64;
            match mode {
                Mode::Random => disc_random += disc,
                Mode::Ours => disc_ours += disc,
                _ => {}
            }
        }
        let ok = acc[0] <= acc[1] && acc[1] <= acc[2];
        ordered += ok as u32;
        lines.push(format!(
            "    seed {seed}: random {:.3} ours {:.3} ours++ {:.3}{}",
            acc[0],
            acc[1],
            acc[2],
            if ok { "" } else { " (out of order)" }
        ));
    }
    println!("{}", lines.join("\n"));
    let ratio = disc_ours / disc_random;
    ensure(ordered >= 8, || {
        format!("ordered on {ordered}/{seeds} seeds")
    })?;
    ensure(ratio <= 1.0 / 3.0, || format!("discovery ratio {ratio:.3}"))?;
    Ok(format!(
        "ordered on {ordered}/{seeds} seeds; discovery ours/random = {:.1}/{:.1} = {ratio:.3}",
        disc_ours / seeds as f64,
        disc_random / seeds as f64
    ))
}

fn index_correctness() -> Check {
    let corpus = SyntheticCorpus::new(100_000, 64, 8);
    let entries = corpus.entries();
    let exact = CaptionIndex::build(&entries, IndexMode::Exact).map_err(|e| e.to_string())?;
    let accel =
        CaptionIndex::build(&entries, IndexMode::accelerated()).map_err(|e| e.to_string())?;
    let units: Vec<Vec<f64>> = entries
        .iter()
        .map(|e| normalized(&e.caption_embedding).unwrap())
        .collect();
    let mut total = 0.0;
    let queries = corpus.queries(20);
    for q in &queries {
        let qu = normalized(q).unwrap();
        let mut scan: Vec<(f64, u64)> = units
            .iter()
            .zip(&entries)
            .map(|(u, e)| (dot(u, &qu), e.image_id))
            .collect();
        scan.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let want: Vec<u64> = scan.iter().take(100).map(|x| x.1).collect();
        let got = exact.query(q, 100).map_err(|e| e.to_string())?;
        ensure(got.ids() == want, || {
            "exact top-100 differs from scan".into()
        })?;
        total += recall(&got, &accel.query(q, 100).unwrap());
    }
    let r = total / queries.len() as f64;
    ensure(r >= 0.95, || format!("recall@100 {r:.4}"))?;
    let (lists, probes) = accel.list_config().unwrap();
    Ok(format!(
        "exact matches scan on 20 queries; recall@100 {r:.4} ({probes}/{lists} lists)"
    ))
}

fn dhash_audit() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut img = |w: usize, h: usize, max: u8| {
        let px = (0..w * h).map(|_| rng.random_range(0..=max)).collect();
        GrayImage::new(w, h, px).unwrap()
    };
    let train: Vec<GrayImage> = (0..500).map(|_| img(24, 20, 255)).collect();
    let mut test: Vec<GrayImage> = (0..3663 - 21).map(|_| img(24, 20, 255)).collect();
    test.extend(train.iter().step_by(20).take(21).cloned());
    let a: Vec<DHash> = train.iter().map(dhash).collect();
    let b: Vec<DHash> = test.iter().map(dhash).collect();
    let report = count_collisions(&a, &b, 0)
        .map_err(|e| e.to_string())?
        .to_string();
    ensure(report == "21 (0.57%)", || format!("report {report}"))?;
    let flat = GrayImage::new(13, 9, vec![77; 117]).unwrap();
    ensure(dhash(&flat) == DHash(0), || {
        "constant image hash is not 0".into()
    })?;
    for _ in 0..100 {
        let x = img(17, 11, 200);
        let shifted = GrayImage::new(17, 11, x.pixels().iter().map(|p| p + 55).collect()).unwrap();
        ensure(dhash(&x) == dhash(&shifted), || {
            "hash changed under shift".into()
        })?;
    }
    Ok(format!(
        "report {report}; constant image -> 0; shift invariant on 100 images"
    ))
}

fn explore_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_explorer"))
            .args(["explore", "--config"])
            .arg(config_path())
            .args([
                "--iterations",
                "15",
                "--mode",
                "ours_plus_plus",
                "--seed",
                "3",
                "--out-dir",
            ])
            .arg(&out)
            .status()
            .map_err(|e| e.to_string())?;
        ensure(status.success(), || format!("explore exited with {status}"))?;
        outputs.push(std::fs::read(out.join("metrics.csv")).map_err(|e| e.to_string())?);
    }
    let rows = outputs[0].iter().filter(|&&b| b == b'\n').count();
    ensure(rows == 16, || format!("{rows} lines in metrics CSV"))?;
    ensure(outputs[0] == outputs[1], || "metrics CSVs differ".into())?;
    Ok(format!("two runs, {} identical bytes", outputs[0].len()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("lemma analytic", lemma_analytic, 1),
        ("lemma Monte Carlo", lemma_monte_carlo, 30),
        ("GP oracle equivalence", gpr_oracle, 10),
        ("top-k reward equals best subset", reward_subsets, 5),
        ("tiering exactness", tiering, 5),
        ("InfoNCE", infonce, 5),
        ("simulated exploration ordering", simulated_ordering, 300),
        ("search index correctness", index_correctness, 60),
        ("dHash audit", dhash_audit, 10),
        ("end-to-end determinism", explore_determinism, 300),
    ];
    let mut failed = 0;
    for (i, (name, f, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let res = f();
        let took = start.elapsed();
        let res = res.and_then(|m| {
            if took <= Duration::from_secs(*limit) {
                Ok(m)
            } else {
                Err(format!("took {:.1}s, limit {limit}s", took.as_secs_f64()))
            }
        });
        match res {
            Ok(m) => println!(
                "criterion {:2} PASS {name} [{:.2}s]: {m}",
                i + 1,
                took.as_secs_f64()
            ),
            Err(m) => {
                failed += 1;
                println!(
                    "criterion {:2} FAIL {name} [{:.2}s]: {m}",
                    i + 1,
                    took.as_secs_f64()
                );
            }
        }
    }
    println!("acceptance: {}/10 passed", 10 - failed);
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
