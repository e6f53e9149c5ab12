use std::fmt::Write as _;
use std::fs;

use explore_core::engine::{
    build_environment, Engine, EngineConfig, Mode, SimEnvironment, StaticDescriptors,
};
use explore_core::search_index::{write_corpus, CorpusEntry};
use explore_core::simulator::make_world;

fn small_sim(mode: Mode, seed: u64) -> EngineConfig {
    let text = format!(
        "mode = {}\nseed = {seed}\nqueries_per_iteration = 24\nresults_per_query = 20\n\
         sim.n = 1200\nsim.c = 2\nsim.s = 30\nsim.background_groups = 30\nsim.targets = 60\nsim.heldout = 60\n",
        mode.as_str()
    );
    EngineConfig::parse(&text).unwrap()
}

fn run(
    cfg: EngineConfig,
    iterations: u32,
) -> (
    Vec<explore_core::engine::IterationMetrics>,
    Option<u64>,
    u64,
) {
    let env = SimEnvironment::new(make_world(&cfg.world_spec().unwrap()).unwrap());
    let d = StaticDescriptors::for_source(cfg.descriptors);
    let mut e = Engine::new(cfg, &env, &d).unwrap();
    let rows = e.run(iterations).unwrap();
    (rows, e.state().discovered_at, e.state().queries_total)
}

#[test]
fn per_iteration_counts() {
    for mode in Mode::ALL {
        let cfg = small_sim(mode, 1);
        let m = cfg.queries_per_iteration;
        let (rows, _, total) = run(cfg, 4);
        assert_eq!(total, 4 * m as u64);
        for r in &rows {
            assert_eq!(r.queries, m);
            assert_eq!(r.kept, r.accepted_images.div_ceil(2));
            assert!(r.distinct_concepts <= m);
        }
        let sizes: Vec<usize> = rows.iter().map(|r| r.buffer_size).collect();
        let kept: usize = rows.iter().map(|r| r.kept).sum();
        assert_eq!(*sizes.last().unwrap(), kept, "{mode:?}");
    }
}

#[test]
fn same_seed_same_trajectory() {
    let a = run(small_sim(Mode::OursPlusPlus, 7), 5);
    let b = run(small_sim(Mode::OursPlusPlus, 7), 5);
    assert_eq!(a.0, b.0);
    let c = run(small_sim(Mode::OursPlusPlus, 8), 5);
    assert_ne!(a.0, c.0);
}

#[test]
fn model_discovers_clusters_before_random() {
    let (mut ours, mut random) = (0u64, 0u64);
    for seed in 0..4 {
        let (_, d, total) = run(small_sim(Mode::Ours, seed), 10);
        ours += d.unwrap_or(total);
        let (_, d, total) = run(small_sim(Mode::Random, seed), 10);
        random += d.unwrap_or(total);
    }
    assert!(ours <= random, "ours {ours} random {random}");
}

/// A tiny on-disk corpus: two concept groups, targets near the first.
#[test]
fn corpus_environment_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let dim = 6;
    let axis = |k: usize, j: usize, eps: f64| -> Vec<f64> {
        (0..dim)
            .map(|i| {
                if i == k {
                    1.0
                } else {
                    eps * ((i + j) % 3) as f64
                }
            })
            .collect()
    };
    let mut vocab = String::new();
    for j in 0..60 {
        let e = axis(j % dim, j, 0.05);
        let floats: Vec<String> = e.iter().map(|x| x.to_string()).collect();
        writeln!(vocab, "concept_{j}\tthing\tan object\t{}", floats.join(" ")).unwrap();
    }
    fs::write(dir.path().join("vocab.tsv"), vocab).unwrap();
    let mut targets = String::new();
    for j in 0..10 {
        let floats: Vec<String> = axis(0, j, 0.1).iter().map(|x| x.to_string()).collect();
        writeln!(targets, "t{j}\t{}", floats.join(" ")).unwrap();
    }
    fs::write(dir.path().join("targets.tsv"), &targets).unwrap();
    fs::write(
        dir.path().join("labels.tsv"),
        targets.lines().take(2).collect::<Vec<_>>().join("\n"),
    )
    .unwrap();
    let entries: Vec<CorpusEntry> = (0..600)
        .map(|i| CorpusEntry {
            image_id: i,
            caption_embedding: axis(i as usize % dim, i as usize, 0.2),
            payload_ref: format!("img/{i}.jpg"),
        })
        .collect();
    write_corpus(dir.path().join("corpus.bin"), &entries).unwrap();
    let cfg_path = dir.path().join("run.cfg");
    fs::write(
        &cfg_path,
        "environment = corpus\ncorpus.vocabulary = vocab.tsv\ncorpus.targets = targets.tsv\n\
         corpus.index = corpus.bin\ncorpus.labels = labels.tsv\nqueries_per_iteration = 12\n\
         results_per_query = 20\nmode = labels_plus_relevant\n",
    )
    .unwrap();
    let cfg = EngineConfig::load(&cfg_path).unwrap();
    let env = build_environment(&cfg).unwrap();
    let d = StaticDescriptors::for_source(cfg.descriptors);
    let mut e = Engine::new(cfg, env.as_ref(), &d).unwrap();
    let rows = e.run(3).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows
        .iter()
        .all(|r| r.accepted_images == 12 * 20 && r.accuracy.is_none()));
    assert!(rows[2].mean_reward > 0.0);
}
