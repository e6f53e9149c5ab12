//! The exploration loop: sample concepts, search, score, compose training
//! data, update the encoder, retain, refit the concept model and rebuild the
//! sampling plan.

mod config;
mod environment;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;

pub use config::{DescriptorSource, EngineConfig, EnvironmentSpec, LabelMixPolicy, Mode};
pub use environment::{
    build_environment, query_text, Category, CorpusEnvironment, DescriptorProvider, Environment,
    SimEnvironment, StaticDescriptors,
};

use crate::concept_model::{score_all_with, GpModel, Observation};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::relevance::{aggregate, image_reward, ImageRecord};
use crate::replay::{compose_training_set, retain_top_fraction, PoolItem, ReplayBuffer};
use crate::scheduler::{sample_concepts, SamplingPlan};
use crate::seed::{self, tag};
use crate::simulator::{encoder_update, EncoderState};
use crate::vocabulary::{prune_by_label_set, Vocabulary};

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationMetrics {
    pub iteration: u32,
    pub queries: usize,
    pub failed: usize,
    pub dropped: usize,
    pub accepted_images: usize,
    pub kept: usize,
    pub buffer_size: usize,
    pub distinct_concepts: usize,
    pub mean_reward: f64,
    pub mean_score_relevant: Option<f64>,
    pub mean_score_other: Option<f64>,
    pub relevant_queries: Option<usize>,
    pub training_relevant_fraction: Option<f64>,
    pub fidelity: f64,
    pub accuracy: Option<f64>,
    pub clusters_discovered: Option<usize>,
    pub queries_total: u64,
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl IterationMetrics {
    pub const HEADER: &'static str =
        "iteration,queries,failed,dropped,accepted_images,kept,buffer_size,\
distinct_concepts,mean_reward,mean_score_relevant,mean_score_other,relevant_queries,\
training_relevant_fraction,fidelity,accuracy,clusters_discovered,queries_total";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.queries,
            self.failed,
            self.dropped,
            self.accepted_images,
            self.kept,
            self.buffer_size,
            self.distinct_concepts,
            self.mean_reward,
            opt(self.mean_score_relevant),
            opt(self.mean_score_other),
            opt(self.relevant_queries),
            opt(self.training_relevant_fraction),
            self.fidelity,
            opt(self.accuracy),
            opt(self.clusters_discovered),
            self.queries_total
        )
    }
}

/// Per-query trace row.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryTrace {
    pub iteration: u32,
    pub slot: usize,
    pub concept: usize,
    pub query: String,
    pub category: Option<Category>,
    /// Concept score, absent when the query failed or was dropped.
    pub score: Option<f64>,
    pub results: usize,
}

impl QueryTrace {
    pub const HEADER: &'static str =
        "iteration,slot,concept,query,category,score,results,fidelity,accuracy";

    pub fn to_csv(&self, fidelity: f64, accuracy: Option<f64>) -> String {
        let cat = match self.category {
            Some(Category::Relevant(k)) => format!("cluster_{k}"),
            Some(Category::Other) => "other".into(),
            None => String::new(),
        };
        format!(
            "{},{},{},\"{}\",{},{},{},{},{}",
            self.iteration,
            self.slot,
            self.concept,
            self.query.replace('"', "\"\""),
            cat,
            opt(self.score),
            self.results,
            fidelity,
            opt(accuracy)
        )
    }
}

#[derive(Debug, Clone)]
pub struct IterationOutcome {
    pub metrics: IterationMetrics,
    pub trace: Vec<QueryTrace>,
}

/// Mutable loop state.
#[derive(Debug, Clone)]
pub struct EngineState {
    pub iteration: u32,
    /// Concept id to the concept scores of every accepted query for it.
    pub observations: BTreeMap<usize, Vec<f64>>,
    pub buffer: ReplayBuffer,
    pub plan: SamplingPlan,
    pub encoder: EncoderState,
    pub history: Vec<IterationMetrics>,
    pub seen_content: HashSet<u64>,
    pub descriptor_counters: HashMap<usize, u32>,
    pub next_record_id: u64,
    pub queries_total: u64,
    /// `queries_total` when every cluster was first discovered.
    pub discovered_at: Option<u64>,
    /// Posterior mean per concept from the last refit.
    posterior_means: HashMap<usize, f64>,
}

pub struct Engine<'a> {
    cfg: EngineConfig,
    env: &'a dyn Environment,
    descriptors: &'a dyn DescriptorProvider,
    /// Concepts eligible for sampling (possibly label-pruned).
    active: Vocabulary,
    active_ids: Vec<usize>,
    threshold: Option<f64>,
    exec: Execution,
    state: EngineState,
}

impl<'a> Engine<'a> {
    pub fn new(
        cfg: EngineConfig,
        env: &'a dyn Environment,
        descriptors: &'a dyn DescriptorProvider,
    ) -> Result<Self> {
        cfg.validate()?;
        if cfg.mode.uses_descriptors() && descriptors.is_empty() {
            return Err(Error::Config(
                "descriptor mode needs a non-empty descriptor list".into(),
            ));
        }
        if matches!(cfg.mode, Mode::LabelsOnly | Mode::LabelsPlusRelevant)
            && env.labels().is_empty()
        {
            return Err(Error::Config(format!(
                "mode {} needs a label set",
                cfg.mode.as_str()
            )));
        }
        let active = if cfg.label_guided {
            let labels: Vec<Vec<f64>> = env
                .labels()
                .iter()
                .map(|&id| {
                    env.vocabulary()
                        .get(id)
                        .map(|c| c.embedding.clone())
                        .ok_or(Error::UnknownConcept(id))
                })
                .collect::<Result<_>>()?;
            if labels.is_empty() {
                return Err(Error::Config("label_guided needs a label set".into()));
            }
            prune_by_label_set(env.vocabulary(), &labels, cfg.prune_fraction, None)?
        } else {
            env.vocabulary().clone()
        };
        let active_ids: Vec<usize> = active.ids().collect();
        let encoder = EncoderState::initial(&cfg.encoder);
        let threshold = env.discovery_threshold(&cfg, &encoder)?;
        let state = EngineState {
            iteration: 0,
            observations: BTreeMap::new(),
            buffer: ReplayBuffer::new(),
            plan: SamplingPlan::uniform(&active_ids),
            encoder,
            history: Vec::new(),
            seen_content: HashSet::new(),
            descriptor_counters: HashMap::new(),
            next_record_id: 0,
            queries_total: 0,
            discovered_at: None,
            posterior_means: HashMap::new(),
        };
        Ok(Engine {
            cfg,
            env,
            descriptors,
            active,
            active_ids,
            threshold,
            exec: Execution::default(),
            state,
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn active_ids(&self) -> &[usize] {
        &self.active_ids
    }

    pub fn discovery_threshold(&self) -> Option<f64> {
        self.threshold
    }

    fn draw_concepts(&self) -> Result<Vec<usize>> {
        let m = self.cfg.queries_per_iteration;
        let it_seed = seed::derive(self.cfg.seed, &[self.state.iteration as u64]);
        let labels = self.env.labels();
        match self.cfg.mode {
            Mode::Random => sample_concepts(&SamplingPlan::uniform(&self.active_ids), m, it_seed),
            Mode::Ours | Mode::OursPlusPlus => sample_concepts(&self.state.plan, m, it_seed),
            Mode::LabelsOnly => {
                let mut rng = seed::rng(it_seed, &[tag::SLOTS]);
                Ok((0..m)
                    .map(|_| labels[rng.random_range(0..labels.len())])
                    .collect())
            }
            Mode::LabelsPlusRelevant => {
                let planned = sample_concepts(&self.state.plan, m, it_seed)?;
                let mut rng = seed::rng(it_seed, &[tag::SLOTS]);
                let split = (self.cfg.label_mix * m as f64).round() as usize;
                Ok(planned
                    .into_iter()
                    .enumerate()
                    .map(|(slot, p)| {
                        let use_label = match self.cfg.label_mix_policy {
                            LabelMixPolicy::Coin => rng.random::<f64>() < self.cfg.label_mix,
                            LabelMixPolicy::Split => slot < split,
                        };
                        let l = labels[rng.random_range(0..labels.len())];
                        if use_label {
                            l
                        } else {
                            p
                        }
                    })
                    .collect())
            }
        }
    }

    /// Run one iteration and append its metrics to the history.
    pub fn step(&mut self) -> Result<IterationOutcome> {
        let cfg = self.cfg.clone();
        let cfg = &cfg;
        let it = self.state.iteration;
        let concepts = self.draw_concepts()?;

        // Descriptor per slot, rotating per concept.
        let slots: Vec<(usize, u32)> = concepts
            .iter()
            .map(|&c| {
                if cfg.mode.uses_descriptors() {
                    let n = self.state.descriptor_counters.entry(c).or_insert(0);
                    let d = (*n % self.descriptors.len() as u32) + 1;
                    *n += 1;
                    (c, d)
                } else {
                    (c, 0)
                }
            })
            .collect();

        let enc = self.state.encoder;
        let targets = self.env.targets(&enc)?;
        let env = self.env;
        let results = par::map(self.exec, &slots, |&(c, d)| {
            let recs = env.search(&enc, c, d, cfg.results_per_query)?;
            let rewards = recs
                .iter()
                .map(|r| image_reward(&r.representation, &targets, cfg.reward_k))
                .collect::<Result<Vec<f64>>>()?;
            Ok::<_, Error>((recs, rewards))
        });

        // Single-writer commit.
        let mut trace = Vec::with_capacity(slots.len());
        let mut accepted: Vec<ImageRecord> = Vec::new();
        let mut query_scores: Vec<(usize, f64)> = Vec::new();
        let (mut failed, mut dropped) = (0, 0);
        for (slot, (&(c, d), res)) in slots.iter().zip(results).enumerate() {
            let concept = self
                .env
                .vocabulary()
                .get(c)
                .ok_or(Error::UnknownConcept(c))?;
            let descriptor = self.descriptors_text(concept, d);
            let query = query_text(&descriptor, concept);
            let mut row = QueryTrace {
                iteration: it,
                slot,
                concept: c,
                query,
                category: self.env.category(c),
                score: None,
                results: 0,
            };
            match res {
                Err(e) => {
                    log::warn!("iteration {it} slot {slot}: query for concept {c} failed: {e}");
                    failed += 1;
                }
                Ok((recs, rewards)) => {
                    row.results = recs.len();
                    if recs.len() < cfg.min_results {
                        dropped += 1;
                    } else {
                        let score =
                            aggregate(&rewards, cfg.concept_aggregation, cfg.concept_top_n)?;
                        row.score = Some(score);
                        query_scores.push((c, score));
                        for (mut r, w) in recs.into_iter().zip(rewards) {
                            r.id = self.state.next_record_id;
                            self.state.next_record_id += 1;
                            r.iteration = it;
                            r.reward = Some(w);
                            r.descriptor = descriptor.clone();
                            accepted.push(r);
                        }
                    }
                }
            }
            trace.push(row);
        }
        self.state.queries_total += slots.len() as u64;

        // Training composition and encoder update.
        let ts_seed = seed::derive(cfg.seed, &[it as u64]);
        let mut ts =
            compose_training_set(&accepted, &self.state.buffer, &targets, cfg.pcr, ts_seed)?;
        ts.epochs = cfg.epochs_per_iteration;
        let training_relevant_fraction = self.relevant_fraction(&accepted, &ts.history);
        if let Some(f) = training_relevant_fraction {
            self.state.encoder = encoder_update(&self.state.encoder, &cfg.encoder, f);
        }
        for r in &accepted {
            self.state.seen_content.insert(r.content_key);
        }

        let kept = retain_top_fraction(&accepted, cfg.retention_fraction)?;
        let kept_n = kept.len();
        self.state.buffer.extend(kept)?;

        for &(c, s) in &query_scores {
            self.state.observations.entry(c).or_default().push(s);
        }
        self.refit()?;

        let mean_reward = if accepted.is_empty() {
            0.0
        } else {
            accepted.iter().map(|r| r.reward_or_nan()).sum::<f64>() / accepted.len() as f64
        };
        let (mut rel, mut oth, mut rel_n) = (Vec::new(), Vec::new(), None::<usize>);
        for &(c, s) in &query_scores {
            match self.env.category(c) {
                Some(Category::Relevant(_)) => {
                    rel.push(s);
                    *rel_n.get_or_insert(0) += 1;
                }
                Some(Category::Other) => {
                    oth.push(s);
                    rel_n.get_or_insert(0);
                }
                None => {}
            }
        }
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let accuracy = self
            .env
            .accuracy(&self.state.encoder, self.state.buffer.records())?;
        let clusters_discovered = self.clusters_discovered();
        if let Some(k) = clusters_discovered {
            if k == self.env.clusters().len() && self.state.discovered_at.is_none() {
                self.state.discovered_at = Some(self.state.queries_total);
            }
        }
        let distinct: HashSet<usize> = concepts.iter().copied().collect();
        let metrics = IterationMetrics {
            iteration: it,
            queries: slots.len(),
            failed,
            dropped,
            accepted_images: accepted.len(),
            kept: kept_n,
            buffer_size: self.state.buffer.len(),
            distinct_concepts: distinct.len(),
            mean_reward,
            mean_score_relevant: mean(&rel),
            mean_score_other: mean(&oth),
            relevant_queries: rel_n,
            training_relevant_fraction,
            fidelity: self.state.encoder.fidelity,
            accuracy,
            clusters_discovered,
            queries_total: self.state.queries_total,
        };
        self.state.history.push(metrics.clone());
        self.state.iteration += 1;
        Ok(IterationOutcome { metrics, trace })
    }

    fn descriptors_text(&self, concept: &crate::vocabulary::Concept, d: u32) -> String {
        if d == 0 {
            String::new()
        } else {
            self.descriptors.descriptor(concept, d)
        }
    }

    /// Share of the training set that is relevant and distinct: new
    /// candidates count only the first time their content is seen, buffer
    /// items once per content, target items always.
    fn relevant_fraction(&self, candidates: &[ImageRecord], history: &[PoolItem]) -> Option<f64> {
        let total = candidates.len() + history.len();
        if total == 0 {
            return None;
        }
        let mut fresh = HashSet::new();
        let mut hits = 0usize;
        for r in candidates {
            if !self.state.seen_content.contains(&r.content_key) && fresh.insert(r.content_key) {
                hits += self.env.is_relevant(r)? as usize;
            }
        }
        let buf = self.state.buffer.records();
        let mut kept = HashSet::new();
        for item in history {
            hits += match item {
                PoolItem::Buffer(i) => {
                    let r = &buf[*i];
                    (kept.insert(r.content_key) && self.env.is_relevant(r)?) as usize
                }
                PoolItem::Target(_) => 1,
            };
        }
        Some(hits as f64 / total as f64)
    }

    /// Refit the concept model on per-concept mean scores and rebuild the
    /// plan. Modes without a model keep the uniform plan.
    fn refit(&mut self) -> Result<()> {
        if !self.cfg.mode.learns() || self.state.observations.is_empty() {
            return Ok(());
        }
        let vocab = self.env.vocabulary();
        let obs: Vec<Observation> = self
            .state
            .observations
            .iter()
            .map(|(&c, s)| {
                let e = vocab.get(c).ok_or(Error::UnknownConcept(c))?;
                Ok(Observation {
                    concept_id: c,
                    embedding: e.embedding.clone(),
                    reward: s.iter().sum::<f64>() / s.len() as f64,
                })
            })
            .collect::<Result<_>>()?;
        let model = match GpModel::fit_with(&obs, self.cfg.jitter, self.cfg.kernel) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("concept model refit failed, keeping previous plan: {e}");
                return Ok(());
            }
        };
        let observed: HashMap<usize, Vec<f64>> = self
            .state
            .observations
            .iter()
            .map(|(&c, s)| (c, s.clone()))
            .collect();
        let post = score_all_with(self.exec, &model, &self.active, &observed)?;
        self.state.posterior_means = post.iter().map(|p| (p.concept_id, p.mean)).collect();
        let scored: Vec<(usize, f64)> = post.iter().map(|p| (p.concept_id, p.score)).collect();
        self.state.plan = SamplingPlan::build(&scored, self.cfg.smr, &self.cfg.tiers)?;
        Ok(())
    }

    /// Clusters with at least half their members identified: observed mean
    /// at or above the threshold, or, for unobserved concepts, a posterior
    /// mean at or above it.
    fn clusters_discovered(&self) -> Option<usize> {
        let thr = self.threshold?;
        let clusters = self.env.clusters();
        if clusters.is_empty() {
            return None;
        }
        let identified = |c: usize| match self.state.observations.get(&c) {
            Some(s) if !s.is_empty() => s.iter().sum::<f64>() / s.len() as f64 >= thr,
            _ => self
                .state
                .posterior_means
                .get(&c)
                .is_some_and(|&m| m >= thr),
        };
        Some(
            clusters
                .iter()
                .filter(|cl| 2 * cl.iter().filter(|&&c| identified(c)).count() >= cl.len())
                .count(),
        )
    }

    /// Run `iterations` steps, handing each outcome to `sink`.
    pub fn run_with<F>(&mut self, iterations: u32, mut sink: F) -> Result<Vec<IterationMetrics>>
    where
        F: FnMut(&IterationOutcome) -> Result<()>,
    {
        if iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        let mut out = Vec::with_capacity(iterations as usize);
        for _ in 0..iterations {
            let o = self.step()?;
            sink(&o)?;
            out.push(o.metrics);
        }
        Ok(out)
    }

    pub fn run(&mut self, iterations: u32) -> Result<Vec<IterationMetrics>> {
        self.run_with(iterations, |_| Ok(()))
    }

    /// Write `buffer.rplb` and `state.txt` into `dir`.
    pub fn checkpoint(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.state.buffer.save(dir.join("buffer.rplb"))?;
        let s = &self.state;
        let mut t = String::new();
        let _ = writeln!(t, "iteration {}", s.iteration);
        let _ = writeln!(t, "queries_total {}", s.queries_total);
        let _ = writeln!(t, "next_record_id {}", s.next_record_id);
        let _ = writeln!(t, "fidelity {:016x}", s.encoder.fidelity.to_bits());
        let _ = writeln!(
            t,
            "relevant_fraction {:016x}",
            s.encoder.cumulative_relevant_fraction.to_bits()
        );
        let _ = writeln!(t, "discovered_at {}", opt(s.discovered_at));
        for (c, v) in &s.observations {
            let bits: Vec<String> = v.iter().map(|x| format!("{:016x}", x.to_bits())).collect();
            let _ = writeln!(t, "obs {c} {}", bits.join(" "));
        }
        let mut counters: Vec<_> = s.descriptor_counters.iter().collect();
        counters.sort();
        for (c, n) in counters {
            let _ = writeln!(t, "desc {c} {n}");
        }
        let mut seen: Vec<_> = s.seen_content.iter().collect();
        seen.sort();
        for k in seen {
            let _ = writeln!(t, "seen {k:016x}");
        }
        let mut f = fs::File::create(dir.join("state.txt"))?;
        f.write_all(t.as_bytes())?;
        Ok(())
    }

    /// Restore a checkpoint written by [`Engine::checkpoint`] under the same
    /// config. Metric history is not restored.
    pub fn resume(
        cfg: EngineConfig,
        env: &'a dyn Environment,
        descriptors: &'a dyn DescriptorProvider,
        dir: impl AsRef<Path>,
    ) -> Result<Self> {
        let dir = dir.as_ref();
        let mut e = Engine::new(cfg, env, descriptors)?;
        e.state.buffer = ReplayBuffer::load(dir.join("buffer.rplb"))?;
        let text = fs::read_to_string(dir.join("state.txt"))?;
        let ferr = |line: usize, m: &str| Error::Format {
            line: Some(line),
            message: m.to_string(),
        };
        let hex = |line: usize, s: &str| {
            u64::from_str_radix(s, 16).map_err(|_| ferr(line, "bad hex field"))
        };
        let dec = |line: usize, s: &str| {
            s.parse::<u64>()
                .map_err(|_| ferr(line, "bad integer field"))
        };
        for (i, l) in text.lines().enumerate() {
            let ln = i + 1;
            let mut parts = l.split_whitespace();
            let key = parts.next().unwrap_or("");
            let rest: Vec<&str> = parts.collect();
            let one = || {
                rest.first()
                    .copied()
                    .ok_or_else(|| ferr(ln, "missing value"))
            };
            match key {
                "iteration" => e.state.iteration = dec(ln, one()?)? as u32,
                "queries_total" => e.state.queries_total = dec(ln, one()?)?,
                "next_record_id" => e.state.next_record_id = dec(ln, one()?)?,
                "fidelity" => e.state.encoder.fidelity = f64::from_bits(hex(ln, one()?)?),
                "relevant_fraction" => {
                    e.state.encoder.cumulative_relevant_fraction = f64::from_bits(hex(ln, one()?)?)
                }
                "discovered_at" => {
                    e.state.discovered_at = rest.first().map(|v| dec(ln, v)).transpose()?
                }
                "obs" => {
                    let c = dec(ln, one()?)? as usize;
                    let v = rest[1..]
                        .iter()
                        .map(|b| hex(ln, b).map(f64::from_bits))
                        .collect::<Result<Vec<_>>>()?;
                    e.state.observations.insert(c, v);
                }
                "desc" => {
                    let c = dec(ln, one()?)? as usize;
                    let n = dec(ln, rest.get(1).ok_or_else(|| ferr(ln, "missing count"))?)? as u32;
                    e.state.descriptor_counters.insert(c, n);
                }
                "seen" => {
                    e.state.seen_content.insert(hex(ln, one()?)?);
                }
                "" => {}
                _ => return Err(ferr(ln, "unknown state key")),
            }
        }
        e.refit()?;
        Ok(e)
    }
}

pub fn metrics_csv(rows: &[IterationMetrics]) -> String {
    let mut s = String::from(IterationMetrics::HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{make_world, WorldSpec};

    fn tiny_cfg(mode: Mode) -> EngineConfig {
        let text = format!(
            "mode = {}\nqueries_per_iteration = 12\nresults_per_query = 12\nsim.n = 300\nsim.c = 2\nsim.s = 15\n\
             sim.targets = 40\nsim.heldout = 40\ndiscovery_probes = 4\nseed = 4\n",
            mode.as_str()
        );
        EngineConfig::parse(&text).unwrap()
    }

    fn env_for(cfg: &EngineConfig) -> SimEnvironment {
        SimEnvironment::new(make_world(&cfg.world_spec().unwrap()).unwrap())
    }

    #[test]
    fn iteration_zero_matches_random() {
        let d = StaticDescriptors::for_source(DescriptorSource::Appearance);
        let (a, b) = (tiny_cfg(Mode::Ours), tiny_cfg(Mode::Random));
        let env = env_for(&a);
        let ea = Engine::new(a, &env, &d).unwrap();
        let eb = Engine::new(b, &env, &d).unwrap();
        assert_eq!(ea.draw_concepts().unwrap(), eb.draw_concepts().unwrap());
    }

    #[test]
    fn per_iteration_counts() {
        let d = StaticDescriptors::for_source(DescriptorSource::Appearance);
        let cfg = tiny_cfg(Mode::OursPlusPlus);
        let env = env_for(&cfg);
        let mut e = Engine::new(cfg, &env, &d).unwrap();
        let mut prev_obs = 0;
        for _ in 0..3 {
            let m = e.step().unwrap().metrics;
            assert_eq!(m.queries, 12);
            assert_eq!(m.kept, (m.accepted_images as f64 * 0.5).ceil() as usize);
            let total: usize = e.state().observations.values().map(|v| v.len()).sum();
            assert!(total - prev_obs <= 12);
            prev_obs = total;
        }
        assert!(e.run(0).is_err());
    }

    #[test]
    fn labels_only_stays_in_label_set() {
        let d = StaticDescriptors::for_source(DescriptorSource::Appearance);
        let cfg = tiny_cfg(Mode::LabelsOnly);
        let env = env_for(&cfg);
        let labels: HashSet<usize> = env.labels().iter().copied().collect();
        let mut e = Engine::new(cfg, &env, &d).unwrap();
        for _ in 0..2 {
            for t in e.step().unwrap().trace {
                assert!(labels.contains(&t.concept));
            }
        }
    }

    #[test]
    fn failing_queries_are_skipped() {
        struct Flaky(SimEnvironment);
        impl Environment for Flaky {
            fn vocabulary(&self) -> &Vocabulary {
                self.0.vocabulary()
            }
            fn search(
                &self,
                enc: &EncoderState,
                c: usize,
                d: u32,
                n: usize,
            ) -> Result<Vec<ImageRecord>> {
                match c % 3 {
                    0 => Err(Error::Search("timeout".into())),
                    1 => self.0.search(enc, c, d, 3),
                    _ => self.0.search(enc, c, d, n),
                }
            }
            fn targets(&self, enc: &EncoderState) -> Result<crate::relevance::TargetSet> {
                self.0.targets(enc)
            }
            fn labels(&self) -> &[usize] {
                self.0.labels()
            }
        }
        let d = StaticDescriptors::for_source(DescriptorSource::Appearance);
        let cfg = tiny_cfg(Mode::Ours);
        let env = Flaky(env_for(&cfg));
        let mut e = Engine::new(cfg, &env, &d).unwrap();
        let o = e.step().unwrap();
        let m = &o.metrics;
        assert_eq!(
            m.failed + m.dropped + o.trace.iter().filter(|t| t.score.is_some()).count(),
            12
        );
        assert!(o
            .trace
            .iter()
            .all(|t| (t.concept % 3 == 2) == t.score.is_some()));
        assert_eq!(m.accuracy, None);
    }

    #[test]
    fn deterministic_and_resumable() {
        let d = StaticDescriptors::for_source(DescriptorSource::Appearance);
        let cfg = tiny_cfg(Mode::OursPlusPlus);
        let env = env_for(&cfg);
        let full = Engine::new(cfg.clone(), &env, &d).unwrap().run(4).unwrap();
        let again = Engine::new(cfg.clone(), &env, &d).unwrap().run(4).unwrap();
        assert_eq!(metrics_csv(&full), metrics_csv(&again));

        let dir = tempfile::tempdir().unwrap();
        let mut first = Engine::new(cfg.clone(), &env, &d).unwrap();
        first.run(2).unwrap();
        first.checkpoint(dir.path()).unwrap();
        let mut resumed = Engine::resume(cfg, &env, &d, dir.path()).unwrap();
        let tail = resumed.run(2).unwrap();
        assert_eq!(metrics_csv(&tail), metrics_csv(&full[2..]));
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let d = StaticDescriptors::for_source(DescriptorSource::Appearance);
        let cfg = tiny_cfg(Mode::Ours);
        let env = env_for(&cfg);
        let a = Engine::new(cfg.clone(), &env, &d)
            .unwrap()
            .with_execution(Execution::Sequential)
            .run(3)
            .unwrap();
        let b = Engine::new(cfg, &env, &d)
            .unwrap()
            .with_execution(Execution::Parallel)
            .run(3)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn label_guided_pruning_restricts_sampling() {
        let d = StaticDescriptors::for_source(DescriptorSource::Appearance);
        let mut cfg = tiny_cfg(Mode::Random);
        cfg.label_guided = true;
        cfg.prune_fraction = 0.2;
        let env = env_for(&cfg);
        let mut e = Engine::new(cfg, &env, &d).unwrap();
        assert_eq!(e.active_ids().len(), 60);
        let active: HashSet<usize> = e.active_ids().iter().copied().collect();
        assert!(e
            .step()
            .unwrap()
            .trace
            .iter()
            .all(|t| active.contains(&t.concept)));
    }

    #[test]
    fn world_spec_is_used() {
        let cfg = tiny_cfg(Mode::Random);
        let w: WorldSpec = cfg.world_spec().unwrap();
        assert_eq!((w.n, w.c, w.s), (300, 2, 15));
    }
}
