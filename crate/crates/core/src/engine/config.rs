//! Line-oriented `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::concept_model::{KernelKind, DEFAULT_JITTER};
use crate::error::{Error, Result};
use crate::relevance::{Aggregation, DEFAULT_CONCEPT_TOP_N, DEFAULT_REWARD_K};
use crate::replay::{DEFAULT_EPOCHS, DEFAULT_PCR, DEFAULT_RETENTION};
use crate::scheduler::{TierSpec, DEFAULT_QUERIES_PER_ITERATION, DEFAULT_SMR};
use crate::simulator::{EncoderParams, WorldSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Uniform over the vocabulary every iteration.
    Random,
    Ours,
    /// Ours plus rotating descriptors.
    OursPlusPlus,
    /// Uniform over the label set.
    LabelsOnly,
    /// Labels for a share of the slots, the learned plan for the rest.
    LabelsPlusRelevant,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Random,
        Mode::Ours,
        Mode::OursPlusPlus,
        Mode::LabelsOnly,
        Mode::LabelsPlusRelevant,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Random => "random",
            Mode::Ours => "ours",
            Mode::OursPlusPlus => "ours_plus_plus",
            Mode::LabelsOnly => "labels_only",
            Mode::LabelsPlusRelevant => "labels_plus_relevant",
        }
    }

    /// Whether the mode maintains a concept model and learned plan.
    pub fn learns(self) -> bool {
        matches!(
            self,
            Mode::Ours | Mode::OursPlusPlus | Mode::LabelsPlusRelevant
        )
    }

    pub fn uses_descriptors(self) -> bool {
        self == Mode::OursPlusPlus
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMixPolicy {
    /// Seeded coin per query slot.
    Coin,
    /// The first `round(label_mix * M)` slots go to labels.
    Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescriptorSource {
    Appearance,
    Satellite,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvironmentSpec {
    Sim(WorldSpec),
    Corpus {
        vocabulary: PathBuf,
        targets: PathBuf,
        index: PathBuf,
        /// Label embeddings; the label concepts are their nearest vocabulary
        /// entries.
        labels: Option<PathBuf>,
        accelerated: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub queries_per_iteration: usize,
    pub results_per_query: usize,
    pub min_results: usize,
    pub reward_k: usize,
    pub concept_top_n: usize,
    pub concept_aggregation: Aggregation,
    pub smr: f64,
    pub pcr: f64,
    pub retention_fraction: f64,
    pub tiers: TierSpec,
    pub epochs_per_iteration: u32,
    pub mode: Mode,
    pub label_mix: f64,
    pub label_mix_policy: LabelMixPolicy,
    pub label_guided: bool,
    pub prune_fraction: f64,
    pub kernel: KernelKind,
    pub jitter: f64,
    pub seed: u64,
    pub descriptors: DescriptorSource,
    pub encoder: EncoderParams,
    pub discovery_probes: usize,
    pub environment: EnvironmentSpec,
    /// Whether `sim.seed` was given; otherwise the world seed follows `seed`.
    pub sim_seed_fixed: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            queries_per_iteration: DEFAULT_QUERIES_PER_ITERATION,
            results_per_query: 100,
            min_results: 10,
            reward_k: DEFAULT_REWARD_K,
            concept_top_n: DEFAULT_CONCEPT_TOP_N,
            concept_aggregation: Aggregation::TopN,
            smr: DEFAULT_SMR,
            pcr: DEFAULT_PCR,
            retention_fraction: DEFAULT_RETENTION,
            tiers: TierSpec::default(),
            epochs_per_iteration: DEFAULT_EPOCHS,
            mode: Mode::Ours,
            label_mix: 0.5,
            label_mix_policy: LabelMixPolicy::Coin,
            label_guided: false,
            prune_fraction: 0.1,
            kernel: KernelKind::Euclidean,
            jitter: DEFAULT_JITTER,
            seed: 0,
            descriptors: DescriptorSource::Appearance,
            encoder: EncoderParams::default(),
            discovery_probes: 20,
            environment: EnvironmentSpec::Sim(WorldSpec::default()),
            sim_seed_fixed: false,
        }
    }
}

fn cfg_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("line {line}: {msg}"))
}

fn num<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| cfg_err(line, format!("bad value {v:?} for {key}")))
}

fn boolean(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(cfg_err(line, format!("bad boolean {v:?} for {key}"))),
    }
}

fn list<T: FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|x| num(line, key, x.trim())).collect()
}

impl EngineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse_in(&text, path.parent())
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_in(text, None)
    }

    /// Parse, resolving relative corpus paths against `base`.
    pub fn parse_in(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut c = EngineConfig::default();
        let mut world = WorldSpec::default();
        let mut env_kind = "sim".to_string();
        let (mut vocab, mut targets, mut index, mut labels) = (None, None, None, None);
        let mut accelerated = false;
        let (mut bounds, mut masses) = (c.tiers.boundaries.clone(), c.tiers.masses.clone());
        let mut modes_given = false;
        let resolve = |p: &str| -> PathBuf {
            let p = PathBuf::from(p);
            match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        };

        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(ln, "expected key = value"))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "queries_per_iteration" => c.queries_per_iteration = num(ln, k, v)?,
                "results_per_query" => c.results_per_query = num(ln, k, v)?,
                "min_results" => c.min_results = num(ln, k, v)?,
                "reward_k" => c.reward_k = num(ln, k, v)?,
                "concept_top_n" => c.concept_top_n = num(ln, k, v)?,
                "concept_aggregation" => {
                    c.concept_aggregation = match v {
                        "top_n" => Aggregation::TopN,
                        "mean" => Aggregation::Mean,
                        _ => return Err(cfg_err(ln, format!("unknown aggregation {v:?}"))),
                    }
                }
                "smr" => c.smr = num(ln, k, v)?,
                "pcr" => c.pcr = num(ln, k, v)?,
                "retention_fraction" => c.retention_fraction = num(ln, k, v)?,
                "tier_boundaries" => {
                    bounds = if v.is_empty() {
                        Vec::new()
                    } else {
                        list(ln, k, v)?
                    }
                }
                "tier_masses" => masses = list(ln, k, v)?,
                "epochs_per_iteration" => c.epochs_per_iteration = num(ln, k, v)?,
                "mode" => c.mode = v.parse().map_err(|e| cfg_err(ln, e))?,
                "label_mix" => c.label_mix = num(ln, k, v)?,
                "label_mix_policy" => {
                    c.label_mix_policy = match v {
                        "coin" => LabelMixPolicy::Coin,
                        "split" => LabelMixPolicy::Split,
                        _ => return Err(cfg_err(ln, format!("unknown policy {v:?}"))),
                    }
                }
                "label_guided" => c.label_guided = boolean(ln, k, v)?,
                "prune_fraction" => c.prune_fraction = num(ln, k, v)?,
                "kernel" => {
                    c.kernel = match v {
                        "euclidean" => KernelKind::Euclidean,
                        "squared" => KernelKind::Squared,
                        _ => return Err(cfg_err(ln, format!("unknown kernel {v:?}"))),
                    }
                }
                "jitter" => c.jitter = num(ln, k, v)?,
                "seed" => c.seed = num(ln, k, v)?,
                "descriptors" => {
                    c.descriptors = match v {
                        "appearance" => DescriptorSource::Appearance,
                        "satellite" => DescriptorSource::Satellite,
                        _ => return Err(cfg_err(ln, format!("unknown descriptor list {v:?}"))),
                    }
                }
                "discovery_probes" => c.discovery_probes = num(ln, k, v)?,
                "encoder.phi_min" => c.encoder.phi_min = num(ln, k, v)?,
                "encoder.phi_max" => c.encoder.phi_max = num(ln, k, v)?,
                "encoder.rate" => c.encoder.rate = num(ln, k, v)?,
                "environment" => env_kind = v.to_string(),
                "sim.n" => world.n = num(ln, k, v)?,
                "sim.c" => world.c = num(ln, k, v)?,
                "sim.s" => world.s = num(ln, k, v)?,
                "sim.dim" => world.dim = num(ln, k, v)?,
                "sim.radius" => world.radius = num(ln, k, v)?,
                "sim.background_groups" => world.background_groups = num(ln, k, v)?,
                "sim.distractor_rate" => world.distractor_rate = num(ln, k, v)?,
                "sim.rep_noise" => world.rep_noise = num(ln, k, v)?,
                "sim.descriptor_modes" => {
                    world.descriptor_modes = num(ln, k, v)?;
                    modes_given = true;
                }
                "sim.descriptor_scale" => world.descriptor_scale = num(ln, k, v)?,
                "sim.bare_duplicates" => world.bare_duplicates = num(ln, k, v)?,
                "sim.targets" => world.target_size = num(ln, k, v)?,
                "sim.heldout" => world.heldout_size = num(ln, k, v)?,
                "sim.labels_per_cluster" => world.labels_per_cluster = num(ln, k, v)?,
                "sim.knn_k" => world.knn_k = num(ln, k, v)?,
                "sim.seed" => {
                    world.seed = num(ln, k, v)?;
                    c.sim_seed_fixed = true;
                }
                "corpus.vocabulary" => vocab = Some(resolve(v)),
                "corpus.targets" => targets = Some(resolve(v)),
                "corpus.index" => index = Some(resolve(v)),
                "corpus.labels" => labels = Some(resolve(v)),
                "corpus.accelerated" => accelerated = boolean(ln, k, v)?,
                _ => return Err(cfg_err(ln, format!("unknown key {k:?}"))),
            }
        }

        c.tiers = TierSpec::new(bounds, masses).map_err(|e| Error::Config(e.to_string()))?;
        if !modes_given {
            world.descriptor_modes = c.descriptor_list_len() as u32;
        }
        c.environment = match env_kind.as_str() {
            "sim" => EnvironmentSpec::Sim(world),
            "corpus" => {
                let need = |p: Option<PathBuf>, key: &str| {
                    p.ok_or_else(|| Error::Config(format!("{key} is required")))
                };
                EnvironmentSpec::Corpus {
                    vocabulary: need(vocab, "corpus.vocabulary")?,
                    targets: need(targets, "corpus.targets")?,
                    index: need(index, "corpus.index")?,
                    labels,
                    accelerated,
                }
            }
            other => return Err(Error::Config(format!("unknown environment {other:?}"))),
        };
        c.validate()?;
        Ok(c)
    }

    fn descriptor_list_len(&self) -> usize {
        use super::DescriptorProvider;
        super::StaticDescriptors::for_source(self.descriptors).len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.queries_per_iteration == 0 || self.results_per_query == 0 {
            return bad("queries_per_iteration and results_per_query must be positive".into());
        }
        if self.min_results > self.results_per_query {
            return bad("min_results exceeds results_per_query".into());
        }
        if self.reward_k == 0 || self.concept_top_n == 0 {
            return bad("reward_k and concept_top_n must be positive".into());
        }
        if !(self.smr > 0.0 && self.smr.is_finite()) {
            return bad(format!("smr must be positive, got {}", self.smr));
        }
        if !(self.pcr >= 0.0 && self.pcr.is_finite()) {
            return bad(format!("pcr must be non-negative, got {}", self.pcr));
        }
        if !(self.retention_fraction > 0.0 && self.retention_fraction <= 1.0) {
            return bad("retention_fraction must be in (0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.label_mix) {
            return bad("label_mix must be in [0, 1]".into());
        }
        if !(self.prune_fraction > 0.0 && self.prune_fraction <= 1.0) {
            return bad("prune_fraction must be in (0, 1]".into());
        }
        if !(self.jitter > 0.0 && self.jitter.is_finite()) {
            return bad("jitter must be positive".into());
        }
        self.tiers
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.encoder
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if let EnvironmentSpec::Sim(w) = &self.environment {
            w.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Sim world spec with the world seed resolved.
    pub fn world_spec(&self) -> Option<WorldSpec> {
        match &self.environment {
            EnvironmentSpec::Sim(w) => {
                let mut w = w.clone();
                if !self.sim_seed_fixed {
                    w.seed = crate::seed::derive(self.seed, &[crate::seed::tag::WORLD]);
                }
                Some(w)
            }
            EnvironmentSpec::Corpus { .. } => None,
        }
    }

    /// Canonical text form: every key, one per line. Parsing it back yields
    /// an equal config.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let join = |v: &[String]| v.join(",");
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv(
            "queries_per_iteration",
            self.queries_per_iteration.to_string(),
        );
        kv("results_per_query", self.results_per_query.to_string());
        kv("min_results", self.min_results.to_string());
        kv("reward_k", self.reward_k.to_string());
        kv("concept_top_n", self.concept_top_n.to_string());
        kv(
            "concept_aggregation",
            match self.concept_aggregation {
                Aggregation::TopN => "top_n",
                Aggregation::Mean => "mean",
            }
            .into(),
        );
        kv("smr", self.smr.to_string());
        kv("pcr", self.pcr.to_string());
        kv("retention_fraction", self.retention_fraction.to_string());
        kv(
            "tier_boundaries",
            join(
                &self
                    .tiers
                    .boundaries
                    .iter()
                    .map(|b| b.to_string())
                    .collect::<Vec<_>>(),
            ),
        );
        kv(
            "tier_masses",
            join(
                &self
                    .tiers
                    .masses
                    .iter()
                    .map(|m| m.to_string())
                    .collect::<Vec<_>>(),
            ),
        );
        kv(
            "epochs_per_iteration",
            self.epochs_per_iteration.to_string(),
        );
        kv("mode", self.mode.as_str().into());
        kv("label_mix", self.label_mix.to_string());
        kv(
            "label_mix_policy",
            match self.label_mix_policy {
                LabelMixPolicy::Coin => "coin",
                LabelMixPolicy::Split => "split",
            }
            .into(),
        );
        kv("label_guided", self.label_guided.to_string());
        kv("prune_fraction", self.prune_fraction.to_string());
        kv(
            "kernel",
            match self.kernel {
                KernelKind::Euclidean => "euclidean",
                KernelKind::Squared => "squared",
            }
            .into(),
        );
        kv("jitter", self.jitter.to_string());
        kv("seed", self.seed.to_string());
        kv(
            "descriptors",
            match self.descriptors {
                DescriptorSource::Appearance => "appearance",
                DescriptorSource::Satellite => "satellite",
            }
            .into(),
        );
        kv("discovery_probes", self.discovery_probes.to_string());
        kv("encoder.phi_min", self.encoder.phi_min.to_string());
        kv("encoder.phi_max", self.encoder.phi_max.to_string());
        kv("encoder.rate", self.encoder.rate.to_string());
        match &self.environment {
            EnvironmentSpec::Sim(w) => {
                kv("environment", "sim".into());
                kv("sim.n", w.n.to_string());
                kv("sim.c", w.c.to_string());
                kv("sim.s", w.s.to_string());
                kv("sim.dim", w.dim.to_string());
                kv("sim.radius", w.radius.to_string());
                kv("sim.background_groups", w.background_groups.to_string());
                kv("sim.distractor_rate", w.distractor_rate.to_string());
                kv("sim.rep_noise", w.rep_noise.to_string());
                kv("sim.descriptor_modes", w.descriptor_modes.to_string());
                kv("sim.descriptor_scale", w.descriptor_scale.to_string());
                kv("sim.bare_duplicates", w.bare_duplicates.to_string());
                kv("sim.targets", w.target_size.to_string());
                kv("sim.heldout", w.heldout_size.to_string());
                kv("sim.labels_per_cluster", w.labels_per_cluster.to_string());
                kv("sim.knn_k", w.knn_k.to_string());
                if self.sim_seed_fixed {
                    kv("sim.seed", w.seed.to_string());
                }
            }
            EnvironmentSpec::Corpus {
                vocabulary,
                targets,
                index,
                labels,
                accelerated,
            } => {
                kv("environment", "corpus".into());
                kv("corpus.vocabulary", vocabulary.display().to_string());
                kv("corpus.targets", targets.display().to_string());
                kv("corpus.index", index.display().to_string());
                if let Some(l) = labels {
                    kv("corpus.labels", l.display().to_string());
                }
                kv("corpus.accelerated", accelerated.to_string());
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_hyperparameters() {
        let c = EngineConfig::default();
        assert_eq!(c.queries_per_iteration, 256);
        assert_eq!(c.results_per_query, 100);
        assert_eq!(c.min_results, 10);
        assert_eq!(c.smr, 3.0);
        assert_eq!(c.pcr, 2.0);
        assert_eq!(c.epochs_per_iteration, 10);
        assert_eq!(c.reward_k, 15);
        assert_eq!(c.concept_top_n, 10);
        assert_eq!(c.retention_fraction, 0.5);
        assert_eq!(c.tiers.boundaries, vec![250, 1000]);
        assert_eq!(c.tiers.masses, vec![0.8, 0.1, 0.1]);
        assert_eq!(c.label_mix, 0.5);
    }

    #[test]
    fn parse_and_round_trip() {
        let text = "# comment\nmode = ours_plus_plus\nqueries_per_iteration = 32 # trailing\nsim.n = 800\nsim.s = 20\n\
                    tier_masses = 0.7, 0.2, 0.1\nkernel = squared\nlabel_mix_policy = split\n";
        let c = EngineConfig::parse(text).unwrap();
        assert_eq!(c.mode, Mode::OursPlusPlus);
        assert_eq!(c.queries_per_iteration, 32);
        assert_eq!(c.tiers.masses, vec![0.7, 0.2, 0.1]);
        assert_eq!(c.kernel, KernelKind::Squared);
        let again = EngineConfig::parse(&c.to_config_string()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn descriptor_modes_follow_list() {
        let c = EngineConfig::parse("descriptors = satellite\n").unwrap();
        assert_eq!(c.world_spec().unwrap().descriptor_modes, 17);
    }

    #[test]
    fn rejects_bad_input() {
        for bad in [
            "nonsense",
            "mode = sideways",
            "unknown_key = 1",
            "smr = -1",
            "tier_masses = 0.5,0.5,0.5",
            "queries_per_iteration = many",
            "sim.c = 100\nsim.s = 100",
            "environment = corpus",
            "min_results = 200",
        ] {
            let e = EngineConfig::parse(bad).unwrap_err();
            assert!(e.is_usage(), "{bad}: {e}");
        }
    }

    #[test]
    fn world_seed_follows_run_seed() {
        let a = EngineConfig::parse("seed = 1")
            .unwrap()
            .world_spec()
            .unwrap();
        let b = EngineConfig::parse("seed = 2")
            .unwrap()
            .world_spec()
            .unwrap();
        assert_ne!(a.seed, b.seed);
        let f = EngineConfig::parse("seed = 2\nsim.seed = 5")
            .unwrap()
            .world_spec()
            .unwrap();
        assert_eq!(f.seed, 5);
    }
}
