//! Where queries go: the simulator or a static caption-embedding corpus.

use crate::error::{Error, Result};
use crate::relevance::{ImageRecord, TargetSet};
use crate::search_index::{read_corpus, CaptionIndex, IndexMode};
use crate::simulator::{make_world, EncoderState, SimWorld};
use crate::vector;
use crate::vocabulary::{load_label_embeddings, load_vocabulary, Concept, Vocabulary};

use super::config::{DescriptorSource, EngineConfig, EnvironmentSpec};

/// Ground-truth grouping of a concept, used for reporting only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Relevant(usize),
    Other,
}

pub trait Environment: Sync {
    fn vocabulary(&self) -> &Vocabulary;

    /// Up to `count` results for `concept` under descriptor `descriptor`
    /// (0 = none). Ids, iteration and rewards are filled in by the engine.
    fn search(
        &self,
        enc: &EncoderState,
        concept: usize,
        descriptor: u32,
        count: usize,
    ) -> Result<Vec<ImageRecord>>;

    fn targets(&self, enc: &EncoderState) -> Result<TargetSet>;

    /// Concept ids standing in for the target label set.
    fn labels(&self) -> &[usize];

    fn category(&self, _concept: usize) -> Option<Category> {
        None
    }

    /// Whether a returned image is truly relevant; `None` when unknown.
    fn is_relevant(&self, _record: &ImageRecord) -> Option<bool> {
        None
    }

    /// Relevant concept clusters, when known.
    fn clusters(&self) -> &[Vec<usize>] {
        &[]
    }

    fn accuracy(&self, _enc: &EncoderState, _buffer: &[ImageRecord]) -> Result<Option<f64>> {
        Ok(None)
    }

    /// Concept score above which a concept counts as identified.
    fn discovery_threshold(&self, _cfg: &EngineConfig, _enc: &EncoderState) -> Result<Option<f64>> {
        Ok(None)
    }
}

pub struct SimEnvironment {
    world: SimWorld,
}

impl SimEnvironment {
    pub fn new(world: SimWorld) -> Self {
        SimEnvironment { world }
    }

    pub fn world(&self) -> &SimWorld {
        &self.world
    }
}

impl Environment for SimEnvironment {
    fn vocabulary(&self) -> &Vocabulary {
        self.world.vocabulary()
    }

    fn search(
        &self,
        enc: &EncoderState,
        concept: usize,
        descriptor: u32,
        count: usize,
    ) -> Result<Vec<ImageRecord>> {
        self.world.search(enc, concept, descriptor, count)
    }

    fn targets(&self, enc: &EncoderState) -> Result<TargetSet> {
        self.world.target_set(enc)
    }

    fn labels(&self) -> &[usize] {
        self.world.labels()
    }

    fn category(&self, concept: usize) -> Option<Category> {
        Some(match self.world.cluster_of(concept) {
            Some(k) => Category::Relevant(k),
            None => Category::Other,
        })
    }

    fn is_relevant(&self, record: &ImageRecord) -> Option<bool> {
        self.world.record_label(record).ok().map(|l| l.is_some())
    }

    fn clusters(&self) -> &[Vec<usize>] {
        self.world.clusters()
    }

    fn accuracy(&self, enc: &EncoderState, buffer: &[ImageRecord]) -> Result<Option<f64>> {
        self.world
            .evaluate_accuracy(enc, buffer, self.world.spec().knn_k)
            .map(Some)
    }

    fn discovery_threshold(&self, cfg: &EngineConfig, enc: &EncoderState) -> Result<Option<f64>> {
        if cfg.discovery_probes == 0 {
            return Ok(None);
        }
        self.world
            .calibrate_threshold(
                enc,
                cfg.discovery_probes,
                cfg.results_per_query,
                cfg.reward_k,
                cfg.concept_top_n,
            )
            .map(Some)
    }
}

/// Static corpus searched by caption embedding. Queries use the concept
/// embedding; descriptors do not change the query.
pub struct CorpusEnvironment {
    vocabulary: Vocabulary,
    index: CaptionIndex,
    targets: TargetSet,
    labels: Vec<usize>,
}

impl CorpusEnvironment {
    pub fn new(
        vocabulary: Vocabulary,
        index: CaptionIndex,
        targets: TargetSet,
        label_embeddings: &[Vec<f64>],
    ) -> Result<Self> {
        if index.dimension() != vocabulary.dimension() || targets.dimension() != index.dimension() {
            return Err(Error::DimensionMismatch {
                expected: vocabulary.dimension(),
                found: index.dimension(),
            });
        }
        let mut labels = label_embeddings
            .iter()
            .map(|l| nearest_concept(&vocabulary, l))
            .collect::<Result<Vec<_>>>()?;
        labels.sort_unstable();
        labels.dedup();
        Ok(CorpusEnvironment {
            vocabulary,
            index,
            targets,
            labels,
        })
    }
}

fn nearest_concept(v: &Vocabulary, e: &[f64]) -> Result<usize> {
    let mut best: Option<(f64, usize)> = None;
    for c in v.concepts() {
        let s = vector::cosine(&c.embedding, e)?;
        if best.is_none_or(|(b, _)| s > b) {
            best = Some((s, c.id));
        }
    }
    best.map(|b| b.1)
        .ok_or_else(|| Error::invalid("empty vocabulary"))
}

impl Environment for CorpusEnvironment {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    fn search(
        &self,
        _enc: &EncoderState,
        concept: usize,
        descriptor: u32,
        count: usize,
    ) -> Result<Vec<ImageRecord>> {
        let c = self
            .vocabulary
            .get(concept)
            .ok_or(Error::UnknownConcept(concept))?;
        let res = self.index.query(&c.embedding, count)?;
        Ok(res
            .hits
            .iter()
            .enumerate()
            .map(|(rank, h)| ImageRecord {
                id: 0,
                representation: self.index.embedding(h.entry).to_vec(),
                source_concept: concept,
                descriptor: String::new(),
                descriptor_index: descriptor,
                rank: rank as u32,
                content_key: h.image_id,
                reward: None,
                iteration: 0,
            })
            .collect())
    }

    fn targets(&self, _enc: &EncoderState) -> Result<TargetSet> {
        Ok(self.targets.clone())
    }

    fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Source of descriptor phrases. Index 0 means no descriptor; indices
/// `1..=len()` are valid.
pub trait DescriptorProvider: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn descriptor(&self, concept: &Concept, index: u32) -> String;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StaticDescriptors {
    list: Vec<String>,
}

const APPEARANCE: [&str; 8] = [
    "close-up of",
    "small",
    "young",
    "side view of",
    "outdoor",
    "indoor",
    "black and white photo of",
    "group of",
];

const SATELLITE: [&str; 17] = [
    "a centered satellite photo of",
    "a satellite photo of",
    "a google earth photo of",
    "satellite view of",
    "high resolution satellite",
    "high resolution satellite imagery of",
    "aerial satellite",
    "aerial satellite view",
    "aerial satellite view of",
    "satellite imagery, centered photo of",
    "satellite imagery, photo of",
    "military highest resolution satellite imagery of",
    "NASA imagery of",
    "geo high resolution satellite",
    "land cover satellite image of",
    "european satellite close up aerial image of",
    "super high resolution highest resolution satellite imagery",
];

impl StaticDescriptors {
    pub fn new(list: Vec<String>) -> Self {
        StaticDescriptors { list }
    }

    pub fn for_source(s: DescriptorSource) -> Self {
        let l: &[&str] = match s {
            DescriptorSource::Appearance => &APPEARANCE,
            DescriptorSource::Satellite => &SATELLITE,
        };
        Self::new(l.iter().map(|s| s.to_string()).collect())
    }
}

impl DescriptorProvider for StaticDescriptors {
    fn len(&self) -> usize {
        self.list.len()
    }

    fn descriptor(&self, _concept: &Concept, index: u32) -> String {
        match index {
            0 => String::new(),
            i => self.list[(i as usize - 1) % self.list.len()].clone(),
        }
    }
}

/// The search phrase: descriptor and lemma joined by a space.
pub fn query_text(descriptor: &str, concept: &Concept) -> String {
    if descriptor.is_empty() {
        concept.lemma.clone()
    } else {
        format!("{descriptor} {}", concept.lemma)
    }
}

pub fn build_environment(cfg: &EngineConfig) -> Result<Box<dyn Environment>> {
    match &cfg.environment {
        EnvironmentSpec::Sim(_) => {
            let spec = cfg.world_spec().expect("sim environment");
            Ok(Box::new(SimEnvironment::new(make_world(&spec)?)))
        }
        EnvironmentSpec::Corpus {
            vocabulary,
            targets,
            index,
            labels,
            accelerated,
        } => {
            let vocab = load_vocabulary(vocabulary)?;
            let t = load_label_embeddings(targets)?
                .into_iter()
                .map(|(_, v)| v)
                .collect();
            let targets = TargetSet::new(t)?;
            let entries = read_corpus(index)?;
            let mode = if *accelerated {
                IndexMode::accelerated()
            } else {
                IndexMode::Exact
            };
            let index = CaptionIndex::build_with(&entries, mode, cfg.seed)?;
            let label_embeddings: Vec<Vec<f64>> = match labels {
                Some(p) => load_label_embeddings(p)?
                    .into_iter()
                    .map(|(_, v)| v)
                    .collect(),
                None => Vec::new(),
            };
            Ok(Box::new(CorpusEnvironment::new(
                vocab,
                index,
                targets,
                &label_embeddings,
            )?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptor_lists() {
        let c = Concept::new(0, "tennis court", vec![1.0]);
        let s = StaticDescriptors::for_source(DescriptorSource::Satellite);
        assert_eq!(s.len(), 17);
        assert_eq!(s.descriptor(&c, 0), "");
        assert_eq!(
            query_text(&s.descriptor(&c, 2), &c),
            "a satellite photo of tennis court"
        );
        assert_eq!(s.descriptor(&c, 18), s.descriptor(&c, 1));
        assert_eq!(
            StaticDescriptors::for_source(DescriptorSource::Appearance).len(),
            8
        );
    }
}
