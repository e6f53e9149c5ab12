//! Deterministic synthetic web for driving the exploration loop at desk scale.
//!
//! Concepts are unit vectors in a small latent space. `c` clusters of `s`
//! concepts each are relevant: their latents sit within `radius` of a cluster
//! center, and the target images are drawn from them. Everything else is
//! background, kept at least `2 * radius` from every center.
//!
//! An image returned for `(concept, descriptor, rank)` is fixed content: the
//! concept latent plus a per-descriptor appearance offset, or with probability
//! `eta` a uniformly random distractor. What the encoder sees is that content
//! plus a fixed noise direction scaled by `rep_noise * (1 - phi)`, so better
//! encoders see cleaner versions of the same images.

use std::collections::HashSet;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::relevance::{concept_score, image_reward, ImageRecord, TargetSet};
use crate::seed::{self, tag};
use crate::vector;
use crate::vocabulary::{Concept, Vocabulary};

#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub n: usize,
    pub c: usize,
    pub s: usize,
    pub dim: usize,
    pub radius: f64,
    /// Background concepts are spread over this many groups of the same
    /// radius; 0 scatters them uniformly.
    pub background_groups: usize,
    pub distractor_rate: f64,
    pub rep_noise: f64,
    /// Appearance modes per concept (descriptor indices `1..=modes`).
    pub descriptor_modes: u32,
    pub descriptor_scale: f64,
    /// A query without descriptor returns each distinct image this many
    /// times in a row; descriptor queries return distinct images.
    pub bare_duplicates: u32,
    pub target_size: usize,
    pub heldout_size: usize,
    pub labels_per_cluster: usize,
    pub knn_k: usize,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            n: 5000,
            c: 3,
            s: 60,
            dim: 16,
            radius: 0.3,
            background_groups: 80,
            distractor_rate: 0.1,
            rep_noise: 1.2,
            descriptor_modes: 8,
            descriptor_scale: 0.35,
            bare_duplicates: 2,
            target_size: 180,
            heldout_size: 180,
            labels_per_cluster: 3,
            knn_k: 5,
            seed: 0,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if self.c == 0 || self.s == 0 || self.n == 0 {
            return bad("n, c and s must be positive");
        }
        if self.c.checked_mul(self.s).is_none_or(|cs| cs > self.n) {
            return Err(Error::invalid(format!(
                "c*s = {}*{} exceeds n = {}",
                self.c, self.s, self.n
            )));
        }
        if self.dim < 2 {
            return bad("latent dimension must be at least 2");
        }
        if !(self.radius > 0.0 && self.radius < 0.5) {
            return bad("cluster radius must be in (0, 0.5)");
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) {
            return bad("distractor rate must be in [0, 1]");
        }
        for (v, name) in [
            (self.rep_noise, "rep_noise"),
            (self.descriptor_scale, "descriptor_scale"),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!(
                    "{name} must be finite and non-negative"
                )));
            }
        }
        if self.target_size == 0 || self.heldout_size == 0 || self.knn_k == 0 {
            return bad("target, held-out and k must be positive");
        }
        if self.bare_duplicates == 0 {
            return bad("bare_duplicates must be at least 1");
        }
        if self.labels_per_cluster > self.s {
            return bad("labels_per_cluster exceeds cluster size");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderParams {
    pub phi_min: f64,
    pub phi_max: f64,
    pub rate: f64,
}

impl Default for EncoderParams {
    fn default() -> Self {
        EncoderParams {
            phi_min: 0.0,
            phi_max: 1.0,
            rate: 0.3,
        }
    }
}

impl EncoderParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.phi_min && self.phi_min <= self.phi_max && self.phi_max <= 1.0) {
            return Err(Error::invalid("need 0 <= phi_min <= phi_max <= 1"));
        }
        if !(self.rate > 0.0 && self.rate <= 1.0) {
            return Err(Error::invalid("encoder rate must be in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderState {
    pub fidelity: f64,
    pub cumulative_relevant_fraction: f64,
}

impl EncoderState {
    pub fn initial(p: &EncoderParams) -> Self {
        EncoderState {
            fidelity: p.phi_min,
            cumulative_relevant_fraction: 0.0,
        }
    }
}

/// EMA of the relevant fraction, mapped linearly onto `[phi_min, phi_max]`.
/// Fidelity never decreases.
pub fn encoder_update(
    enc: &EncoderState,
    p: &EncoderParams,
    relevant_fraction: f64,
) -> EncoderState {
    let f = relevant_fraction.clamp(0.0, 1.0);
    let x = (1.0 - p.rate) * enc.cumulative_relevant_fraction + p.rate * f;
    let phi = p.phi_min + (p.phi_max - p.phi_min) * x;
    EncoderState {
        fidelity: enc.fidelity.max(phi),
        cumulative_relevant_fraction: x,
    }
}

/// A fixed piece of labelled content: target or held-out image.
#[derive(Debug, Clone)]
struct Item {
    concept: usize,
    descriptor: u32,
    noise: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SimWorld {
    spec: WorldSpec,
    vocabulary: Vocabulary,
    centers: Vec<Vec<f64>>,
    clusters: Vec<Vec<usize>>,
    /// Cluster of each concept, `None` for background.
    membership: Vec<Option<usize>>,
    labels: Vec<usize>,
    targets: Vec<Item>,
    heldout: Vec<Item>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let x: f64 = StandardNormal.sample(rng);
            scale * x
        })
        .collect::<Vec<f64>>()
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian(rng, dim, 1.0);
        if let Ok(u) = vector::normalized(&v) {
            return u;
        }
    }
}

/// Isotropic noise with unit expected squared norm.
fn noise(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    gaussian(rng, dim, 1.0 / (dim as f64).sqrt())
}

/// Point at chordal distance below `t` from unit vector `c`, stepping along a
/// random tangent direction.
fn perturb_on_sphere(rng: &mut ChaCha8Rng, c: &[f64], t: f64) -> Vec<f64> {
    loop {
        let mut w = gaussian(rng, c.len(), 1.0);
        let proj = vector::dot(&w, c);
        w.iter_mut().zip(c).for_each(|(x, ci)| *x -= proj * ci);
        if let Ok(w) = vector::normalized(&w) {
            let p: Vec<f64> = c.iter().zip(&w).map(|(a, b)| a + t * b).collect();
            return vector::normalized(&p).expect("tangent step keeps the norm above 1");
        }
    }
}

/// Uniform unit vector at least `min_dist` from every center, giving up
/// after a bounded number of tries.
fn far_point(rng: &mut ChaCha8Rng, centers: &[Vec<f64>], min_dist: f64) -> Vec<f64> {
    let mut tries = 0;
    loop {
        tries += 1;
        let u = unit(rng, centers.first().map_or(2, |c| c.len()));
        if tries > 10_000 || centers.iter().all(|x| vector::euclidean(x, &u) >= min_dist) {
            return u;
        }
    }
}

pub fn make_world(spec: &WorldSpec) -> Result<SimWorld> {
    spec.validate()?;
    let (n, d, r) = (spec.n, spec.dim, spec.radius);
    let mut rng = seed::rng(spec.seed, &[tag::WORLD]);

    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(spec.c);
    let mut attempts = 0;
    while centers.len() < spec.c {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::invalid(
                "cannot place separated clusters; lower c or radius, or raise dim",
            ));
        }
        let u = unit(&mut rng, d);
        if centers.iter().all(|x| vector::euclidean(x, &u) >= 4.0 * r) {
            centers.push(u);
        }
    }

    let mut relevant_ids = index::sample(&mut rng, n, spec.c * spec.s).into_vec();
    relevant_ids.sort_unstable();
    // Shuffle the cluster assignment so ids carry no structure.
    let order = index::sample(&mut rng, relevant_ids.len(), relevant_ids.len()).into_vec();
    let mut membership = vec![None; n];
    let mut clusters = vec![Vec::with_capacity(spec.s); spec.c];
    for (slot, &o) in order.iter().enumerate() {
        let id = relevant_ids[o];
        let k = slot / spec.s;
        membership[id] = Some(k);
        clusters[k].push(id);
    }
    clusters.iter_mut().for_each(|c| c.sort_unstable());

    // Group centers at least 3r from every relevant center, so members stay
    // 2r away.
    let groups: Vec<Vec<f64>> = (0..spec.background_groups)
        .map(|_| far_point(&mut rng, &centers, 3.0 * r))
        .collect();

    let mut concepts = Vec::with_capacity(n);
    for (id, m) in membership.iter().enumerate() {
        let mut group = None;
        let latent = match m {
            Some(k) => {
                let t = r * rng.random::<f64>();
                perturb_on_sphere(&mut rng, &centers[*k], t)
            }
            None if !groups.is_empty() => {
                let g = rng.random_range(0..groups.len());
                group = Some(g);
                let t = r * rng.random::<f64>();
                perturb_on_sphere(&mut rng, &groups[g], t)
            }
            None => far_point(&mut rng, &centers, 2.0 * r),
        };
        let hyper = match (m, group) {
            (Some(k), _) => format!("group_{k}"),
            (None, Some(g)) => format!("background_{g}"),
            (None, None) => "background".to_string(),
        };
        let lemma = format!("concept_{id:06}");
        concepts.push(Concept::new(id, lemma, latent).with_gloss(hyper, "synthetic concept"));
    }
    let vocabulary = Vocabulary::new(concepts)?;

    let labels = clusters
        .iter()
        .flat_map(|c| c.iter().take(spec.labels_per_cluster).copied())
        .collect();

    let draw_items = |t: u64, count: usize| -> Vec<Item> {
        let mut rng = seed::rng(spec.seed, &[t]);
        (0..count)
            .map(|_| {
                let cl = &clusters[rng.random_range(0..spec.c)];
                let concept = cl[rng.random_range(0..cl.len())];
                let descriptor = if spec.descriptor_modes == 0 {
                    0
                } else {
                    rng.random_range(1..=spec.descriptor_modes)
                };
                Item {
                    concept,
                    descriptor,
                    noise: noise(&mut rng, d),
                }
            })
            .collect()
    };
    let targets = draw_items(tag::TARGET, spec.target_size);
    let heldout = draw_items(tag::HELDOUT, spec.heldout_size);

    Ok(SimWorld {
        spec: spec.clone(),
        vocabulary,
        centers,
        clusters,
        membership,
        labels,
        targets,
        heldout,
    })
}

/// Content of one search result, fixed by `(concept, descriptor, rank)`.
struct Content {
    /// Noise-free position.
    base: Vec<f64>,
    noise: Vec<f64>,
    distractor: bool,
}

impl SimWorld {
    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn cluster_of(&self, concept: usize) -> Option<usize> {
        self.membership.get(concept).copied().flatten()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn latent(&self, concept: usize) -> Result<&[f64]> {
        self.vocabulary
            .get(concept)
            .map(|c| c.embedding.as_slice())
            .ok_or(Error::UnknownConcept(concept))
    }

    /// Appearance offset of descriptor `d` for `concept`; zero for `d = 0`.
    pub fn descriptor_offset(&self, concept: usize, d: u32) -> Vec<f64> {
        if d == 0 {
            return vec![0.0; self.spec.dim];
        }
        let mut rng = seed::rng(self.spec.seed, &[tag::DESCRIPTOR, concept as u64, d as u64]);
        let u = unit(&mut rng, self.spec.dim);
        u.into_iter()
            .map(|x| x * self.spec.descriptor_scale)
            .collect()
    }

    fn noise_scale(&self, enc: &EncoderState) -> f64 {
        self.spec.rep_noise * (1.0 - enc.fidelity)
    }

    pub fn content_key(&self, concept: usize, d: u32, rank: u32) -> u64 {
        let rank = if d == 0 {
            rank / self.spec.bare_duplicates.max(1)
        } else {
            rank
        };
        seed::derive(
            self.spec.seed,
            &[tag::SEARCH, concept as u64, d as u64, rank as u64],
        )
    }

    fn content(&self, concept: usize, d: u32, key: u64) -> Result<Content> {
        let latent = self.latent(concept)?;
        let mut rng = seed::rng(key, &[]);
        let distractor = rng.random::<f64>() < self.spec.distractor_rate;
        let base = if distractor {
            unit(&mut rng, self.spec.dim)
        } else {
            let off = self.descriptor_offset(concept, d);
            latent.iter().zip(&off).map(|(a, b)| a + b).collect()
        };
        let noise = noise(&mut rng, self.spec.dim);
        Ok(Content {
            base,
            noise,
            distractor,
        })
    }

    fn render(&self, base: &[f64], noise: &[f64], scale: f64) -> Vec<f64> {
        base.iter().zip(noise).map(|(b, z)| b + scale * z).collect()
    }

    fn render_item(&self, it: &Item, scale: f64) -> Vec<f64> {
        let latent = &self.vocabulary.concepts()[it.concept].embedding;
        let off = self.descriptor_offset(it.concept, it.descriptor);
        let base: Vec<f64> = latent.iter().zip(&off).map(|(a, b)| a + b).collect();
        self.render(&base, &it.noise, scale)
    }

    /// `q` results for `concept` under `descriptor`. Record ids and iteration
    /// are left for the caller to assign.
    pub fn search(
        &self,
        enc: &EncoderState,
        concept: usize,
        descriptor: u32,
        q: usize,
    ) -> Result<Vec<ImageRecord>> {
        if q == 0 {
            return Err(Error::invalid("q must be at least 1"));
        }
        self.latent(concept)?;
        let scale = self.noise_scale(enc);
        (0..q as u32)
            .map(|rank| {
                let key = self.content_key(concept, descriptor, rank);
                let c = self.content(concept, descriptor, key)?;
                Ok(ImageRecord {
                    id: 0,
                    representation: self.render(&c.base, &c.noise, scale),
                    source_concept: concept,
                    descriptor: String::new(),
                    descriptor_index: descriptor,
                    rank,
                    content_key: key,
                    reward: None,
                    iteration: 0,
                })
            })
            .collect()
    }

    pub fn is_distractor(&self, record: &ImageRecord) -> Result<bool> {
        Ok(self
            .content(
                record.source_concept,
                record.descriptor_index,
                record.content_key,
            )?
            .distractor)
    }

    /// Ground-truth label of a returned image: its cluster, unless it is
    /// background or a distractor.
    pub fn record_label(&self, record: &ImageRecord) -> Result<Option<usize>> {
        match self.cluster_of(record.source_concept) {
            Some(k) if !self.is_distractor(record)? => Ok(Some(k)),
            _ => Ok(None),
        }
    }

    /// Record representation re-rendered under `enc`.
    pub fn rerender(&self, record: &ImageRecord, enc: &EncoderState) -> Result<Vec<f64>> {
        let c = self.content(
            record.source_concept,
            record.descriptor_index,
            record.content_key,
        )?;
        Ok(self.render(&c.base, &c.noise, self.noise_scale(enc)))
    }

    pub fn target_set(&self, enc: &EncoderState) -> Result<TargetSet> {
        let scale = self.noise_scale(enc);
        TargetSet::new(
            self.targets
                .iter()
                .map(|t| self.render_item(t, scale))
                .collect(),
        )
    }

    /// k-NN accuracy of the held-out images against the targets and `buffer`,
    /// all rendered under `enc`. Buffer records that are not relevant vote for
    /// a class no held-out image has.
    pub fn evaluate_accuracy(
        &self,
        enc: &EncoderState,
        buffer: &[ImageRecord],
        k: usize,
    ) -> Result<f64> {
        self.evaluate_accuracy_with(Execution::default(), enc, buffer, k)
    }

    pub fn evaluate_accuracy_with(
        &self,
        exec: Execution,
        enc: &EncoderState,
        buffer: &[ImageRecord],
        k: usize,
    ) -> Result<f64> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let scale = self.noise_scale(enc);
        let mut refs: Vec<(Vec<f64>, Option<usize>)> = self
            .targets
            .iter()
            .map(|t| (self.render_item(t, scale), self.cluster_of(t.concept)))
            .collect();
        for r in buffer {
            let c = self.content(r.source_concept, r.descriptor_index, r.content_key)?;
            let label = if c.distractor {
                None
            } else {
                self.cluster_of(r.source_concept)
            };
            refs.push((self.render(&c.base, &c.noise, scale), label));
        }
        let refs: Vec<(Vec<f64>, Option<usize>)> = refs
            .into_iter()
            .filter_map(|(v, l)| vector::normalized(&v).ok().map(|v| (v, l)))
            .collect();
        if refs.is_empty() {
            return Err(Error::invalid("empty reference set"));
        }
        let k = k.min(refs.len());
        let correct = par::map(exec, &self.heldout, |h| {
            let q = match vector::normalized(&self.render_item(h, scale)) {
                Ok(q) => q,
                Err(_) => return false,
            };
            let mut sims: Vec<(f64, usize)> = refs
                .iter()
                .enumerate()
                .map(|(i, (v, _))| (vector::dot(&q, v), i))
                .collect();
            sims.select_nth_unstable_by(k - 1, |a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut top = sims[..k].to_vec();
            top.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            predict(&top.iter().map(|&(_, i)| refs[i].1).collect::<Vec<_>>())
                == self.cluster_of(h.concept)
        });
        let total = correct.len();
        Ok(correct.into_iter().filter(|&c| c).count() as f64 / total as f64)
    }

    /// Midpoint between the mean concept scores of relevant and background
    /// concepts, measured on `probes` of each under `enc` with no descriptor.
    pub fn calibrate_threshold(
        &self,
        enc: &EncoderState,
        probes: usize,
        q: usize,
        reward_k: usize,
        top_n: usize,
    ) -> Result<f64> {
        let targets = self.target_set(enc)?;
        let mut rng = seed::rng(self.spec.seed, &[tag::WORLD, 0xCA11]);
        let relevant: Vec<usize> = self.clusters.iter().flatten().copied().collect();
        let background: Vec<usize> = (0..self.spec.n)
            .filter(|&i| self.membership[i].is_none())
            .collect();
        let mut mean = |pool: &[usize]| -> Result<f64> {
            if pool.is_empty() {
                return Ok(0.0);
            }
            let mut total = 0.0;
            for _ in 0..probes {
                let c = pool[rng.random_range(0..pool.len())];
                let rewards = self
                    .search(enc, c, 0, q)?
                    .iter()
                    .map(|r| image_reward(&r.representation, &targets, reward_k))
                    .collect::<Result<Vec<_>>>()?;
                total += concept_score(&rewards, top_n)?;
            }
            Ok(total / probes as f64)
        };
        let hi = mean(&relevant)?;
        let lo = mean(&background)?;
        Ok(0.5 * (hi + lo))
    }
}

/// Majority vote over nearest-first labels; ties go to the label whose first
/// vote is nearest.
fn predict(labels: &[Option<usize>]) -> Option<usize> {
    let mut seen: Vec<(Option<usize>, usize, usize)> = Vec::new();
    for (pos, l) in labels.iter().enumerate() {
        match seen.iter_mut().find(|e| e.0 == *l) {
            Some(e) => e.1 += 1,
            None => seen.push((*l, 1, pos)),
        }
    }
    seen.into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
        .and_then(|e| e.0)
}

/// Distinct content keys in `records`.
pub fn distinct_content(records: &[ImageRecord]) -> usize {
    records
        .iter()
        .map(|r| r.content_key)
        .collect::<HashSet<_>>()
        .len()
}
