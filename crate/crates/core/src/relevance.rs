//! Image relevance rewards, concept-level scores and the InfoNCE ablation
//! reward.

use crate::error::{check_dim, Error, Result};
use crate::par::{self, Execution};
use crate::vector::{all_finite, dot, norm, top_k_mean};

pub const DEFAULT_REWARD_K: usize = 15;
pub const DEFAULT_CONCEPT_TOP_N: usize = 10;

/// One retrieved item.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: u64,
    pub representation: Vec<f64>,
    pub source_concept: usize,
    pub descriptor: String,
    pub descriptor_index: u32,
    /// Position in the search result list.
    pub rank: u32,
    /// Identity of the underlying image; repeated downloads share it.
    pub content_key: u64,
    pub reward: Option<f64>,
    pub iteration: u32,
}

impl ImageRecord {
    pub fn reward_or_nan(&self) -> f64 {
        self.reward.unwrap_or(f64::NAN)
    }
}

/// Unlabeled target representations, pre-normalized for scoring.
#[derive(Debug, Clone)]
pub struct TargetSet {
    representations: Vec<Vec<f64>>,
    unit: Vec<Vec<f64>>,
    dimension: usize,
}

impl TargetSet {
    pub fn new(representations: Vec<Vec<f64>>) -> Result<Self> {
        let dimension = representations
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::invalid("empty target set"))?;
        let mut unit = Vec::with_capacity(representations.len());
        for r in &representations {
            check_dim(dimension, r.len())?;
            if !all_finite(r) {
                return Err(Error::invalid("non-finite target representation"));
            }
            let n = norm(r);
            if n == 0.0 {
                return Err(Error::ZeroNorm("target representation".into()));
            }
            unit.push(r.iter().map(|x| x / n).collect());
        }
        Ok(TargetSet {
            representations,
            unit,
            dimension,
        })
    }

    pub fn len(&self) -> usize {
        self.representations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.representations.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn representations(&self) -> &[Vec<f64>] {
        &self.representations
    }

    /// Cosine similarity of `y` to every target, clamped to [-1, 1].
    pub fn similarities(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dimension, y.len())?;
        let ny = norm(y);
        if ny == 0.0 || !ny.is_finite() {
            return Err(Error::ZeroNorm("image representation".into()));
        }
        Ok(self
            .unit
            .iter()
            .map(|t| (dot(t, y) / ny).clamp(-1.0, 1.0))
            .collect())
    }
}

/// Mean cosine similarity of `y` to its `k` nearest targets. `k` is clamped to
/// the target count.
pub fn image_reward(y: &[f64], targets: &TargetSet, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let mut sims = targets.similarities(y)?;
    Ok(top_k_mean(&mut sims, k).clamp(-1.0, 1.0))
}

pub fn image_rewards(
    exec: Execution,
    images: &[Vec<f64>],
    targets: &TargetSet,
    k: usize,
) -> Result<Vec<f64>> {
    par::map(exec, images, |y| image_reward(y, targets, k))
        .into_iter()
        .collect()
}

/// How per-image rewards collapse into a concept-level score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// Mean of the `top_n` largest image rewards.
    TopN,
    /// Plain mean over all results.
    Mean,
}

/// Mean of the `min(top_n, len)` largest rewards.
pub fn concept_score(rewards: &[f64], top_n: usize) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::invalid("no rewards to score"));
    }
    if top_n == 0 {
        return Err(Error::invalid("top_n must be at least 1"));
    }
    let mut v = rewards.to_vec();
    Ok(top_k_mean(&mut v, top_n))
}

pub fn aggregate(rewards: &[f64], how: Aggregation, top_n: usize) -> Result<f64> {
    match how {
        Aggregation::TopN => concept_score(rewards, top_n),
        Aggregation::Mean => concept_score(rewards, rewards.len().max(1)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfoNce {
    pub loss: f64,
    /// Set when there were no negatives and the loss is trivially zero.
    pub degenerate: bool,
}

/// `-log(exp(q.k+/tau) / (exp(q.k+/tau) + sum exp(q.k-/tau)))` on raw vectors.
pub fn infonce_loss(
    q: &[f64],
    k_plus: &[f64],
    negatives: &[Vec<f64>],
    tau: f64,
) -> Result<InfoNce> {
    check_dim(q.len(), k_plus.len())?;
    for n in negatives {
        check_dim(q.len(), n.len())?;
    }
    let neg: Vec<f64> = negatives.iter().map(|n| dot(q, n)).collect();
    infonce_from_logits(dot(q, k_plus), &neg, tau)
}

/// Same loss from precomputed dot products.
pub fn infonce_from_logits(positive: f64, negatives: &[f64], tau: f64) -> Result<InfoNce> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    if negatives.is_empty() {
        return Ok(InfoNce {
            loss: 0.0,
            degenerate: true,
        });
    }
    let pos = positive / tau;
    let max = negatives.iter().map(|n| n / tau).fold(pos, f64::max);
    let sum: f64 = std::iter::once(pos)
        .chain(negatives.iter().map(|n| n / tau))
        .map(|l| (l - max).exp())
        .sum();
    Ok(InfoNce {
        loss: max + sum.ln() - pos,
        degenerate: false,
    })
}
