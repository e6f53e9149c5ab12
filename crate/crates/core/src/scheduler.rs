//! Concept sampling: SMR-scaled Boltzmann distribution followed by tiering.

use rand::distr::{weighted::WeightedIndex, Distribution};

use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_SMR: f64 = 3.0;
pub const DEFAULT_QUERIES_PER_ITERATION: usize = 256;

/// Temperature for the softmax, or a marker that all scores are equal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Temperature {
    Finite(f64),
    Uniform,
}

/// `(max - min) / smr`, or [`Temperature::Uniform`] when the scores are flat.
pub fn temperature_from_smr(scores: &[f64], smr: f64) -> Result<Temperature> {
    if scores.is_empty() {
        return Err(Error::invalid("no scores"));
    }
    if !(smr > 0.0) {
        return Err(Error::invalid(format!("SMR must be positive, got {smr}")));
    }
    let (lo, hi) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
            (lo.min(s), hi.max(s))
        });
    if !(hi - lo).is_finite() {
        return Err(Error::invalid("non-finite scores"));
    }
    let gap = hi - lo;
    if gap == 0.0 {
        Ok(Temperature::Uniform)
    } else {
        Ok(Temperature::Finite(gap / smr))
    }
}

/// `p_i ∝ exp(r_i / tau)` with max-subtraction.
pub fn softmax_distribution(scores: &[f64], tau: Temperature) -> Vec<f64> {
    let n = scores.len();
    match tau {
        Temperature::Uniform => vec![1.0 / n as f64; n],
        Temperature::Finite(t) => {
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = scores.iter().map(|s| ((s - max) / t).exp()).collect();
            let z: f64 = w.iter().sum();
            w.into_iter().map(|x| x / z).collect()
        }
    }
}

/// Rank intervals and the probability mass each receives.
#[derive(Debug, Clone, PartialEq)]
pub struct TierSpec {
    /// Inner boundaries `T_1 < ... < T_{n-1}`; `T_0 = 0` and `T_n = N` are implied.
    pub boundaries: Vec<usize>,
    pub masses: Vec<f64>,
}

impl Default for TierSpec {
    fn default() -> Self {
        TierSpec {
            boundaries: vec![250, 1000],
            masses: vec![0.8, 0.1, 0.1],
        }
    }
}

/// Tiers resolved against a concrete vocabulary size.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedTiers {
    /// Half-open rank ranges, all non-empty.
    pub ranges: Vec<(usize, usize)>,
    pub masses: Vec<f64>,
}

impl TierSpec {
    pub fn new(boundaries: Vec<usize>, masses: Vec<f64>) -> Result<Self> {
        let spec = TierSpec { boundaries, masses };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.masses.len() != self.boundaries.len() + 1 {
            return Err(Error::invalid(format!(
                "{} tier masses for {} inner boundaries",
                self.masses.len(),
                self.boundaries.len()
            )));
        }
        if self.boundaries.first() == Some(&0) || self.boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(
                "tier boundaries must be strictly increasing and positive",
            ));
        }
        if self.masses.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return Err(Error::invalid("tier masses must be non-negative"));
        }
        let total: f64 = self.masses.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("tier masses sum to {total}, not 1")));
        }
        Ok(())
    }

    /// Clip boundaries to `n`. Tiers that end up empty hand their mass to the
    /// remaining tiers in proportion to those tiers' own masses.
    pub fn resolve(&self, n: usize) -> ResolvedTiers {
        let mut edges = vec![0];
        edges.extend(self.boundaries.iter().map(|&b| b.min(n)));
        edges.push(n);
        let mut ranges = Vec::new();
        let mut masses = Vec::new();
        for (j, m) in self.masses.iter().enumerate() {
            if edges[j + 1] > edges[j] {
                ranges.push((edges[j], edges[j + 1]));
                masses.push(*m);
            }
        }
        renormalize(&mut masses);
        ResolvedTiers { ranges, masses }
    }
}

fn renormalize(masses: &mut [f64]) {
    let total: f64 = masses.iter().sum();
    if total > 0.0 && total != 1.0 {
        for m in masses.iter_mut() {
            *m /= total;
        }
    } else if total == 0.0 && !masses.is_empty() {
        let u = 1.0 / masses.len() as f64;
        masses.iter_mut().for_each(|m| *m = u);
    }
}

/// Redistribute mass so tier `j` sums to its mass, keeping within-tier ratios.
/// `sorted` must be ordered by descending score. A tier whose input mass is
/// zero cannot be rescaled; its share goes to the other tiers.
pub fn apply_tiering(sorted: &[f64], tiers: &TierSpec) -> Result<Vec<f64>> {
    tiers.validate()?;
    let total: f64 = sorted.iter().sum();
    if sorted.is_empty() || (total - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "input distribution sums to {total}"
        )));
    }
    let mut resolved = tiers.resolve(sorted.len());
    let sums: Vec<f64> = resolved
        .ranges
        .iter()
        .map(|&(a, b)| sorted[a..b].iter().sum())
        .collect();
    if sums.contains(&0.0) {
        for (m, s) in resolved.masses.iter_mut().zip(&sums) {
            if *s == 0.0 {
                log::warn!("tier with zero input mass; redistributing its share");
                *m = 0.0;
            }
        }
        renormalize(&mut resolved.masses);
    }
    let mut out = vec![0.0; sorted.len()];
    for ((&(a, b), &mass), &sum) in resolved.ranges.iter().zip(&resolved.masses).zip(&sums) {
        if sum == 0.0 {
            continue;
        }
        let scale = mass / sum;
        for i in a..b {
            out[i] = sorted[i] * scale;
        }
    }
    Ok(out)
}

/// Concepts ordered by descending score with their sampling probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub order: Vec<usize>,
    pub scores: Vec<f64>,
    pub softmax: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl SamplingPlan {
    /// Equal probability for every concept, in id order.
    pub fn uniform(ids: &[usize]) -> Self {
        let n = ids.len();
        let mut order = ids.to_vec();
        order.sort_unstable();
        let p = vec![1.0 / n as f64; n];
        SamplingPlan {
            order,
            scores: vec![0.0; n],
            softmax: p.clone(),
            probabilities: p,
        }
    }

    /// Sort, soften with the SMR temperature, then tier.
    pub fn build(scored: &[(usize, f64)], smr: f64, tiers: &TierSpec) -> Result<Self> {
        if scored.is_empty() {
            return Err(Error::invalid("no concepts to plan over"));
        }
        let mut v = scored.to_vec();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let scores: Vec<f64> = v.iter().map(|x| x.1).collect();
        let tau = temperature_from_smr(&scores, smr)?;
        let softmax = softmax_distribution(&scores, tau);
        let probabilities = apply_tiering(&softmax, tiers)?;
        Ok(SamplingPlan {
            order: v.into_iter().map(|x| x.0).collect(),
            scores,
            softmax,
            probabilities,
        })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// CSV rows: rank, concept, score, pre-tier p, post-tier p.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,concept,score,p_softmax,p_tiered\n");
        for (r, ((c, sc), (p0, p1))) in self
            .order
            .iter()
            .zip(&self.scores)
            .zip(self.softmax.iter().zip(&self.probabilities))
            .enumerate()
        {
            s.push_str(&format!("{r},{c},{sc},{p0:e},{p1:e}\n"));
        }
        s
    }
}

/// `m` independent draws with replacement. The generator is a ChaCha stream
/// derived from `seed`, so the sequence depends on the seed alone.
pub fn sample_concepts(plan: &SamplingPlan, m: usize, seed: u64) -> Result<Vec<usize>> {
    let dist = WeightedIndex::new(&plan.probabilities)
        .map_err(|e| Error::invalid(format!("invalid sampling plan: {e}")))?;
    let mut rng = seed::rng(seed, &[seed::tag::PLAN]);
    Ok((0..m).map(|_| plan.order[dist.sample(&mut rng)]).collect())
}
