//! Gaussian-process regression over concept embeddings.
//!
//! The kernel is `exp(-||a - b|| / 2)` with the plain Euclidean norm; the
//! squared-distance variant is available through [`KernelKind::Squared`].
//! Observations are centred on their empirical mean, which is added back at
//! prediction time. Unit output scale, no noise term beyond jitter.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::par::{self, Execution};
use crate::seed;
use crate::vector::euclidean;
use crate::vocabulary::Vocabulary;

pub const DEFAULT_JITTER: f64 = 1e-8;
pub const MAX_JITTER: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelKind {
    /// `exp(-||a-b||/2)`
    #[default]
    Euclidean,
    /// `exp(-||a-b||^2/2)`
    Squared,
}

impl KernelKind {
    #[inline]
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        let d = euclidean(a, b);
        match self {
            KernelKind::Euclidean => (-d / 2.0).exp(),
            KernelKind::Squared => (-d * d / 2.0).exp(),
        }
    }
}

pub fn rbf_kernel(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    Ok(KernelKind::Euclidean.eval(a, b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub concept_id: usize,
    pub embedding: Vec<f64>,
    pub reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConceptPosterior {
    pub concept_id: usize,
    pub mean: f64,
    pub std: f64,
    pub score: f64,
}

/// Lower-triangular Cholesky factor stored row-major (full n*n buffer).
#[derive(Debug, Clone)]
pub(crate) struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub(crate) fn factor(a: &[f64], n: usize) -> Option<Self> {
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[i * n + j];
                let (ri, rj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
                s -= ri.iter().zip(rj).map(|(x, y)| x * y).sum::<f64>();
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Some(Cholesky { n, l })
    }

    /// Solve `L x = b` in place.
    pub(crate) fn forward(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let s: f64 = row.iter().zip(&b[..i]).map(|(x, y)| x * y).sum();
            b[i] = (b[i] - s) / self.l[i * n + i];
        }
    }

    /// Solve `L^T x = b` in place.
    pub(crate) fn backward(&self, b: &mut [f64]) {
        let n = self.n;
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }
}

/// A fitted GP: factorization of `K + jitter*I` and the centred weights.
#[derive(Debug, Clone)]
pub struct GpModel {
    kernel: KernelKind,
    points: Vec<Vec<f64>>,
    targets: Vec<f64>,
    prior_mean: f64,
    jitter: f64,
    chol: Cholesky,
    alpha: Vec<f64>,
}

/// Average observations that share an embedding. The result is sorted by the
/// embedding's bit pattern so fits do not depend on input order.
pub fn merge_duplicates(observations: &[Observation]) -> Vec<(Vec<f64>, f64)> {
    let mut groups: BTreeMap<Vec<u64>, (Vec<f64>, f64, usize)> = BTreeMap::new();
    for o in observations {
        let key: Vec<u64> = o.embedding.iter().map(|x| x.to_bits()).collect();
        let e = groups
            .entry(key)
            .or_insert_with(|| (o.embedding.clone(), 0.0, 0));
        e.1 += o.reward;
        e.2 += 1;
    }
    groups
        .into_values()
        .map(|(emb, sum, n)| (emb, sum / n as f64))
        .collect()
}

impl GpModel {
    pub fn fit(observations: &[Observation], jitter: f64) -> Result<Self> {
        Self::fit_with(observations, jitter, KernelKind::Euclidean)
    }

    pub fn fit_with(observations: &[Observation], jitter: f64, kernel: KernelKind) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::invalid("cannot fit a GP without observations"));
        }
        if !(jitter > 0.0) {
            return Err(Error::invalid("jitter must be positive"));
        }
        let dim = observations[0].embedding.len();
        for o in observations {
            check_dim(dim, o.embedding.len())?;
            if !o.reward.is_finite() {
                return Err(Error::invalid(format!(
                    "non-finite reward for concept {}",
                    o.concept_id
                )));
            }
        }
        let merged = merge_duplicates(observations);
        let n = merged.len();
        let (points, targets): (Vec<Vec<f64>>, Vec<f64>) = merged.into_iter().unzip();
        let prior_mean = targets.iter().sum::<f64>() / n as f64;

        let mut k = vec![0.0; n * n];
        for i in 0..n {
            k[i * n + i] = 1.0;
            for j in 0..i {
                let v = kernel.eval(&points[i], &points[j]);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        let mut j = jitter;
        let chol = loop {
            let mut a = k.clone();
            for i in 0..n {
                a[i * n + i] += j;
            }
            if let Some(c) = Cholesky::factor(&a, n) {
                break c;
            }
            if j >= MAX_JITTER {
                return Err(Error::Numerical(format!(
                    "Cholesky failed for {n} observations with jitter up to {MAX_JITTER:e}"
                )));
            }
            j = (j * 10.0).min(MAX_JITTER);
            log::debug!("GP factorization retry with jitter {j:e}");
        };
        let mut alpha: Vec<f64> = targets.iter().map(|r| r - prior_mean).collect();
        chol.forward(&mut alpha);
        chol.backward(&mut alpha);
        Ok(GpModel {
            kernel,
            points,
            targets,
            prior_mean,
            jitter: j,
            chol,
            alpha,
        })
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn prior_mean(&self) -> f64 {
        self.prior_mean
    }

    pub fn kernel(&self) -> KernelKind {
        self.kernel
    }

    pub fn dimension(&self) -> usize {
        self.points[0].len()
    }

    /// Merged training points and their averaged rewards.
    pub fn training_data(&self) -> (&[Vec<f64>], &[f64]) {
        (&self.points, &self.targets)
    }

    /// Posterior mean and the variance before flooring at zero.
    pub fn predict_raw(&self, e: &[f64]) -> Result<(f64, f64)> {
        check_dim(self.dimension(), e.len())?;
        let mut ks: Vec<f64> = self.points.iter().map(|p| self.kernel.eval(p, e)).collect();
        let mean = self.prior_mean + ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
        self.chol.forward(&mut ks);
        let var = 1.0 - ks.iter().map(|v| v * v).sum::<f64>();
        Ok((mean, var))
    }

    /// Posterior `(mean, std)`.
    pub fn predict(&self, e: &[f64]) -> Result<(f64, f64)> {
        let (m, v) = self.predict_raw(e)?;
        Ok((m, v.max(0.0).sqrt()))
    }

    /// Batched posterior for many query embeddings. Work is split into column
    /// blocks, each solved as one multi-right-hand-side triangular system.
    pub fn predict_many(&self, exec: Execution, queries: &[&[f64]]) -> Result<Vec<(f64, f64)>> {
        let d = self.dimension();
        for q in queries {
            check_dim(d, q.len())?;
        }
        const BLOCK: usize = 256;
        let n = self.points.len();
        let blocks: Vec<&[&[f64]]> = queries.chunks(BLOCK).collect();
        let out = par::map(exec, &blocks, |block| {
            let w = block.len();
            // v[i * w + c] = k(point_i, query_c)
            let mut v = vec![0.0; n * w];
            for (i, p) in self.points.iter().enumerate() {
                for (c, q) in block.iter().enumerate() {
                    v[i * w + c] = self.kernel.eval(p, q);
                }
            }
            let mut means = vec![self.prior_mean; w];
            for i in 0..n {
                let a = self.alpha[i];
                for c in 0..w {
                    means[c] += a * v[i * w + c];
                }
            }
            // Forward substitution on all columns at once.
            let l = &self.chol.l;
            for i in 0..n {
                let (done, rest) = v.split_at_mut(i * w);
                let row = &mut rest[..w];
                for k in 0..i {
                    let lik = l[i * n + k];
                    if lik != 0.0 {
                        let src = &done[k * w..k * w + w];
                        for c in 0..w {
                            row[c] -= lik * src[c];
                        }
                    }
                }
                let inv = 1.0 / l[i * n + i];
                for x in row.iter_mut() {
                    *x *= inv;
                }
            }
            let mut var = vec![1.0; w];
            for i in 0..n {
                for c in 0..w {
                    let x = v[i * w + c];
                    var[c] -= x * x;
                }
            }
            means
                .into_iter()
                .zip(var)
                .map(|(m, s2)| (m, s2.max(0.0).sqrt()))
                .collect::<Vec<_>>()
        });
        Ok(out.into_iter().flatten().collect())
    }
}

/// Posterior and exploration score for every vocabulary concept.
///
/// Unobserved concepts score `mean + std`; observed ones score the empirical
/// mean of their concept-level rewards.
pub fn score_all(
    model: &GpModel,
    vocabulary: &Vocabulary,
    observed: &HashMap<usize, Vec<f64>>,
) -> Result<Vec<ConceptPosterior>> {
    score_all_with(Execution::default(), model, vocabulary, observed)
}

pub fn score_all_with(
    exec: Execution,
    model: &GpModel,
    vocabulary: &Vocabulary,
    observed: &HashMap<usize, Vec<f64>>,
) -> Result<Vec<ConceptPosterior>> {
    let queries: Vec<&[f64]> = vocabulary
        .concepts()
        .iter()
        .map(|c| c.embedding.as_slice())
        .collect();
    let post = model.predict_many(exec, &queries)?;
    Ok(vocabulary
        .concepts()
        .iter()
        .zip(post)
        .map(|(c, (mean, std))| {
            let score = match observed.get(&c.id) {
                Some(r) if !r.is_empty() => r.iter().sum::<f64>() / r.len() as f64,
                _ => mean + std,
            };
            ConceptPosterior {
                concept_id: c.id,
                mean,
                std,
                score,
            }
        })
        .collect())
}

/// Settings for comparing the fitted model against the dense oracle on
/// random instances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleCheck {
    pub instances: usize,
    /// Observations per instance are drawn from `1..=max_observations`.
    pub max_observations: usize,
    /// Dimensions are drawn from `1..=max_dimension`.
    pub max_dimension: usize,
    pub queries: usize,
    pub kernel: KernelKind,
    pub seed: u64,
}

impl Default for OracleCheck {
    fn default() -> Self {
        OracleCheck {
            instances: 100,
            max_observations: 50,
            max_dimension: 16,
            queries: 20,
            kernel: KernelKind::Euclidean,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OracleReport {
    pub instances: usize,
    pub max_mean_deviation: f64,
    pub max_std_deviation: f64,
    /// Largest posterior std at a training point.
    pub max_std_at_observed: f64,
    /// Smallest posterior std anywhere, including training points.
    pub min_std: f64,
}

/// Fit random instances and compare posterior mean and std at random
/// queries with [`oracle::posterior`].
pub fn check_against_oracle(cfg: &OracleCheck) -> Result<OracleReport> {
    if cfg.instances == 0 || cfg.max_observations == 0 || cfg.max_dimension == 0 {
        return Err(Error::invalid(
            "instances, observations and dimension must be positive",
        ));
    }
    let squared = cfg.kernel == KernelKind::Squared;
    let mut rep = OracleReport {
        instances: cfg.instances,
        min_std: f64::INFINITY,
        ..OracleReport::default()
    };
    for i in 0..cfg.instances {
        let mut rng = seed::rng(cfg.seed, &[i as u64]);
        let n = rng.random_range(1..=cfg.max_observations);
        let d = rng.random_range(1..=cfg.max_dimension);
        let mut point = || -> Vec<f64> { (0..d).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let points: Vec<Vec<f64>> = (0..n).map(|_| point()).collect();
        let queries: Vec<Vec<f64>> = (0..cfg.queries).map(|_| point()).collect();
        let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let obs: Vec<Observation> = points
            .iter()
            .zip(&rewards)
            .enumerate()
            .map(|(id, (e, &reward))| Observation {
                concept_id: id,
                embedding: e.clone(),
                reward,
            })
            .collect();
        let model = GpModel::fit_with(&obs, DEFAULT_JITTER, cfg.kernel)?;
        let dense = oracle::posterior(&points, &rewards, model.jitter(), squared, &queries)
            .ok_or_else(|| Error::Numerical("dense oracle hit a zero pivot".into()))?;
        for (q, (dm, dv)) in queries.iter().zip(dense) {
            let (m, s) = model.predict(q)?;
            rep.max_mean_deviation = rep.max_mean_deviation.max((m - dm).abs());
            rep.max_std_deviation = rep.max_std_deviation.max((s - dv.max(0.0).sqrt()).abs());
            rep.min_std = rep.min_std.min(s);
        }
        for p in &points {
            let (_, s) = model.predict(p)?;
            rep.max_std_at_observed = rep.max_std_at_observed.max(s);
            rep.min_std = rep.min_std.min(s);
        }
    }
    Ok(rep)
}

/// Independent dense reference: Gaussian elimination with partial pivoting on
/// the same `K + jitter*I` system, recomputing every kernel value from
/// scratch. Used by tests and the `gpr-check` command.
pub mod oracle {
    pub fn kernel(a: &[f64], b: &[f64], squared: bool) -> f64 {
        let mut s = 0.0;
        for i in 0..a.len() {
            let d = a[i] - b[i];
            s += d * d;
        }
        if squared {
            (-s / 2.0).exp()
        } else {
            (-s.sqrt() / 2.0).exp()
        }
    }

    /// Solve `A X = B` for a dense `n x n` system with `m` right-hand sides.
    pub fn solve(a: &[Vec<f64>], b: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
        let n = a.len();
        let m = b.first().map_or(0, Vec::len);
        let mut aug: Vec<Vec<f64>> = a
            .iter()
            .zip(b)
            .map(|(row, rhs)| row.iter().chain(rhs).copied().collect())
            .collect();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| aug[i][col].abs().total_cmp(&aug[j][col].abs()))?;
            if aug[piv][col] == 0.0 {
                return None;
            }
            aug.swap(col, piv);
            for r in 0..n {
                if r != col {
                    let f = aug[r][col] / aug[col][col];
                    if f != 0.0 {
                        for c in col..n + m {
                            aug[r][c] -= f * aug[col][c];
                        }
                    }
                }
            }
        }
        Some(
            (0..n)
                .map(|r| (0..m).map(|c| aug[r][n + c] / aug[r][r]).collect())
                .collect(),
        )
    }

    /// Dense posterior `(mean, variance)` at each query.
    pub fn posterior(
        points: &[Vec<f64>],
        rewards: &[f64],
        jitter: f64,
        squared: bool,
        queries: &[Vec<f64>],
    ) -> Option<Vec<(f64, f64)>> {
        let n = points.len();
        let mean = rewards.iter().sum::<f64>() / n as f64;
        let a: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        kernel(&points[i], &points[j], squared) + if i == j { jitter } else { 0.0 }
                    })
                    .collect()
            })
            .collect();
        // Right-hand sides: centred rewards followed by one column per query.
        let b: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                std::iter::once(rewards[i] - mean)
                    .chain(queries.iter().map(|q| kernel(&points[i], q, squared)))
                    .collect()
            })
            .collect();
        let x = solve(&a, &b)?;
        Some(
            queries
                .iter()
                .enumerate()
                .map(|(qi, q)| {
                    let ks: Vec<f64> = points.iter().map(|p| kernel(p, q, squared)).collect();
                    let mu = mean + (0..n).map(|i| ks[i] * x[i][0]).sum::<f64>();
                    let var =
                        kernel(q, q, squared) - (0..n).map(|i| ks[i] * x[i][qi + 1]).sum::<f64>();
                    (mu, var)
                })
                .collect(),
        )
    }
}
