//! Text-to-image retrieval over a static corpus of caption embeddings.
//!
//! Two modes: an exact flat scan, and an inverted-file index (spherical
//! k-means coarse quantizer) whose recall is tuned by the number of probed
//! lists. Embeddings are unit-normalized at build time and ranked by cosine.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::par::{self, Execution};
use crate::seed;
use crate::vector::{all_finite, dot, normalized};

pub const DEFAULT_TOP_K: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub image_id: u64,
    pub caption_embedding: Vec<f64>,
    pub payload_ref: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexMode {
    Exact,
    /// Inverted lists; `lists = None` picks about `sqrt(N)`.
    Accelerated {
        lists: Option<usize>,
        probes: usize,
    },
}

impl IndexMode {
    pub fn accelerated() -> Self {
        IndexMode::Accelerated {
            lists: None,
            probes: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub image_id: u64,
    pub score: f64,
    /// Position of the entry in the corpus.
    pub entry: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub hits: Vec<Hit>,
    /// `top_k` exceeded the corpus size; everything was returned.
    pub truncated: bool,
}

impl QueryResult {
    pub fn ids(&self) -> Vec<u64> {
        self.hits.iter().map(|h| h.image_id).collect()
    }
}

#[derive(Debug, Clone)]
struct InvertedLists {
    centroids: Vec<f64>,
    lists: Vec<Vec<u32>>,
    probes: usize,
}

#[derive(Debug, Clone)]
pub struct CaptionIndex {
    ids: Vec<u64>,
    payloads: Vec<String>,
    unit: Vec<f64>,
    dim: usize,
    ivf: Option<InvertedLists>,
}

fn better(a: &Hit, b: &Hit) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.image_id.cmp(&b.image_id))
}

fn top_hits(mut hits: Vec<Hit>, k: usize) -> Vec<Hit> {
    if hits.len() > k {
        hits.select_nth_unstable_by(k - 1, better);
        hits.truncate(k);
    }
    hits.sort_by(better);
    hits
}

impl CaptionIndex {
    pub fn build(entries: &[CorpusEntry], mode: IndexMode) -> Result<Self> {
        Self::build_with(entries, mode, 0)
    }

    /// Build; `seed` drives the k-means initialisation in accelerated mode.
    pub fn build_with(entries: &[CorpusEntry], mode: IndexMode, seed: u64) -> Result<Self> {
        let dim = entries
            .first()
            .map(|e| e.caption_embedding.len())
            .ok_or_else(|| Error::invalid("cannot index an empty corpus"))?;
        if dim == 0 {
            return Err(Error::invalid("zero-dimensional embeddings"));
        }
        let mut unit = Vec::with_capacity(entries.len() * dim);
        for e in entries {
            check_dim(dim, e.caption_embedding.len())?;
            if !all_finite(&e.caption_embedding) {
                return Err(Error::invalid(format!(
                    "entry {} has non-finite values",
                    e.image_id
                )));
            }
            unit.extend(normalized(&e.caption_embedding)?);
        }
        let mut index = CaptionIndex {
            ids: entries.iter().map(|e| e.image_id).collect(),
            payloads: entries.iter().map(|e| e.payload_ref.clone()).collect(),
            unit,
            dim,
            ivf: None,
        };
        if let IndexMode::Accelerated { lists, probes } = mode {
            let n = entries.len();
            let nlist = lists
                .unwrap_or_else(|| (n as f64).sqrt().round() as usize)
                .clamp(1, n);
            let probes = if probes == 0 {
                default_probes(nlist)
            } else {
                probes.min(nlist)
            };
            index.ivf = Some(index.train_lists(nlist, probes, seed));
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    /// Unit-normalised caption embedding of entry `entry`.
    pub fn embedding(&self, entry: usize) -> &[f64] {
        self.row(entry)
    }

    pub fn payload(&self, entry: usize) -> &str {
        &self.payloads[entry]
    }

    pub fn is_accelerated(&self) -> bool {
        self.ivf.is_some()
    }

    /// Number of inverted lists and probes, when accelerated.
    pub fn list_config(&self) -> Option<(usize, usize)> {
        self.ivf.as_ref().map(|i| (i.lists.len(), i.probes))
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.unit[i * self.dim..(i + 1) * self.dim]
    }

    fn train_lists(&self, nlist: usize, probes: usize, seed: u64) -> InvertedLists {
        let n = self.len();
        let d = self.dim;
        let mut rng = seed::rng(seed, &[seed::tag::INDEX]);
        let sample_n = n.min(nlist * 40);
        let sample: Vec<usize> = index::sample(&mut rng, n, sample_n).into_vec();
        let mut centroids: Vec<f64> = index::sample(&mut rng, sample_n, nlist)
            .into_iter()
            .flat_map(|i| self.row(sample[i]).to_vec())
            .collect();
        let assign = |centroids: &[f64], v: &[f64]| -> usize {
            let mut best = (f64::NEG_INFINITY, 0);
            for c in 0..nlist {
                let s = dot(&centroids[c * d..(c + 1) * d], v);
                if s > best.0 {
                    best = (s, c);
                }
            }
            best.1
        };
        for _ in 0..12 {
            let labels = par::map_range(Execution::default(), sample_n, |i| {
                assign(&centroids, self.row(sample[i]))
            });
            let mut sums = vec![0.0; nlist * d];
            let mut counts = vec![0usize; nlist];
            for (i, &l) in labels.iter().enumerate() {
                counts[l] += 1;
                for (s, x) in sums[l * d..(l + 1) * d].iter_mut().zip(self.row(sample[i])) {
                    *s += x;
                }
            }
            for c in 0..nlist {
                if counts[c] == 0 {
                    continue;
                }
                if let Ok(u) = normalized(&sums[c * d..(c + 1) * d]) {
                    centroids[c * d..(c + 1) * d].copy_from_slice(&u);
                }
            }
        }
        let labels = par::map_range(Execution::default(), n, |i| assign(&centroids, self.row(i)));
        let mut lists = vec![Vec::new(); nlist];
        for (i, l) in labels.into_iter().enumerate() {
            lists[l].push(i as u32);
        }
        InvertedLists {
            centroids,
            lists,
            probes,
        }
    }

    fn prepare(&self, query: &[f64], top_k: usize) -> Result<Vec<f64>> {
        check_dim(self.dim, query.len())?;
        if top_k == 0 {
            return Err(Error::invalid("top_k must be at least 1"));
        }
        normalized(query)
    }

    /// Top-k by descending cosine, ties to the lower image id. Uses the
    /// inverted lists when the index was built accelerated.
    pub fn query(&self, query: &[f64], top_k: usize) -> Result<QueryResult> {
        match &self.ivf {
            Some(ivf) => self.query_probed(query, top_k, ivf.probes),
            None => self.query_exact(query, top_k),
        }
    }

    pub fn query_exact(&self, query: &[f64], top_k: usize) -> Result<QueryResult> {
        self.query_exact_with(Execution::default(), query, top_k)
    }

    pub fn query_exact_with(
        &self,
        exec: Execution,
        query: &[f64],
        top_k: usize,
    ) -> Result<QueryResult> {
        let q = self.prepare(query, top_k)?;
        const CHUNK: usize = 16_384;
        let chunks = self.len().div_ceil(CHUNK);
        let partial = par::map_range(exec, chunks, |c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(self.len());
            let hits: Vec<Hit> = (lo..hi)
                .map(|i| Hit {
                    image_id: self.ids[i],
                    score: dot(self.row(i), &q).clamp(-1.0, 1.0),
                    entry: i,
                })
                .collect();
            top_hits(hits, top_k)
        });
        let truncated = top_k > self.len();
        Ok(QueryResult {
            hits: top_hits(partial.into_iter().flatten().collect(), top_k),
            truncated,
        })
    }

    /// Accelerated query scanning the `probes` lists nearest the query.
    pub fn query_probed(&self, query: &[f64], top_k: usize, probes: usize) -> Result<QueryResult> {
        let Some(ivf) = &self.ivf else {
            return self.query_exact(query, top_k);
        };
        let q = self.prepare(query, top_k)?;
        let d = self.dim;
        let nlist = ivf.lists.len();
        let mut order: Vec<(f64, usize)> = (0..nlist)
            .map(|c| (dot(&ivf.centroids[c * d..(c + 1) * d], &q), c))
            .collect();
        order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let hits: Vec<Hit> = order
            .iter()
            .take(probes.clamp(1, nlist))
            .flat_map(|&(_, c)| ivf.lists[c].iter())
            .map(|&i| {
                let i = i as usize;
                Hit {
                    image_id: self.ids[i],
                    score: dot(self.row(i), &q).clamp(-1.0, 1.0),
                    entry: i,
                }
            })
            .collect();
        let truncated = top_k > self.len();
        Ok(QueryResult {
            hits: top_hits(hits, top_k),
            truncated,
        })
    }
}

fn default_probes(nlist: usize) -> usize {
    (nlist / 8).max(1)
}

/// Seeded corpus of `topics` Gaussian clusters on the sphere, a stand-in
/// for caption embeddings in tests and benchmarks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticCorpus {
    pub n: usize,
    pub dim: usize,
    pub topics: usize,
    /// Per-coordinate noise relative to a unit topic direction.
    pub spread: f64,
    pub seed: u64,
}

impl SyntheticCorpus {
    pub fn new(n: usize, dim: usize, seed: u64) -> Self {
        SyntheticCorpus {
            n,
            dim,
            topics: 100,
            spread: 0.5,
            seed,
        }
    }

    fn topic_centers(&self) -> Vec<Vec<f64>> {
        let mut rng = seed::rng(self.seed, &[seed::tag::CORPUS]);
        (0..self.topics.max(1))
            .map(|_| {
                (0..self.dim)
                    .map(|_| -> f64 { StandardNormal.sample(&mut rng) })
                    .collect::<Vec<f64>>()
            })
            .map(|v| normalized(&v).unwrap_or_else(|_| vec![1.0; self.dim]))
            .collect()
    }

    fn draw(&self, count: usize, stream: u64) -> Vec<Vec<f64>> {
        let centers = self.topic_centers();
        let mut rng = seed::rng(self.seed, &[seed::tag::CORPUS, stream]);
        let sd = self.spread / (self.dim as f64).sqrt();
        (0..count)
            .map(|_| {
                let c = &centers[rng.random_range(0..centers.len())];
                c.iter()
                    .map(|x| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        x + sd * z
                    })
                    .collect()
            })
            .collect()
    }

    pub fn entries(&self) -> Vec<CorpusEntry> {
        self.draw(self.n, 1)
            .into_iter()
            .enumerate()
            .map(|(i, e)| CorpusEntry {
                image_id: i as u64,
                caption_embedding: e,
                payload_ref: format!("synthetic/{i}"),
            })
            .collect()
    }

    /// Queries from the same distribution, independent of the entries.
    pub fn queries(&self, count: usize) -> Vec<Vec<f64>> {
        self.draw(count, 2)
    }
}

/// Fraction of `exact` ids present in `approx`.
pub fn recall(exact: &QueryResult, approx: &QueryResult) -> f64 {
    if exact.hits.is_empty() {
        return 1.0;
    }
    let want: std::collections::HashSet<u64> = exact.ids().into_iter().collect();
    approx
        .hits
        .iter()
        .filter(|h| want.contains(&h.image_id))
        .count() as f64
        / want.len() as f64
}

/// Corpus file (little endian): u64 count, u32 d, then per record
/// u64 image id, u32 payload length, payload bytes (UTF-8), d x f32.
pub fn write_corpus(path: impl AsRef<Path>, entries: &[CorpusEntry]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_corpus_to(&mut w, entries)?;
    w.flush()?;
    Ok(())
}

pub fn write_corpus_to(w: &mut impl Write, entries: &[CorpusEntry]) -> Result<()> {
    let d = entries.first().map_or(0, |e| e.caption_embedding.len());
    w.write_all(&(entries.len() as u64).to_le_bytes())?;
    w.write_all(&(d as u32).to_le_bytes())?;
    for e in entries {
        check_dim(d, e.caption_embedding.len())?;
        w.write_all(&e.image_id.to_le_bytes())?;
        let payload = e.payload_ref.as_bytes();
        w.write_all(&(payload.len() as u32).to_le_bytes())?;
        w.write_all(payload)?;
        for &x in &e.caption_embedding {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusEntry>> {
    read_corpus_from(&mut BufReader::new(File::open(path)?))
}

pub fn read_corpus_from(r: &mut impl Read) -> Result<Vec<CorpusEntry>> {
    let mut b8 = [0u8; 8];
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b4)?;
    let d = u32::from_le_bytes(b4) as usize;
    let mut out = Vec::with_capacity(count.min(1 << 22));
    for i in 0..count {
        let truncated = |e: std::io::Error| Error::Format {
            line: None,
            message: format!("record {i}: {e}"),
        };
        r.read_exact(&mut b8).map_err(truncated)?;
        let image_id = u64::from_le_bytes(b8);
        r.read_exact(&mut b4).map_err(truncated)?;
        let len = u32::from_le_bytes(b4) as usize;
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload).map_err(truncated)?;
        let payload_ref = String::from_utf8(payload).map_err(|_| Error::Format {
            line: None,
            message: format!("record {i}: payload is not UTF-8"),
        })?;
        let mut emb = Vec::with_capacity(d);
        for _ in 0..d {
            r.read_exact(&mut b4).map_err(truncated)?;
            emb.push(f32::from_le_bytes(b4) as f64);
        }
        out.push(CorpusEntry {
            image_id,
            caption_embedding: emb,
            payload_ref,
        });
    }
    Ok(out)
}
