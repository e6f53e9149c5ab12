//! Replay buffer of high-reward downloads and per-iteration training-set
//! composition.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::relevance::{ImageRecord, TargetSet};
use crate::seed;

pub const DEFAULT_RETENTION: f64 = 0.5;
pub const DEFAULT_PCR: f64 = 2.0;
pub const DEFAULT_EPOCHS: u32 = 10;

const CHECKPOINT_MAGIC: &[u8; 4] = b"RPLB";
const CHECKPOINT_VERSION: u32 = 1;

/// Append-only store of retained records. Every record carries a reward.
#[derive(Debug, Clone, Default)]
pub struct ReplayBuffer {
    records: Vec<ImageRecord>,
}

impl ReplayBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn extend(&mut self, records: Vec<ImageRecord>) -> Result<()> {
        if records.iter().any(|r| r.reward.is_none()) {
            return Err(Error::invalid("buffer records must carry a reward"));
        }
        self.records.extend(records);
        Ok(())
    }

    /// Write the binary checkpoint (little endian):
    /// magic `RPLB`, u32 version, u64 count, u32 d, then per record
    /// u64 id, u64 concept, u32 iteration, u32 descriptor index, u32 rank,
    /// u64 content key, f64 reward, d x f64 representation.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let d = self.records.first().map_or(0, |r| r.representation.len());
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        w.write_all(&(d as u32).to_le_bytes())?;
        for r in &self.records {
            if r.representation.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: r.representation.len(),
                });
            }
            w.write_all(&r.id.to_le_bytes())?;
            w.write_all(&(r.source_concept as u64).to_le_bytes())?;
            w.write_all(&r.iteration.to_le_bytes())?;
            w.write_all(&r.descriptor_index.to_le_bytes())?;
            w.write_all(&r.rank.to_le_bytes())?;
            w.write_all(&r.content_key.to_le_bytes())?;
            w.write_all(&r.reward_or_nan().to_le_bytes())?;
            for x in &r.representation {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                line: None,
                message: "not a replay checkpoint".into(),
            });
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                line: None,
                message: format!("unsupported checkpoint version {version}"),
            });
        }
        let count = read_u64(r)? as usize;
        let d = read_u32(r)? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let id = read_u64(r)?;
            let source_concept = read_u64(r)? as usize;
            let iteration = read_u32(r)?;
            let descriptor_index = read_u32(r)?;
            let rank = read_u32(r)?;
            let content_key = read_u64(r)?;
            let reward = f64::from_bits(read_u64(r)?);
            if !(-1.0..=1.0).contains(&reward) {
                return Err(Error::Format {
                    line: None,
                    message: format!("record {id} has reward {reward}"),
                });
            }
            let representation = (0..d)
                .map(|_| read_u64(r).map(f64::from_bits))
                .collect::<Result<Vec<_>>>()?;
            records.push(ImageRecord {
                id,
                representation,
                source_concept,
                descriptor: String::new(),
                descriptor_index,
                rank,
                content_key,
                reward: Some(reward),
                iteration,
            });
        }
        Ok(ReplayBuffer { records })
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// The `ceil(fraction * n)` highest-reward records; ties go to the lower id.
/// Output is in descending reward order.
pub fn retain_top_fraction(new_images: &[ImageRecord], fraction: f64) -> Result<Vec<ImageRecord>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "retention fraction must be in (0, 1], got {fraction}"
        )));
    }
    if new_images.is_empty() {
        return Ok(Vec::new());
    }
    if new_images.iter().any(|r| r.reward.is_none()) {
        return Err(Error::invalid(
            "every record needs a reward before retention",
        ));
    }
    let keep = crate::vocabulary::retained_count(new_images.len(), fraction);
    let mut idx: Vec<usize> = (0..new_images.len()).collect();
    idx.sort_by(|&a, &b| {
        let (ra, rb) = (&new_images[a], &new_images[b]);
        rb.reward_or_nan()
            .total_cmp(&ra.reward_or_nan())
            .then(ra.id.cmp(&rb.id))
    });
    Ok(idx[..keep].iter().map(|&i| new_images[i].clone()).collect())
}

/// A history item drawn from the union of buffer and target set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolItem {
    /// Index into the replay buffer's records.
    Buffer(usize),
    /// Index into the target set.
    Target(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    /// Ids of this iteration's candidate records, unfiltered.
    pub candidate_ids: Vec<u64>,
    pub history: Vec<PoolItem>,
    pub epochs: u32,
    /// Set when history was requested but the pool was empty.
    pub empty_pool: bool,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.candidate_ids.len() + self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Candidates plus `round(pcr * |candidates|)` items drawn uniformly from
/// buffer ∪ target: without replacement when the pool is large enough,
/// otherwise with replacement.
pub fn compose_training_set(
    candidates: &[ImageRecord],
    buffer: &ReplayBuffer,
    target: &TargetSet,
    pcr: f64,
    rng_seed: u64,
) -> Result<TrainingSet> {
    if !(pcr >= 0.0) || !pcr.is_finite() {
        return Err(Error::invalid(format!(
            "PCR must be non-negative, got {pcr}"
        )));
    }
    let want = (pcr * candidates.len() as f64).round() as usize;
    let pool = buffer.len() + target.len();
    let item = |i: usize| {
        if i < buffer.len() {
            PoolItem::Buffer(i)
        } else {
            PoolItem::Target(i - buffer.len())
        }
    };
    let mut rng = seed::rng(rng_seed, &[seed::tag::COMPOSE]);
    let mut empty_pool = false;
    let history: Vec<PoolItem> = if want == 0 {
        Vec::new()
    } else if pool == 0 {
        log::warn!("history requested but buffer and target set are empty");
        empty_pool = true;
        Vec::new()
    } else if pool >= want {
        let mut picked = index::sample(&mut rng, pool, want).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(item).collect()
    } else {
        (0..want).map(|_| item(rng.random_range(0..pool))).collect()
    };
    Ok(TrainingSet {
        candidate_ids: candidates.iter().map(|r| r.id).collect(),
        history,
        epochs: DEFAULT_EPOCHS,
        empty_pool,
    })
}
