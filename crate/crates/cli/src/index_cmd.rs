use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use rand::seq::index;

use explore_core::search_index::{
    read_corpus, recall, write_corpus, CaptionIndex, CorpusEntry, IndexMode, SyntheticCorpus,
    DEFAULT_TOP_K,
};
use explore_core::seed;

#[derive(clap::Args, Debug)]
pub struct Args {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Subcommand, Debug)]
enum Cmd {
    /// Write a binary corpus file from a TSV listing or synthetic data.
    Build(BuildArgs),
    /// Top-k entries for one query vector.
    Query(QueryArgs),
    /// Recall@k and latency of the accelerated index against exact search.
    Recall(RecallArgs),
}

#[derive(clap::Args, Debug)]
struct BuildArgs {
    /// Lines of `image_id<TAB>payload<TAB>space-separated floats`.
    #[arg(
        long,
        conflicts_with = "synthetic",
        required_unless_present = "synthetic"
    )]
    input: Option<PathBuf>,
    /// Generate this many clustered synthetic entries instead.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Dimension of synthetic entries.
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long)]
    output: PathBuf,
}

#[derive(clap::Args, Debug)]
struct IndexFlags {
    #[arg(long)]
    corpus: PathBuf,
    /// Use inverted lists instead of a flat scan.
    #[arg(long)]
    accelerated: bool,
    /// Inverted lists; defaults to about sqrt(N).
    #[arg(long)]
    lists: Option<usize>,
    /// Lists scanned per query; defaults to lists / 8.
    #[arg(long, default_value_t = 0)]
    probes: usize,
}

impl IndexFlags {
    fn build(&self, accelerated: bool, seed: u64) -> Result<(CaptionIndex, Vec<CorpusEntry>)> {
        let entries = read_corpus(&self.corpus)
            .with_context(|| format!("reading {}", self.corpus.display()))?;
        let mode = if accelerated {
            IndexMode::Accelerated {
                lists: self.lists,
                probes: self.probes,
            }
        } else {
            IndexMode::Exact
        };
        Ok((CaptionIndex::build_with(&entries, mode, seed)?, entries))
    }
}

#[derive(clap::Args, Debug)]
struct QueryArgs {
    #[command(flatten)]
    index: IndexFlags,
    /// Comma-separated query vector.
    #[arg(long, conflicts_with = "entry", required_unless_present = "entry")]
    vector: Option<String>,
    /// Query with the embedding of the entry holding this image id.
    #[arg(long)]
    entry: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
}

#[derive(clap::Args, Debug)]
struct RecallArgs {
    #[command(flatten)]
    index: IndexFlags,
    /// Queries, drawn as random corpus entries.
    #[arg(long, default_value_t = 20)]
    queries: usize,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
}

pub fn run(a: Args, seed: Option<u64>) -> Result<()> {
    let seed = seed.unwrap_or(0);
    match a.command {
        Cmd::Build(b) => build(b, seed),
        Cmd::Query(q) => query(q, seed),
        Cmd::Recall(r) => measure(r, seed),
    }
}

fn parse_listing(path: &Path) -> Result<Vec<CorpusEntry>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let bad = || {
                crate::usage(format!(
                    "{}:{}: expected id, payload, vector",
                    path.display(),
                    i + 1
                ))
            };
            let mut f = l.splitn(3, '\t');
            let (Some(id), Some(payload), Some(v)) = (f.next(), f.next(), f.next()) else {
                return Err(bad());
            };
            let image_id = id.trim().parse().map_err(|_| bad())?;
            let caption_embedding = v
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|_| bad())?;
            Ok(CorpusEntry {
                image_id,
                caption_embedding,
                payload_ref: payload.to_string(),
            })
        })
        .collect()
}

fn build(b: BuildArgs, seed: u64) -> Result<()> {
    let entries = match (&b.input, b.synthetic) {
        (Some(p), _) => parse_listing(p)?,
        (None, Some(n)) => SyntheticCorpus::new(n, b.dim, seed).entries(),
        (None, None) => return Err(crate::usage("give --input or --synthetic")),
    };
    // Validate by indexing once before writing.
    CaptionIndex::build(&entries, IndexMode::Exact)?;
    write_corpus(&b.output, &entries)?;
    println!(
        "wrote {} entries of dimension {} to {}",
        entries.len(),
        entries[0].caption_embedding.len(),
        b.output.display()
    );
    Ok(())
}

fn query(q: QueryArgs, seed: u64) -> Result<()> {
    let (idx, entries) = q.index.build(q.index.accelerated, seed)?;
    let v: Vec<f64> = match (&q.vector, q.entry) {
        (Some(s), _) => s
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| crate::usage(format!("bad vector {s:?}")))?,
        (None, Some(id)) => entries
            .iter()
            .find(|e| e.image_id == id)
            .map(|e| e.caption_embedding.clone())
            .ok_or_else(|| crate::usage(format!("no entry with image id {id}")))?,
        (None, None) => return Err(crate::usage("give --vector or --entry")),
    };
    let res = idx.query(&v, q.top_k)?;
    println!("rank,image_id,score,payload");
    for (r, h) in res.hits.iter().enumerate() {
        println!(
            "{},{},{},{}",
            r + 1,
            h.image_id,
            h.score,
            idx.payload(h.entry)
        );
    }
    Ok(())
}

fn measure(r: RecallArgs, seed: u64) -> Result<()> {
    let (exact, entries) = r.index.build(false, seed)?;
    let t = Instant::now();
    let (accel, _) = r.index.build(true, seed)?;
    let build_time = t.elapsed();
    let mut rng = seed::rng(seed, &[seed::tag::INDEX, 1]);
    let picks = index::sample(&mut rng, entries.len(), r.queries.min(entries.len()));
    let (mut total, mut worst) = (0.0, 1.0f64);
    let (mut t_exact, mut t_accel) = (0.0, 0.0);
    for i in picks {
        let q = &entries[i].caption_embedding;
        let t = Instant::now();
        let e = exact.query(q, r.top_k)?;
        t_exact += t.elapsed().as_secs_f64();
        let t = Instant::now();
        let a = accel.query(q, r.top_k)?;
        t_accel += t.elapsed().as_secs_f64();
        let rc = recall(&e, &a);
        total += rc;
        worst = worst.min(rc);
    }
    let n = r.queries.min(entries.len()).max(1) as f64;
    let (lists, probes) = accel.list_config().unwrap_or((0, 0));
    println!(
        "entries {} lists {lists} probes {probes} build {:.3}s",
        entries.len(),
        build_time.as_secs_f64()
    );
    println!("recall@{} mean {:.4} min {:.4}", r.top_k, total / n, worst);
    println!(
        "latency exact {:.3}ms accelerated {:.3}ms",
        1e3 * t_exact / n,
        1e3 * t_accel / n
    );
    Ok(())
}
