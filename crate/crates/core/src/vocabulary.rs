//! Concept vocabulary: loading, text rendering and label-set pruning.
//!
//! Embeddings arrive precomputed in the vocabulary file. Nothing here runs a
//! text model.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{check_dim, Error, Result};
use crate::vector::{all_finite, norm, normalized};

/// A vocabulary entry and the unit of exploration.
#[derive(Debug, Clone, PartialEq)]
pub struct Concept {
    pub id: usize,
    pub lemma: String,
    pub hypernym: String,
    pub definition: String,
    pub embedding: Vec<f64>,
}

impl Concept {
    pub fn new(id: usize, lemma: impl Into<String>, embedding: Vec<f64>) -> Self {
        Concept {
            id,
            lemma: lemma.into(),
            hypernym: String::new(),
            definition: String::new(),
            embedding,
        }
    }

    pub fn with_gloss(
        mut self,
        hypernym: impl Into<String>,
        definition: impl Into<String>,
    ) -> Self {
        self.hypernym = hypernym.into();
        self.definition = definition.into();
        self
    }
}

/// An ordered, immutable set of concepts sharing one embedding dimension.
///
/// A freshly loaded vocabulary has ids `0..N`. Pruned vocabularies keep the
/// original ids (sorted ascending), so ids are unique but may have gaps.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    concepts: Vec<Concept>,
    dimension: usize,
    position: HashMap<usize, usize>,
}

impl Vocabulary {
    pub fn new(concepts: Vec<Concept>) -> Result<Self> {
        let first = concepts.first().ok_or_else(|| Error::Format {
            line: None,
            message: "empty vocabulary".into(),
        })?;
        let dimension = first.embedding.len();
        if dimension == 0 {
            return Err(Error::Format {
                line: None,
                message: "zero-dimensional embeddings".into(),
            });
        }
        let mut position = HashMap::with_capacity(concepts.len());
        for (pos, c) in concepts.iter().enumerate() {
            check_dim(dimension, c.embedding.len())?;
            if !all_finite(&c.embedding) {
                return Err(Error::InvalidConcept(format!(
                    "concept {} has non-finite embedding",
                    c.id
                )));
            }
            if norm(&c.embedding) == 0.0 {
                return Err(Error::ZeroNorm(format!("concept {} embedding", c.id)));
            }
            if position.insert(c.id, pos).is_some() {
                return Err(Error::InvalidConcept(format!("duplicate id {}", c.id)));
            }
        }
        Ok(Vocabulary {
            concepts,
            dimension,
            position,
        })
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn get(&self, id: usize) -> Option<&Concept> {
        self.position.get(&id).map(|&p| &self.concepts[p])
    }

    pub fn contains(&self, id: usize) -> bool {
        self.position.contains_key(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.concepts.iter().map(|c| c.id)
    }
}

/// Read a vocabulary file: TAB-separated `lemma, hypernym, definition, d floats`.
pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<Vocabulary> {
    let file = File::open(path)?;
    read_vocabulary(BufReader::new(file))
}

pub fn read_vocabulary(reader: impl BufRead) -> Result<Vocabulary> {
    let mut concepts: Vec<Concept> = Vec::new();
    let mut dim: Option<usize> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 4 {
            return Err(Error::Parse {
                line: line_no,
                message: format!(
                    "expected lemma, hypernym, definition and floats; got {} fields",
                    fields.len()
                ),
            });
        }
        let lemma = fields[0].trim();
        if lemma.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty lemma".into(),
            });
        }
        let embedding = parse_floats(&fields[3..], line_no)?;
        match dim {
            None => dim = Some(embedding.len()),
            Some(d) if d != embedding.len() => {
                return Err(Error::Format {
                    line: Some(line_no),
                    message: format!("dimension {} differs from {}", embedding.len(), d),
                })
            }
            _ => {}
        }
        if norm(&embedding) == 0.0 {
            return Err(Error::Format {
                line: Some(line_no),
                message: "zero-norm embedding".into(),
            });
        }
        let id = concepts.len();
        concepts.push(Concept {
            id,
            lemma: lemma.to_string(),
            hypernym: fields[1].trim().to_string(),
            definition: fields[2].trim().to_string(),
            embedding,
        });
    }
    if concepts.is_empty() {
        return Err(Error::Format {
            line: None,
            message: "no vocabulary records".into(),
        });
    }
    Vocabulary::new(concepts)
}

/// Read a label-embedding file: `name<TAB>d floats` per line.
pub fn load_label_embeddings(path: impl AsRef<Path>) -> Result<Vec<(String, Vec<f64>)>> {
    read_label_embeddings(BufReader::new(File::open(path)?))
}

pub fn read_label_embeddings(reader: impl BufRead) -> Result<Vec<(String, Vec<f64>)>> {
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end().split('\t').collect();
        if fields.len() < 2 {
            return Err(Error::Parse {
                line: line_no,
                message: "expected name and floats".into(),
            });
        }
        let v = parse_floats(&fields[1..], line_no)?;
        if let Some((_, first)) = out.first() {
            if first.len() != v.len() {
                return Err(Error::Format {
                    line: Some(line_no),
                    message: format!("dimension {} differs from {}", v.len(), first.len()),
                });
            }
        }
        out.push((fields[0].trim().to_string(), v));
    }
    if out.is_empty() {
        return Err(Error::Format {
            line: None,
            message: "no label records".into(),
        });
    }
    Ok(out)
}

fn parse_floats(fields: &[&str], line: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(fields.len());
    for f in fields.iter().flat_map(|f| f.split_whitespace()) {
        let v: f64 = f.parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad float {f:?}"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                line,
                message: format!("non-finite value {f:?}"),
            });
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::Parse {
            line,
            message: "no embedding values".into(),
        });
    }
    Ok(out)
}

/// Render `lemma (hypernym): definition`, eliding empty parts.
pub fn render_embedding_text(c: &Concept) -> Result<String> {
    if c.lemma.is_empty() {
        return Err(Error::InvalidConcept("empty lemma".into()));
    }
    let mut s = c.lemma.clone();
    if !c.hypernym.is_empty() {
        s.push_str(" (");
        s.push_str(&c.hypernym);
        s.push(')');
    }
    if !c.definition.is_empty() {
        s.push_str(": ");
        s.push_str(&c.definition);
    }
    Ok(s)
}

/// Default neighbour count for pruning: a third of the label set, rounded up.
pub fn default_prune_k(label_count: usize) -> usize {
    label_count.div_ceil(3).max(1)
}

/// Mean of the `k` largest cosine similarities of each concept to the labels.
pub fn label_affinity(v: &Vocabulary, labels: &[Vec<f64>], k: usize) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::invalid("empty label set"));
    }
    if k == 0 || k > labels.len() {
        return Err(Error::invalid(format!(
            "k must be in 1..={}, got {k}",
            labels.len()
        )));
    }
    let unit_labels = labels
        .iter()
        .map(|l| {
            check_dim(v.dimension(), l.len())?;
            normalized(l)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(v.concepts()
        .iter()
        .map(|c| {
            let n = norm(&c.embedding);
            let mut sims: Vec<f64> = unit_labels
                .iter()
                .map(|l| (crate::vector::dot(&c.embedding, l) / n).clamp(-1.0, 1.0))
                .collect();
            crate::vector::top_k_mean(&mut sims, k)
        })
        .collect())
}

/// Keep the `ceil(fraction * N)` concepts with the highest label affinity.
/// Ties go to the lower id; retained concepts keep their ids and order.
pub fn prune_by_label_set(
    v: &Vocabulary,
    labels: &[Vec<f64>],
    fraction: f64,
    k: Option<usize>,
) -> Result<Vocabulary> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "fraction must be in (0, 1], got {fraction}"
        )));
    }
    let k = k.unwrap_or_else(|| default_prune_k(labels.len()));
    let scores = label_affinity(v, labels, k)?;
    let keep = retained_count(v.len(), fraction);
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(v.concepts()[a].id.cmp(&v.concepts()[b].id))
    });
    let mut kept: Vec<usize> = order[..keep].to_vec();
    kept.sort_by_key(|&p| v.concepts()[p].id);
    Vocabulary::new(kept.into_iter().map(|p| v.concepts()[p].clone()).collect())
}

/// `ceil(fraction * n)`, with a small guard so exact products such as
/// 0.1 * 146347 = 14634.7 are not pushed up by representation error.
pub fn retained_count(n: usize, fraction: f64) -> usize {
    let raw = fraction * n as f64;
    let rounded = raw.round();
    let c = if (raw - rounded).abs() < 1e-9 {
        rounded
    } else {
        raw.ceil()
    };
    (c as usize).clamp(1, n)
}
