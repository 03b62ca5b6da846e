//! Top-k hypothesis retrieval by cosine.
//!
//! Candidates are indexed by their explicit-view vector; a query premise is
//! encoded under the chosen view and compared against every candidate.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetSplit, HypothesisKind};
use crate::encoder::{SentenceEncoder, View};
use crate::error::{Error, Result};
use crate::fingerprint::sha256_hex;
use crate::objective::cosine;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct DualIndex {
    ids: Vec<String>,
    texts: Vec<String>,
    explicit: Vec<Vec<f64>>,
    implicit: Option<Vec<Vec<f64>>>,
    fingerprint: String,
}

impl DualIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// sha256 over the candidate ids and texts, in index order.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn has_implicit(&self) -> bool {
        self.implicit.is_some()
    }

    pub fn explicit_vector(&self, i: usize) -> &[f64] {
        &self.explicit[i]
    }
}

fn candidates_fingerprint(candidates: &[Candidate]) -> String {
    let mut bytes = Vec::new();
    for c in candidates {
        bytes.extend_from_slice(c.id.as_bytes());
        bytes.push(0);
        bytes.extend_from_slice(c.text.as_bytes());
        bytes.push(0);
    }
    sha256_hex(&bytes)
}

/// Encodes every candidate. `with_implicit` also stores implicit-view vectors.
pub fn build_index<E: SentenceEncoder + ?Sized>(
    encoder: &E,
    candidates: &[Candidate],
    with_implicit: bool,
) -> Result<DualIndex> {
    let mut seen = HashSet::new();
    for c in candidates {
        if !seen.insert(c.id.as_str()) {
            return Err(Error::Validation(format!("duplicate candidate id {:?}", c.id)));
        }
    }
    let explicit = candidates
        .iter()
        .map(|c| encoder.encode(&c.text, View::Explicit))
        .collect::<Result<Vec<_>>>()?;
    let implicit = if with_implicit {
        Some(
            candidates
                .iter()
                .map(|c| encoder.encode(&c.text, View::Implicit))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    Ok(DualIndex {
        ids: candidates.iter().map(|c| c.id.clone()).collect(),
        texts: candidates.iter().map(|c| c.text.clone()).collect(),
        explicit,
        implicit,
        fingerprint: candidates_fingerprint(candidates),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query: String,
    pub view: View,
    pub hits: Vec<Hit>,
}

/// The `k` candidates with the highest cosine to the query's `view` vector.
/// Equal scores keep index order.
pub fn query<E: SentenceEncoder + ?Sized>(
    encoder: &E,
    index: &DualIndex,
    premise: &str,
    view: View,
    k: usize,
) -> Result<RetrievalResult> {
    if index.is_empty() {
        return Err(Error::Empty("retrieval index is empty"));
    }
    let q = encoder.encode(premise, view)?;
    let mut scored = index
        .explicit
        .iter()
        .enumerate()
        .map(|(i, v)| Ok((i, cosine(&q, v)?)))
        .collect::<Result<Vec<(usize, f64)>>>()?;
    // stable sort keeps index order among equal scores
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    let hits = scored
        .into_iter()
        .take(k)
        .map(|(i, score)| Hit {
            id: index.ids[i].clone(),
            text: index.texts[i].clone(),
            score,
        })
        .collect();
    Ok(RetrievalResult {
        query: premise.to_string(),
        view,
        hits,
    })
}

/// Hypotheses of `split` as candidates, with ids `<sample id>:<kind>`.
pub fn hypothesis_pool(split: &DatasetSplit, kinds: &[HypothesisKind]) -> Vec<Candidate> {
    let mut out = Vec::with_capacity(split.len() * kinds.len());
    for s in split.samples() {
        for &kind in kinds {
            out.push(Candidate {
                id: format!("{}:{}", s.id, kind.short_name()),
                text: s.hypothesis(kind).to_string(),
            });
        }
    }
    out
}

/// One JSON object per line.
pub fn write_results_jsonl(path: &Path, results: &[RetrievalResult]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in results {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
