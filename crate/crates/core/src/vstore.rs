//! Exact cosine vector store over embedded training answers.
//!
//! Stored vectors are unit rows of a dense matrix `A`; a query `x` is scored
//! against every candidate row (`A·x`) and the `k` largest scores are
//! returned, ties broken by ascending entry index.

use std::cmp::Ordering;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, LabeledResponse};
use crate::embed::{EmbedError, TextEmbedder};

pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("embedding response {id:?}: {source}")]
    Embedding {
        id: String,
        #[source]
        source: EmbedError,
    },
    #[error("embedding query: {0}")]
    Query(#[source] EmbedError),
    #[error("no candidates to retrieve from")]
    EmptyCandidates,
    #[error("same-question retrieval needs the query's question id")]
    MissingQuestionId,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("dimension mismatch: store has {store}, got {other}")]
    DimensionMismatch { store: usize, other: usize },
    #[error("unsupported store version {found} (expected {STORE_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("vector payload: expected {expected} bytes, found {actual}")]
    PayloadLength { expected: usize, actual: usize },
    #[error("store file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryMetadata {
    pub response_text: String,
    /// Gold judgment as a canonical 5-way label string.
    pub judgment: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rubric: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_id: Option<String>,
}

/// Which optional metadata fields to populate at build time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataPolicy {
    pub include_question: bool,
    pub include_reference: bool,
    pub include_ids: bool,
}

impl Default for MetadataPolicy {
    fn default() -> Self {
        MetadataPolicy {
            include_question: true,
            include_reference: true,
            include_ids: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalScope {
    SameQuestionOnly,
    CorpusWide,
}

impl FromStr for RetrievalScope {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "same_question" | "same_question_only" | "question" => {
                Ok(RetrievalScope::SameQuestionOnly)
            }
            "corpus" | "corpus_wide" | "all" => Ok(RetrievalScope::CorpusWide),
            _ => Err(format!("unknown retrieval scope {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub k: usize,
    pub scope: RetrievalScope,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k: 5,
            scope: RetrievalScope::SameQuestionOnly,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit<'a> {
    pub index: usize,
    pub score: f64,
    pub metadata: &'a EntryMetadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoreHeader {
    version: u32,
    dim: usize,
    count: usize,
    embedder_id: String,
}

/// Row-major store of unit vectors (as `f32`) with per-row metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    dim: usize,
    embedder_id: String,
    rows: Vec<f32>,
    metadata: Vec<EntryMetadata>,
}

impl VectorStore {
    pub fn empty(dim: usize, embedder_id: impl Into<String>) -> Self {
        VectorStore {
            dim,
            embedder_id: embedder_id.into(),
            rows: Vec::new(),
            metadata: Vec::new(),
        }
    }

    /// Embed each response (under its own question) and store it with its
    /// gold judgment.
    pub fn build<'a>(
        responses: impl IntoIterator<Item = &'a LabeledResponse>,
        corpus: Option<&Corpus>,
        embedder: &dyn TextEmbedder,
        policy: MetadataPolicy,
    ) -> Result<Self, StoreError> {
        let mut store = VectorStore::empty(embedder.dim(), embedder.id());
        store.extend(responses, corpus, embedder, policy)?;
        Ok(store)
    }

    /// Builder-side append used while assembling a store.
    pub fn extend<'a>(
        &mut self,
        responses: impl IntoIterator<Item = &'a LabeledResponse>,
        corpus: Option<&Corpus>,
        embedder: &dyn TextEmbedder,
        policy: MetadataPolicy,
    ) -> Result<(), StoreError> {
        if embedder.dim() != self.dim {
            return Err(StoreError::DimensionMismatch {
                store: self.dim,
                other: embedder.dim(),
            });
        }
        for r in responses {
            let v = embedder
                .embed_answer(&r.text, Some(&r.question_id))
                .map_err(|source| StoreError::Embedding {
                    id: r.id.clone(),
                    source,
                })?;
            let question = corpus.and_then(|c| c.question(&r.question_id));
            let meta = EntryMetadata {
                response_text: r.text.clone(),
                judgment: r.label.as_str().to_string(),
                question: question
                    .filter(|_| policy.include_question)
                    .map(|q| q.text.clone()),
                reference_answer: question
                    .filter(|q| policy.include_reference && !q.reference_answers.is_empty())
                    .map(|q| q.reference_text()),
                rubric: None,
                response_id: policy.include_ids.then(|| r.id.clone()),
                question_id: Some(r.question_id.clone()),
            };
            self.push(v.as_slice(), meta)?;
        }
        Ok(())
    }

    /// Append one row; the vector is normalized before storage.
    pub fn push(&mut self, vector: &[f64], metadata: EntryMetadata) -> Result<(), StoreError> {
        if vector.len() != self.dim {
            return Err(StoreError::DimensionMismatch {
                store: self.dim,
                other: vector.len(),
            });
        }
        let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(StoreError::Format(
                "cannot store a zero or non-finite vector".into(),
            ));
        }
        self.rows.extend(vector.iter().map(|x| (x / norm) as f32));
        self.metadata.push(metadata);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.metadata.len()
    }

    pub fn is_empty(&self) -> bool {
        self.metadata.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn metadata(&self, i: usize) -> &EntryMetadata {
        &self.metadata[i]
    }

    pub fn entries(&self) -> impl Iterator<Item = (&[f32], &EntryMetadata)> {
        self.rows.chunks_exact(self.dim.max(1)).zip(&self.metadata)
    }

    /// Dot product of row `i` with `x`, accumulated in `f64`.
    pub fn score(&self, i: usize, x: &[f64]) -> f64 {
        self.row(i)
            .iter()
            .zip(x)
            .map(|(a, b)| f64::from(*a) * b)
            .sum()
    }

    /// Exact top-k of an already-embedded query among candidate rows.
    pub fn top_k_vector(
        &self,
        x: &[f64],
        question_id: Option<&str>,
        config: RetrievalConfig,
    ) -> Result<Vec<Hit<'_>>, StoreError> {
        if config.k == 0 {
            return Err(StoreError::ZeroK);
        }
        if x.len() != self.dim {
            return Err(StoreError::DimensionMismatch {
                store: self.dim,
                other: x.len(),
            });
        }
        let filter = match config.scope {
            RetrievalScope::CorpusWide => None,
            RetrievalScope::SameQuestionOnly => {
                Some(question_id.ok_or(StoreError::MissingQuestionId)?)
            }
        };
        let mut scored: Vec<(usize, f64)> = (0..self.len())
            .filter(|&i| filter.is_none_or(|q| self.metadata[i].question_id.as_deref() == Some(q)))
            .map(|i| (i, self.score(i, x)))
            .collect();
        if scored.is_empty() {
            return Err(StoreError::EmptyCandidates);
        }
        let rank = |a: &(usize, f64), b: &(usize, f64)| -> Ordering {
            b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
        };
        let k = config.k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, rank);
            scored.truncate(k);
        }
        scored.sort_unstable_by(rank);
        Ok(scored
            .into_iter()
            .map(|(index, score)| Hit {
                index,
                score,
                metadata: &self.metadata[index],
            })
            .collect())
    }

    /// Embed `query_text` as an answer to `question_id` and retrieve.
    pub fn top_k(
        &self,
        query_text: &str,
        question_id: Option<&str>,
        embedder: &dyn TextEmbedder,
        config: RetrievalConfig,
    ) -> Result<Vec<Hit<'_>>, StoreError> {
        if embedder.dim() != self.dim {
            return Err(StoreError::DimensionMismatch {
                store: self.dim,
                other: embedder.dim(),
            });
        }
        let x = embedder
            .embed_answer(query_text, question_id)
            .map_err(StoreError::Query)?;
        self.top_k_vector(x.as_slice(), question_id, config)
    }

    /// Header line, one metadata JSON line per entry, then the row-major
    /// little-endian `f32` payload.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), StoreError> {
        let header = StoreHeader {
            version: STORE_VERSION,
            dim: self.dim,
            count: self.len(),
            embedder_id: self.embedder_id.clone(),
        };
        let enc = |e: serde_json::Error| StoreError::Format(e.to_string());
        writeln!(w, "{}", serde_json::to_string(&header).map_err(enc)?)?;
        for m in &self.metadata {
            writeln!(w, "{}", serde_json::to_string(m).map_err(enc)?)?;
        }
        let mut payload = Vec::with_capacity(self.rows.len() * 4);
        for v in &self.rows {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&payload)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let mut w = std::io::BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self, StoreError> {
        let mut reader = BufReader::new(r);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let header: StoreHeader = serde_json::from_str(line.trim_end())
            .map_err(|e| StoreError::Format(format!("bad header: {e}")))?;
        if header.version != STORE_VERSION {
            return Err(StoreError::VersionMismatch {
                found: header.version,
            });
        }
        let mut metadata = Vec::with_capacity(header.count);
        for i in 0..header.count {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                return Err(StoreError::Format(format!(
                    "expected {} metadata lines, found {i}",
                    header.count
                )));
            }
            let m: EntryMetadata = serde_json::from_str(line.trim_end())
                .map_err(|e| StoreError::Format(format!("metadata line {}: {e}", i + 1)))?;
            metadata.push(m);
        }
        let mut payload = Vec::new();
        reader.read_to_end(&mut payload)?;
        let expected = header.count * header.dim * 4;
        if payload.len() != expected {
            return Err(StoreError::PayloadLength {
                expected,
                actual: payload.len(),
            });
        }
        let rows: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect();
        Ok(VectorStore {
            dim: header.dim,
            embedder_id: header.embedder_id,
            rows,
            metadata,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::read_from(fs::File::open(path)?)
    }
}
