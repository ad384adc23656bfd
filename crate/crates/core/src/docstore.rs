// SPDX-License-Identifier: Apache-2.0
//! BM25 retrieval over tool-documentation snippets.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

pub const MAX_CHUNK_TOKENS: usize = 200;
pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

#[derive(Debug, Error)]
pub enum DocStoreError {
    #[error("cannot read corpus {path}: {message}")]
    Io { path: String, message: String },
    #[error("k must be at least 1")]
    InvalidK,
}

/// Lowercased alphanumeric tokens; everything else separates.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocChunk {
    pub doc_id: String,
    pub chunk_index: usize,
    pub text: String,
    pub term_counts: HashMap<String, usize>,
    pub len: usize,
}

impl DocChunk {
    fn new(doc_id: &str, chunk_index: usize, text: String) -> Self {
        let tokens = tokenize(&text);
        let mut term_counts = HashMap::new();
        for t in &tokens {
            *term_counts.entry(t.clone()).or_insert(0) += 1;
        }
        DocChunk {
            doc_id: doc_id.to_string(),
            chunk_index,
            text,
            term_counts,
            len: tokens.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredChunk {
    pub chunk: DocChunk,
    pub score: f64,
}

#[derive(Debug, Clone, Default)]
pub struct DocStore {
    chunks: Vec<DocChunk>,
}

/// Splits an oversized paragraph at word boundaries into pieces of at most
/// `MAX_CHUNK_TOKENS` tokens.
fn split_paragraph(p: &str) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    let mut words: Vec<&str> = Vec::new();
    let mut count = 0;
    for w in p.split_whitespace() {
        let n = tokenize(w).len();
        if count + n > MAX_CHUNK_TOKENS && !words.is_empty() {
            out.push((words.join(" "), count));
            words.clear();
            count = 0;
        }
        words.push(w);
        count += n;
    }
    if !words.is_empty() {
        out.push((words.join(" "), count));
    }
    out
}

fn chunk_text(text: &str) -> Vec<String> {
    let mut paragraphs: Vec<(String, usize)> = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let flush = |current: &mut Vec<&str>, paragraphs: &mut Vec<(String, usize)>| {
        if !current.is_empty() {
            let p = current.join("\n");
            let n = tokenize(&p).len();
            if n > MAX_CHUNK_TOKENS {
                paragraphs.extend(split_paragraph(&p));
            } else if n > 0 {
                paragraphs.push((p, n));
            }
            current.clear();
        }
    };
    for line in text.lines() {
        if line.trim().is_empty() {
            flush(&mut current, &mut paragraphs);
        } else {
            current.push(line);
        }
    }
    flush(&mut current, &mut paragraphs);

    let mut chunks = Vec::new();
    let mut buf: Vec<String> = Vec::new();
    let mut count = 0;
    for (p, n) in paragraphs {
        if count + n > MAX_CHUNK_TOKENS && !buf.is_empty() {
            chunks.push(buf.join("\n\n"));
            buf.clear();
            count = 0;
        }
        buf.push(p);
        count += n;
    }
    if !buf.is_empty() {
        chunks.push(buf.join("\n\n"));
    }
    chunks
}

impl DocStore {
    pub fn new() -> Self {
        DocStore::default()
    }

    /// Loads every `.txt` / `.md` file in `dir`; the file stem is the doc id.
    pub fn load_dir(dir: &Path) -> Result<DocStore, DocStoreError> {
        let io = |e: std::io::Error| DocStoreError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        };
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| {
                p.is_file() && p.extension().is_some_and(|x| x == "txt" || x == "md")
            })
            .collect();
        paths.sort();
        let mut store = DocStore::new();
        for p in paths {
            let text = std::fs::read_to_string(&p).map_err(io)?;
            let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            store.ingest(&id, &text);
        }
        Ok(store)
    }

    /// Stores `text` under `doc_id`, replacing earlier chunks of the same id.
    pub fn ingest(&mut self, doc_id: &str, text: &str) -> usize {
        self.chunks.retain(|c| c.doc_id != doc_id);
        let chunks = chunk_text(text);
        let n = chunks.len();
        self.chunks
            .extend(chunks.into_iter().enumerate().map(|(i, t)| DocChunk::new(doc_id, i, t)));
        n
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunks(&self) -> &[DocChunk] {
        &self.chunks
    }

    /// Top-`k` chunks by BM25; ties (including zero scores) are ordered by
    /// `(doc_id, chunk_index)`.
    pub fn query(&self, text: &str, k: usize) -> Result<Vec<ScoredChunk>, DocStoreError> {
        if k == 0 {
            return Err(DocStoreError::InvalidK);
        }
        let mut terms = tokenize(text);
        terms.sort();
        terms.dedup();
        if terms.is_empty() || self.chunks.is_empty() {
            return Ok(Vec::new());
        }
        let n = self.chunks.len() as f64;
        let avgdl = self.chunks.iter().map(|c| c.len).sum::<usize>() as f64 / n;
        let idf: Vec<f64> = terms
            .iter()
            .map(|t| {
                let df = self.chunks.iter().filter(|c| c.term_counts.contains_key(t)).count() as f64;
                ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
            })
            .collect();
        let mut scored: Vec<ScoredChunk> = self
            .chunks
            .iter()
            .map(|c| {
                let norm = BM25_K1 * (1.0 - BM25_B + BM25_B * c.len as f64 / avgdl);
                let score = terms
                    .iter()
                    .zip(&idf)
                    .map(|(t, idf)| {
                        let tf = *c.term_counts.get(t).unwrap_or(&0) as f64;
                        idf * tf * (BM25_K1 + 1.0) / (tf + norm)
                    })
                    .sum();
                ScoredChunk {
                    chunk: c.clone(),
                    score,
                }
            })
            .collect();
        scored.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.chunk.doc_id.cmp(&b.chunk.doc_id))
                .then_with(|| a.chunk.chunk_index.cmp(&b.chunk.chunk_index))
        });
        scored.truncate(k);
        Ok(scored)
    }
}
