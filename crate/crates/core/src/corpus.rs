//! Documents, QA pairs, token-window chunking and the on-disk corpus.

use std::collections::{BTreeSet, HashSet};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaPair {
    pub id: String,
    pub doc_id: String,
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Chunk {
    pub id: String,
    pub doc_id: String,
    pub index: usize,
    pub text: String,
    pub token_start: usize,
    pub token_end: usize,
}

impl Chunk {
    pub fn token_len(&self) -> usize {
        self.token_end - self.token_start
    }
}

/// Chunk ids sort in document order: `<doc_id>#<index:05>`.
pub fn chunk_id(doc_id: &str, index: usize) -> String {
    format!("{doc_id}#{index:05}")
}

/// Splits text into tokens, reported as byte ranges into the input.
pub trait Tokenizer: Send + Sync {
    fn spans(&self, text: &str) -> Vec<Range<usize>>;

    fn tokenize<'a>(&self, text: &'a str) -> Vec<&'a str> {
        self.spans(text).into_iter().map(|r| &text[r]).collect()
    }

    fn count(&self, text: &str) -> usize {
        self.spans(text).len()
    }

    fn detokenize(&self, tokens: &[&str]) -> String {
        tokens.join(" ")
    }
}

/// Maximal runs of alphanumeric characters are tokens; every other
/// non-whitespace character is a token of its own.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordPunctTokenizer;

impl Tokenizer for WordPunctTokenizer {
    fn spans(&self, text: &str) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut word_start: Option<usize> = None;
        for (i, c) in text.char_indices() {
            if c.is_alphanumeric() {
                if word_start.is_none() {
                    word_start = Some(i);
                }
                continue;
            }
            if let Some(s) = word_start.take() {
                out.push(s..i);
            }
            if !c.is_whitespace() {
                out.push(i..i + c.len_utf8());
            }
        }
        if let Some(s) = word_start {
            out.push(s..text.len());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChunkingConfig {
    /// Maximum tokens per chunk.
    pub size: usize,
    /// Tokens shared by consecutive chunks.
    pub overlap: usize,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self { size: 512, overlap: 12 }
    }
}

impl ChunkingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size <= self.overlap {
            return Err(Error::Config(format!(
                "chunk size ({}) must exceed overlap ({})",
                self.size, self.overlap
            )));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.size - self.overlap
    }
}

/// Token windows `[start, end)` over a sequence of `n` tokens.
///
/// Starts advance by `size - overlap`. When the last window would add fewer
/// than `overlap` new tokens, it is instead aligned to end at `n` with a full
/// `size` span, overlapping its predecessor by more than `overlap`.
pub fn window_bounds(n: usize, cfg: ChunkingConfig) -> Result<Vec<(usize, usize)>> {
    cfg.validate()?;
    let mut out: Vec<(usize, usize)> = Vec::new();
    if n == 0 {
        return Ok(out);
    }
    let stride = cfg.stride();
    let mut start = 0;
    loop {
        let end = (start + cfg.size).min(n);
        if end == n {
            if let Some(&(_, prev_end)) = out.last() {
                if n - prev_end < cfg.overlap {
                    start = n.saturating_sub(cfg.size);
                }
            }
            out.push((start, n));
            break;
        }
        out.push((start, end));
        start += stride;
    }
    Ok(out)
}

/// Cuts a document into overlapping token windows. Each chunk's text is the
/// slice of the original text between its first and last token.
pub fn chunk_document(doc: &Document, cfg: ChunkingConfig, tok: &dyn Tokenizer) -> Result<Vec<Chunk>> {
    let spans = tok.spans(&doc.text);
    let bounds = window_bounds(spans.len(), cfg)?;
    Ok(bounds
        .into_iter()
        .enumerate()
        .map(|(index, (s, e))| Chunk {
            id: chunk_id(&doc.id, index),
            doc_id: doc.id.clone(),
            index,
            text: doc.text[spans[s].start..spans[e - 1].end].to_string(),
            token_start: s,
            token_end: e,
        })
        .collect())
}

/// Documents and their QA pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub qa_pairs: Vec<QaPair>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>, qa_pairs: Vec<QaPair>) -> Result<Self> {
        let c = Self { documents, qa_pairs };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut ids = HashSet::new();
        for d in &self.documents {
            if !ids.insert(d.id.as_str()) {
                problems.push(format!("duplicate document id {:?}", d.id));
            }
            if d.text.trim().is_empty() {
                problems.push(format!("document {:?} has empty text", d.id));
            }
        }
        let mut qa_ids = HashSet::new();
        for qa in &self.qa_pairs {
            if !qa_ids.insert(qa.id.as_str()) {
                problems.push(format!("duplicate qa id {:?}", qa.id));
            }
            if qa.question.trim().is_empty() {
                problems.push(format!("qa {:?} has an empty question", qa.id));
            }
            if qa.answer.trim().is_empty() {
                problems.push(format!("qa {:?} has an empty answer", qa.id));
            }
            if !ids.contains(qa.doc_id.as_str()) {
                problems.push(format!("qa {:?} refers to unknown document {:?}", qa.id, qa.doc_id));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigFields(problems))
        }
    }

    pub fn load(documents: &Path, qa: &Path) -> Result<Self> {
        Self::new(io::read_jsonl(documents)?, io::read_jsonl(qa)?)
    }

    pub fn save(&self, documents: &Path, qa: &Path) -> Result<()> {
        io::write_jsonl(documents, &self.documents)?;
        io::write_jsonl(qa, &self.qa_pairs)
    }

    pub fn document(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    /// Chunks every document; the result is sorted by chunk id.
    pub fn chunk_all(&self, cfg: ChunkingConfig, tok: &dyn Tokenizer) -> Result<Vec<Chunk>> {
        let mut out = Vec::new();
        for d in &self.documents {
            out.extend(chunk_document(d, cfg, tok)?);
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }
}

pub fn save_chunks(path: &Path, chunks: &[Chunk]) -> Result<()> {
    io::write_jsonl(path, chunks)
}

pub fn load_chunks(path: &Path) -> Result<Vec<Chunk>> {
    let chunks: Vec<Chunk> = io::read_jsonl(path)?;
    let mut seen = BTreeSet::new();
    for c in &chunks {
        if !seen.insert(c.id.as_str()) {
            return Err(Error::Format {
                what: "chunks file",
                message: format!("duplicate chunk id {:?}", c.id),
            });
        }
        if c.token_end < c.token_start {
            return Err(Error::Format {
                what: "chunks file",
                message: format!("chunk {:?} has token_end < token_start", c.id),
            });
        }
    }
    Ok(chunks)
}
