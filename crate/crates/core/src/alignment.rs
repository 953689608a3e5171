//! Answer-sufficiency scoring of chunks: forward likelihood of the answer,
//! backward likelihood of the question, base embedding cosine, and their
//! weighted sum.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{Embedder, LikelihoodScorer, PromptTemplates};
use crate::corpus::{Chunk, QaPair};
use crate::embedding::Embedding;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignmentWeights {
    pub forward: f64,
    pub backward: f64,
    pub vector: f64,
}

impl Default for AlignmentWeights {
    fn default() -> Self {
        Self {
            forward: 1.0,
            backward: 0.3,
            vector: 1.0,
        }
    }
}

impl AlignmentWeights {
    pub fn new(forward: f64, backward: f64, vector: f64) -> Result<Self> {
        let w = Self {
            forward,
            backward,
            vector,
        };
        match w.problems("weights").first() {
            Some(p) => Err(Error::Config(p.clone())),
            None => Ok(w),
        }
    }

    pub fn problems(&self, prefix: &str) -> Vec<String> {
        [
            ("forward", self.forward),
            ("backward", self.backward),
            ("vector", self.vector),
        ]
        .into_iter()
        .filter(|(_, v)| !v.is_finite())
        .map(|(n, v)| format!("{prefix}.{n}: must be finite, got {v}"))
        .collect()
    }
}

impl FromStr for AlignmentWeights {
    type Err = Error;

    /// Parses `forward,backward,vector`, e.g. `1,0.3,1`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("weights {s:?}: {e}")))?;
        match parts[..] {
            [f, b, v] => Self::new(f, b, v),
            _ => Err(Error::Config(format!(
                "weights {s:?}: expected three comma-separated numbers"
            ))),
        }
    }
}

/// Weighted sum, accumulated left to right.
pub fn unified_score(forward: f64, backward: f64, vector: f64, w: &AlignmentWeights) -> f64 {
    w.forward * forward + w.backward * backward + w.vector * vector
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkScore {
    pub qa_id: String,
    pub chunk_id: String,
    pub forward: f64,
    pub backward: f64,
    pub vector: f64,
    pub score: f64,
}

/// Mean log-likelihood of the answer given the chunk and question.
pub fn forward_alignment(
    scorer: &dyn LikelihoodScorer,
    templates: &PromptTemplates,
    question: &str,
    chunk: &Chunk,
    answer: &str,
) -> Result<f64> {
    if answer.trim().is_empty() {
        return Err(Error::Precondition("forward alignment needs a non-empty answer".into()));
    }
    let prompt = templates.render_forward(&chunk.text, question);
    scorer
        .score(&prompt, answer)
        .and_then(|lp| lp.mean())
        .map_err(|e| e.for_chunk(&chunk.id))
}

/// Mean log-likelihood of the question given the chunk and answer.
pub fn backward_alignment(
    scorer: &dyn LikelihoodScorer,
    templates: &PromptTemplates,
    answer: &str,
    chunk: &Chunk,
    question: &str,
) -> Result<f64> {
    if question.trim().is_empty() {
        return Err(Error::Precondition(
            "backward alignment needs a non-empty question".into(),
        ));
    }
    let prompt = templates.render_backward(&chunk.text, answer);
    scorer
        .score(&prompt, question)
        .and_then(|lp| lp.mean())
        .map_err(|e| e.for_chunk(&chunk.id))
}

/// Cosine of the base (unadapted) embeddings.
pub fn parameter_alignment(question: &Embedding, chunk: &Embedding) -> Result<f64> {
    if question.dim() != chunk.dim() {
        return Err(Error::DimensionMismatch {
            expected: question.dim(),
            found: chunk.dim(),
        });
    }
    Ok(question.cosine(chunk))
}

pub struct Aligner<'a> {
    pub scorer: &'a dyn LikelihoodScorer,
    pub embedder: &'a dyn Embedder,
    pub templates: &'a PromptTemplates,
    pub weights: AlignmentWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvalidChunk {
    pub chunk_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreOutcome {
    /// Valid scores ordered by chunk id.
    pub scores: Vec<ChunkScore>,
    pub invalid: Vec<InvalidChunk>,
}

impl Aligner<'_> {
    /// Scores each candidate chunk. `chunk_vecs` holds the base embedding
    /// of each chunk, in the same order. A chunk whose components fail is
    /// excluded and reported rather than imputed.
    pub fn score_chunks(&self, qa: &QaPair, chunks: &[&Chunk], chunk_vecs: &[Embedding]) -> Result<ScoreOutcome> {
        if chunks.len() != chunk_vecs.len() {
            return Err(Error::Precondition(format!(
                "{} chunks but {} embeddings",
                chunks.len(),
                chunk_vecs.len()
            )));
        }
        let q_vec = self.embedder.embed_one(&qa.question)?;
        let results: Vec<std::result::Result<ChunkScore, InvalidChunk>> = chunks
            .par_iter()
            .zip(chunk_vecs.par_iter())
            .map(|(chunk, t_vec)| {
                let run = || -> Result<ChunkScore> {
                    let f = forward_alignment(self.scorer, self.templates, &qa.question, chunk, &qa.answer)?;
                    let b = backward_alignment(self.scorer, self.templates, &qa.answer, chunk, &qa.question)?;
                    let v = parameter_alignment(&q_vec, t_vec)?;
                    Ok(ChunkScore {
                        qa_id: qa.id.clone(),
                        chunk_id: chunk.id.clone(),
                        forward: f,
                        backward: b,
                        vector: v,
                        score: unified_score(f, b, v, &self.weights),
                    })
                };
                run().map_err(|e| InvalidChunk {
                    chunk_id: chunk.id.clone(),
                    error: e.to_string(),
                })
            })
            .collect();
        let mut out = ScoreOutcome::default();
        for r in results {
            match r {
                Ok(s) => out.scores.push(s),
                Err(bad) => {
                    log::warn!("QA {}: chunk {} excluded: {}", qa.id, bad.chunk_id, bad.error);
                    out.invalid.push(bad);
                }
            }
        }
        out.scores.sort_by(|a, b| a.chunk_id.cmp(&b.chunk_id));
        out.invalid.sort_by(|a, b| a.chunk_id.cmp(&b.chunk_id));
        Ok(out)
    }
}

/// Top `m` chunk ids by descending score; equal scores go to the smaller
/// chunk id.
pub fn select_positives(scores: &[ChunkScore], m: usize) -> Result<Vec<String>> {
    if m == 0 {
        return Err(Error::Precondition("positive set size must be >= 1".into()));
    }
    let mut ranked: Vec<&ChunkScore> = scores.iter().collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.chunk_id.cmp(&b.chunk_id)));
    Ok(ranked.into_iter().take(m).map(|s| s.chunk_id.clone()).collect())
}

/// Re-applies `weights` to stored component scores.
pub fn rescore(scores: &[ChunkScore], weights: &AlignmentWeights) -> Vec<ChunkScore> {
    scores
        .iter()
        .map(|s| ChunkScore {
            score: unified_score(s.forward, s.backward, s.vector, weights),
            ..s.clone()
        })
        .collect()
}
