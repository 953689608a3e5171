//! Client contracts for every model-dependent step.
//!
//! Each capability (extraction, likelihood scoring, embedding, query
//! augmentation, judging) is its own trait so that different models can
//! serve different roles. Every trait has a deterministic mock in [`mock`]
//! and an HTTP JSON client in [`remote`].

pub mod extraction;
pub mod mock;
pub mod remote;
pub mod templates;

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{Chunk, QaPair};
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::evalx::PairVerdict;

pub use extraction::{parse_extraction_output, ExtractedEntity, ExtractedRelation, ExtractionRecord, ParsedExtraction};
pub use templates::PromptTemplates;

/// Per-token log-probabilities of a target string under teacher forcing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogProbs(pub Vec<f64>);

impl TokenLogProbs {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v > 0.0) {
            return Err(Error::Format {
                what: "token log-probabilities",
                message: format!("value {bad} is not a finite log-probability"),
            });
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Mean log-likelihood per target token.
    pub fn mean(&self) -> Result<f64> {
        if self.0.is_empty() {
            return Err(Error::Format {
                what: "token log-probabilities",
                message: "no target tokens scored".into(),
            });
        }
        Ok(self.0.iter().sum::<f64>() / self.0.len() as f64)
    }
}

/// An entity as handed to the query augmenter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityContext {
    pub name: String,
    #[serde(rename = "type")]
    pub entity_type: String,
    pub descriptions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    pub queries: Vec<String>,
    /// True when the backend returned too few usable queries and template
    /// padding was applied.
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeOutcome {
    pub verdict: PairVerdict,
    /// Raw response kept when any criterion could not be parsed.
    pub raw: Option<String>,
}

pub trait EntityExtractor: Send + Sync {
    fn id(&self) -> String;
    fn extract(&self, chunk: &Chunk) -> Result<ExtractionRecord>;
}

pub trait LikelihoodScorer: Send + Sync {
    fn id(&self) -> String;
    /// Log-probability of each target token given the prompt and the
    /// preceding target tokens.
    fn score(&self, prompt: &str, target: &str) -> Result<TokenLogProbs>;
}

pub trait Embedder: Send + Sync {
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    /// One unit-norm vector per input, in input order.
    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>>;

    fn embed_one(&self, text: &str) -> Result<Embedding> {
        self.embed(&[text])?
            .pop()
            .ok_or_else(|| Error::backend(crate::error::Capability::Embed, "empty response"))
    }
}

pub trait QueryAugmenter: Send + Sync {
    fn id(&self) -> String;
    /// Raw candidate queries; [`augment_queries`] enforces count and
    /// distinctness.
    fn propose(&self, qa: &QaPair, entities: &[EntityContext], n: usize) -> Result<Vec<String>>;
}

pub trait PairJudge: Send + Sync {
    fn id(&self) -> String;
    fn judge(&self, question: &str, ground_truth: &str, answer1: &str, answer2: &str) -> Result<JudgeOutcome>;
}

/// The full set of model backends used by a pipeline run.
#[derive(Clone)]
pub struct Backends {
    pub extractor: Arc<dyn EntityExtractor>,
    pub scorer: Arc<dyn LikelihoodScorer>,
    pub embedder: Arc<dyn Embedder>,
    pub augmenter: Arc<dyn QueryAugmenter>,
    pub judge: Arc<dyn PairJudge>,
}

impl Backends {
    /// All-mock backends; `seed` feeds the hashing mocks.
    pub fn mock(seed: u64) -> Self {
        Self {
            extractor: Arc::new(mock::MockExtractor),
            scorer: Arc::new(mock::MockScorer::ContainsAnswer),
            embedder: Arc::new(mock::HashingEmbedder::new(64, seed)),
            augmenter: Arc::new(mock::TemplateAugmenter),
            judge: Arc::new(mock::MockJudge),
        }
    }

    pub fn ids(&self) -> Vec<String> {
        vec![
            self.extractor.id(),
            self.scorer.id(),
            self.embedder.id(),
            self.augmenter.id(),
            self.judge.id(),
        ]
    }
}

fn same_text(a: &str, b: &str) -> bool {
    a.trim().eq_ignore_ascii_case(b.trim())
}

/// Exactly `n` distinct queries, none equal to the original question.
/// Shortfalls from the backend are filled from the template augmenter and
/// flagged as degraded.
pub fn augment_queries(
    augmenter: &dyn QueryAugmenter,
    qa: &QaPair,
    entities: &[EntityContext],
    n: usize,
) -> Result<Augmentation> {
    if n == 0 {
        return Err(Error::Precondition("augment_queries requires n >= 1".into()));
    }
    let mut seen: HashSet<String> = HashSet::new();
    let mut keep = |q: &str, out: &mut Vec<String>| {
        let q = q.trim();
        if q.is_empty() || same_text(q, &qa.question) || !seen.insert(q.to_lowercase()) {
            return;
        }
        out.push(q.to_string());
    };
    let mut queries = Vec::with_capacity(n);
    for q in augmenter.propose(qa, entities, n)? {
        if queries.len() == n {
            break;
        }
        keep(&q, &mut queries);
    }
    let degraded = queries.len() < n;
    if degraded {
        log::warn!(
            "augmenter {} returned {} of {n} usable queries for {}; padding from templates",
            augmenter.id(),
            queries.len(),
            qa.id
        );
        let mut extra = n;
        while queries.len() < n {
            for q in mock::template_queries(qa, entities, extra) {
                if queries.len() == n {
                    break;
                }
                keep(&q, &mut queries);
            }
            extra += n;
        }
    }
    Ok(Augmentation { queries, degraded })
}
