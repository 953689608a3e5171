//! Deterministic offline backends. Every output is a pure function of the
//! inputs and, where relevant, a configured seed.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::templates::PromptSections;
use super::{
    Embedder, EntityContext, EntityExtractor, ExtractedEntity, ExtractedRelation, ExtractionRecord, JudgeOutcome,
    LikelihoodScorer, PairJudge, QueryAugmenter, TokenLogProbs,
};
use crate::corpus::{Chunk, QaPair, Tokenizer, WordPunctTokenizer};
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::evalx::{token_f1, PairVerdict, Winner};
use crate::io::stable_hash64;
use crate::text::{capitalized_spans, sentences, words};

const PERSON_NAMES: &[&str] = &[
    "alice", "bob", "carol", "dave", "david", "eve", "frank", "grace", "heidi", "ivan", "judy", "mallory", "nina",
    "oscar", "peggy", "quentin", "rupert", "sybil", "trent", "victor", "walter", "mary", "john", "james", "maria",
    "elena", "omar", "priya", "kenji", "lena",
];

const LOCATIONS: &[&str] = &[
    "paris", "france", "london", "berlin", "tokyo", "rome", "madrid", "lisbon", "oslo", "vienna", "europe", "asia",
    "africa", "america", "china", "india", "japan", "germany", "spain", "italy",
];

const ORG_SUFFIXES: &[&str] = &[
    "inc",
    "corp",
    "corporation",
    "ltd",
    "llc",
    "company",
    "group",
    "labs",
    "industries",
    "systems",
    "university",
    "institute",
    "bank",
    "foundation",
    "society",
];

const LOCATION_SUFFIXES: &[&str] = &["city", "river", "valley", "island", "lake", "bay", "county"];

fn entity_type(name: &str) -> &'static str {
    let words: Vec<String> = name.split_whitespace().map(str::to_lowercase).collect();
    let first = words.first().map(String::as_str).unwrap_or("");
    let last = words.last().map(String::as_str).unwrap_or("");
    if ORG_SUFFIXES.contains(&last) {
        "ORG"
    } else if LOCATIONS.contains(&first) || LOCATION_SUFFIXES.contains(&last) {
        "LOCATION"
    } else if PERSON_NAMES.contains(&first) {
        "PERSON"
    } else {
        "ORG"
    }
}

/// Capitalized spans become entities; two entities in one sentence become a
/// relation described by the words between them.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockExtractor;

impl EntityExtractor for MockExtractor {
    fn id(&self) -> String {
        "mock-extractor".into()
    }

    fn extract(&self, chunk: &Chunk) -> Result<ExtractionRecord> {
        let mut record = ExtractionRecord::empty(&chunk.id);
        let mut seen: HashSet<String> = HashSet::new();
        for sentence in sentences(&chunk.text) {
            let ws = words(sentence);
            let spans = capitalized_spans(&ws);
            for (name, _, _) in &spans {
                if seen.insert(name.clone()) {
                    record.entities.push(ExtractedEntity {
                        name: name.clone(),
                        entity_type: entity_type(name).to_string(),
                        description: sentence.to_string(),
                    });
                }
            }
            for (i, (src, _, src_end)) in spans.iter().enumerate() {
                for (dst, dst_start, _) in &spans[i + 1..] {
                    if src == dst {
                        continue;
                    }
                    let between: Vec<&str> = ws[*src_end..*dst_start].iter().map(|w| w.text).collect();
                    let description = if between.is_empty() {
                        "related to".to_string()
                    } else {
                        between.join(" ").to_lowercase()
                    };
                    record.relations.push(ExtractedRelation {
                        source: src.clone(),
                        target: dst.clone(),
                        description,
                        strength: 1.0,
                    });
                }
            }
        }
        Ok(record)
    }
}

/// Mock likelihood models. Target token counts use [`WordPunctTokenizer`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MockScorer {
    /// Every token gets `-ln(vocab)`.
    Uniform { vocab: u32 },
    /// Token `i` gets `-(1 + (h mod 100) / 100)` with `h` a stable hash of
    /// the seed, prompt, target and `i`.
    Hash { seed: u64 },
    /// Every token gets -0.1 when the answer occurs in the prompt's context
    /// section, otherwise -3.0.
    ContainsAnswer,
}

pub const CONTAINS_HIT: f64 = -0.1;
pub const CONTAINS_MISS: f64 = -3.0;

impl MockScorer {
    fn contains_answer(prompt: &str, target: &str) -> bool {
        let sections = PromptSections::parse(prompt);
        let answer = sections.answer.as_deref().unwrap_or(target).trim();
        match sections.context {
            Some(ctx) if !answer.is_empty() => ctx.to_lowercase().contains(&answer.to_lowercase()),
            _ => false,
        }
    }
}

impl LikelihoodScorer for MockScorer {
    fn id(&self) -> String {
        match self {
            MockScorer::Uniform { vocab } => format!("mock-likelihood-uniform-v{vocab}"),
            MockScorer::Hash { seed } => format!("mock-likelihood-hash-s{seed}"),
            MockScorer::ContainsAnswer => "mock-likelihood-contains-answer".into(),
        }
    }

    fn score(&self, prompt: &str, target: &str) -> Result<TokenLogProbs> {
        let n = WordPunctTokenizer.count(target);
        if n == 0 {
            return Err(Error::Precondition("likelihood target is empty".into()));
        }
        let values = match *self {
            MockScorer::Uniform { vocab } => {
                if vocab == 0 {
                    return Err(Error::Config("uniform mock vocabulary must be >= 1".into()));
                }
                vec![-(vocab as f64).ln(); n]
            }
            MockScorer::Hash { seed } => (0..n)
                .map(|i| {
                    let h = stable_hash64(&[
                        &seed.to_le_bytes(),
                        prompt.as_bytes(),
                        target.as_bytes(),
                        &(i as u64).to_le_bytes(),
                    ]);
                    -(1.0 + (h % 100) as f64 / 100.0)
                })
                .collect(),
            MockScorer::ContainsAnswer => {
                let v = if Self::contains_answer(prompt, target) {
                    CONTAINS_HIT
                } else {
                    CONTAINS_MISS
                };
                vec![v; n]
            }
        };
        TokenLogProbs::new(values)
    }
}

/// Signed feature hashing of lowercased character trigrams, L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashingEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl HashingEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }

    pub fn raw_features(&self, text: &str) -> Vec<f32> {
        let padded: Vec<char> = format!(" {} ", text.trim().to_lowercase()).chars().collect();
        let mut v = vec![0f32; self.dim];
        let mut buf = [0u8; 12];
        for w in padded.windows(3) {
            let mut len = 0;
            for c in w {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            let h = stable_hash64(&[&self.seed.to_le_bytes(), &buf[..len]]);
            let slot = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[slot] += sign;
        }
        v
    }
}

impl Embedder for HashingEmbedder {
    fn id(&self) -> String {
        format!("mock-hash-embedder-d{}-s{}", self.dim, self.seed)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        if self.dim == 0 {
            return Err(Error::Config("embedding dimension must be >= 1".into()));
        }
        texts
            .iter()
            .map(|t| {
                if t.trim().is_empty() {
                    return Err(Error::Precondition("cannot embed an empty string".into()));
                }
                Embedding::normalized(self.raw_features(t))
            })
            .collect()
    }
}

fn question_stem(question: &str) -> String {
    let q = question.trim();
    let mut chars = q.chars();
    match chars.next() {
        Some(c) => c.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn short_description(e: &EntityContext) -> String {
    let d = e.descriptions.first().map(String::as_str).unwrap_or("");
    let words: Vec<&str> = d.split_whitespace().take(12).collect();
    words.join(" ")
}

/// Candidate queries over four transformation categories (comparison,
/// cause and effect, quotation, change of viewpoint), then paraphrases of
/// the question alone, then numbered variants. Always returns `n` distinct
/// strings that differ from the question.
pub fn template_queries(qa: &QaPair, entities: &[EntityContext], n: usize) -> Vec<String> {
    let q = qa.question.trim();
    let stem = question_stem(q);
    let mut candidates: Vec<String> = Vec::new();
    let m = entities.len();
    if m > 0 {
        for round in 0..m {
            let e1 = &entities[round];
            let e2 = &entities[(round + 1) % m];
            if m > 1 {
                candidates.push(format!("Compare {} and {}: {stem}", e1.name, e2.name));
            }
            candidates.push(format!("Given what {} led to, {stem}", e1.name));
            let quote = short_description(e1);
            if !quote.is_empty() {
                candidates.push(format!("Where the text says \"{quote}\", {stem}"));
            }
            candidates.push(format!("From the standpoint of {}, {stem}", e1.name));
        }
    }
    for p in [
        format!("In other words, {stem}"),
        format!("Put differently: {stem}"),
        format!("Based on the passage, {stem}"),
        format!("{q} Answer briefly."),
        format!("Quick question: {stem}"),
        format!("Recall from the text: {stem}"),
        format!("Tell me, {stem}"),
        format!("According to the document, {stem}"),
    ] {
        candidates.push(p);
    }
    let mut seen = HashSet::new();
    let mut out: Vec<String> = candidates
        .into_iter()
        .filter(|c| !c.eq_ignore_ascii_case(q) && seen.insert(c.to_lowercase()))
        .take(n)
        .collect();
    let mut i = 1;
    while out.len() < n {
        let c = format!("{q} (variant {i})");
        if seen.insert(c.to_lowercase()) {
            out.push(c);
        }
        i += 1;
    }
    out
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateAugmenter;

impl QueryAugmenter for TemplateAugmenter {
    fn id(&self) -> String {
        "mock-template-augmenter".into()
    }

    fn propose(&self, qa: &QaPair, entities: &[EntityContext], n: usize) -> Result<Vec<String>> {
        Ok(template_queries(qa, entities, n))
    }
}

/// Phrases that mark an answer as a refusal for lack of information.
const REFUSALS: &[&str] = &[
    "unanswerable",
    "not enough information",
    "does not contain enough information",
    "insufficient information",
    "cannot be answered",
];

pub fn is_refusal(answer: &str) -> bool {
    let a = answer.to_lowercase();
    REFUSALS.iter().any(|r| a.contains(r))
}

fn compare<T: PartialOrd>(a: T, b: T, higher_wins: bool) -> Winner {
    match a.partial_cmp(&b) {
        Some(std::cmp::Ordering::Greater) if higher_wins => Winner::Answer1,
        Some(std::cmp::Ordering::Less) if higher_wins => Winner::Answer2,
        Some(std::cmp::Ordering::Greater) => Winner::Answer2,
        Some(std::cmp::Ordering::Less) => Winner::Answer1,
        _ => Winner::Tie,
    }
}

/// Heuristic judge: refusals are disqualified first; otherwise faithfulness
/// is token F1 against the ground truth and conciseness is token count.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockJudge;

impl PairJudge for MockJudge {
    fn id(&self) -> String {
        "mock-judge".into()
    }

    fn judge(&self, _question: &str, truth: &str, a1: &str, a2: &str) -> Result<JudgeOutcome> {
        let verdict = match (is_refusal(a1), is_refusal(a2)) {
            (true, true) => PairVerdict::uniform(Winner::Tie),
            (false, true) => PairVerdict::uniform(Winner::Answer1),
            (true, false) => PairVerdict::uniform(Winner::Answer2),
            (false, false) if a1.trim() == a2.trim() => PairVerdict::uniform(Winner::Tie),
            (false, false) => {
                let faithfulness = compare(token_f1(a1, truth).f1, token_f1(a2, truth).f1, true);
                let tok = WordPunctTokenizer;
                let conciseness = compare(tok.count(a1), tok.count(a2), false);
                let overall = if faithfulness == Winner::Tie {
                    conciseness
                } else {
                    faithfulness
                };
                PairVerdict {
                    faithfulness,
                    conciseness,
                    overall,
                }
            }
        };
        Ok(JudgeOutcome { verdict, raw: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::PromptTemplates;

    fn chunk(text: &str) -> Chunk {
        Chunk {
            id: "d#00000".into(),
            doc_id: "d".into(),
            index: 0,
            text: text.into(),
            token_start: 0,
            token_end: 1,
        }
    }

    #[test]
    fn extractor_founding_sentence() {
        let r = MockExtractor.extract(&chunk("Alice founded Acme.")).unwrap();
        let ents: Vec<(&str, &str)> = r
            .entities
            .iter()
            .map(|e| (e.name.as_str(), e.entity_type.as_str()))
            .collect();
        assert_eq!(ents, vec![("Alice", "PERSON"), ("Acme", "ORG")]);
        assert_eq!(r.relations.len(), 1);
        let rel = &r.relations[0];
        assert_eq!((rel.source.as_str(), rel.target.as_str()), ("Alice", "Acme"));
        assert_eq!(rel.description, "founded");
        assert_eq!(rel.strength, 1.0);
    }

    #[test]
    fn extractor_no_capitals_is_empty() {
        let r = MockExtractor.extract(&chunk("nothing to see here.")).unwrap();
        assert!(r.entities.is_empty() && r.relations.is_empty());
    }

    #[test]
    fn extractor_multiword_spans_and_stopwords() {
        let r = MockExtractor
            .extract(&chunk(
                "The board of Norvale Dynamics met in Paris. Then Bob Stone left.",
            ))
            .unwrap();
        let names: Vec<&str> = r.entities.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, vec!["Norvale Dynamics", "Paris", "Bob Stone"]);
        assert_eq!(r.relations.len(), 1);
        assert_eq!(r.relations[0].description, "met in");
    }

    #[test]
    fn uniform_scorer() {
        let s = MockScorer::Uniform { vocab: 4 };
        let lp = s.score("anything", "three token target").unwrap();
        assert_eq!(lp.0, vec![-(4f64.ln()); 3]);
        let lp = s.score("", "x").unwrap();
        assert_eq!(lp.len(), 1);
    }

    #[test]
    fn hash_scorer_is_reproducible_and_in_range() {
        let s = MockScorer::Hash { seed: 7 };
        let a = s.score("p", "one two three").unwrap();
        let b = s.score("p", "one two three").unwrap();
        assert_eq!(a, b);
        assert!(a.0.iter().all(|v| (-1.99..=-1.0).contains(v)));
        assert_ne!(a, s.score("q", "one two three").unwrap());
    }

    #[test]
    fn contains_answer_scorer_forward_and_backward() {
        let t = PromptTemplates::default();
        let s = MockScorer::ContainsAnswer;
        let hit = s
            .score(&t.render_forward("Alice founded Acme.", "Who founded Acme?"), "Alice")
            .unwrap();
        assert_eq!(hit.0, vec![CONTAINS_HIT]);
        let miss = s
            .score(&t.render_forward("Bob runs Acme.", "Who founded Acme?"), "Alice")
            .unwrap();
        assert_eq!(miss.0, vec![CONTAINS_MISS]);
        let q = "Who was the person that founded Acme ?";
        let back = s.score(&t.render_backward("Alice founded Acme.", "Alice"), q).unwrap();
        assert_eq!(back.0, vec![CONTAINS_HIT; 8]);
    }

    #[test]
    fn hashing_embedder_properties() {
        let e = HashingEmbedder::new(64, 0);
        let v = e.embed(&["abc", "abc", "xyz"]).unwrap();
        assert_eq!(v[0], v[1]);
        assert!((v[0].cosine(&v[1]) - 1.0).abs() < 1e-6);
        assert!(v[0].cosine(&v[2]) < 1.0);
        assert!(e.embed(&["  "]).is_err());
    }

    #[test]
    fn hashing_embedder_golden() {
        // Reference: trigrams of " abc " are " ab", "abc", "bc "; each adds
        // a signed unit to one slot chosen by the hash.
        let e = HashingEmbedder::new(64, 0);
        let mut expect = vec![0f32; 64];
        for g in [" ab", "abc", "bc "] {
            let h = stable_hash64(&[&0u64.to_le_bytes(), g.as_bytes()]);
            expect[(h % 64) as usize] += if h >> 63 == 0 { 1.0 } else { -1.0 };
        }
        assert_eq!(e.raw_features("ABC"), expect);
        let a = e.embed_one("abc").unwrap();
        let b = e.embed_one("xyz").unwrap();
        let mut expect_b = vec![0f32; 64];
        for g in [" xy", "xyz", "yz "] {
            let h = stable_hash64(&[&0u64.to_le_bytes(), g.as_bytes()]);
            expect_b[(h % 64) as usize] += if h >> 63 == 0 { 1.0 } else { -1.0 };
        }
        let oracle = crate::embedding::cosine(&expect, &expect_b);
        assert!((a.cosine(&b) - oracle).abs() < 1e-6);
    }

    fn qa() -> QaPair {
        QaPair {
            id: "q".into(),
            doc_id: "d".into(),
            question: "Who founded Acme?".into(),
            answer: "Alice".into(),
        }
    }

    #[test]
    fn template_queries_are_deterministic_and_distinct() {
        let ents = vec![
            EntityContext {
                name: "Acme".into(),
                entity_type: "ORG".into(),
                descriptions: vec!["Acme builds rockets in Paris.".into()],
            },
            EntityContext {
                name: "Paris".into(),
                entity_type: "LOCATION".into(),
                descriptions: vec![],
            },
        ];
        let a = template_queries(&qa(), &ents, 10);
        assert_eq!(a, template_queries(&qa(), &ents, 10));
        assert_eq!(a.len(), 10);
        assert_eq!(a[0], "Compare Acme and Paris: who founded Acme?");
        assert_eq!(a.iter().collect::<HashSet<_>>().len(), 10);
        assert!(!a.contains(&qa().question));
    }

    #[test]
    fn template_queries_without_entities_paraphrase() {
        let a = template_queries(&qa(), &[], 12);
        assert_eq!(a[0], "In other words, who founded Acme?");
        assert_eq!(a.len(), 12);
        assert_eq!(a[11], "Who founded Acme? (variant 4)");
    }

    #[test]
    fn judge_paths() {
        let j = MockJudge;
        let same = j.judge("q", "gt", "Paris", "Paris").unwrap();
        assert_eq!(same.verdict, PairVerdict::uniform(Winner::Tie));
        let dq = j.judge("q", "Paris", "It is Paris.", "unanswerable").unwrap();
        assert_eq!(dq.verdict, PairVerdict::uniform(Winner::Answer1));
        let f = j.judge("q", "Paris", "Lyon", "Paris").unwrap();
        assert_eq!(f.verdict.faithfulness, Winner::Answer2);
        assert_eq!(f.verdict.overall, Winner::Answer2);
    }
}
