//! Seeded synthetic corpus with planted answer chunks, near-duplicate
//! distractors and held-out paraphrase queries.
//!
//! Every paragraph tokenizes to exactly `paragraph_tokens` tokens and the
//! chunker stride equals that length, so chunk `i` of a document is
//! paragraph `i` plus the first `overlap` tokens of the next one. Each
//! paragraph opens with a header longer than the overlap, so an answer
//! never leaks into a neighbouring chunk.

use std::collections::{BTreeMap, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{chunk_id, ChunkingConfig, Corpus, Document, QaPair, Tokenizer, WordPunctTokenizer};
use crate::error::{Error, Result};
use crate::evalx::EvalQuery;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub documents: usize,
    pub qas_per_document: usize,
    pub distractors_per_qa: usize,
    pub fillers_per_document: usize,
    pub paragraph_tokens: usize,
    pub overlap: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            documents: 20,
            qas_per_document: 2,
            distractors_per_qa: 3,
            fillers_per_document: 2,
            paragraph_tokens: 64,
            overlap: 4,
            seed: 42,
        }
    }
}

impl SyntheticConfig {
    /// Chunking that maps paragraphs onto chunks one to one.
    pub fn chunking(&self) -> ChunkingConfig {
        ChunkingConfig {
            size: self.paragraph_tokens + self.overlap,
            overlap: self.overlap,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    /// QA id to the chunk holding its answer.
    pub planted: BTreeMap<String, String>,
    /// QA id to its distractor chunks.
    pub distractors: BTreeMap<String, Vec<String>>,
    pub heldout: Vec<EvalQuery>,
    pub chunking: ChunkingConfig,
}

struct Attribute {
    noun: &'static str,
    question: &'static str,
    paraphrases: [&'static str; 3],
    planted: &'static str,
}

/// `{X}` is the place, `{A}` the answer.
const ATTRIBUTES: &[Attribute] = &[
    Attribute {
        noun: "capital",
        question: "What is the capital of {X}?",
        paraphrases: [
            "Which city is the capital of {X}?",
            "Name the capital city of {X}.",
            "Where does {X} keep its capital?",
        ],
        planted: "{A} serves as the seat of government for {X}. Officials of {X} gather in {A} each spring to pass new laws.",
    },
    Attribute {
        noun: "founder",
        question: "Who founded {X}?",
        paraphrases: [
            "Who was the founder of {X}?",
            "Which person established {X}?",
            "Name the person who founded {X}.",
        ],
        planted: "{A} laid the first stones of {X} long ago. The people of {X} still honour {A} as their first builder.",
    },
    Attribute {
        noun: "river",
        question: "Which river flows through {X}?",
        paraphrases: [
            "What river runs through {X}?",
            "Name the river that flows through {X}.",
            "Which river crosses {X}?",
        ],
        planted: "The waters of the {A} wind past every town in {X}. Boatmen on the {A} carry timber down to the sea.",
    },
    Attribute {
        noun: "main export",
        question: "What is the main export of {X}?",
        paraphrases: [
            "What does {X} export the most?",
            "Name the main export of {X}.",
            "Which good is the chief export of {X}?",
        ],
        planted: "Merchants load crates of {A} onto ships in the harbours of {X}. Foreign buyers pay well for {A} from there.",
    },
    Attribute {
        noun: "festival",
        question: "Which festival is celebrated in {X}?",
        paraphrases: [
            "What festival do people celebrate in {X}?",
            "Name the festival held in {X}.",
            "Which celebration takes place in {X}?",
        ],
        planted: "Every autumn the streets of {X} fill with lanterns for {A}. Families cook for days before {A} begins.",
    },
    Attribute {
        noun: "highest mountain",
        question: "What is the highest mountain in {X}?",
        paraphrases: [
            "Which mountain is the highest in {X}?",
            "Name the tallest peak of {X}.",
            "What is the tallest mountain of {X}?",
        ],
        planted: "Snow never leaves the summit of {A}, which towers over {X}. Climbers need four days to reach the top of {A}.",
    },
    Attribute {
        noun: "language",
        question: "What language is spoken in {X}?",
        paraphrases: [
            "Which language do people speak in {X}?",
            "Name the language of {X}.",
            "What tongue is spoken in {X}?",
        ],
        planted: "Children in {X} learn to read and write in {A}. Street signs and songs across {X} are written in {A}.",
    },
    Attribute {
        noun: "currency",
        question: "What is the currency of {X}?",
        paraphrases: [
            "Which currency is used in {X}?",
            "Name the currency of {X}.",
            "What money do people use in {X}?",
        ],
        planted: "Traders in {X} count their coins in {A}. A loaf of bread costs two {A} at the markets there.",
    },
];

/// `{X}` is the place, `{N}` the attribute noun.
const DISTRACTORS: &[&str] = &[
    "Many visitors to {X} ask about the {N} of {X}. Guides in {X} say the {N} of {X} is a popular topic of debate.",
    "Old archives of {X} mention the {N} of {X} only in passing. Historians still argue about the {N} of {X} today.",
    "A recent survey in {X} asked residents about the {N} of {X}. Opinions on the {N} of {X} varied widely.",
    "Students who study {X} often write essays on the {N} of {X}. Teachers grade essays on the {N} of {X} with care.",
];

const FILLERS: &[&str] = &[
    "{X} is a quiet land known for its markets and long winters. Farmers in {X} grow grain along the valleys.",
    "Roads in {X} are narrow and lined with old stone walls. Travellers in {X} often stop at small inns.",
    "The weather in {X} changes quickly between sun and rain. Shepherds in {X} watch the sky each morning.",
];

const PADDING: &[&str] = &[
    "and", "so", "the", "days", "pass", "slowly", "while", "people", "work", "rest", "talk", "walk", "home",
];

const SYLLABLES: &[&str] = &[
    "ka", "lo", "ver", "tan", "mir", "do", "sel", "ra", "quin", "bel", "tor", "ish", "nu", "gar", "fen", "oth", "zel",
    "pra", "vin", "sko", "mael", "dri", "hal", "cor",
];

fn name(rng: &mut ChaCha8Rng, used: &mut HashSet<String>) -> String {
    loop {
        let n = rng.random_range(2..=3);
        let raw: String = (0..n).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect();
        let mut c = raw.chars();
        let first = c.next().expect("non-empty").to_ascii_uppercase();
        let s = format!("{first}{}", c.as_str());
        let low = s.to_lowercase();
        // No name may contain another, so substring tests stay unambiguous.
        if !used
            .iter()
            .any(|u: &String| u.contains(&low) || low.contains(u.as_str()))
        {
            used.insert(low);
            return s;
        }
    }
}

fn fill(template: &str, place: &str, answer: &str, noun: &str) -> String {
    template
        .replace("{X}", place)
        .replace("{A}", answer)
        .replace("{N}", noun)
}

/// Pads `body` with neutral words to exactly `tokens` tokens after a
/// header of more than `overlap` tokens.
fn paragraph(
    place: &str,
    index: usize,
    body: &str,
    tokens: usize,
    overlap: usize,
    rng: &mut ChaCha8Rng,
) -> Result<String> {
    let tok = WordPunctTokenizer;
    let mut header = format!("Record {index} of {place} :");
    while tok.count(&header) <= overlap {
        header.push_str(" note");
    }
    let mut text = format!("{header} {body}");
    let mut n = tok.count(&text);
    if n > tokens {
        return Err(Error::Config(format!(
            "paragraph needs {n} tokens but only {tokens} are allowed"
        )));
    }
    while n < tokens {
        text.push(' ');
        text.push_str(PADDING.choose(rng).expect("non-empty"));
        n += 1;
    }
    Ok(text)
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    if cfg.qas_per_document > ATTRIBUTES.len() {
        return Err(Error::Config(format!(
            "at most {} QA pairs per document are supported",
            ATTRIBUTES.len()
        )));
    }
    if cfg.distractors_per_qa > DISTRACTORS.len() || cfg.fillers_per_document > FILLERS.len() {
        return Err(Error::Config("too many distractors or fillers requested".into()));
    }
    cfg.chunking().validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut used = HashSet::new();
    let mut documents = Vec::new();
    let mut qa_pairs = Vec::new();
    let mut planted = BTreeMap::new();
    let mut distractors = BTreeMap::new();
    let mut heldout = Vec::new();
    for d in 0..cfg.documents {
        let doc_id = format!("doc{d:03}");
        let place = name(&mut rng, &mut used);
        let mut attrs: Vec<&Attribute> = ATTRIBUTES.iter().collect();
        attrs.shuffle(&mut rng);
        // (body, role) where role is Some((qa index, is_planted)).
        let mut bodies: Vec<(String, Option<(usize, bool)>)> = Vec::new();
        let mut qas = Vec::new();
        for (qi, attr) in attrs.iter().take(cfg.qas_per_document).enumerate() {
            let answer = name(&mut rng, &mut used);
            bodies.push((fill(attr.planted, &place, &answer, attr.noun), Some((qi, true))));
            let mut dist: Vec<&&str> = DISTRACTORS.iter().collect();
            dist.shuffle(&mut rng);
            for t in dist.into_iter().take(cfg.distractors_per_qa) {
                bodies.push((fill(t, &place, &answer, attr.noun), Some((qi, false))));
            }
            qas.push((attr, answer));
        }
        for t in FILLERS.iter().take(cfg.fillers_per_document) {
            bodies.push((fill(t, &place, "", ""), None));
        }
        bodies.shuffle(&mut rng);
        let mut paragraphs = Vec::with_capacity(bodies.len());
        let mut plant_ids = vec![String::new(); qas.len()];
        let mut dist_ids = vec![Vec::new(); qas.len()];
        for (pos, (body, role)) in bodies.iter().enumerate() {
            paragraphs.push(paragraph(
                &place,
                pos + 1,
                body,
                cfg.paragraph_tokens,
                cfg.overlap,
                &mut rng,
            )?);
            match role {
                Some((qi, true)) => plant_ids[*qi] = chunk_id(&doc_id, pos),
                Some((qi, false)) => dist_ids[*qi].push(chunk_id(&doc_id, pos)),
                None => {}
            }
        }
        for (qi, (attr, answer)) in qas.iter().enumerate() {
            let qa_id = format!("{doc_id}-q{qi}");
            qa_pairs.push(QaPair {
                id: qa_id.clone(),
                doc_id: doc_id.clone(),
                question: fill(attr.question, &place, "", ""),
                answer: answer.clone(),
            });
            for (pi, p) in attr.paraphrases.iter().enumerate() {
                heldout.push(EvalQuery {
                    id: format!("{qa_id}-p{pi}"),
                    qa_id: qa_id.clone(),
                    doc_id: doc_id.clone(),
                    query: fill(p, &place, "", ""),
                    relevant: vec![plant_ids[qi].clone()],
                });
            }
            planted.insert(qa_id.clone(), plant_ids[qi].clone());
            let mut ds = std::mem::take(&mut dist_ids[qi]);
            ds.sort();
            distractors.insert(qa_id, ds);
        }
        documents.push(Document {
            id: doc_id,
            title: place.clone(),
            text: paragraphs.join("\n\n"),
        });
    }
    Ok(SyntheticCorpus {
        corpus: Corpus::new(documents, qa_pairs)?,
        planted,
        distractors,
        heldout,
        chunking: cfg.chunking(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_chunks_hold_answers_and_distractors_do_not() {
        let cfg = SyntheticConfig::default();
        let s = generate(&cfg).unwrap();
        let chunks = s.corpus.chunk_all(s.chunking, &WordPunctTokenizer).unwrap();
        assert_eq!(chunks.len(), 200);
        let by_id: BTreeMap<&str, &str> = chunks.iter().map(|c| (c.id.as_str(), c.text.as_str())).collect();
        assert_eq!(s.corpus.qa_pairs.len(), 40);
        assert_eq!(s.heldout.len(), 120);
        for qa in &s.corpus.qa_pairs {
            let a = qa.answer.to_lowercase();
            let holders: Vec<&str> = chunks
                .iter()
                .filter(|c| c.text.to_lowercase().contains(&a))
                .map(|c| c.id.as_str())
                .collect();
            assert_eq!(holders, [s.planted[&qa.id].as_str()], "{}", qa.id);
            assert_eq!(s.distractors[&qa.id].len(), 3);
            for d in &s.distractors[&qa.id] {
                assert!(!by_id[d.as_str()].to_lowercase().contains(&a));
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&SyntheticConfig::default()).unwrap();
        let b = generate(&SyntheticConfig::default()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SyntheticConfig {
            seed: 7,
            ..SyntheticConfig::default()
        })
        .unwrap();
        assert_ne!(a.corpus, c.corpus);
    }
}
