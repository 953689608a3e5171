//! Token F1, retrieval metrics and pairwise win rates.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Result {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercases, replaces punctuation with spaces, drops articles and splits
/// on whitespace.
pub fn normalize_answer(s: &str) -> Vec<String> {
    let lowered: String = s
        .to_lowercase()
        .chars()
        .map(|c| if c.is_ascii_punctuation() { ' ' } else { c })
        .collect();
    lowered
        .split_whitespace()
        .filter(|w| !ARTICLES.contains(w))
        .map(str::to_string)
        .collect()
}

/// Multiset token-overlap F1 after [`normalize_answer`]. Two empty strings
/// match perfectly; one empty string scores zero.
pub fn token_f1(prediction: &str, gold: &str) -> F1Result {
    let pred = normalize_answer(prediction);
    let gold = normalize_answer(gold);
    if pred.is_empty() || gold.is_empty() {
        let v = if pred.is_empty() && gold.is_empty() { 1.0 } else { 0.0 };
        return F1Result {
            precision: v,
            recall: v,
            f1: v,
        };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    F1Result { precision, recall, f1 }
}

/// Fraction of `relevant` found in the first `k` results; 0 when
/// `relevant` is empty.
pub fn recall_at_k(results: &[String], relevant: &HashSet<String>, k: usize) -> f64 {
    assert!(k >= 1, "recall@k requires k >= 1");
    if relevant.is_empty() {
        log::warn!("recall@{k} over an empty relevant set is defined as 0");
        return 0.0;
    }
    let hits = results.iter().take(k).filter(|r| relevant.contains(*r)).count();
    hits as f64 / relevant.len() as f64
}

/// Reciprocal rank of the first relevant result; 0 if none is retrieved.
pub fn mrr(results: &[String], relevant: &HashSet<String>) -> f64 {
    if relevant.is_empty() {
        log::warn!("mrr over an empty relevant set is defined as 0");
        return 0.0;
    }
    results
        .iter()
        .position(|r| relevant.contains(r))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Winner {
    #[serde(rename = "Answer 1")]
    Answer1,
    #[serde(rename = "Answer 2")]
    Answer2,
    Tie,
    None,
}

impl Winner {
    /// Accepts the judge's labels ("Answer 1", "answer1", "A1", "tie", ...).
    pub fn parse(label: &str) -> Option<Self> {
        let key: String = label
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '_')
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "answer1" | "a1" | "1" => Some(Winner::Answer1),
            "answer2" | "a2" | "2" => Some(Winner::Answer2),
            "tie" => Some(Winner::Tie),
            "none" => Some(Winner::None),
            _ => None,
        }
    }

    pub fn mirrored(self) -> Self {
        match self {
            Winner::Answer1 => Winner::Answer2,
            Winner::Answer2 => Winner::Answer1,
            w => w,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Faithfulness,
    Conciseness,
    Overall,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::Faithfulness, Criterion::Conciseness, Criterion::Overall];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairVerdict {
    pub faithfulness: Winner,
    pub conciseness: Winner,
    pub overall: Winner,
}

impl PairVerdict {
    pub fn uniform(w: Winner) -> Self {
        Self {
            faithfulness: w,
            conciseness: w,
            overall: w,
        }
    }

    pub fn get(&self, c: Criterion) -> Winner {
        match c {
            Criterion::Faithfulness => self.faithfulness,
            Criterion::Conciseness => self.conciseness,
            Criterion::Overall => self.overall,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub qa_id: String,
    pub verdict: PairVerdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinRate {
    pub rate: f64,
    pub counted: usize,
    pub excluded: usize,
}

/// Answer-1 win rate for one criterion. A win counts 1, a tie 0.5, a loss 0;
/// `None` verdicts are removed from numerator and denominator. Returns
/// `None` when nothing remains.
pub fn compute_win_rate(verdicts: &[JudgeVerdict], criterion: Criterion) -> Option<WinRate> {
    let mut total = 0.0;
    let mut counted = 0usize;
    let mut excluded = 0usize;
    for v in verdicts {
        let contribution = match v.verdict.get(criterion) {
            Winner::Answer1 => 1.0,
            Winner::Answer2 => 0.0,
            Winner::Tie => 0.5,
            Winner::None => {
                excluded += 1;
                continue;
            }
        };
        total += contribution;
        counted += 1;
    }
    if counted == 0 {
        log::warn!("win rate undefined: no decisive verdicts for {criterion:?}");
        return None;
    }
    Some(WinRate {
        rate: total / counted as f64,
        counted,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub queries: usize,
    pub recall_at_k: f64,
    pub k: usize,
    pub mrr: f64,
}

/// A retrieval query with known relevant chunks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalQuery {
    pub id: String,
    pub qa_id: String,
    pub doc_id: String,
    pub query: String,
    pub relevant: Vec<String>,
}

/// Mean recall@k and MRR over `(results, relevant)` pairs.
pub fn retrieval_metrics(runs: &[(Vec<String>, HashSet<String>)], k: usize) -> RetrievalMetrics {
    let n = runs.len().max(1) as f64;
    RetrievalMetrics {
        queries: runs.len(),
        recall_at_k: runs.iter().map(|(r, rel)| recall_at_k(r, rel, k)).sum::<f64>() / n,
        k,
        mrr: runs.iter().map(|(r, rel)| mrr(r, rel)).sum::<f64>() / n,
    }
}

/// Structured evaluation report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub retrieval: Vec<(String, RetrievalMetrics)>,
    pub mean_f1: Option<f64>,
    pub win_rates: Vec<(Criterion, Option<WinRate>)>,
}

impl EvalReport {
    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        if !self.retrieval.is_empty() {
            let _ = writeln!(
                s,
                "{:<16} {:>8} {:>10} {:>8}",
                "retriever", "queries", "recall@k", "mrr"
            );
            for (name, m) in &self.retrieval {
                let _ = writeln!(
                    s,
                    "{:<16} {:>8} {:>10.4} {:>8.4}",
                    name, m.queries, m.recall_at_k, m.mrr
                );
            }
        }
        if let Some(f1) = self.mean_f1 {
            let _ = writeln!(s, "mean token F1: {f1:.4}");
        }
        for (c, wr) in &self.win_rates {
            match wr {
                Some(w) => {
                    let _ = writeln!(
                        s,
                        "win rate {:<13} {:.4} ({} counted, {} excluded)",
                        format!("{c:?}"),
                        w.rate,
                        w.counted,
                        w.excluded
                    );
                }
                None => {
                    let _ = writeln!(s, "win rate {:<13} undefined", format!("{c:?}"));
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(w: Winner) -> JudgeVerdict {
        JudgeVerdict {
            qa_id: "q".into(),
            verdict: PairVerdict::uniform(w),
        }
    }

    fn set(items: &[&str]) -> HashSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn list(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn f1_examples() {
        assert_eq!(token_f1("The Eiffel Tower", "the eiffel tower").f1, 1.0);
        assert_eq!(token_f1("london", "paris").f1, 0.0);
        let r = token_f1("paris france", "paris");
        assert_eq!(r.precision, 0.5);
        assert_eq!(r.recall, 1.0);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn f1_normalization_and_multiset() {
        assert_eq!(token_f1("a cat, the cat!", "cat cat").f1, 1.0);
        let r = token_f1("cat cat cat", "cat");
        assert!((r.precision - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(token_f1("", "").f1, 1.0);
        assert_eq!(token_f1("the", "x").f1, 0.0);
    }

    #[test]
    fn retrieval_examples() {
        let rel = set(&["x"]);
        assert_eq!(recall_at_k(&list(&["x", "b"]), &rel, 1), 1.0);
        assert_eq!(mrr(&list(&["x", "b"]), &rel), 1.0);
        let r = list(&["a", "b", "c", "x"]);
        assert_eq!(recall_at_k(&r, &rel, 3), 0.0);
        assert_eq!(mrr(&r, &rel), 0.25);
        assert_eq!(recall_at_k(&list(&["a"]), &rel, 5), 0.0);
        assert_eq!(mrr(&list(&["a"]), &rel), 0.0);
        assert_eq!(recall_at_k(&r, &HashSet::new(), 2), 0.0);
    }

    #[test]
    fn win_rate_examples() {
        let c = Criterion::Overall;
        assert_eq!(
            compute_win_rate(&[v(Winner::Answer1), v(Winner::Answer2)], c)
                .unwrap()
                .rate,
            0.5
        );
        assert_eq!(
            compute_win_rate(&[v(Winner::Answer1), v(Winner::Answer1)], c)
                .unwrap()
                .rate,
            1.0
        );
        let w = compute_win_rate(&[v(Winner::Answer1), v(Winner::Tie), v(Winner::None)], c).unwrap();
        assert_eq!(w.rate, 0.75);
        assert_eq!(w.excluded, 1);
        assert_eq!(w.counted, 2);
        assert!(compute_win_rate(&[v(Winner::None)], c).is_none());
    }

    #[test]
    fn winner_labels() {
        assert_eq!(Winner::parse("Answer 1"), Some(Winner::Answer1));
        assert_eq!(Winner::parse(" answer_2 "), Some(Winner::Answer2));
        assert_eq!(Winner::parse("TIE"), Some(Winner::Tie));
        assert_eq!(Winner::parse("None"), Some(Winner::None));
        assert_eq!(Winner::parse("both"), None);
    }

    fn winner() -> impl Strategy<Value = Winner> {
        prop_oneof![
            Just(Winner::Answer1),
            Just(Winner::Answer2),
            Just(Winner::Tie),
            Just(Winner::None)
        ]
    }

    proptest! {
        #[test]
        fn f1_swap_exchanges_precision_and_recall(a in "[a-e ]{0,20}", b in "[a-e ]{0,20}") {
            let ab = token_f1(&a, &b);
            let ba = token_f1(&b, &a);
            prop_assert!((ab.precision - ba.recall).abs() < 1e-12);
            prop_assert!((ab.recall - ba.precision).abs() < 1e-12);
            prop_assert!((ab.f1 - ba.f1).abs() < 1e-12);
        }

        #[test]
        fn mirrored_verdicts_average_to_half(ws in proptest::collection::vec(winner(), 1..30)) {
            let mut all: Vec<_> = ws.iter().map(|&w| v(w)).collect();
            all.extend(ws.iter().map(|&w| v(w.mirrored())));
            if let Some(r) = compute_win_rate(&all, Criterion::Overall) {
                prop_assert!((r.rate - 0.5).abs() < 1e-12);
            } else {
                prop_assert!(ws.iter().all(|&w| w == Winner::None));
            }
        }
    }
}
