//! Augmented query pools, hard-negative mining and the three stage
//! datasets.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backends::{augment_queries, EntityContext, QueryAugmenter};
use crate::corpus::QaPair;
use crate::error::{Error, Result};
use crate::io::{read_json, read_jsonl, write_json, write_jsonl};
use crate::kg::KnowledgeGraph;
use crate::retriever::Searcher;

pub const DEFAULT_QUERIES: usize = 10;
pub const DEFAULT_MINE_K: usize = 20;
pub const DEFAULT_NEGATIVE_CAP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SizeClass {
    L,
    S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedQuery {
    pub text: String,
    pub qa_id: String,
    pub size_class: SizeClass,
    pub source_nodes: Vec<usize>,
}

/// Augmented queries of one QA pair for both subgraph sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedPool {
    pub qa_id: String,
    pub large: Vec<AugmentedQuery>,
    pub small: Vec<AugmentedQuery>,
    /// True when any class needed template padding.
    pub degraded: bool,
}

impl AugmentedPool {
    pub fn class(&self, size: SizeClass) -> &[AugmentedQuery] {
        match size {
            SizeClass::L => &self.large,
            SizeClass::S => &self.small,
        }
    }
}

/// Entity names, types and descriptions for the augmentation prompt.
pub fn entity_contexts(kg: &KnowledgeGraph, nodes: &[usize]) -> Result<Vec<EntityContext>> {
    nodes
        .iter()
        .map(|&i| {
            let n = kg
                .nodes()
                .get(i)
                .ok_or_else(|| Error::Precondition(format!("subgraph node {i} is not in the graph")))?;
            Ok(EntityContext {
                name: n.name.clone(),
                entity_type: n.entity_type.clone(),
                descriptions: n.descriptions.clone(),
            })
        })
        .collect()
}

/// `n` augmented queries per non-empty subgraph.
pub fn build_augmented_pool(
    qa: &QaPair,
    kg: &KnowledgeGraph,
    large: &[usize],
    small: &[usize],
    n: usize,
    augmenter: &dyn QueryAugmenter,
) -> Result<AugmentedPool> {
    if large.is_empty() && small.is_empty() {
        return Err(Error::Precondition(format!(
            "QA {} has no subgraph to augment from",
            qa.id
        )));
    }
    let mut degraded = false;
    let mut make = |nodes: &[usize], size: SizeClass| -> Result<Vec<AugmentedQuery>> {
        if nodes.is_empty() {
            log::warn!("QA {}: {size:?} subgraph is empty; no {size:?} queries", qa.id);
            return Ok(Vec::new());
        }
        let aug = augment_queries(augmenter, qa, &entity_contexts(kg, nodes)?, n)?;
        degraded |= aug.degraded;
        Ok(aug
            .queries
            .into_iter()
            .map(|text| AugmentedQuery {
                text,
                qa_id: qa.id.clone(),
                size_class: size,
                source_nodes: nodes.to_vec(),
            })
            .collect())
    };
    let large_q = make(large, SizeClass::L)?;
    let small_q = make(small, SizeClass::S)?;
    Ok(AugmentedPool {
        qa_id: qa.id.clone(),
        large: large_q,
        small: small_q,
        degraded,
    })
}

/// Retrieved ids with positives removed, order kept.
pub fn exclude_positives(retrieved: &[String], positives: &HashSet<&str>) -> Vec<String> {
    retrieved
        .iter()
        .filter(|id| !positives.contains(id.as_str()))
        .cloned()
        .collect()
}

/// Top-`k` chunks for `query` among `candidates`, minus the positives.
pub fn mine_hard_negatives(
    searcher: &Searcher,
    query: &[f32],
    positives: &HashSet<&str>,
    k: usize,
    candidates: &HashSet<&str>,
) -> Result<Vec<String>> {
    let hits = searcher.search_filtered(query, k, |id| candidates.contains(id))?;
    let ids: Vec<String> = hits.into_iter().map(|h| h.chunk_id).collect();
    Ok(exclude_positives(&ids, positives))
}

/// Merges per-query negative lists by rank (every query's first hit, then
/// every query's second, ...), dropping repeats, up to `cap` ids.
pub fn merge_negatives(lists: &[Vec<String>], cap: usize) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let depth = lists.iter().map(Vec::len).max().unwrap_or(0);
    'outer: for rank in 0..depth {
        for list in lists {
            if out.len() == cap {
                break 'outer;
            }
            if let Some(id) = list.get(rank) {
                if seen.insert(id.as_str()) {
                    out.push(id.clone());
                }
            }
        }
    }
    out
}

/// Training inputs of one QA pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaPositives {
    pub qa_id: String,
    pub doc_id: String,
    pub question: String,
    pub positives: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageExample {
    pub stage: u8,
    pub qa_id: String,
    pub query: String,
    pub positive_id: String,
    pub negative_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageManifest {
    pub stage: u8,
    pub config_hash: String,
    pub backend_ids: Vec<String>,
    pub seed: u64,
    /// Hash of the adapter the negatives were mined with; absent for
    /// stage 1.
    pub checkpoint: Option<String>,
    /// QA pairs left out because no negative survived exclusion.
    pub skipped_no_negatives: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageDataset {
    pub stage: u8,
    pub examples: Vec<StageExample>,
    pub manifest: StageManifest,
}

/// Provenance shared by the stage datasets of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub config_hash: String,
    pub backend_ids: Vec<String>,
    pub seed: u64,
}

/// Builds one stage. Stage 1 pairs the question with each positive and no
/// negatives. Stages 2 and 3 attach the QA pair's mined negatives (keyed by
/// QA id) and skip QA pairs whose pool is empty; `checkpoint` must name
/// the adapter that mined them.
pub fn assemble_stage(
    stage: u8,
    qas: &[QaPositives],
    negatives: &BTreeMap<String, Vec<String>>,
    cap: usize,
    checkpoint: Option<String>,
    provenance: &Provenance,
) -> Result<StageDataset> {
    match (stage, &checkpoint) {
        (1, _) => {}
        (2 | 3, Some(_)) => {}
        (2 | 3, None) => {
            return Err(Error::Precondition(format!(
                "stage {stage} needs the checkpoint hash of the adapter used for mining"
            )))
        }
        _ => return Err(Error::Precondition(format!("stage must be 1, 2 or 3, got {stage}"))),
    }
    let mut examples = Vec::new();
    let mut skipped = 0;
    for qa in qas {
        let positives: HashSet<&str> = qa.positives.iter().map(String::as_str).collect();
        let negs: Vec<String> = if stage == 1 {
            Vec::new()
        } else {
            let mut seen = HashSet::new();
            let pool: Vec<String> = negatives
                .get(&qa.qa_id)
                .map(Vec::as_slice)
                .unwrap_or_default()
                .iter()
                .filter(|n| !positives.contains(n.as_str()) && seen.insert(n.as_str()))
                .take(cap)
                .cloned()
                .collect();
            if pool.is_empty() {
                skipped += 1;
                continue;
            }
            pool
        };
        for pos in &qa.positives {
            examples.push(StageExample {
                stage,
                qa_id: qa.qa_id.clone(),
                query: qa.question.clone(),
                positive_id: pos.clone(),
                negative_ids: negs.clone(),
            });
        }
    }
    if skipped > 0 {
        log::warn!("stage {stage}: {skipped} QA pairs had no hard negatives and were left out");
    }
    let ds = StageDataset {
        stage,
        examples,
        manifest: StageManifest {
            stage,
            config_hash: provenance.config_hash.clone(),
            backend_ids: provenance.backend_ids.clone(),
            seed: provenance.seed,
            checkpoint: if stage == 1 { None } else { checkpoint },
            skipped_no_negatives: skipped,
        },
    };
    ds.validate()?;
    Ok(ds)
}

impl StageDataset {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.stage) || self.manifest.stage != self.stage {
            return Err(Error::Precondition(format!(
                "stage dataset labelled {} with manifest stage {}",
                self.stage, self.manifest.stage
            )));
        }
        for e in &self.examples {
            if e.stage != self.stage {
                return Err(Error::Precondition(format!(
                    "example for {} carries stage {} in a stage-{} dataset",
                    e.qa_id, e.stage, self.stage
                )));
            }
            if self.stage == 1 && !e.negative_ids.is_empty() {
                return Err(Error::Precondition("stage-1 examples take no mined negatives".into()));
            }
            let mut seen = HashSet::new();
            for n in &e.negative_ids {
                if n == &e.positive_id || !seen.insert(n) {
                    return Err(Error::Precondition(format!(
                        "negatives of {} contain the positive or a repeat ({n})",
                        e.qa_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Examples whose negatives intersect their QA pair's positive set.
    pub fn disjointness_violations(&self, positives: &BTreeMap<String, Vec<String>>) -> usize {
        self.examples
            .iter()
            .filter(|e| {
                positives
                    .get(&e.qa_id)
                    .is_some_and(|p| e.negative_ids.iter().any(|n| p.contains(n)))
            })
            .count()
    }

    pub fn files(dir: &Path, stage: u8) -> (PathBuf, PathBuf) {
        (
            dir.join(format!("stage{stage}.jsonl")),
            dir.join(format!("stage{stage}.json")),
        )
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let (data, manifest) = Self::files(dir, self.stage);
        write_jsonl(&data, &self.examples)?;
        write_json(&manifest, &self.manifest)
    }

    pub fn load(dir: &Path, stage: u8) -> Result<Self> {
        let (data, manifest) = Self::files(dir, stage);
        let ds = Self {
            stage,
            examples: read_jsonl(&data)?,
            manifest: read_json(&manifest)?,
        };
        ds.validate()?;
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::TemplateAugmenter;
    use crate::backends::ExtractionRecord;
    use crate::embedding::Embedding;
    use crate::kg::build_graph;
    use crate::retriever::EmbeddingIndex;
    use proptest::prelude::*;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn prov() -> Provenance {
        Provenance {
            config_hash: "c".into(),
            backend_ids: vec!["mock".into()],
            seed: 42,
        }
    }

    fn qa_pos(id: &str, pos: &[&str]) -> QaPositives {
        QaPositives {
            qa_id: id.into(),
            doc_id: "d".into(),
            question: format!("question {id}?"),
            positives: ids(pos),
        }
    }

    #[test]
    fn exclusion_keeps_order() {
        let retrieved = ids(&["c1", "c2", "c3", "c4", "c5"]);
        let pos: HashSet<&str> = ["c2", "c4"].into_iter().collect();
        assert_eq!(exclude_positives(&retrieved, &pos), ids(&["c1", "c3", "c5"]));
        let all: HashSet<&str> = retrieved.iter().map(String::as_str).collect();
        assert!(exclude_positives(&retrieved, &all).is_empty());
    }

    #[test]
    fn mining_is_restricted_to_candidates() {
        let e = |x: f32, y: f32| Embedding::normalized(vec![x, y]).unwrap();
        let idx = EmbeddingIndex::from_rows(
            vec![
                ("a#0".into(), e(1.0, 0.0)),
                ("a#1".into(), e(0.9, 0.1)),
                ("a#2".into(), e(0.5, 0.5)),
                ("b#0".into(), e(1.0, 0.01)),
            ],
            "t",
        )
        .unwrap();
        let s = idx.searcher(None).unwrap();
        let pos: HashSet<&str> = ["a#0"].into_iter().collect();
        let cand: HashSet<&str> = ["a#0", "a#1", "a#2"].into_iter().collect();
        let got = mine_hard_negatives(&s, &[1.0, 0.0], &pos, 2, &cand).unwrap();
        assert_eq!(got, ids(&["a#1"]));
        let got = mine_hard_negatives(&s, &[1.0, 0.0], &pos, 20, &cand).unwrap();
        assert_eq!(got, ids(&["a#1", "a#2"]));
    }

    #[test]
    fn merge_interleaves_dedupes_and_caps() {
        let lists = vec![ids(&["a", "b", "c"]), ids(&["b", "d"]), ids(&["e"])];
        assert_eq!(merge_negatives(&lists, 20), ids(&["a", "b", "e", "d", "c"]));
        assert_eq!(merge_negatives(&lists, 2), ids(&["a", "b"]));
        let many: Vec<Vec<String>> = (0..10)
            .map(|q| (0..20).map(|r| format!("n{}", (q * 7 + r) % 35)).collect())
            .collect();
        let merged = merge_negatives(&many, DEFAULT_NEGATIVE_CAP);
        assert_eq!(merged.len(), 20);
        assert_eq!(merged.iter().collect::<HashSet<_>>().len(), 20);
    }

    #[test]
    fn stage_one_pairs_every_positive() {
        let pos: Vec<String> = (0..10).map(|i| format!("d#{i:05}")).collect();
        let refs: Vec<&str> = pos.iter().map(String::as_str).collect();
        let ds = assemble_stage(1, &[qa_pos("q1", &refs)], &BTreeMap::new(), 20, None, &prov()).unwrap();
        assert_eq!(ds.examples.len(), 10);
        assert!(ds.examples.iter().all(|e| e.negative_ids.is_empty()));
        assert_eq!(ds.manifest.checkpoint, None);
    }

    #[test]
    fn later_stages_need_negatives_and_checkpoint() {
        let qas = [qa_pos("q1", &["p1", "p2"]), qa_pos("q2", &["p3"])];
        let mut negs = BTreeMap::new();
        negs.insert("q1".to_string(), ids(&["n1", "p2", "n2", "n1"]));
        assert!(assemble_stage(2, &qas, &negs, 20, None, &prov()).is_err());
        let ds = assemble_stage(2, &qas, &negs, 20, Some("h".into()), &prov()).unwrap();
        assert_eq!(ds.examples.len(), 2);
        assert_eq!(ds.examples[0].negative_ids, ids(&["n1", "n2"]));
        assert_eq!(ds.manifest.skipped_no_negatives, 1);
        let mut p = BTreeMap::new();
        p.insert("q1".to_string(), ids(&["p1", "p2"]));
        assert_eq!(ds.disjointness_violations(&p), 0);
        let capped = assemble_stage(3, &qas, &negs, 1, Some("h".into()), &prov()).unwrap();
        assert_eq!(capped.examples[0].negative_ids, ids(&["n1"]));
    }

    #[test]
    fn dataset_round_trip() {
        let qas = [qa_pos("q1", &["p1"])];
        let mut negs = BTreeMap::new();
        negs.insert("q1".to_string(), ids(&["n1", "n2"]));
        let ds = assemble_stage(2, &qas, &negs, 20, Some("abc".into()), &prov()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let (data, man) = StageDataset::files(dir.path(), 2);
        let before = (std::fs::read(&data).unwrap(), std::fs::read(&man).unwrap());
        let back = StageDataset::load(dir.path(), 2).unwrap();
        assert_eq!(back, ds);
        back.save(dir.path()).unwrap();
        assert_eq!(before, (std::fs::read(&data).unwrap(), std::fs::read(&man).unwrap()));
    }

    fn tiny_graph() -> KnowledgeGraph {
        let text = "Acme Corp hired Jane Doe in Berlin.";
        let chunk = crate::corpus::Chunk {
            id: "d#00000".into(),
            doc_id: "d".into(),
            index: 0,
            text: text.into(),
            token_start: 0,
            token_end: 8,
        };
        let rec: ExtractionRecord =
            crate::backends::EntityExtractor::extract(&crate::backends::mock::MockExtractor, &chunk).unwrap();
        build_graph(&[rec]).0
    }

    #[test]
    fn pool_sizes_follow_subgraphs() {
        let kg = tiny_graph();
        let qa = QaPair {
            id: "q".into(),
            doc_id: "d".into(),
            question: "Who hired Jane Doe?".into(),
            answer: "Acme Corp".into(),
        };
        let all: Vec<usize> = (0..kg.len()).collect();
        let pool = build_augmented_pool(&qa, &kg, &all, &all[..1], 10, &TemplateAugmenter).unwrap();
        assert_eq!(pool.large.len(), 10);
        assert_eq!(pool.small.len(), 10);
        assert!(pool
            .large
            .iter()
            .all(|q| q.text != qa.question && q.size_class == SizeClass::L));
        let again = build_augmented_pool(&qa, &kg, &all, &all[..1], 10, &TemplateAugmenter).unwrap();
        assert_eq!(pool, again);
        let only_l = build_augmented_pool(&qa, &kg, &all, &[], 10, &TemplateAugmenter).unwrap();
        assert!(only_l.small.is_empty());
        assert!(build_augmented_pool(&qa, &kg, &[], &[], 10, &TemplateAugmenter).is_err());
    }

    proptest! {
        #[test]
        fn assembled_negatives_avoid_positives(
            pos in prop::collection::btree_set(0u8..30, 1..5),
            neg in prop::collection::vec(0u8..30, 0..40),
            cap in 1usize..25,
        ) {
            let pos: Vec<String> = pos.into_iter().map(|i| format!("c{i}")).collect();
            let refs: Vec<&str> = pos.iter().map(String::as_str).collect();
            let qas = [qa_pos("q", &refs)];
            let mut negs = BTreeMap::new();
            negs.insert("q".to_string(), neg.iter().map(|i| format!("c{i}")).collect::<Vec<_>>());
            let ds = assemble_stage(3, &qas, &negs, cap, Some("h".into()), &prov()).unwrap();
            let mut p = BTreeMap::new();
            p.insert("q".to_string(), pos.clone());
            prop_assert_eq!(ds.disjointness_violations(&p), 0);
            for e in &ds.examples {
                prop_assert!(e.negative_ids.len() <= cap);
            }
        }
    }
}
