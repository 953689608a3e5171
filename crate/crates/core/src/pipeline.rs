//! In-memory pipeline steps shared by the command line and the synthetic
//! end-to-end run.

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{select_positives, Aligner, AlignmentWeights, ChunkScore, InvalidChunk};
use crate::backends::{Backends, Embedder, EntityExtractor, ExtractionRecord, PromptTemplates, QueryAugmenter};
use crate::corpus::{Chunk, QaPair};
use crate::curriculum::{
    build_augmented_pool, merge_negatives, mine_hard_negatives, AugmentedPool, QaPositives, SizeClass,
};
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::evalx::{retrieval_metrics, EvalQuery, RetrievalMetrics};
use crate::kg::{
    augment_similarity_edges, build_graph, embed_nodes, match_entities, BuildStats, KnowledgeGraph, SeedMatch,
};
use crate::ppr::{build_transition, subgraphs_for_seeds, PprParams, PprTrace};
use crate::retriever::EmbeddingIndex;
use crate::trainer::Adapter;

/// Runs the extractor over every chunk in parallel; output follows chunk
/// order.
pub fn extract_all(chunks: &[Chunk], extractor: &dyn EntityExtractor) -> Result<Vec<ExtractionRecord>> {
    chunks.par_iter().map(|c| extractor.extract(c)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub build: BuildStats,
    pub augmented_edges: usize,
}

/// Merges extraction records into a graph, embeds node names and adds
/// similarity edges above `tau`.
pub fn build_knowledge_graph(
    records: &[ExtractionRecord],
    embedder: &dyn Embedder,
    tau: f64,
    batch: usize,
) -> Result<(KnowledgeGraph, GraphStats)> {
    let (mut kg, build) = build_graph(records);
    embed_nodes(&mut kg, embedder, batch)?;
    let augmented_edges = if kg.len() > 1 {
        augment_similarity_edges(&mut kg, tau)?
    } else {
        0
    };
    Ok((kg, GraphStats { build, augmented_edges }))
}

/// Seeds and both subgraphs of one QA pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaSubgraphRecord {
    pub qa_id: String,
    pub seeds: Vec<SeedMatch>,
    pub large: Vec<usize>,
    pub small: Vec<usize>,
    pub trace: Option<PprTrace>,
}

/// Matches seeds and cuts large and small subgraphs for every QA pair. QA
/// pairs without seeds get empty subgraphs and a warning.
pub fn compute_subgraphs(
    qas: &[QaPair],
    kg: &KnowledgeGraph,
    embedder: Option<&dyn Embedder>,
    large: PprParams,
    small: PprParams,
) -> Result<Vec<QaSubgraphRecord>> {
    let w = if kg.is_empty() {
        None
    } else {
        Some(build_transition(kg)?)
    };
    qas.par_iter()
        .map(|qa| {
            let seeds = match_entities(qa, kg, embedder)?;
            let (Some(w), false) = (&w, seeds.is_empty()) else {
                log::warn!("{}", Error::NoSeeds { qa_id: qa.id.clone() });
                return Ok(QaSubgraphRecord {
                    qa_id: qa.id.clone(),
                    seeds,
                    large: Vec::new(),
                    small: Vec::new(),
                    trace: None,
                });
            };
            let ids: Vec<usize> = seeds.iter().map(|s| s.node).collect();
            let sub = subgraphs_for_seeds(w, &ids, large, small)?;
            Ok(QaSubgraphRecord {
                qa_id: qa.id.clone(),
                large: sub.large.members.clone(),
                small: sub.small.members.clone(),
                trace: Some(PprTrace::new(&qa.id, &sub, large.epsilon)),
                seeds,
            })
        })
        .collect()
}

/// Augmented query pools for every QA pair that has a subgraph.
pub fn augment_all(
    qas: &[QaPair],
    kg: &KnowledgeGraph,
    subgraphs: &[QaSubgraphRecord],
    n: usize,
    augmenter: &dyn QueryAugmenter,
) -> Result<Vec<AugmentedPool>> {
    let by_id: HashMap<&str, &QaSubgraphRecord> = subgraphs.iter().map(|s| (s.qa_id.as_str(), s)).collect();
    let work: Vec<(&QaPair, &QaSubgraphRecord)> = qas
        .iter()
        .filter_map(|qa| {
            let s = by_id.get(qa.id.as_str())?;
            if s.large.is_empty() && s.small.is_empty() {
                log::warn!("QA {} has no subgraph; it gets no augmented queries", qa.id);
                None
            } else {
                Some((qa, *s))
            }
        })
        .collect();
    work.par_iter()
        .map(|(qa, s)| build_augmented_pool(qa, kg, &s.large, &s.small, n, augmenter))
        .collect()
}

/// Chunks grouped by document, each group in chunk-id order.
pub fn chunks_by_document(chunks: &[Chunk]) -> BTreeMap<&str, Vec<&Chunk>> {
    let mut out: BTreeMap<&str, Vec<&Chunk>> = BTreeMap::new();
    for c in chunks {
        out.entry(c.doc_id.as_str()).or_default().push(c);
    }
    for v in out.values_mut() {
        v.sort_by(|a, b| a.id.cmp(&b.id));
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignmentOutput {
    pub scores: Vec<ChunkScore>,
    pub positives: Vec<QaPositives>,
    pub invalid: Vec<(String, InvalidChunk)>,
}

/// Scores every chunk of each QA pair's document and keeps the top `m`.
pub fn align_all(
    qas: &[QaPair],
    chunks: &[Chunk],
    index: &EmbeddingIndex,
    backends: &Backends,
    templates: &PromptTemplates,
    weights: AlignmentWeights,
    m: usize,
) -> Result<AlignmentOutput> {
    let docs = chunks_by_document(chunks);
    let aligner = Aligner {
        scorer: backends.scorer.as_ref(),
        embedder: backends.embedder.as_ref(),
        templates,
        weights,
    };
    let mut out = AlignmentOutput::default();
    for qa in qas {
        let doc_chunks = docs.get(qa.doc_id.as_str()).cloned().unwrap_or_default();
        let vecs = doc_chunks
            .iter()
            .map(|c| {
                index
                    .row_of(&c.id)
                    .ok_or_else(|| Error::Precondition(format!("chunk {} is not in the index", c.id)))
                    .and_then(|r| Embedding::from_unit(r.to_vec()))
            })
            .collect::<Result<Vec<_>>>()?;
        let scored = aligner.score_chunks(qa, &doc_chunks, &vecs)?;
        let positives = select_positives(&scored.scores, m)?;
        if positives.is_empty() {
            log::warn!("QA {} has no validly scored chunk; no positives", qa.id);
        }
        out.positives.push(QaPositives {
            qa_id: qa.id.clone(),
            doc_id: qa.doc_id.clone(),
            question: qa.question.clone(),
            positives,
        });
        out.invalid
            .extend(scored.invalid.into_iter().map(|i| (qa.id.clone(), i)));
        out.scores.extend(scored.scores);
    }
    Ok(out)
}

/// Embeds `texts` in batches, keyed by text.
pub fn embed_texts<'a>(
    embedder: &dyn Embedder,
    texts: &[&'a str],
    batch: usize,
) -> Result<HashMap<&'a str, Embedding>> {
    let mut unique: Vec<&str> = texts.to_vec();
    unique.sort_unstable();
    unique.dedup();
    let mut out = HashMap::with_capacity(unique.len());
    for part in unique.chunks(batch.max(1)) {
        let vecs = embedder.embed(part)?;
        if vecs.len() != part.len() {
            return Err(Error::Precondition(format!(
                "embedder returned {} vectors for {} texts",
                vecs.len(),
                part.len()
            )));
        }
        out.extend(part.iter().copied().zip(vecs));
    }
    Ok(out)
}

/// Hard negatives per QA pair for one size class, mined within the QA
/// pair's document through `adapter`.
#[allow(clippy::too_many_arguments)]
pub fn mine_all(
    positives: &[QaPositives],
    pools: &[AugmentedPool],
    size: SizeClass,
    chunks: &[Chunk],
    index: &EmbeddingIndex,
    embedder: &dyn Embedder,
    adapter: &Adapter,
    k: usize,
    cap: usize,
) -> Result<BTreeMap<String, Vec<String>>> {
    let pools: HashMap<&str, &AugmentedPool> = pools.iter().map(|p| (p.qa_id.as_str(), p)).collect();
    let texts: Vec<&str> = pools
        .values()
        .flat_map(|p| p.class(size).iter().map(|q| q.text.as_str()))
        .collect();
    let vecs = embed_texts(embedder, &texts, 64)?;
    let searcher = index.searcher(Some(adapter))?;
    let docs = chunks_by_document(chunks);
    let mined: Vec<(String, Vec<String>)> = positives
        .par_iter()
        .map(|qa| {
            let queries = pools.get(qa.qa_id.as_str()).map(|p| p.class(size)).unwrap_or_default();
            let candidates: HashSet<&str> = docs
                .get(qa.doc_id.as_str())
                .map(|cs| cs.iter().map(|c| c.id.as_str()).collect())
                .unwrap_or_default();
            let pos: HashSet<&str> = qa.positives.iter().map(String::as_str).collect();
            let lists = queries
                .iter()
                .map(|q| mine_hard_negatives(&searcher, vecs[q.text.as_str()].as_slice(), &pos, k, &candidates))
                .collect::<Result<Vec<_>>>()?;
            Ok((qa.qa_id.clone(), merge_negatives(&lists, cap)))
        })
        .collect::<Result<_>>()?;
    Ok(mined.into_iter().collect())
}

/// Recall@k and MRR of `queries` against the index, with or without an
/// adapter.
pub fn evaluate_retrieval(
    queries: &[EvalQuery],
    index: &EmbeddingIndex,
    embedder: &dyn Embedder,
    adapter: Option<&Adapter>,
    k: usize,
) -> Result<RetrievalMetrics> {
    let texts: Vec<&str> = queries.iter().map(|q| q.query.as_str()).collect();
    let vecs = embed_texts(embedder, &texts, 64)?;
    let searcher = index.searcher(adapter)?;
    let runs = queries
        .iter()
        .map(|q| {
            let hits = searcher.search(vecs[q.query.as_str()].as_slice(), index.len())?;
            Ok((
                hits.into_iter().map(|h| h.chunk_id).collect(),
                q.relevant.iter().cloned().collect(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(retrieval_metrics(&runs, k))
}

/// Retrieval queries built from QA questions with their positives as the
/// relevant set.
pub fn queries_from_positives(positives: &[QaPositives]) -> Vec<EvalQuery> {
    positives
        .iter()
        .filter(|p| !p.positives.is_empty())
        .map(|p| EvalQuery {
            id: p.qa_id.clone(),
            qa_id: p.qa_id.clone(),
            doc_id: p.doc_id.clone(),
            query: p.question.clone(),
            relevant: p.positives.clone(),
        })
        .collect()
}
