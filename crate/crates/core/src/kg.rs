//! Knowledge graph built from extraction records: entity merging by
//! normalized name, extracted relation edges, and undirected similarity
//! edges between entities whose embeddings are close.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{Embedder, ExtractionRecord};
use crate::corpus::QaPair;
use crate::embedding::{cosine, Embedding};
use crate::error::{Error, Result};
use crate::io::{read_json, read_jsonl, write_json, write_jsonl};
use crate::text::{capitalized_surface_forms, normalize_name};

/// Description carried by every similarity edge.
pub const AUGMENTED_DESCRIPTION: &str = "Rel_aug";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Extracted,
    Augmented,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityNode {
    pub id: usize,
    /// Surface form from the earliest mention (by chunk id).
    pub name: String,
    #[serde(rename = "type")]
    pub entity_type: String,
    pub descriptions: Vec<String>,
    pub chunk_ids: BTreeSet<String>,
    pub embedding: Option<Embedding>,
}

impl EntityNode {
    pub fn key(&self) -> String {
        normalize_name(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationEdge {
    pub source: usize,
    pub target: usize,
    pub description: String,
    pub strength: f64,
    pub kind: EdgeKind,
    pub chunk_id: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildStats {
    pub records: usize,
    pub mentions: usize,
    pub nodes: usize,
    pub extracted_edges: usize,
    /// Relations with an endpoint that names no extracted entity.
    pub dropped_dangling: usize,
    /// Relations whose endpoints normalize to the same entity.
    pub dropped_self_loops: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    nodes: Vec<EntityNode>,
    edges: Vec<RelationEdge>,
    adjacency: Vec<Vec<usize>>,
    by_key: HashMap<String, usize>,
}

struct MergedEntity {
    name: String,
    types: BTreeMap<String, usize>,
    descriptions: Vec<String>,
    chunk_ids: BTreeSet<String>,
}

impl KnowledgeGraph {
    /// Assembles a graph from parts, checking ids, endpoints and the
    /// one-edge-per-pair-and-kind rule.
    pub fn from_parts(nodes: Vec<EntityNode>, mut edges: Vec<RelationEdge>) -> Result<Self> {
        let bad = |message: String| Error::Format {
            what: "knowledge graph",
            message,
        };
        let mut by_key = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if n.id != i {
                return Err(bad(format!("node at position {i} has id {}", n.id)));
            }
            if by_key.insert(n.key(), i).is_some() {
                return Err(bad(format!("duplicate entity name {:?}", n.name)));
            }
        }
        let mut pairs = HashSet::new();
        for e in &edges {
            if e.source >= nodes.len() || e.target >= nodes.len() {
                return Err(bad(format!("edge {}-{} references a missing node", e.source, e.target)));
            }
            if e.source == e.target {
                return Err(bad(format!("self-loop edge on node {}", e.source)));
            }
            if e.kind == EdgeKind::Augmented && e.source > e.target {
                return Err(bad("augmented edge not stored with source < target".into()));
            }
            let key = (e.source.min(e.target), e.source.max(e.target), e.kind);
            if !pairs.insert(key) {
                return Err(bad(format!(
                    "parallel {:?} edges between {} and {}",
                    e.kind, key.0, key.1
                )));
            }
        }
        edges.sort_by_key(|e| (e.kind, e.source, e.target));
        let mut g = Self {
            nodes,
            edges,
            adjacency: Vec::new(),
            by_key,
        };
        g.rebuild_adjacency();
        Ok(g)
    }

    fn rebuild_adjacency(&mut self) {
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); self.nodes.len()];
        for e in &self.edges {
            adj[e.source].insert(e.target);
            adj[e.target].insert(e.source);
        }
        self.adjacency = adj.into_iter().map(|s| s.into_iter().collect()).collect();
    }

    pub fn nodes(&self) -> &[EntityNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[RelationEdge] {
        &self.edges
    }

    /// Sorted distinct neighbors of each node in the undirected view.
    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_by_name(&self, name: &str) -> Option<&EntityNode> {
        self.by_key.get(&normalize_name(name)).map(|&i| &self.nodes[i])
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.nodes.iter().find_map(|n| n.embedding.as_ref().map(Embedding::dim))
    }

    pub fn count_edges(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }
}

/// Merges entities across records and turns resolvable relations into
/// extracted edges. Records are processed in chunk-id order, so the result
/// does not depend on input order.
pub fn build_graph(records: &[ExtractionRecord]) -> (KnowledgeGraph, BuildStats) {
    let mut order: Vec<&ExtractionRecord> = records.iter().collect();
    order.sort_by(|a, b| a.chunk_id.cmp(&b.chunk_id));
    let mut stats = BuildStats {
        records: records.len(),
        ..BuildStats::default()
    };

    let mut merged: BTreeMap<String, MergedEntity> = BTreeMap::new();
    for rec in &order {
        for e in &rec.entities {
            let key = normalize_name(&e.name);
            if key.is_empty() {
                continue;
            }
            stats.mentions += 1;
            let m = merged.entry(key).or_insert_with(|| MergedEntity {
                name: e.name.split_whitespace().collect::<Vec<_>>().join(" "),
                types: BTreeMap::new(),
                descriptions: Vec::new(),
                chunk_ids: BTreeSet::new(),
            });
            *m.types.entry(e.entity_type.clone()).or_default() += 1;
            let d = e.description.trim();
            if !d.is_empty() && !m.descriptions.iter().any(|x| x == d) {
                m.descriptions.push(d.to_string());
            }
            m.chunk_ids.insert(rec.chunk_id.clone());
        }
    }

    let mut by_key = HashMap::with_capacity(merged.len());
    let nodes: Vec<EntityNode> = merged
        .into_iter()
        .enumerate()
        .map(|(id, (key, m))| {
            by_key.insert(key, id);
            // Most frequent type; ties go to the alphabetically first.
            let entity_type = m
                .types
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(t, _)| t.clone())
                .unwrap_or_default();
            EntityNode {
                id,
                name: m.name,
                entity_type,
                descriptions: m.descriptions,
                chunk_ids: m.chunk_ids,
                embedding: None,
            }
        })
        .collect();

    let mut edge_at: HashMap<(usize, usize), usize> = HashMap::new();
    let mut edges: Vec<RelationEdge> = Vec::new();
    for rec in &order {
        for r in &rec.relations {
            let (Some(&s), Some(&t)) = (
                by_key.get(&normalize_name(&r.source)),
                by_key.get(&normalize_name(&r.target)),
            ) else {
                stats.dropped_dangling += 1;
                continue;
            };
            if s == t {
                stats.dropped_self_loops += 1;
                continue;
            }
            match edge_at.get(&(s.min(t), s.max(t))) {
                Some(&i) => {
                    let e = &mut edges[i];
                    let d = r.description.trim();
                    if !d.is_empty() && !e.description.split("; ").any(|x| x == d) {
                        if !e.description.is_empty() {
                            e.description.push_str("; ");
                        }
                        e.description.push_str(d);
                    }
                    e.strength += r.strength;
                }
                None => {
                    edge_at.insert((s.min(t), s.max(t)), edges.len());
                    edges.push(RelationEdge {
                        source: s,
                        target: t,
                        description: r.description.trim().to_string(),
                        strength: r.strength,
                        kind: EdgeKind::Extracted,
                        chunk_id: Some(rec.chunk_id.clone()),
                    });
                }
            }
        }
    }
    stats.nodes = nodes.len();
    stats.extracted_edges = edges.len();
    let g = KnowledgeGraph::from_parts(nodes, edges).expect("merged graph is well formed");
    (g, stats)
}

/// Embeds every node's canonical name in batches.
pub fn embed_nodes(kg: &mut KnowledgeGraph, embedder: &dyn Embedder, batch: usize) -> Result<()> {
    let batch = batch.max(1);
    let names: Vec<String> = kg.nodes.iter().map(|n| n.name.clone()).collect();
    let mut vectors = Vec::with_capacity(names.len());
    for part in names.chunks(batch) {
        let refs: Vec<&str> = part.iter().map(String::as_str).collect();
        let out = embedder.embed(&refs)?;
        if out.len() != refs.len() {
            return Err(Error::backend(
                crate::error::Capability::Embed,
                format!("expected {} embeddings, got {}", refs.len(), out.len()),
            ));
        }
        vectors.extend(out);
    }
    let dim = embedder.dim();
    for (node, v) in kg.nodes.iter_mut().zip(vectors) {
        if v.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.dim(),
            });
        }
        node.embedding = Some(v);
    }
    Ok(())
}

/// Similarity in the precision the embeddings are stored at, so a pair
/// whose cosine is the threshold value is not counted as exceeding it.
fn exceeds(cos: f64, tau: f64) -> bool {
    (cos as f32) > (tau as f32)
}

/// Adds one undirected augmented edge for every node pair with cosine
/// strictly above `tau` that does not already have one. Returns the number
/// of edges added.
pub fn augment_similarity_edges(kg: &mut KnowledgeGraph, tau: f64) -> Result<usize> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!(
            "similarity threshold must be in (0, 1), got {tau}"
        )));
    }
    let vecs: Vec<&[f32]> = kg
        .nodes
        .iter()
        .map(|n| {
            n.embedding
                .as_ref()
                .map(Embedding::as_slice)
                .ok_or_else(|| Error::Precondition(format!("node {:?} has no embedding", n.name)))
        })
        .collect::<Result<_>>()?;
    if let Some(d) = vecs.first().map(|v| v.len()) {
        if let Some(bad) = vecs.iter().find(|v| v.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: bad.len(),
            });
        }
    }
    let existing: HashSet<(usize, usize)> = kg
        .edges
        .iter()
        .filter(|e| e.kind == EdgeKind::Augmented)
        .map(|e| (e.source, e.target))
        .collect();
    let n = vecs.len();
    let new_edges: Vec<RelationEdge> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let vecs = &vecs;
            let existing = &existing;
            (i + 1..n).filter_map(move |j| {
                let c = cosine(vecs[i], vecs[j]);
                (exceeds(c, tau) && !existing.contains(&(i, j))).then(|| RelationEdge {
                    source: i,
                    target: j,
                    description: AUGMENTED_DESCRIPTION.to_string(),
                    strength: c,
                    kind: EdgeKind::Augmented,
                    chunk_id: None,
                })
            })
        })
        .collect();
    let added = new_edges.len();
    if added > 0 {
        kg.edges.extend(new_edges);
        kg.edges.sort_by_key(|e| (e.kind, e.source, e.target));
        kg.rebuild_adjacency();
    }
    Ok(added)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchSource {
    Answer,
    Question,
    AnswerEmbedding,
    QuestionEmbedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMatch {
    pub node: usize,
    pub surface: String,
    pub source: MatchSource,
}

/// Cosine at or above which the embedding fallback accepts a node.
pub const FALLBACK_MIN_COSINE: f64 = 0.9;

/// Surface forms: capitalized spans plus the whole string.
fn surface_forms(text: &str) -> Vec<String> {
    let mut forms = capitalized_surface_forms(text);
    forms.push(text.trim().to_string());
    let mut seen = HashSet::new();
    forms.retain(|f| !f.is_empty() && seen.insert(normalize_name(f)));
    forms
}

/// Seed entities for a QA pair: exact normalized matches from the answer,
/// then the question. When nothing matches exactly and an embedder is
/// given, nodes within [`FALLBACK_MIN_COSINE`] of any surface form are
/// used. Sorted by node id; each node keeps its first provenance.
pub fn match_entities(qa: &QaPair, kg: &KnowledgeGraph, embedder: Option<&dyn Embedder>) -> Result<Vec<SeedMatch>> {
    let answer_forms = surface_forms(&qa.answer);
    let question_forms = capitalized_surface_forms(&qa.question);
    let mut found: BTreeMap<usize, SeedMatch> = BTreeMap::new();
    for (forms, source) in [
        (&answer_forms, MatchSource::Answer),
        (&question_forms, MatchSource::Question),
    ] {
        for f in forms {
            if let Some(&node) = kg.by_key.get(&normalize_name(f)) {
                found.entry(node).or_insert_with(|| SeedMatch {
                    node,
                    surface: f.clone(),
                    source,
                });
            }
        }
    }
    if found.is_empty() {
        if let Some(embedder) = embedder {
            for (forms, source) in [
                (&answer_forms, MatchSource::AnswerEmbedding),
                (&question_forms, MatchSource::QuestionEmbedding),
            ] {
                if forms.is_empty() {
                    continue;
                }
                let refs: Vec<&str> = forms.iter().map(String::as_str).collect();
                let vecs = embedder.embed(&refs)?;
                for node in &kg.nodes {
                    let Some(ne) = &node.embedding else { continue };
                    if ne.dim() != embedder.dim() {
                        return Err(Error::DimensionMismatch {
                            expected: ne.dim(),
                            found: embedder.dim(),
                        });
                    }
                    if let Some((f, _)) = forms
                        .iter()
                        .zip(&vecs)
                        .find(|(_, v)| ne.cosine(v) >= FALLBACK_MIN_COSINE)
                    {
                        found.entry(node.id).or_insert_with(|| SeedMatch {
                            node: node.id,
                            surface: f.clone(),
                            source,
                        });
                    }
                }
            }
        }
    }
    Ok(found.into_values().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphManifest {
    pub node_count: usize,
    pub edge_count: usize,
    pub extracted_edges: usize,
    pub augmented_edges: usize,
    pub embedding_dim: Option<usize>,
    pub tau: Option<f64>,
}

pub const NODES_FILE: &str = "nodes.jsonl";
pub const EDGES_FILE: &str = "edges.jsonl";
pub const GRAPH_MANIFEST_FILE: &str = "graph.json";

/// Writes `nodes.jsonl`, `edges.jsonl` and `graph.json` into `dir`.
pub fn save_graph(dir: &Path, kg: &KnowledgeGraph, tau: Option<f64>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_jsonl(&dir.join(NODES_FILE), &kg.nodes)?;
    write_jsonl(&dir.join(EDGES_FILE), &kg.edges)?;
    write_json(
        &dir.join(GRAPH_MANIFEST_FILE),
        &GraphManifest {
            node_count: kg.nodes.len(),
            edge_count: kg.edges.len(),
            extracted_edges: kg.count_edges(EdgeKind::Extracted),
            augmented_edges: kg.count_edges(EdgeKind::Augmented),
            embedding_dim: kg.embedding_dim(),
            tau,
        },
    )
}

pub fn load_graph(dir: &Path) -> Result<(KnowledgeGraph, GraphManifest)> {
    let manifest: GraphManifest = read_json(&dir.join(GRAPH_MANIFEST_FILE))?;
    let nodes: Vec<EntityNode> = read_jsonl(&dir.join(NODES_FILE))?;
    let edges: Vec<RelationEdge> = read_jsonl(&dir.join(EDGES_FILE))?;
    if nodes.len() != manifest.node_count || edges.len() != manifest.edge_count {
        return Err(Error::Format {
            what: "knowledge graph",
            message: format!(
                "manifest lists {} nodes and {} edges, files hold {} and {}",
                manifest.node_count,
                manifest.edge_count,
                nodes.len(),
                edges.len()
            ),
        });
    }
    Ok((KnowledgeGraph::from_parts(nodes, edges)?, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::HashingEmbedder;
    use crate::backends::{ExtractedEntity, ExtractedRelation};
    use proptest::prelude::*;

    fn ent(name: &str, ty: &str) -> ExtractedEntity {
        ExtractedEntity {
            name: name.into(),
            entity_type: ty.into(),
            description: format!("{name} desc"),
        }
    }

    fn rel(s: &str, t: &str) -> ExtractedRelation {
        ExtractedRelation {
            source: s.into(),
            target: t.into(),
            description: "rel".into(),
            strength: 1.0,
        }
    }

    fn rec(chunk: &str, ents: Vec<ExtractedEntity>, rels: Vec<ExtractedRelation>) -> ExtractionRecord {
        ExtractionRecord {
            chunk_id: chunk.into(),
            entities: ents,
            relations: rels,
        }
    }

    fn node_with(id: usize, name: &str, v: Vec<f32>) -> EntityNode {
        EntityNode {
            id,
            name: name.into(),
            entity_type: "T".into(),
            descriptions: vec![],
            chunk_ids: BTreeSet::new(),
            embedding: Some(Embedding::normalized(v).unwrap()),
        }
    }

    #[test]
    fn case_variants_merge() {
        let (g, stats) = build_graph(&[
            rec("c1", vec![ent("ACME", "ORG")], vec![]),
            rec("c2", vec![ent("Acme", "ORG")], vec![]),
        ]);
        assert_eq!(g.len(), 1);
        assert_eq!(g.nodes()[0].chunk_ids.len(), 2);
        assert_eq!(g.nodes()[0].name, "ACME");
        assert_eq!(g.nodes()[0].descriptions, vec!["ACME desc", "Acme desc"]);
        assert_eq!(stats.mentions, 2);
    }

    #[test]
    fn dangling_relation_dropped() {
        let (g, stats) = build_graph(&[rec("c1", vec![ent("A", "X")], vec![rel("A", "B")])]);
        assert!(g.edges().is_empty());
        assert_eq!(stats.dropped_dangling, 1);
    }

    #[test]
    fn empty_records_give_empty_graph() {
        let (g, stats) = build_graph(&[]);
        assert!(g.is_empty() && g.edges().is_empty());
        assert_eq!(stats, BuildStats::default());
    }

    #[test]
    fn duplicate_relations_collapse_and_self_loops_drop() {
        let (g, stats) = build_graph(&[
            rec(
                "c2",
                vec![ent("A", "X"), ent("B", "X")],
                vec![rel("B", "A"), rel("a", "A")],
            ),
            rec("c1", vec![ent("A", "X"), ent("B", "X")], vec![rel("A", "B")]),
        ]);
        assert_eq!(g.edges().len(), 1);
        let e = &g.edges()[0];
        assert_eq!(e.strength, 2.0);
        assert_eq!(e.chunk_id.as_deref(), Some("c1"));
        assert_eq!(stats.dropped_self_loops, 1);
        assert_eq!(g.adjacency(), &[vec![1], vec![0]]);
    }

    #[test]
    fn similarity_edges_threshold_is_strict() {
        let nodes = vec![
            node_with(0, "a", vec![1.0, 0.0]),
            node_with(1, "b", vec![1.0, 0.0]),
            node_with(2, "c", vec![0.0, 1.0]),
            node_with(3, "d", vec![0.8, 0.6]),
        ];
        let mut g = KnowledgeGraph::from_parts(nodes, vec![]).unwrap();
        let added = augment_similarity_edges(&mut g, 0.8).unwrap();
        // a-b identical; a-d and b-d sit exactly at 0.8; c is orthogonal to
        // a and b and at 0.6 to d.
        assert_eq!(added, 1);
        let e = &g.edges()[0];
        assert_eq!((e.source, e.target, e.kind), (0, 1, EdgeKind::Augmented));
        assert_eq!(e.description, AUGMENTED_DESCRIPTION);
        assert_eq!(augment_similarity_edges(&mut g, 0.8).unwrap(), 0);
        assert_eq!(g.edges().len(), 1);
        assert!(augment_similarity_edges(&mut g, 1.0).is_err());
    }

    #[test]
    fn augmentation_keeps_extracted_edges() {
        let mut g = KnowledgeGraph::from_parts(
            vec![node_with(0, "a", vec![1.0, 0.0]), node_with(1, "b", vec![1.0, 0.01])],
            vec![RelationEdge {
                source: 1,
                target: 0,
                description: "x".into(),
                strength: 3.0,
                kind: EdgeKind::Extracted,
                chunk_id: Some("c".into()),
            }],
        )
        .unwrap();
        assert_eq!(augment_similarity_edges(&mut g, 0.8).unwrap(), 1);
        assert_eq!(g.count_edges(EdgeKind::Extracted), 1);
        assert_eq!(g.count_edges(EdgeKind::Augmented), 1);
        assert_eq!(g.adjacency(), &[vec![1], vec![0]]);
    }

    fn graph_for_matching() -> KnowledgeGraph {
        let (g, _) = build_graph(&[rec(
            "c",
            vec![
                ent("acme corporation", "ORG"),
                ent("Acme", "ORG"),
                ent("CEO", "ROLE"),
                ent("Paris", "LOC"),
            ],
            vec![],
        )]);
        g
    }

    fn qa(q: &str, a: &str) -> QaPair {
        QaPair {
            id: "q".into(),
            doc_id: "d".into(),
            question: q.into(),
            answer: a.into(),
        }
    }

    #[test]
    fn match_full_answer_string() {
        let g = graph_for_matching();
        let m = match_entities(&qa("who?", "Acme Corporation"), &g, None).unwrap();
        let names: Vec<&str> = m.iter().map(|s| g.nodes()[s.node].name.as_str()).collect();
        assert_eq!(names, vec!["acme corporation"]);
        assert_eq!(m[0].source, MatchSource::Answer);
    }

    #[test]
    fn match_answer_spans_and_question() {
        let g = graph_for_matching();
        let m = match_entities(&qa("Is it in Paris?", "the CEO of Acme"), &g, None).unwrap();
        let got: Vec<(&str, MatchSource)> = m.iter().map(|s| (g.nodes()[s.node].name.as_str(), s.source)).collect();
        assert_eq!(
            got,
            vec![
                ("Acme", MatchSource::Answer),
                ("CEO", MatchSource::Answer),
                ("Paris", MatchSource::Question)
            ]
        );
    }

    #[test]
    fn no_overlap_gives_empty_or_fallback() {
        let mut g = graph_for_matching();
        let e = HashingEmbedder::new(1024, 0);
        embed_nodes(&mut g, &e, 8).unwrap();
        let m = match_entities(&qa("what?", "zebra"), &g, Some(&e)).unwrap();
        assert!(m.is_empty());
        // No exact name, but 15 of the 16 trigrams of "acme corporation" are
        // shared: cosine 15 / sqrt(16 * 17) = 0.91 when nothing collides.
        let m = match_entities(&qa("what?", "acme corporations"), &g, Some(&e)).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(g.nodes()[m[0].node].name, "acme corporation");
        assert_eq!(m[0].source, MatchSource::AnswerEmbedding);
    }

    #[test]
    fn graph_round_trip_is_byte_identical() {
        let (mut g, _) = build_graph(&[
            rec(
                "c1",
                vec![ent("Alice", "PERSON"), ent("Acme", "ORG")],
                vec![rel("Alice", "Acme")],
            ),
            rec("c2", vec![ent("Acme Corp", "ORG")], vec![]),
        ]);
        embed_nodes(&mut g, &HashingEmbedder::new(16, 1), 2).unwrap();
        augment_similarity_edges(&mut g, 0.5).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        save_graph(a.path(), &g, Some(0.5)).unwrap();
        let (loaded, m) = load_graph(a.path()).unwrap();
        assert_eq!(loaded, g);
        assert_eq!(m.tau, Some(0.5));
        save_graph(b.path(), &loaded, Some(0.5)).unwrap();
        for f in [NODES_FILE, EDGES_FILE, GRAPH_MANIFEST_FILE] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap()
            );
        }
    }

    fn arb_records() -> impl Strategy<Value = Vec<ExtractionRecord>> {
        let names = prop::sample::select(vec!["Alpha", "alpha", "Beta", "Gamma", "DELTA", "delta", "Eps"]);
        let entity = names.clone().prop_map(|n| ent(n, "X"));
        let relation = (names.clone(), names).prop_map(|(a, b)| rel(a, b));
        prop::collection::vec(
            (
                prop::collection::vec(entity, 0..4),
                prop::collection::vec(relation, 0..4),
            ),
            0..6,
        )
        .prop_map(|parts| {
            parts
                .into_iter()
                .enumerate()
                .map(|(i, (e, r))| rec(&format!("c{i}"), e, r))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn build_is_permutation_invariant(records in arb_records(), seed in any::<u64>()) {
            let mut shuffled = records.clone();
            let n = shuffled.len();
            for i in (1..n).rev() {
                let j = (seed.rotate_left(i as u32) as usize) % (i + 1);
                shuffled.swap(i, j);
            }
            let (a, sa) = build_graph(&records);
            let (b, sb) = build_graph(&shuffled);
            prop_assert_eq!(a, b);
            prop_assert_eq!(sa, sb);
        }

        #[test]
        fn extracted_edges_trace_to_chunks(records in arb_records()) {
            let (g, _) = build_graph(&records);
            for e in g.edges() {
                let c = e.chunk_id.as_ref().unwrap();
                let rec = records.iter().find(|r| &r.chunk_id == c).unwrap();
                let s = normalize_name(&g.nodes()[e.source].name);
                let t = normalize_name(&g.nodes()[e.target].name);
                let in_rec = rec.relations.iter().any(|r| {
                    let (a, b) = (normalize_name(&r.source), normalize_name(&r.target));
                    (a == s && b == t) || (a == t && b == s)
                });
                prop_assert!(in_rec);
            }
        }

        #[test]
        fn augmentation_is_idempotent(vs in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 4), 1..12)) {
            let nodes: Vec<EntityNode> = vs
                .into_iter()
                .enumerate()
                .map(|(i, mut v)| { v[0] += 2.0; node_with(i, &format!("n{i}"), v) })
                .collect();
            let mut g = KnowledgeGraph::from_parts(nodes, vec![]).unwrap();
            augment_similarity_edges(&mut g, 0.8).unwrap();
            let once = g.clone();
            prop_assert_eq!(augment_similarity_edges(&mut g, 0.8).unwrap(), 0);
            prop_assert_eq!(g, once);
        }
    }
}
