//! File-based pipeline. Each step reads its inputs from the output
//! directory, writes its artifacts plus a manifest of hashes, and is a
//! verified no-op when config and inputs are unchanged.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::alignment::{rescore, select_positives, AlignmentWeights, ChunkScore, InvalidChunk};
use crate::backends::{Backends, PromptTemplates};
use crate::config::{AlignmentConfig, CorpusPaths, EmbedderSpec, PipelineConfig};
use crate::corpus::{load_chunks, save_chunks, Chunk, Corpus, QaPair, WordPunctTokenizer};
use crate::curriculum::{assemble_stage, AugmentedPool, Provenance, QaPositives, SizeClass, StageDataset};
use crate::error::{Error, Result};
use crate::evalx::{compute_win_rate, token_f1, Criterion, EvalQuery, EvalReport, JudgeVerdict, RetrievalMetrics};
use crate::io::{file_sha256, read_json, read_jsonl, sha256_hex, write_atomic, write_json, write_jsonl};
use crate::kg::{load_graph, save_graph, EDGES_FILE, GRAPH_MANIFEST_FILE, NODES_FILE};
use crate::pipeline::{
    align_all, augment_all, build_knowledge_graph, compute_subgraphs, evaluate_retrieval, extract_all, mine_all,
    queries_from_positives, GraphStats, QaSubgraphRecord,
};
use crate::retriever::{build_index, EmbeddingIndex, Hit, INDEX_FILE, INDEX_MANIFEST_FILE};
use crate::synthetic::{generate, SyntheticConfig};
use crate::trainer::{resolve_examples, train_stage, Adapter, TrainConfig};

pub const CORPUS_DOCUMENTS: &str = "corpus/documents.jsonl";
pub const CORPUS_QA: &str = "corpus/qa.jsonl";
pub const CHUNKS: &str = "chunks.jsonl";
pub const EXTRACTIONS: &str = "extractions.jsonl";
pub const GRAPH_DIR: &str = "graph";
pub const GRAPH_STATS: &str = "graph/stats.json";
pub const INDEX_DIR: &str = "index";
pub const SUBGRAPHS: &str = "subgraphs.jsonl";
pub const AUGMENTED: &str = "augmented.jsonl";
pub const SCORES: &str = "alignment/scores.jsonl";
pub const POSITIVES: &str = "alignment/positives.jsonl";
pub const INVALID: &str = "alignment/invalid.jsonl";
pub const SCORING: &str = "alignment/scoring.json";
pub const CURRICULUM_DIR: &str = "curriculum";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const REPORT_DIR: &str = "reports";
pub const EVAL_REPORT: &str = "eval/report.json";
pub const EVAL_SUMMARY: &str = "eval/summary.txt";
pub const MANIFEST_DIR: &str = "manifests";
pub const METRICS: &str = "metrics.json";

pub fn checkpoint_path(stage: u8) -> String {
    format!("{CHECKPOINT_DIR}/stage{stage}.adapter")
}

fn stage_files(stage: u8) -> [String; 2] {
    [
        format!("{CURRICULUM_DIR}/stage{stage}.jsonl"),
        format!("{CURRICULUM_DIR}/stage{stage}.json"),
    ]
}

fn graph_files() -> Vec<String> {
    [NODES_FILE, EDGES_FILE, GRAPH_MANIFEST_FILE]
        .iter()
        .map(|f| format!("{GRAPH_DIR}/{f}"))
        .collect()
}

fn index_files() -> Vec<String> {
    [INDEX_FILE, INDEX_MANIFEST_FILE]
        .iter()
        .map(|f| format!("{INDEX_DIR}/{f}"))
        .collect()
}

/// Hashes recorded after a step ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepManifest {
    pub step: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Ran,
    UpToDate,
}

/// A required input and the command that produces it.
struct Input {
    path: String,
    producer: String,
}

fn input(path: impl Into<String>, producer: impl Into<String>) -> Input {
    Input {
        path: path.into(),
        producer: producer.into(),
    }
}

/// One question with two candidate answers for the judge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerPair {
    pub qa_id: String,
    pub question: String,
    pub ground_truth: String,
    pub answer1: String,
    pub answer2: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalOptions {
    /// Retrieval queries; defaults to QA questions against their positives.
    pub queries: Option<PathBuf>,
    /// Answer pairs to judge and score with token F1 (answer 1).
    pub answers: Option<PathBuf>,
    /// Adapter checkpoint; defaults to the latest trained stage.
    pub adapter: Option<PathBuf>,
}

pub struct Workspace {
    config: PipelineConfig,
    backends: Backends,
    templates: PromptTemplates,
}

impl Workspace {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let backends = config.backends.build()?;
        Self::with_backends(config, backends)
    }

    /// Uses the given backends instead of building them from the config.
    pub fn with_backends(config: PipelineConfig, backends: Backends) -> Result<Self> {
        config.validate()?;
        let templates = config.backends.templates()?;
        Ok(Self {
            config,
            backends,
            templates,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn backends(&self) -> &Backends {
        &self.backends
    }

    pub fn root(&self) -> &Path {
        &self.config.output_dir
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root().join(rel)
    }

    fn manifest_path(&self, step: &str) -> PathBuf {
        self.path(&format!("{MANIFEST_DIR}/{}.json", step.replace(' ', "")))
    }

    fn hash_files(&self, files: &[String]) -> Result<BTreeMap<String, String>> {
        files
            .iter()
            .map(|f| Ok((f.clone(), file_sha256(&self.path(f))?)))
            .collect()
    }

    /// Checks prerequisites, skips when the manifest matches, otherwise
    /// runs `body` and records the new manifest.
    fn step(
        &self,
        name: &str,
        inputs: &[Input],
        outputs: &[String],
        config: Value,
        body: impl FnOnce() -> Result<()>,
    ) -> Result<StepStatus> {
        for i in inputs {
            if !self.path(&i.path).exists() {
                return Err(Error::MissingArtifact {
                    path: self.path(&i.path),
                    producer: i.producer.clone(),
                });
            }
        }
        let input_files: Vec<String> = inputs.iter().map(|i| i.path.clone()).collect();
        let manifest = StepManifest {
            step: name.to_string(),
            config_hash: sha256_hex(&serde_json::to_vec(&json!({ "step": name, "config": config })).expect("json")),
            seed: self.config.seed,
            inputs: self.hash_files(&input_files)?,
            outputs: BTreeMap::new(),
        };
        let mpath = self.manifest_path(name);
        if let Ok(old) = read_json::<StepManifest>(&mpath) {
            let same = old.config_hash == manifest.config_hash
                && old.inputs == manifest.inputs
                && old.seed == manifest.seed
                && outputs.iter().all(|o| self.path(o).exists())
                && self.hash_files(outputs).ok().as_ref() == Some(&old.outputs);
            if same {
                log::info!("{name}: up to date");
                return Ok(StepStatus::UpToDate);
            }
        }
        body()?;
        let manifest = StepManifest {
            outputs: self.hash_files(outputs)?,
            ..manifest
        };
        write_json(&mpath, &manifest)?;
        log::info!("{name}: done");
        Ok(StepStatus::Ran)
    }

    fn load_qas(&self) -> Result<Vec<QaPair>> {
        read_jsonl(&self.path(CORPUS_QA))
    }

    fn load_index(&self) -> Result<EmbeddingIndex> {
        let index = EmbeddingIndex::load(&self.path(INDEX_DIR))?;
        let expected = self.backends.embedder.id();
        if index.embedder_id() != expected {
            return Err(Error::Precondition(format!(
                "index was built with {} but the configured embedder is {expected}; rerun index",
                index.embedder_id()
            )));
        }
        Ok(index)
    }

    fn ingest_inputs(&self) -> Vec<Input> {
        vec![input(CHUNKS, "ingest")]
    }

    pub fn ingest(&self) -> Result<StepStatus> {
        let CorpusPaths { documents, qa } = self.config.corpus.clone().ok_or_else(|| {
            Error::ConfigFields(vec!["corpus: documents and qa paths are required for ingest".into()])
        })?;
        for p in [&documents, &qa] {
            if !p.exists() {
                return Err(Error::Config(format!("corpus file {} not found", p.display())));
            }
        }
        let config = json!({
            "chunking": self.config.chunking,
            "documents": file_sha256(&documents)?,
            "qa": file_sha256(&qa)?,
        });
        let outputs = [CORPUS_DOCUMENTS, CORPUS_QA, CHUNKS].map(String::from);
        self.step("ingest", &[], &outputs, config, || {
            let corpus = Corpus::load(&documents, &qa)?;
            corpus.save(&self.path(CORPUS_DOCUMENTS), &self.path(CORPUS_QA))?;
            let chunks = corpus.chunk_all(self.config.chunking, &WordPunctTokenizer)?;
            save_chunks(&self.path(CHUNKS), &chunks)
        })
    }

    pub fn build_kg(&self) -> Result<StepStatus> {
        let config = json!({
            "kg": self.config.kg,
            "extractor": self.backends.extractor.id(),
            "embedder": self.backends.embedder.id(),
        });
        let mut outputs = vec![EXTRACTIONS.to_string(), GRAPH_STATS.to_string()];
        outputs.extend(graph_files());
        self.step("build-kg", &self.ingest_inputs(), &outputs, config, || {
            let chunks = load_chunks(&self.path(CHUNKS))?;
            let records = extract_all(&chunks, self.backends.extractor.as_ref())?;
            write_jsonl(&self.path(EXTRACTIONS), &records)?;
            let (kg, stats) = build_knowledge_graph(
                &records,
                self.backends.embedder.as_ref(),
                self.config.kg.tau,
                self.config.kg.embed_batch,
            )?;
            save_graph(&self.path(GRAPH_DIR), &kg, Some(self.config.kg.tau))?;
            write_json(&self.path(GRAPH_STATS), &stats)
        })
    }

    pub fn index(&self) -> Result<StepStatus> {
        let config = json!({ "embedder": self.backends.embedder.id() });
        self.step("index", &self.ingest_inputs(), &index_files(), config, || {
            let chunks = load_chunks(&self.path(CHUNKS))?;
            build_index(&chunks, self.backends.embedder.as_ref(), 64)?.save(&self.path(INDEX_DIR))
        })
    }

    fn graph_inputs(&self) -> Vec<Input> {
        let mut v = vec![input(CORPUS_QA, "ingest")];
        v.extend(graph_files().into_iter().map(|f| input(f, "build-kg")));
        v
    }

    pub fn subgraph(&self) -> Result<StepStatus> {
        let config = json!({ "ppr": self.config.ppr, "embedder": self.backends.embedder.id() });
        self.step(
            "subgraph",
            &self.graph_inputs(),
            &[SUBGRAPHS.to_string()],
            config,
            || {
                let (kg, _) = load_graph(&self.path(GRAPH_DIR))?;
                let records = compute_subgraphs(
                    &self.load_qas()?,
                    &kg,
                    Some(self.backends.embedder.as_ref()),
                    self.config.ppr.large(),
                    self.config.ppr.small(),
                )?;
                write_jsonl(&self.path(SUBGRAPHS), &records)
            },
        )
    }

    pub fn augment(&self) -> Result<StepStatus> {
        let config = json!({
            "queries": self.config.curriculum.queries,
            "augmenter": self.backends.augmenter.id(),
            "template": self.templates.augment,
        });
        let mut inputs = self.graph_inputs();
        inputs.push(input(SUBGRAPHS, "subgraph"));
        self.step("augment", &inputs, &[AUGMENTED.to_string()], config, || {
            let (kg, _) = load_graph(&self.path(GRAPH_DIR))?;
            let subgraphs: Vec<QaSubgraphRecord> = read_jsonl(&self.path(SUBGRAPHS))?;
            let pools = augment_all(
                &self.load_qas()?,
                &kg,
                &subgraphs,
                self.config.curriculum.queries,
                self.backends.augmenter.as_ref(),
            )?;
            write_jsonl(&self.path(AUGMENTED), &pools)
        })
    }

    /// Hash of everything that determines the component scores, but not
    /// the weights.
    fn scoring_hash(&self) -> String {
        sha256_hex(
            &serde_json::to_vec(&json!({
                "scorer": self.backends.scorer.id(),
                "embedder": self.backends.embedder.id(),
                "forward": self.templates.forward,
                "backward": self.templates.backward,
            }))
            .expect("json"),
        )
    }

    /// Scores chunks and selects positives. Component scores are reused
    /// when only the weights or the positive count changed.
    pub fn align(&self, weights: Option<AlignmentWeights>) -> Result<StepStatus> {
        let mut acfg: AlignmentConfig = self.config.alignment;
        if let Some(w) = weights {
            acfg.forward = w.forward;
            acfg.backward = w.backward;
            acfg.vector = w.vector;
        }
        let scoring = self.scoring_hash();
        let config = json!({ "alignment": acfg, "scoring": scoring });
        let mut inputs = vec![input(CORPUS_QA, "ingest"), input(CHUNKS, "ingest")];
        inputs.extend(index_files().into_iter().map(|f| input(f, "index")));
        let outputs = [SCORES, POSITIVES, INVALID, SCORING].map(String::from);
        self.step("align", &inputs, &outputs, config, || {
            let qas = self.load_qas()?;
            let weights = acfg.weights();
            let cached: Option<String> = read_json::<Value>(&self.path(SCORING))
                .ok()
                .and_then(|v| v.get("scoring").and_then(Value::as_str).map(String::from));
            let (scores, positives, invalid) =
                if cached.as_deref() == Some(scoring.as_str()) && self.path(SCORES).exists() {
                    log::info!("align: reusing component scores with new weights");
                    let scores = rescore(&read_jsonl::<ChunkScore>(&self.path(SCORES))?, &weights);
                    let invalid: Vec<(String, InvalidChunk)> = read_jsonl(&self.path(INVALID))?;
                    let positives = positives_from_scores(&qas, &scores, acfg.positives)?;
                    (scores, positives, invalid)
                } else {
                    let chunks = load_chunks(&self.path(CHUNKS))?;
                    let out = align_all(
                        &qas,
                        &chunks,
                        &self.load_index()?,
                        &self.backends,
                        &self.templates,
                        weights,
                        acfg.positives,
                    )?;
                    (out.scores, out.positives, out.invalid)
                };
            if !invalid.is_empty() {
                log::warn!("align: {} chunks excluded after scoring failures", invalid.len());
            }
            write_jsonl(&self.path(SCORES), &scores)?;
            write_jsonl(&self.path(POSITIVES), &positives)?;
            write_jsonl(&self.path(INVALID), &invalid)?;
            write_json(&self.path(SCORING), &json!({ "scoring": scoring }))
        })
    }

    fn provenance(&self, config_hash: String) -> Provenance {
        Provenance {
            config_hash,
            backend_ids: self.backends.ids(),
            seed: self.config.seed,
        }
    }

    pub fn curriculum(&self, stage: u8) -> Result<StepStatus> {
        if !(1..=3).contains(&stage) {
            return Err(Error::Config(format!("stage must be 1, 2 or 3, got {stage}")));
        }
        let cc = self.config.curriculum;
        let config = json!({
            "stage": stage,
            "curriculum": cc,
            "embedder": self.backends.embedder.id(),
            "backends": self.backends.ids(),
        });
        let config_hash = sha256_hex(&serde_json::to_vec(&config).expect("json"));
        let mut inputs = vec![input(POSITIVES, "align")];
        if stage > 1 {
            inputs.push(input(AUGMENTED, "augment"));
            inputs.push(input(CHUNKS, "ingest"));
            inputs.extend(index_files().into_iter().map(|f| input(f, "index")));
            inputs.push(input(
                checkpoint_path(stage - 1),
                format!("train --stage {}", stage - 1),
            ));
        }
        let name = format!("curriculum-{stage}");
        self.step(&name, &inputs, &stage_files(stage), config, || {
            let positives: Vec<QaPositives> = read_jsonl(&self.path(POSITIVES))?;
            let prov = self.provenance(config_hash);
            let ds = if stage == 1 {
                assemble_stage(1, &positives, &BTreeMap::new(), cc.negative_cap, None, &prov)?
            } else {
                let adapter = Adapter::load(&self.path(&checkpoint_path(stage - 1)))?;
                let pools: Vec<AugmentedPool> = read_jsonl(&self.path(AUGMENTED))?;
                let size = if stage == 2 { SizeClass::L } else { SizeClass::S };
                let negatives = mine_all(
                    &positives,
                    &pools,
                    size,
                    &load_chunks(&self.path(CHUNKS))?,
                    &self.load_index()?,
                    self.backends.embedder.as_ref(),
                    &adapter,
                    cc.mine_k,
                    cc.negative_cap,
                )?;
                assemble_stage(
                    stage,
                    &positives,
                    &negatives,
                    cc.negative_cap,
                    Some(adapter.hash()),
                    &prov,
                )?
            };
            ds.save(&self.path(CURRICULUM_DIR))
        })
    }

    pub fn train(&self, stage: u8) -> Result<StepStatus> {
        if !(1..=3).contains(&stage) {
            return Err(Error::Config(format!("stage must be 1, 2 or 3, got {stage}")));
        }
        let tc: TrainConfig = self.config.trainer;
        let config = json!({ "stage": stage, "trainer": tc, "embedder": self.backends.embedder.id() });
        let mut inputs: Vec<Input> = stage_files(stage)
            .into_iter()
            .map(|f| input(f, format!("curriculum --stage {stage}")))
            .collect();
        inputs.extend(index_files().into_iter().map(|f| input(f, "index")));
        if stage > 1 {
            inputs.push(input(
                checkpoint_path(stage - 1),
                format!("train --stage {}", stage - 1),
            ));
        }
        let report_path = format!("{REPORT_DIR}/train-stage{stage}.json");
        let outputs = [checkpoint_path(stage), report_path.clone()];
        self.step(&format!("train-{stage}"), &inputs, &outputs, config, || {
            let index = self.load_index()?;
            let adapter = if stage == 1 {
                Adapter::identity(index.dim(), tc.temperature, tc.seed)
            } else {
                Adapter::load(&self.path(&checkpoint_path(stage - 1)))?
            };
            let ds = StageDataset::load(&self.path(CURRICULUM_DIR), stage)?;
            let resolved = resolve_examples(&ds, self.backends.embedder.as_ref(), &index)?;
            let (next, report) = train_stage(&adapter, &ds, &resolved, &tc)?;
            next.save(&self.path(&checkpoint_path(stage)))?;
            write_json(&self.path(&report_path), &report)
        })
    }

    /// The newest stage checkpoint on disk, if any.
    pub fn latest_checkpoint(&self) -> Option<PathBuf> {
        (1..=3u8)
            .rev()
            .map(|s| self.path(&checkpoint_path(s)))
            .find(|p| p.exists())
    }

    pub fn retrieve(&self, query: &str, k: usize, adapter: Option<&Path>) -> Result<Vec<Hit>> {
        for f in index_files() {
            if !self.path(&f).exists() {
                return Err(Error::MissingArtifact {
                    path: self.path(&f),
                    producer: "index".into(),
                });
            }
        }
        let index = self.load_index()?;
        let adapter = adapter.map(Adapter::load).transpose()?;
        let q = self.backends.embedder.embed_one(query)?;
        index.retrieve(q.as_slice(), k, adapter.as_ref())
    }

    pub fn eval(&self, opts: &EvalOptions) -> Result<(StepStatus, EvalReport)> {
        let mut inputs: Vec<Input> = index_files().into_iter().map(|f| input(f, "index")).collect();
        let mut external = Vec::new();
        match &opts.queries {
            Some(q) => external.push(q.clone()),
            None => inputs.push(input(POSITIVES, "align")),
        }
        external.extend(opts.answers.clone());
        let adapter = opts.adapter.clone().or_else(|| self.latest_checkpoint());
        external.extend(adapter.clone());
        for p in &external {
            if !p.exists() {
                return Err(Error::Config(format!("{} not found", p.display())));
            }
        }
        let ext_hashes = external
            .iter()
            .map(|p| Ok((p.display().to_string(), file_sha256(p)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let config = json!({
            "k": self.config.eval.k,
            "external": ext_hashes,
            "judge": self.backends.judge.id(),
            "embedder": self.backends.embedder.id(),
        });
        let outputs = [EVAL_REPORT, EVAL_SUMMARY].map(String::from);
        let status = self.step("eval", &inputs, &outputs, config, || {
            let index = self.load_index()?;
            let queries: Vec<EvalQuery> = match &opts.queries {
                Some(q) => read_jsonl(q)?,
                None => queries_from_positives(&read_jsonl(&self.path(POSITIVES))?),
            };
            let k = self.config.eval.k;
            let embedder = self.backends.embedder.as_ref();
            let mut report = EvalReport::default();
            report
                .retrieval
                .push(("base".into(), evaluate_retrieval(&queries, &index, embedder, None, k)?));
            if let Some(a) = &adapter {
                let a = Adapter::load(a)?;
                report.retrieval.push((
                    "adapted".into(),
                    evaluate_retrieval(&queries, &index, embedder, Some(&a), k)?,
                ));
            }
            if let Some(path) = &opts.answers {
                let pairs: Vec<AnswerPair> = read_jsonl(path)?;
                if !pairs.is_empty() {
                    report.mean_f1 = Some(
                        pairs
                            .iter()
                            .map(|p| token_f1(&p.answer1, &p.ground_truth).f1)
                            .sum::<f64>()
                            / pairs.len() as f64,
                    );
                    let verdicts = pairs
                        .iter()
                        .map(|p| {
                            let out =
                                self.backends
                                    .judge
                                    .judge(&p.question, &p.ground_truth, &p.answer1, &p.answer2)?;
                            Ok(JudgeVerdict {
                                qa_id: p.qa_id.clone(),
                                verdict: out.verdict,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    report.win_rates = Criterion::ALL
                        .iter()
                        .map(|&c| (c, compute_win_rate(&verdicts, c)))
                        .collect();
                }
            }
            write_json(&self.path(EVAL_REPORT), &report)?;
            write_atomic(&self.path(EVAL_SUMMARY), report.summary_table().as_bytes())
        })?;
        Ok((status, read_json(&self.path(EVAL_REPORT))?))
    }

    /// Every step in order, training each stage before mining the next.
    pub fn run_all(&self) -> Result<()> {
        self.ingest()?;
        self.build_kg()?;
        self.index()?;
        self.subgraph()?;
        self.augment()?;
        self.align(None)?;
        for stage in 1..=3 {
            self.curriculum(stage)?;
            self.train(stage)?;
        }
        Ok(())
    }
}

fn positives_from_scores(qas: &[QaPair], scores: &[ChunkScore], m: usize) -> Result<Vec<QaPositives>> {
    let mut by_qa: HashMap<&str, Vec<ChunkScore>> = HashMap::new();
    for s in scores {
        by_qa.entry(s.qa_id.as_str()).or_default().push(s.clone());
    }
    qas.iter()
        .map(|qa| {
            Ok(QaPositives {
                qa_id: qa.id.clone(),
                doc_id: qa.doc_id.clone(),
                question: qa.question.clone(),
                positives: select_positives(by_qa.get(qa.id.as_str()).map(Vec::as_slice).unwrap_or_default(), m)?,
            })
        })
        .collect()
}

/// Config used by the synthetic end-to-end run.
pub fn synthetic_config(seed: u64, output_dir: &Path) -> PipelineConfig {
    let syn = SyntheticConfig {
        seed,
        ..SyntheticConfig::default()
    };
    let mut cfg = PipelineConfig {
        seed,
        output_dir: output_dir.to_path_buf(),
        corpus: Some(CorpusPaths {
            documents: output_dir.join("synthetic/documents.jsonl"),
            qa: output_dir.join("synthetic/qa.jsonl"),
        }),
        chunking: syn.chunking(),
        ..PipelineConfig::default()
    };
    cfg.backends.embedder = EmbedderSpec::Hashing { dim: 256, seed };
    cfg.alignment.positives = 1;
    cfg.trainer.learning_rate = 0.1;
    cfg.trainer.seed = seed;
    cfg
}

pub const HELDOUT: &str = "synthetic/heldout.jsonl";

/// Outcome of the synthetic end-to-end run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2eMetrics {
    pub seed: u64,
    pub baseline: RetrievalMetrics,
    pub adapted: RetrievalMetrics,
    pub recall_gain: f64,
    /// QA pairs whose top positive is the planted chunk.
    pub planted_positives: usize,
    pub qa_pairs: usize,
    pub stage_examples: [usize; 3],
    pub disjointness_violations: usize,
    pub chain_valid: bool,
    pub adapter_sha256: String,
}

/// Generates the synthetic corpus under `output_dir`, runs every step and
/// evaluates held-out paraphrases against the planted chunks.
pub fn synthetic_e2e(seed: u64, output_dir: &Path) -> Result<E2eMetrics> {
    let cfg = synthetic_config(seed, output_dir);
    let syn = generate(&SyntheticConfig {
        seed,
        ..SyntheticConfig::default()
    })?;
    let paths = cfg.corpus.clone().expect("set by synthetic_config");
    syn.corpus.save(&paths.documents, &paths.qa)?;
    write_jsonl(&output_dir.join(HELDOUT), &syn.heldout)?;
    let ws = Workspace::new(cfg)?;
    ws.run_all()?;

    let positives: Vec<QaPositives> = read_jsonl(&ws.path(POSITIVES))?;
    let pos_map: BTreeMap<String, Vec<String>> = positives
        .iter()
        .map(|p| (p.qa_id.clone(), p.positives.clone()))
        .collect();
    let planted_positives = positives
        .iter()
        .filter(|p| p.positives.first() == syn.planted.get(&p.qa_id))
        .count();
    let mut violations = 0;
    let mut stage_examples = [0; 3];
    let mut datasets = Vec::new();
    for stage in 1..=3u8 {
        let ds = StageDataset::load(&ws.path(CURRICULUM_DIR), stage)?;
        violations += ds.disjointness_violations(&pos_map);
        stage_examples[stage as usize - 1] = ds.examples.len();
        datasets.push(ds);
    }
    let adapters = (1..=3u8)
        .map(|s| Adapter::load(&ws.path(&checkpoint_path(s))))
        .collect::<Result<Vec<_>>>()?;
    let chain_valid = verify_chain(&datasets, &adapters, ws.backends.embedder.dim(), &ws.config.trainer);

    let index = ws.load_index()?;
    let embedder = ws.backends.embedder.as_ref();
    let k = ws.config.eval.k;
    let baseline = evaluate_retrieval(&syn.heldout, &index, embedder, None, k)?;
    let adapted = evaluate_retrieval(&syn.heldout, &index, embedder, Some(&adapters[2]), k)?;
    let metrics = E2eMetrics {
        seed,
        recall_gain: adapted.recall_at_k - baseline.recall_at_k,
        baseline,
        adapted,
        planted_positives,
        qa_pairs: positives.len(),
        stage_examples,
        disjointness_violations: violations,
        chain_valid,
        adapter_sha256: file_sha256(&ws.path(&checkpoint_path(3)))?,
    };
    write_json(&ws.path(METRICS), &metrics)?;
    Ok(metrics)
}

/// Stage datasets 2 and 3 name the adapters trained on stages 1 and 2,
/// and each adapter names its predecessor as parent.
pub fn verify_chain(datasets: &[StageDataset], adapters: &[Adapter], dim: usize, tc: &TrainConfig) -> bool {
    if datasets.len() != 3 || adapters.len() != 3 {
        return false;
    }
    let start = Adapter::identity(dim, tc.temperature, tc.seed);
    let mut parent = start.hash();
    for (i, a) in adapters.iter().enumerate() {
        if a.parent().as_deref() != Some(parent.as_str()) {
            return false;
        }
        parent = a.hash();
        if i < 2 && datasets[i + 1].manifest.checkpoint.as_deref() != Some(a.hash().as_str()) {
            return false;
        }
    }
    datasets[0].manifest.checkpoint.is_none()
}

/// Reads the stored graph statistics.
pub fn graph_stats(ws: &Workspace) -> Result<GraphStats> {
    read_json(&ws.path(GRAPH_STATS))
}

/// Chunks as stored by ingest.
pub fn stored_chunks(ws: &Workspace) -> Result<Vec<Chunk>> {
    load_chunks(&ws.path(CHUNKS))
}
