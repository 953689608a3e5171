//! Pipeline configuration: one structured file covering every stage.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::alignment::AlignmentWeights;
use crate::backends::mock::{HashingEmbedder, MockExtractor, MockJudge, MockScorer, TemplateAugmenter};
use crate::backends::remote::{
    BackendConfig, RemoteAugmenter, RemoteEmbedder, RemoteExtractor, RemoteJudge, RemoteScorer,
};
use crate::backends::{Backends, PromptTemplates};
use crate::corpus::ChunkingConfig;
use crate::curriculum::{DEFAULT_MINE_K, DEFAULT_NEGATIVE_CAP, DEFAULT_QUERIES};
use crate::error::{Error, Result};
use crate::ppr::PprParams;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusPaths {
    pub documents: PathBuf,
    pub qa: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExtractorSpec {
    #[default]
    Mock,
    Remote(BackendConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorerSpec {
    Uniform {
        vocab: u32,
    },
    Hash {
        seed: u64,
    },
    #[default]
    ContainsAnswer,
    Remote(BackendConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderSpec {
    Hashing { dim: usize, seed: u64 },
    Remote(BackendConfig),
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec::Hashing { dim: 64, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugmenterSpec {
    #[default]
    Template,
    Remote(BackendConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JudgeSpec {
    #[default]
    Heuristic,
    Remote(BackendConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct BackendsConfig {
    pub extractor: ExtractorSpec,
    pub scorer: ScorerSpec,
    pub embedder: EmbedderSpec,
    pub augmenter: AugmenterSpec,
    pub judge: JudgeSpec,
    /// Directory of `<name>.txt` prompt overrides.
    pub prompts: Option<PathBuf>,
}

impl BackendsConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let mut remote = |cfg: &BackendConfig, name: &str| p.extend(cfg.problems(&format!("backends.{name}")));
        if let ExtractorSpec::Remote(c) = &self.extractor {
            remote(c, "extractor");
        }
        if let ScorerSpec::Remote(c) = &self.scorer {
            remote(c, "scorer");
        }
        if let EmbedderSpec::Remote(c) = &self.embedder {
            remote(c, "embedder");
        }
        if let AugmenterSpec::Remote(c) = &self.augmenter {
            remote(c, "augmenter");
        }
        if let JudgeSpec::Remote(c) = &self.judge {
            remote(c, "judge");
        }
        if let ScorerSpec::Uniform { vocab: 0 } = &self.scorer {
            p.push("backends.scorer.vocab: must be >= 1".into());
        }
        match &self.embedder {
            EmbedderSpec::Hashing { dim: 0, .. } => p.push("backends.embedder.dim: must be >= 1".into()),
            EmbedderSpec::Remote(c) if c.dim.is_none() => {
                p.push("backends.embedder.dim: required for remote embedders".into())
            }
            _ => {}
        }
        p
    }

    pub fn templates(&self) -> Result<PromptTemplates> {
        match &self.prompts {
            Some(dir) => PromptTemplates::with_overrides(dir),
            None => Ok(PromptTemplates::default()),
        }
    }

    pub fn build(&self) -> Result<Backends> {
        let t = self.templates()?;
        Ok(Backends {
            extractor: match &self.extractor {
                ExtractorSpec::Mock => Arc::new(MockExtractor),
                ExtractorSpec::Remote(c) => Arc::new(RemoteExtractor::new(c.clone(), t.clone())?),
            },
            scorer: match &self.scorer {
                ScorerSpec::Uniform { vocab } => Arc::new(MockScorer::Uniform { vocab: *vocab }),
                ScorerSpec::Hash { seed } => Arc::new(MockScorer::Hash { seed: *seed }),
                ScorerSpec::ContainsAnswer => Arc::new(MockScorer::ContainsAnswer),
                ScorerSpec::Remote(c) => Arc::new(RemoteScorer::new(c.clone())?),
            },
            embedder: match &self.embedder {
                EmbedderSpec::Hashing { dim, seed } => Arc::new(HashingEmbedder::new(*dim, *seed)),
                EmbedderSpec::Remote(c) => Arc::new(RemoteEmbedder::new(c.clone())?),
            },
            augmenter: match &self.augmenter {
                AugmenterSpec::Template => Arc::new(TemplateAugmenter),
                AugmenterSpec::Remote(c) => Arc::new(RemoteAugmenter::new(c.clone(), t.clone())?),
            },
            judge: match &self.judge {
                JudgeSpec::Heuristic => Arc::new(MockJudge),
                JudgeSpec::Remote(c) => Arc::new(RemoteJudge::new(c.clone(), t)?),
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KgConfig {
    /// Cosine threshold for similarity edges.
    pub tau: f64,
    pub embed_batch: usize,
}

impl Default for KgConfig {
    fn default() -> Self {
        Self {
            tau: 0.8,
            embed_batch: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PprConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub k_large: usize,
    pub k_small: usize,
}

impl Default for PprConfig {
    fn default() -> Self {
        Self {
            alpha: PprParams::LARGE.alpha,
            epsilon: PprParams::LARGE.epsilon,
            k_large: PprParams::LARGE.k,
            k_small: PprParams::SMALL.k,
        }
    }
}

impl PprConfig {
    pub fn large(&self) -> PprParams {
        PprParams {
            alpha: self.alpha,
            epsilon: self.epsilon,
            k: self.k_large,
        }
    }

    pub fn small(&self) -> PprParams {
        PprParams {
            k: self.k_small,
            ..self.large()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignmentConfig {
    pub forward: f64,
    pub backward: f64,
    pub vector: f64,
    /// Positive set size.
    pub positives: usize,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        let w = AlignmentWeights::default();
        Self {
            forward: w.forward,
            backward: w.backward,
            vector: w.vector,
            positives: 10,
        }
    }
}

impl AlignmentConfig {
    pub fn weights(&self) -> AlignmentWeights {
        AlignmentWeights {
            forward: self.forward,
            backward: self.backward,
            vector: self.vector,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumConfig {
    /// Augmented queries per subgraph size.
    pub queries: usize,
    /// Chunks retrieved per augmented query when mining.
    pub mine_k: usize,
    pub negative_cap: usize,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            queries: DEFAULT_QUERIES,
            mine_k: DEFAULT_MINE_K,
            negative_cap: DEFAULT_NEGATIVE_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { k: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub corpus: Option<CorpusPaths>,
    #[serde(default)]
    pub backends: BackendsConfig,
    #[serde(default)]
    pub chunking: ChunkingConfig,
    #[serde(default)]
    pub kg: KgConfig,
    #[serde(default)]
    pub ppr: PprConfig,
    #[serde(default)]
    pub alignment: AlignmentConfig,
    #[serde(default)]
    pub curriculum: CurriculumConfig,
    #[serde(default)]
    pub trainer: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_seed() -> u64 {
    42
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            output_dir: default_output(),
            corpus: None,
            backends: BackendsConfig::default(),
            chunking: ChunkingConfig::default(),
            kg: KgConfig::default(),
            ppr: PprConfig::default(),
            alignment: AlignmentConfig::default(),
            curriculum: CurriculumConfig::default(),
            trainer: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Every problem found, each naming its field.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.chunking.size <= self.chunking.overlap {
            p.push(format!(
                "chunking.size: must exceed chunking.overlap ({} <= {})",
                self.chunking.size, self.chunking.overlap
            ));
        }
        if !(self.kg.tau > 0.0 && self.kg.tau < 1.0) {
            p.push(format!("kg.tau: must be in (0, 1), got {}", self.kg.tau));
        }
        if self.kg.embed_batch == 0 {
            p.push("kg.embed_batch: must be >= 1".into());
        }
        p.extend(
            self.ppr
                .large()
                .problems("ppr")
                .into_iter()
                .map(|m| m.replacen("ppr.k:", "ppr.k_large:", 1)),
        );
        if self.ppr.k_small == 0 {
            p.push("ppr.k_small: must be >= 1".into());
        }
        p.extend(self.alignment.weights().problems("alignment"));
        if self.alignment.positives == 0 {
            p.push("alignment.positives: must be >= 1".into());
        }
        if self.curriculum.queries == 0 {
            p.push("curriculum.queries: must be >= 1".into());
        }
        if self.curriculum.mine_k == 0 {
            p.push("curriculum.mine_k: must be >= 1".into());
        }
        if self.curriculum.negative_cap == 0 {
            p.push("curriculum.negative_cap: must be >= 1".into());
        }
        p.extend(self.trainer.problems("trainer"));
        if self.eval.k == 0 {
            p.push("eval.k: must be >= 1".into());
        }
        p.extend(self.backends.problems());
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigFields(p))
        }
    }

    /// Resolves relative paths against `base` (the config file's folder).
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(c) = &mut self.corpus {
            fix(&mut c.documents);
            fix(&mut c.qa);
        }
        if let Some(dir) = &mut self.backends.prompts {
            fix(dir);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_values() {
        let c = PipelineConfig::default();
        assert_eq!((c.chunking.size, c.chunking.overlap), (512, 12));
        assert_eq!(c.kg.tau, 0.8);
        assert_eq!((c.ppr.alpha, c.ppr.epsilon, c.ppr.k_large), (0.85, 1e-4, 200));
        assert_eq!(
            (c.alignment.forward, c.alignment.backward, c.alignment.vector),
            (1.0, 0.3, 1.0)
        );
        assert_eq!(c.alignment.positives, 10);
        assert_eq!(
            (c.curriculum.queries, c.curriculum.mine_k, c.curriculum.negative_cap),
            (10, 20, 20)
        );
        let t = c.trainer;
        assert_eq!(
            (t.epochs, t.batch_size, t.accumulation, t.learning_rate),
            (10, 2, 8, 6e-6)
        );
        assert_eq!(t.temperature, 0.05);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn every_problem_is_reported() {
        let mut c = PipelineConfig::default();
        c.chunking.overlap = 600;
        c.ppr.alpha = 2.0;
        c.trainer.batch_size = 0;
        c.backends.embedder = EmbedderSpec::Remote(BackendConfig::new("ftp://x", ""));
        let p = c.problems();
        for field in [
            "chunking.size",
            "ppr.alpha",
            "trainer.batch_size",
            "backends.embedder.endpoint",
            "backends.embedder.model",
            "backends.embedder.dim",
        ] {
            assert!(p.iter().any(|m| m.starts_with(field)), "{field} missing from {p:?}");
        }
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let c = PipelineConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&s).unwrap(), c);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"bogus": 1}"#).is_err());
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"kg": {"tau": 0.5, "x": 1}}"#).is_err());
        let remote: PipelineConfig = serde_json::from_str(
            r#"{"backends": {"scorer": {"kind": "remote", "endpoint": "http://h", "model": "m"}}}"#,
        )
        .unwrap();
        assert!(matches!(remote.backends.scorer, ScorerSpec::Remote(_)));
    }
}
