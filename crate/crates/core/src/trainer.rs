//! Linear adapter over frozen embeddings trained with InfoNCE.
//!
//! The adapted embedding of `v` is `normalize(W v)` and similarity is the
//! cosine of adapted vectors. Gradients are derived by hand through the
//! normalization, so training is exact and reproducible.

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::Embedder;
use crate::curriculum::StageDataset;
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::io::{stable_hash64, write_atomic};
use crate::retriever::EmbeddingIndex;

const ADAPTER_MAGIC: &[u8; 4] = b"RTAD";
const ADAPTER_VERSION: u32 = 1;

/// A `d x d` linear map with the contrastive temperature and lineage.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapter {
    dim: usize,
    /// Row-major.
    weights: Vec<f32>,
    temperature: f64,
    seed: u64,
    parent: [u8; 32],
}

impl Adapter {
    pub fn identity(dim: usize, temperature: f64, seed: u64) -> Self {
        let mut weights = vec![0f32; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        Self {
            dim,
            weights,
            temperature,
            seed,
            parent: [0; 32],
        }
    }

    pub fn from_weights(dim: usize, weights: Vec<f32>, temperature: f64, seed: u64) -> Result<Self> {
        if weights.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: weights.len(),
            });
        }
        Ok(Self {
            dim,
            weights,
            temperature,
            seed,
            parent: [0; 32],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn weights_f64(&self) -> Vec<f64> {
        self.weights.iter().map(|&w| w as f64).collect()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Hash of the checkpoint this adapter was trained from; `None` for a
    /// fresh adapter.
    pub fn parent(&self) -> Option<String> {
        (self.parent != [0; 32]).then(|| hex::encode(self.parent))
    }

    /// `W v` in double precision.
    pub fn project(&self, v: &[f32]) -> Vec<f64> {
        project(&self.weights_f64(), self.dim, v)
    }

    /// Cosine of the adapted vectors; 0 (with a warning) when either
    /// projects to zero.
    pub fn similarity(&self, q: &[f32], t: &[f32]) -> f64 {
        let w = self.weights_f64();
        let (Some(a), Some(b)) = (unit(project(&w, self.dim, q)), unit(project(&w, self.dim, t))) else {
            log::warn!("adapter maps a vector to zero; similarity defined as 0");
            return 0.0;
        };
        dot64(&a, &b)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.weights.len() * 4 + 48);
        out.extend_from_slice(ADAPTER_MAGIC);
        out.extend_from_slice(&ADAPTER_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.extend_from_slice(&self.temperature.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.parent);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |message: String| Error::Format {
            what: "adapter checkpoint",
            message,
        };
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok_or_else(|| bad("truncated header".into()))? != ADAPTER_MAGIC {
            return Err(bad("bad magic bytes".into()));
        }
        let version = r.u32().ok_or_else(|| bad("truncated header".into()))?;
        if version != ADAPTER_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let dim = r.u32().ok_or_else(|| bad("truncated header".into()))? as usize;
        let expected = 12 + dim * dim * 4 + 8 + 8 + 32;
        if bytes.len() != expected {
            return Err(bad(format!(
                "expected {expected} bytes for d={dim}, found {}",
                bytes.len()
            )));
        }
        let weights = (0..dim * dim).map(|_| r.f32().expect("length checked")).collect();
        let temperature = f64::from_le_bytes(r.take(8).expect("length checked").try_into().unwrap());
        let seed = u64::from_le_bytes(r.take(8).expect("length checked").try_into().unwrap());
        let parent: [u8; 32] = r.take(32).expect("length checked").try_into().unwrap();
        Ok(Self {
            dim,
            weights,
            temperature,
            seed,
            parent,
        })
    }

    /// SHA-256 of the checkpoint bytes, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(self.hash_bytes())
    }

    fn hash_bytes(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    pub fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    pub fn f32(&mut self) -> Option<f32> {
        Some(f32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }
}

fn project(w: &[f64], d: usize, v: &[f32]) -> Vec<f64> {
    assert_eq!(v.len(), d, "vector dimension does not match the adapter");
    (0..d)
        .map(|i| {
            let row = &w[i * d..(i + 1) * d];
            row.iter().zip(v).map(|(&a, &b)| a * b as f64).sum()
        })
        .collect()
}

fn norm64(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `v / |v|`, or `None` for a zero vector.
pub(crate) fn unit(v: Vec<f64>) -> Option<Vec<f64>> {
    let n = norm64(&v);
    (n > 0.0 && n.is_finite()).then(|| v.into_iter().map(|x| x / n).collect())
}

/// Loss of one example: `log sum_j exp(s_j) - s_0` with `s_j` the adapted
/// cosine to candidate `j` over `temperature`; candidate 0 is the positive.
pub fn infonce_loss(weights: &[f64], dim: usize, query: &[f32], candidates: &[&[f32]], temperature: f64) -> f64 {
    forward_pass(weights, dim, query, candidates, temperature).loss
}

struct Pass {
    loss: f64,
    /// Adapted query direction and norm.
    q_hat: Vec<f64>,
    q_norm: f64,
    /// Per candidate: adapted direction, norm, cosine.
    c_hat: Vec<Vec<f64>>,
    c_norm: Vec<f64>,
    cos: Vec<f64>,
    probs: Vec<f64>,
    degenerate: bool,
}

fn forward_pass(w: &[f64], d: usize, query: &[f32], candidates: &[&[f32]], tau: f64) -> Pass {
    assert!(!candidates.is_empty(), "InfoNCE needs a positive candidate");
    let u = project(w, d, query);
    let q_norm = norm64(&u);
    let mut degenerate = q_norm == 0.0;
    let q_hat: Vec<f64> = if q_norm > 0.0 {
        u.iter().map(|x| x / q_norm).collect()
    } else {
        vec![0.0; d]
    };
    let mut c_hat = Vec::with_capacity(candidates.len());
    let mut c_norm = Vec::with_capacity(candidates.len());
    let mut cos = Vec::with_capacity(candidates.len());
    for c in candidates {
        let v = project(w, d, c);
        let n = norm64(&v);
        let h: Vec<f64> = if n > 0.0 {
            v.iter().map(|x| x / n).collect()
        } else {
            degenerate = true;
            vec![0.0; d]
        };
        cos.push(dot64(&q_hat, &h));
        c_hat.push(h);
        c_norm.push(n);
    }
    let s: Vec<f64> = cos.iter().map(|c| c / tau).collect();
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = s.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = (max + z.ln() - s[0]).max(0.0);
    let probs = exps.iter().map(|e| e / z).collect();
    Pass {
        loss,
        q_hat,
        q_norm,
        c_hat,
        c_norm,
        cos,
        probs,
        degenerate,
    }
}

/// Adds `scale * dL/dW` for one example into `grad` (row-major `d x d`)
/// and returns the loss.
///
/// With `p` the softmax over candidates, `dL/ds_j = p_j - [j = 0]`. For
/// `cos = <u/|u|, w/|w|>` the cosine's gradient is `(w_hat - cos u_hat)/|u|`
/// in `u` and `(u_hat - cos w_hat)/|w|` in `w`; chaining through `u = W q`
/// and `w = W c` gives outer products with `q` and `c`.
pub fn accumulate_gradient(
    weights: &[f64],
    dim: usize,
    query: &[f32],
    candidates: &[&[f32]],
    temperature: f64,
    scale: f64,
    grad: &mut [f64],
) -> f64 {
    let p = forward_pass(weights, dim, query, candidates, temperature);
    if p.degenerate {
        log::warn!("adapter maps an example vector to zero; its gradient is skipped");
        return p.loss;
    }
    let mut gu = vec![0.0; dim];
    for (j, c) in candidates.iter().enumerate() {
        let g = (p.probs[j] - if j == 0 { 1.0 } else { 0.0 }) / temperature * scale;
        if g == 0.0 {
            continue;
        }
        let cos = p.cos[j];
        for ((slot, &ch), &qh) in gu.iter_mut().zip(&p.c_hat[j]).zip(&p.q_hat) {
            *slot += g * (ch - cos * qh) / p.q_norm;
        }
        let inv = 1.0 / p.c_norm[j];
        for r in 0..dim {
            let b = g * (p.q_hat[r] - cos * p.c_hat[j][r]) * inv;
            if b == 0.0 {
                continue;
            }
            let row = &mut grad[r * dim..(r + 1) * dim];
            for (slot, &x) in row.iter_mut().zip(c.iter()) {
                *slot += b * x as f64;
            }
        }
    }
    for r in 0..dim {
        let a = gu[r];
        if a == 0.0 {
            continue;
        }
        let row = &mut grad[r * dim..(r + 1) * dim];
        for (slot, &x) in row.iter_mut().zip(query.iter()) {
            *slot += a * x as f64;
        }
    }
    p.loss
}

fn default_epochs() -> usize {
    10
}
fn default_batch() -> usize {
    2
}
fn default_accumulation() -> usize {
    8
}
fn default_lr() -> f64 {
    6e-6
}
fn default_temperature() -> f64 {
    0.05
}
fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Mini-batches per parameter update.
    #[serde(default = "default_accumulation")]
    pub accumulation: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Also use other positives in the mini-batch as negatives in stages
    /// 2 and 3.
    #[serde(default)]
    pub in_batch_mixing: bool,
    /// Compute per-example gradients in parallel; the sum is still taken
    /// in example order.
    #[serde(default)]
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: default_batch(),
            accumulation: default_accumulation(),
            learning_rate: default_lr(),
            temperature: default_temperature(),
            seed: default_seed(),
            in_batch_mixing: false,
            parallel: false,
        }
    }
}

impl TrainConfig {
    pub fn problems(&self, prefix: &str) -> Vec<String> {
        let mut p = Vec::new();
        if self.batch_size == 0 {
            p.push(format!("{prefix}.batch_size: must be >= 1"));
        }
        if self.accumulation == 0 {
            p.push(format!("{prefix}.accumulation: must be >= 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            p.push(format!("{prefix}.learning_rate: must be finite and >= 0"));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            p.push(format!("{prefix}.temperature: must be > 0"));
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems("trainer");
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigFields(p))
        }
    }
}

/// A stage example with its vectors looked up.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedExample {
    pub query_text: String,
    pub query: Embedding,
    pub positive_id: String,
    pub positive: Embedding,
    pub negatives: Vec<Embedding>,
}

/// Embeds distinct query texts and looks chunk vectors up in `index`.
pub fn resolve_examples(
    dataset: &StageDataset,
    embedder: &dyn Embedder,
    index: &EmbeddingIndex,
) -> Result<Vec<ResolvedExample>> {
    let mut texts: Vec<&str> = dataset.examples.iter().map(|e| e.query.as_str()).collect();
    texts.sort_unstable();
    texts.dedup();
    let mut vecs: HashMap<&str, Embedding> = HashMap::with_capacity(texts.len());
    for part in texts.chunks(64) {
        for (t, v) in part.iter().zip(embedder.embed(part)?) {
            if v.dim() != index.dim() {
                return Err(Error::DimensionMismatch {
                    expected: index.dim(),
                    found: v.dim(),
                });
            }
            vecs.insert(t, v);
        }
    }
    let row = |id: &str| -> Result<Embedding> {
        index
            .row_of(id)
            .map(|v| Embedding::from_unit(v.to_vec()))
            .ok_or_else(|| Error::Precondition(format!("chunk {id} is not in the index")))?
    };
    dataset
        .examples
        .iter()
        .map(|e| {
            Ok(ResolvedExample {
                query_text: e.query.clone(),
                query: vecs[e.query.as_str()].clone(),
                positive_id: e.positive_id.clone(),
                positive: row(&e.positive_id)?,
                negatives: e.negative_ids.iter().map(|n| row(n)).collect::<Result<_>>()?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: u8,
    pub examples: usize,
    /// Mean example loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    pub wall_ms: u64,
    pub input_checkpoint: String,
    pub output_checkpoint: String,
}

fn epoch_rng(seed: u64, stage: u8, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stable_hash64(&[
        &seed.to_le_bytes(),
        &[stage],
        &(epoch as u64).to_le_bytes(),
    ]))
}

/// Candidate list for example `i` of a mini-batch: its positive, then its
/// mined negatives (stages 2 and 3), then other positives in the batch
/// (stage 1, or with mixing enabled) unless they share the chunk or the
/// query text.
fn candidates<'a>(
    examples: &'a [ResolvedExample],
    batch: &[usize],
    i: usize,
    stage: u8,
    mixing: bool,
) -> Vec<&'a [f32]> {
    let ex = &examples[i];
    let mut out: Vec<&[f32]> = vec![ex.positive.as_slice()];
    if stage != 1 {
        out.extend(ex.negatives.iter().map(Embedding::as_slice));
    }
    if stage == 1 || mixing {
        for &o in batch {
            let other = &examples[o];
            if o != i && other.positive_id != ex.positive_id && other.query_text != ex.query_text {
                out.push(other.positive.as_slice());
            }
        }
    }
    out
}

/// Trains one curriculum stage. For stages 2 and 3 the dataset must have
/// been mined with exactly this adapter.
pub fn train_stage(
    adapter: &Adapter,
    dataset: &StageDataset,
    examples: &[ResolvedExample],
    cfg: &TrainConfig,
) -> Result<(Adapter, TrainReport)> {
    cfg.validate()?;
    let stage = dataset.stage;
    if !(1..=3).contains(&stage) {
        return Err(Error::Precondition(format!("stage must be 1, 2 or 3, got {stage}")));
    }
    let input_hash = adapter.hash();
    if let Some(expected) = &dataset.manifest.checkpoint {
        if *expected != input_hash {
            return Err(Error::CurriculumOrder {
                stage,
                expected: expected.clone(),
                found: input_hash,
            });
        }
    } else if stage > 1 {
        return Err(Error::CurriculumOrder {
            stage,
            expected: "<none recorded>".into(),
            found: input_hash,
        });
    }
    if examples.len() != dataset.examples.len() {
        return Err(Error::Precondition("resolved examples do not match the dataset".into()));
    }
    let started = Instant::now();
    let d = adapter.dim();
    let mut next = adapter.clone();
    let mut report = TrainReport {
        stage,
        examples: examples.len(),
        epoch_losses: Vec::new(),
        steps: 0,
        wall_ms: 0,
        input_checkpoint: input_hash.clone(),
        output_checkpoint: String::new(),
    };
    if examples.is_empty() {
        log::warn!("stage {stage} dataset is empty; adapter passes through unchanged");
    }
    if let Some(bad) = examples.iter().find(|e| e.query.dim() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: bad.query.dim(),
        });
    }
    let window = cfg.batch_size * cfg.accumulation;
    let tau = cfg.temperature;
    for epoch in 0..if examples.is_empty() { 0 } else { cfg.epochs } {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut epoch_rng(cfg.seed, stage, epoch));
        let mut epoch_loss = 0.0;
        for win in order.chunks(window) {
            let w64 = next.weights_f64();
            let scale = 1.0 / win.len() as f64;
            let jobs: Vec<(usize, Vec<usize>)> = win
                .chunks(cfg.batch_size)
                .flat_map(|batch| batch.iter().map(move |&i| (i, batch.to_vec())))
                .collect();
            let per_example = |(i, batch): &(usize, Vec<usize>)| {
                let cands = candidates(examples, batch, *i, stage, cfg.in_batch_mixing);
                let mut g = vec![0.0; d * d];
                let loss = accumulate_gradient(&w64, d, examples[*i].query.as_slice(), &cands, tau, scale, &mut g);
                (loss, g)
            };
            let results: Vec<(f64, Vec<f64>)> = if cfg.parallel {
                jobs.par_iter().map(per_example).collect()
            } else {
                jobs.iter().map(per_example).collect()
            };
            let mut grad = vec![0.0; d * d];
            for (loss, g) in &results {
                epoch_loss += loss;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            let updated: Vec<f32> = w64
                .iter()
                .zip(&grad)
                .map(|(w, g)| (w - cfg.learning_rate * g) as f32)
                .collect();
            next.weights = updated;
            report.steps += 1;
        }
        report.epoch_losses.push(epoch_loss / examples.len() as f64);
    }
    next.temperature = cfg.temperature;
    next.seed = cfg.seed;
    next.parent = adapter.hash_bytes();
    report.output_checkpoint = next.hash();
    report.wall_ms = started.elapsed().as_millis() as u64;
    Ok((next, report))
}

/// Trains the three stages in order, checking that each later dataset was
/// mined with the adapter produced by the stage before it. Checkpoints are
/// written to `checkpoint_dir` as `stage{n}.adapter` when given.
pub fn run_curriculum(
    adapter: &Adapter,
    stages: [(&StageDataset, &[ResolvedExample]); 3],
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(Adapter, Vec<TrainReport>)> {
    let mut current = adapter.clone();
    let mut reports = Vec::with_capacity(3);
    for (n, (dataset, examples)) in stages.into_iter().enumerate() {
        let expected = n as u8 + 1;
        if dataset.stage != expected {
            return Err(Error::Precondition(format!(
                "curriculum slot {expected} holds a stage-{} dataset",
                dataset.stage
            )));
        }
        let (next, report) = train_stage(&current, dataset, examples, cfg)?;
        if let Some(dir) = checkpoint_dir {
            next.save(&dir.join(format!("stage{expected}.adapter")))?;
        }
        current = next;
        reports.push(report);
    }
    Ok((current, reports))
}
