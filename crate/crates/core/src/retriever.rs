//! Exact cosine top-k retrieval over chunk embeddings, optionally through
//! an adapter.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::Embedder;
use crate::corpus::Chunk;
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::io::{read_json, write_atomic, write_json};
use crate::trainer::{unit, Adapter, Reader};

const INDEX_MAGIC: &[u8; 4] = b"RTIX";
const INDEX_VERSION: u32 = 1;
pub const INDEX_FILE: &str = "index.bin";
pub const INDEX_MANIFEST_FILE: &str = "index.json";

/// Sidecar describing how an index was built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub embedder_id: String,
    pub dim: usize,
    pub count: usize,
}

/// Chunk ids in ascending order with their unit base embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    ids: Vec<String>,
    dim: usize,
    /// Row-major `count x dim`.
    rows: Vec<f32>,
    embedder_id: String,
    positions: HashMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub chunk_id: String,
    pub similarity: f64,
}

impl EmbeddingIndex {
    /// Builds from `(id, embedding)` pairs in any order.
    pub fn from_rows(mut entries: Vec<(String, Embedding)>, embedder_id: impl Into<String>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Precondition("cannot build an index over zero chunks".into()));
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::Precondition(format!("duplicate chunk id {}", w[0].0)));
        }
        let dim = entries[0].1.dim();
        let mut ids = Vec::with_capacity(entries.len());
        let mut rows = Vec::with_capacity(entries.len() * dim);
        for (id, e) in entries {
            if e.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: e.dim(),
                });
            }
            ids.push(id);
            rows.extend_from_slice(e.as_slice());
        }
        Ok(Self::assemble(ids, dim, rows, embedder_id.into()))
    }

    fn assemble(ids: Vec<String>, dim: usize, rows: Vec<f32>, embedder_id: String) -> Self {
        let positions = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Self {
            ids,
            dim,
            rows,
            embedder_id,
            positions,
        }
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_of(&self, id: &str) -> Option<&[f32]> {
        self.positions.get(id).map(|&i| self.row(i))
    }

    pub fn manifest(&self) -> IndexManifest {
        IndexManifest {
            embedder_id: self.embedder_id.clone(),
            dim: self.dim,
            count: self.ids.len(),
        }
    }

    /// Precomputes (adapted) unit rows for repeated queries.
    pub fn searcher<'a>(&'a self, adapter: Option<&'a Adapter>) -> Result<Searcher<'a>> {
        if let Some(a) = adapter {
            if a.dim() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    found: a.dim(),
                });
            }
        }
        let rows = (0..self.len())
            .into_par_iter()
            .map(|i| transform(adapter, self.row(i)))
            .collect();
        Ok(Searcher {
            index: self,
            adapter,
            rows,
        })
    }

    /// Top-`k` for a query vector; see [`Searcher::search`].
    pub fn retrieve(&self, query: &[f32], k: usize, adapter: Option<&Adapter>) -> Result<Vec<Hit>> {
        self.searcher(adapter)?.search(query, k)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.rows.len() * 4);
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u32).to_le_bytes());
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        for x in &self.rows {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], embedder_id: impl Into<String>) -> Result<Self> {
        let bad = |message: &str| Error::Format {
            what: "embedding index",
            message: message.to_string(),
        };
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok_or_else(|| bad("truncated header"))? != INDEX_MAGIC {
            return Err(bad("bad magic bytes"));
        }
        let version = r.u32().ok_or_else(|| bad("truncated header"))?;
        if version != INDEX_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let dim = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
        let count = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.u32().ok_or_else(|| bad("truncated id table"))? as usize;
            let raw = r.take(n).ok_or_else(|| bad("truncated id table"))?;
            ids.push(String::from_utf8(raw.to_vec()).map_err(|_| bad("id is not UTF-8"))?);
        }
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("ids are not strictly ascending"));
        }
        if bytes.len() - r.pos != count * dim * 4 {
            return Err(bad("matrix size does not match the header"));
        }
        let rows = (0..count * dim).map(|_| r.f32().expect("length checked")).collect();
        Ok(Self::assemble(ids, dim, rows, embedder_id.into()))
    }

    /// Writes `index.bin` and `index.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join(INDEX_FILE), &self.to_bytes())?;
        write_json(&dir.join(INDEX_MANIFEST_FILE), &self.manifest())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(INDEX_FILE);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: IndexManifest = read_json(&dir.join(INDEX_MANIFEST_FILE))?;
        let index = Self::from_bytes(&bytes, manifest.embedder_id.clone())?;
        if index.manifest() != manifest {
            return Err(Error::Format {
                what: "embedding index",
                message: "manifest disagrees with the index file".into(),
            });
        }
        Ok(index)
    }
}

/// `normalize(W v)` in double precision, or `normalize(v)` without an
/// adapter. Both paths share the arithmetic, so the identity adapter gives
/// bit-identical scores.
fn transform(adapter: Option<&Adapter>, v: &[f32]) -> Option<Vec<f64>> {
    let projected = match adapter {
        Some(a) => a.project(v),
        None => v.iter().map(|&x| x as f64).collect(),
    };
    unit(projected)
}

/// An index view with rows already mapped through an optional adapter.
pub struct Searcher<'a> {
    index: &'a EmbeddingIndex,
    adapter: Option<&'a Adapter>,
    rows: Vec<Option<Vec<f64>>>,
}

impl Searcher<'_> {
    /// Exhaustive top-`k` by cosine, descending, ties by chunk id. `k`
    /// beyond the index size returns everything.
    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<Hit>> {
        self.search_filtered(query, k, |_| true)
    }

    /// As [`Self::search`] restricted to ids accepted by `keep`.
    pub fn search_filtered(&self, query: &[f32], k: usize, keep: impl Fn(&str) -> bool) -> Result<Vec<Hit>> {
        if k == 0 {
            return Err(Error::Precondition("k must be >= 1".into()));
        }
        if query.len() != self.index.dim {
            return Err(Error::DimensionMismatch {
                expected: self.index.dim,
                found: query.len(),
            });
        }
        let q = transform(self.adapter, query);
        if q.is_none() {
            log::warn!("query vector maps to zero; all similarities are 0");
        }
        let mut hits: Vec<(usize, f64)> = self
            .rows
            .iter()
            .enumerate()
            .filter(|(i, _)| keep(&self.index.ids[*i]))
            .map(|(i, row)| {
                let s = match (&q, row) {
                    (Some(q), Some(r)) => q.iter().zip(r).map(|(a, b)| a * b).sum(),
                    _ => 0.0,
                };
                (i, s)
            })
            .collect();
        // Rows are in id order, so ordering by row index breaks ties by id.
        let order = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        if k < hits.len() {
            hits.select_nth_unstable_by(k - 1, order);
            hits.truncate(k);
        }
        hits.sort_unstable_by(order);
        Ok(hits
            .into_iter()
            .map(|(i, similarity)| Hit {
                chunk_id: self.index.ids[i].clone(),
                similarity,
            })
            .collect())
    }
}

/// Embeds every chunk and builds the index.
pub fn build_index(chunks: &[Chunk], embedder: &dyn Embedder, batch: usize) -> Result<EmbeddingIndex> {
    if chunks.is_empty() {
        return Err(Error::Precondition("cannot build an index over zero chunks".into()));
    }
    let mut sorted: Vec<&Chunk> = chunks.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::Precondition(format!("duplicate chunk id {}", w[0].id)));
    }
    let mut entries = Vec::with_capacity(sorted.len());
    for part in sorted.chunks(batch.max(1)) {
        let texts: Vec<&str> = part.iter().map(|c| c.text.as_str()).collect();
        let vecs = embedder.embed(&texts)?;
        if vecs.len() != part.len() {
            return Err(Error::Backend {
                capability: crate::Capability::Embed,
                chunk_id: None,
                message: format!("asked for {} embeddings, got {}", part.len(), vecs.len()),
            });
        }
        for (c, v) in part.iter().zip(vecs) {
            if v.dim() != embedder.dim() {
                return Err(Error::DimensionMismatch {
                    expected: embedder.dim(),
                    found: v.dim(),
                });
            }
            entries.push((c.id.clone(), v));
        }
    }
    EmbeddingIndex::from_rows(entries, embedder.id())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::HashingEmbedder;
    use proptest::prelude::*;

    fn chunk(id: &str, text: &str) -> Chunk {
        Chunk {
            id: id.into(),
            doc_id: "d".into(),
            index: 0,
            text: text.into(),
            token_start: 0,
            token_end: 1,
        }
    }

    fn unit2(x: f32, y: f32) -> Embedding {
        Embedding::normalized(vec![x, y]).unwrap()
    }

    #[test]
    fn two_dim_fixture() {
        let idx = EmbeddingIndex::from_rows(
            vec![("e2".into(), unit2(0.0, 1.0)), ("e1".into(), unit2(1.0, 0.0))],
            "t",
        )
        .unwrap();
        assert_eq!(idx.ids(), ["e1", "e2"]);
        let hits = idx.retrieve(&[1.0, 0.0], 1, None).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].chunk_id, "e1");
        assert_eq!(hits[0].similarity, 1.0);
        assert_eq!(idx.retrieve(&[1.0, 0.0], 10, None).unwrap().len(), 2);
        assert!(idx.retrieve(&[1.0, 0.0], 0, None).is_err());
    }

    #[test]
    fn ties_break_by_id() {
        let idx = EmbeddingIndex::from_rows(
            vec![
                ("b".into(), unit2(1.0, 1.0)),
                ("a".into(), unit2(1.0, -1.0)),
                ("c".into(), unit2(0.0, 1.0)),
            ],
            "t",
        )
        .unwrap();
        let ids: Vec<String> = idx
            .retrieve(&[1.0, 0.0], 3, None)
            .unwrap()
            .into_iter()
            .map(|h| h.chunk_id)
            .collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn build_sorts_and_rejects_duplicates() {
        let e = HashingEmbedder::new(32, 0);
        let chunks = vec![chunk("c", "gamma"), chunk("a", "alpha"), chunk("b", "beta")];
        let idx = build_index(&chunks, &e, 2).unwrap();
        assert_eq!(idx.ids(), ["a", "b", "c"]);
        let again = build_index(&chunks, &e, 7).unwrap();
        assert_eq!(idx.to_bytes(), again.to_bytes());
        assert!(build_index(&[chunk("a", "x"), chunk("a", "y")], &e, 4).is_err());
        assert!(build_index(&[], &e, 4).is_err());
        let q = e.embed_one("beta").unwrap();
        let top = idx.retrieve(q.as_slice(), 1, None).unwrap();
        assert_eq!(top[0].chunk_id, "b");
        assert!((top[0].similarity - 1.0).abs() < 1e-6);
    }

    #[test]
    fn round_trip_bytes_and_files() {
        let e = HashingEmbedder::new(16, 3);
        let idx = build_index(&[chunk("x#00001", "one"), chunk("x#00000", "zero")], &e, 8).unwrap();
        let bytes = idx.to_bytes();
        let back = EmbeddingIndex::from_bytes(&bytes, idx.embedder_id()).unwrap();
        assert_eq!(back, idx);
        assert_eq!(back.to_bytes(), bytes);
        let dir = tempfile::tempdir().unwrap();
        idx.save(dir.path()).unwrap();
        assert_eq!(EmbeddingIndex::load(dir.path()).unwrap(), idx);
        assert!(EmbeddingIndex::from_bytes(&bytes[..bytes.len() - 2], "e").is_err());
    }

    fn random_index(seed: u64, n: usize, d: usize) -> EmbeddingIndex {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let entries = (0..n)
            .map(|i| {
                let v: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                (format!("c{i:03}"), Embedding::normalized(v).unwrap())
            })
            .collect();
        EmbeddingIndex::from_rows(entries, "rand").unwrap()
    }

    proptest! {
        #[test]
        fn identity_adapter_matches_base(seed in any::<u64>(), q in prop::collection::vec(-1.0f32..1.0, 8), k in 1usize..40) {
            prop_assume!(q.iter().any(|x| *x != 0.0));
            let idx = random_index(seed, 30, 8);
            let id = Adapter::identity(8, 0.05, 0);
            prop_assert_eq!(idx.retrieve(&q, k, None).unwrap(), idx.retrieve(&q, k, Some(&id)).unwrap());
        }

        #[test]
        fn matches_brute_force_and_scale(seed in any::<u64>(), q in prop::collection::vec(-1.0f32..1.0, 6), s in 0.01f32..100.0) {
            prop_assume!(q.iter().any(|x| *x != 0.0));
            let idx = random_index(seed, 25, 6);
            let got: Vec<String> = idx.retrieve(&q, 25, None).unwrap().into_iter().map(|h| h.chunk_id).collect();
            let mut brute: Vec<(String, f64)> = idx.ids().iter().enumerate()
                .map(|(i, id)| (id.clone(), crate::embedding::cosine(&q, idx.row(i))))
                .collect();
            brute.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            // Allow reorderings only among numerically equal scores.
            for (g, b) in got.iter().zip(&brute) {
                if g != &b.0 {
                    let sg = brute.iter().find(|x| &x.0 == g).unwrap().1;
                    prop_assert!((sg - b.1).abs() < 1e-12);
                }
            }
            let scaled: Vec<f32> = q.iter().map(|x| x * s).collect();
            let again: Vec<String> = idx.retrieve(&scaled, 25, None).unwrap().into_iter().map(|h| h.chunk_id).collect();
            prop_assert_eq!(got, again);
        }
    }
}
