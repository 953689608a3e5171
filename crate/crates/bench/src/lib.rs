//! Seeded fixtures for the kernel benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retune::embedding::Embedding;
use retune::ppr::TransitionMatrix;
use retune::retriever::EmbeddingIndex;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Connected random graph on `n` nodes with about `extra` non-tree edges.
pub fn graph(n: usize, extra: usize, seed: u64) -> TransitionMatrix {
    let mut rng = rng(seed);
    let mut adj = vec![Vec::new(); n];
    let add = |a: usize, b: usize, adj: &mut Vec<Vec<usize>>| {
        if a != b && !adj[a].contains(&b) {
            adj[a].push(b);
            adj[b].push(a);
        }
    };
    for v in 1..n {
        let u = rng.random_range(0..v);
        add(u, v, &mut adj);
    }
    for _ in 0..extra {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        add(a, b, &mut adj);
    }
    for l in &mut adj {
        l.sort_unstable();
    }
    TransitionMatrix::from_adjacency(&adj)
}

pub fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    Embedding::normalized(v).expect("nonzero").into_inner()
}

pub fn index(rows: usize, dim: usize, seed: u64) -> EmbeddingIndex {
    let mut rng = rng(seed);
    let rows = (0..rows)
        .map(|i| {
            (
                format!("c{i:06}"),
                Embedding::from_unit(unit(&mut rng, dim)).expect("unit"),
            )
        })
        .collect();
    EmbeddingIndex::from_rows(rows, "bench").expect("distinct ids")
}
