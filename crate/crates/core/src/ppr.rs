//! Personalized PageRank by power iteration over the undirected graph view,
//! and cohesive subgraph extraction by the sharpest drop in log score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PprParams {
    /// Teleport probability.
    pub alpha: f64,
    /// Convergence tolerance and score floor.
    pub epsilon: f64,
    /// Maximum subgraph size.
    pub k: usize,
}

impl PprParams {
    pub const LARGE: Self = Self {
        alpha: 0.85,
        epsilon: 1e-4,
        k: 200,
    };
    pub const SMALL: Self = Self {
        alpha: 0.85,
        epsilon: 1e-4,
        k: 20,
    };

    pub fn problems(&self, prefix: &str) -> Vec<String> {
        let mut p = Vec::new();
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            p.push(format!("{prefix}.alpha: must be in (0, 1), got {}", self.alpha));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            p.push(format!("{prefix}.epsilon: must be > 0, got {}", self.epsilon));
        }
        if self.k == 0 {
            p.push(format!("{prefix}.k: must be >= 1"));
        }
        p
    }
}

impl Default for PprParams {
    fn default() -> Self {
        Self::LARGE
    }
}

/// Upper bound on power-iteration steps: `ceil(log eps / log(1 - alpha)) + 1`.
pub fn iteration_bound(alpha: f64, epsilon: f64) -> usize {
    ((epsilon.ln() / (1.0 - alpha).ln()).ceil().max(0.0) as usize) + 1
}

/// Column-stochastic `W = A^T D^-1` stored by column; nodes without
/// neighbors carry a unit self-loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    cols: Vec<Vec<(usize, f64)>>,
}

impl TransitionMatrix {
    /// From sorted, symmetric neighbor lists without self-references.
    pub fn from_adjacency(adjacency: &[Vec<usize>]) -> Self {
        let cols = adjacency
            .iter()
            .enumerate()
            .map(|(j, nbrs)| {
                if nbrs.is_empty() {
                    vec![(j, 1.0)]
                } else {
                    let w = 1.0 / nbrs.len() as f64;
                    nbrs.iter().map(|&i| (i, w)).collect()
                }
            })
            .collect();
        Self { cols }
    }

    pub fn dim(&self) -> usize {
        self.cols.len()
    }

    pub fn column(&self, j: usize) -> &[(usize, f64)] {
        &self.cols[j]
    }

    /// `out = W x`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (j, col) in self.cols.iter().enumerate() {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for &(i, w) in col {
                out[i] += w * xj;
            }
        }
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut m = vec![vec![0.0; n]; n];
        for (j, col) in self.cols.iter().enumerate() {
            for &(i, w) in col {
                m[i][j] += w;
            }
        }
        m
    }
}

pub fn build_transition(kg: &KnowledgeGraph) -> Result<TransitionMatrix> {
    if kg.is_empty() {
        return Err(Error::Precondition("transition matrix needs at least one node".into()));
    }
    Ok(TransitionMatrix::from_adjacency(kg.adjacency()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AprVector {
    pub values: Vec<f64>,
    pub seeds: Vec<usize>,
    pub iterations: usize,
}

/// Iterates `apr <- alpha * chi + (1 - alpha) * W apr` from `apr = chi`
/// until the largest per-node change drops below `epsilon`. `chi` spreads
/// unit mass evenly over the distinct seeds.
pub fn approximate_ppr(w: &TransitionMatrix, seeds: &[usize], alpha: f64, epsilon: f64) -> Result<AprVector> {
    let n = w.dim();
    let mut seeds: Vec<usize> = seeds.to_vec();
    seeds.sort_unstable();
    seeds.dedup();
    if seeds.is_empty() {
        return Err(Error::Precondition(
            "personalized PageRank needs at least one seed".into(),
        ));
    }
    if let Some(&bad) = seeds.iter().find(|&&s| s >= n) {
        return Err(Error::Precondition(format!("seed {bad} is not a node (graph has {n})")));
    }
    if !(alpha > 0.0 && alpha < 1.0 && epsilon > 0.0) {
        return Err(Error::Config(format!(
            "need 0 < alpha < 1 and epsilon > 0, got alpha={alpha} epsilon={epsilon}"
        )));
    }
    let mut chi = vec![0.0; n];
    let share = 1.0 / seeds.len() as f64;
    for &s in &seeds {
        chi[s] = share;
    }
    let mut apr = chi.clone();
    let mut walked = vec![0.0; n];
    let cap = iteration_bound(alpha, epsilon) + 16;
    let mut iterations = 0;
    loop {
        w.apply(&apr, &mut walked);
        let mut delta: f64 = 0.0;
        for i in 0..n {
            let next = alpha * chi[i] + (1.0 - alpha) * walked[i];
            delta = delta.max((next - apr[i]).abs());
            apr[i] = next;
        }
        iterations += 1;
        if delta < epsilon {
            break;
        }
        if iterations >= cap {
            log::warn!("power iteration stopped at the {cap}-step cap with change {delta:e}");
            break;
        }
    }
    Ok(AprVector {
        values: apr,
        seeds,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgraphResult {
    /// Selected nodes by descending score, ties by node id.
    pub members: Vec<usize>,
    pub scores: Vec<f64>,
    /// Number of nodes kept (equals `members.len()`).
    pub cut: usize,
    /// Nodes whose score reached the floor.
    pub survivors: usize,
    /// Set when no node reached the floor.
    pub empty: bool,
}

/// Node ids by descending score with ascending-id tiebreak.
pub fn ranked(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Position of the cut: one past the first largest gap between consecutive
/// negative-log scores. `scores` must be descending and positive.
pub fn cut_position(scores: &[f64]) -> usize {
    if scores.len() <= 1 {
        return scores.len();
    }
    let logs: Vec<f64> = scores.iter().map(|s| -s.ln()).collect();
    let mut best = 0;
    let mut best_gap = f64::NEG_INFINITY;
    for i in 0..logs.len() - 1 {
        let gap = logs[i + 1] - logs[i];
        if gap > best_gap {
            best_gap = gap;
            best = i;
        }
    }
    best + 1
}

/// Sorts scores, drops those below `epsilon`, and cuts the first
/// `min(k, survivors)` entries at the sharpest drop.
pub fn extract_cohesive_subgraph(values: &[f64], k: usize, epsilon: f64) -> SubgraphResult {
    let order: Vec<usize> = ranked(values).into_iter().filter(|&i| values[i] >= epsilon).collect();
    let survivors = order.len();
    let window = survivors.min(k);
    if window == 0 {
        if survivors == 0 {
            log::warn!("no node reached the score floor {epsilon:e}; subgraph is empty");
        }
        return SubgraphResult {
            members: vec![],
            scores: vec![],
            cut: 0,
            survivors,
            empty: true,
        };
    }
    let scores: Vec<f64> = order[..window].iter().map(|&i| values[i]).collect();
    let cut = cut_position(&scores);
    SubgraphResult {
        members: order[..cut].to_vec(),
        scores: scores[..cut].to_vec(),
        cut,
        survivors,
        empty: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaSubgraphs {
    pub apr: AprVector,
    pub large: SubgraphResult,
    pub small: SubgraphResult,
}

/// Large and small subgraphs cut from one shared score vector.
pub fn subgraphs_for_seeds(
    w: &TransitionMatrix,
    seeds: &[usize],
    large: PprParams,
    small: PprParams,
) -> Result<QaSubgraphs> {
    if large.alpha != small.alpha || large.epsilon != small.epsilon {
        return Err(Error::Config(
            "large and small subgraph parameters must share alpha and epsilon".into(),
        ));
    }
    let apr = approximate_ppr(w, seeds, large.alpha, large.epsilon)?;
    let l = extract_cohesive_subgraph(&apr.values, large.k, large.epsilon);
    let s = extract_cohesive_subgraph(&apr.values, small.k, small.epsilon);
    Ok(QaSubgraphs {
        apr,
        large: l,
        small: s,
    })
}

/// One line of the optional per-QA trace file. Scores below the floor are
/// omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PprTrace {
    pub qa_id: String,
    pub seeds: Vec<usize>,
    pub iterations: usize,
    pub apr: Vec<(usize, f64)>,
    pub large: Vec<usize>,
    pub small: Vec<usize>,
    pub cut_large: usize,
    pub cut_small: usize,
}

impl PprTrace {
    pub fn new(qa_id: &str, sub: &QaSubgraphs, epsilon: f64) -> Self {
        Self {
            qa_id: qa_id.to_string(),
            seeds: sub.apr.seeds.clone(),
            iterations: sub.apr.iterations,
            apr: ranked(&sub.apr.values)
                .into_iter()
                .filter(|&i| sub.apr.values[i] >= epsilon)
                .map(|i| (i, sub.apr.values[i]))
                .collect(),
            large: sub.large.members.clone(),
            small: sub.small.members.clone(),
            cut_large: sub.large.cut,
            cut_small: sub.small.cut,
        }
    }
}
