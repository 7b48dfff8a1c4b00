use std::collections::HashSet;

use super::embedding::{unit_normalize, EmbeddingProvider};
use crate::corpus::RoutingExample;
use crate::error::{contract, Result};
use crate::router::{argmax_lowest, RoutingDecision, RoutingPolicy};

/// `1 − cos(a, b)`; both arguments are expected to be unit vectors.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

/// Stored training embeddings with each record's per-model scores.
#[derive(Clone, Debug)]
pub struct NeighborIndex {
    ids: Vec<String>,
    embeddings: Vec<Vec<f64>>,
    scores: Vec<Vec<f64>>,
}

impl NeighborIndex {
    pub fn new(ids: Vec<String>, embeddings: Vec<Vec<f64>>, scores: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != embeddings.len() || ids.len() != scores.len() {
            return Err(contract(format!(
                "{} ids, {} embeddings and {} score rows",
                ids.len(),
                embeddings.len(),
                scores.len()
            )));
        }
        let mut seen = HashSet::new();
        for id in &ids {
            if !seen.insert(id) {
                return Err(contract(format!("duplicate record id {id}")));
            }
        }
        if let Some(t) = scores.first().map(Vec::len) {
            if scores.iter().any(|s| s.len() != t) {
                return Err(contract("score rows differ in length"));
            }
        }
        let embeddings = embeddings.into_iter().map(unit_normalize).collect();
        Ok(Self { ids, embeddings, scores })
    }

    /// Embeds every record with `provider`; routing scores are the normalized
    /// scores when present, raw scores otherwise.
    pub fn build(provider: &dyn EmbeddingProvider, examples: &[RoutingExample]) -> Result<Self> {
        let mut ids = Vec::with_capacity(examples.len());
        let mut emb = Vec::with_capacity(examples.len());
        let mut scores = Vec::with_capacity(examples.len());
        for ex in examples {
            ids.push(ex.id.clone());
            emb.push(provider.embed(&ex.id, &ex.query)?);
            scores.push(routing_scores(ex).to_vec());
        }
        Self::new(ids, emb, scores)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Indices of the `k` nearest records; ties keep insertion order.
    pub fn nearest(&self, query: &[f64], k: usize) -> Result<Vec<usize>> {
        if self.is_empty() {
            return Err(contract("empty neighbour index"));
        }
        if k == 0 || k > self.len() {
            return Err(contract(format!("k = {k} outside 1..={}", self.len())));
        }
        let q = unit_normalize(query.to_vec());
        let mut d: Vec<(f64, usize)> = self
            .embeddings
            .iter()
            .enumerate()
            .map(|(i, e)| (cosine_distance(&q, e), i))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(d.into_iter().take(k).map(|(_, i)| i).collect())
    }

    /// Model with the best mean score over the `k` nearest records.
    pub fn route(&self, query: &[f64], k: usize) -> Result<RoutingDecision> {
        let nn = self.nearest(query, k)?;
        let t = self.scores[0].len();
        let mut mean = vec![0.0; t];
        for &i in &nn {
            mean.iter_mut().zip(&self.scores[i]).for_each(|(m, s)| *m += s);
        }
        mean.iter_mut().for_each(|m| *m /= nn.len() as f64);
        Ok(RoutingDecision::from_scores(mean, 0.0))
    }
}

/// Scores used as routing targets by the neighbourhood methods.
pub fn routing_scores(ex: &RoutingExample) -> &[f64] {
    if ex.normalized.len() == ex.models() {
        &ex.normalized
    } else {
        &ex.raw
    }
}

/// kNN router over an embedding provider.
pub struct KnnRouter<P> {
    pub provider: P,
    pub index: NeighborIndex,
    pub k: usize,
}

impl<P: EmbeddingProvider> KnnRouter<P> {
    pub fn fit(provider: P, train: &[RoutingExample], k: usize) -> Result<Self> {
        let index = NeighborIndex::build(&provider, train)?;
        let k = k.min(index.len());
        Ok(Self { provider, index, k })
    }
}

impl<P: EmbeddingProvider> RoutingPolicy for KnnRouter<P> {
    fn name(&self) -> String {
        format!("knn-{}", self.k)
    }

    fn models(&self) -> usize {
        self.index.scores.first().map_or(0, Vec::len)
    }

    fn decide(&self, ex: &RoutingExample) -> Result<RoutingDecision> {
        let start = std::time::Instant::now();
        let e = self.provider.embed(&ex.id, &ex.query)?;
        let mut d = self.index.route(&e, self.k)?;
        d.latency_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(d)
    }
}

/// Index of the model with the highest mean score over `rows`.
pub(crate) fn best_mean(rows: &[&[f64]]) -> usize {
    let t = rows[0].len();
    let mut mean = vec![0.0; t];
    for r in rows {
        mean.iter_mut().zip(r.iter()).for_each(|(m, s)| *m += s);
    }
    argmax_lowest(&mean)
}
