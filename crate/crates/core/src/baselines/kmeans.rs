use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::embedding::{unit_normalize, EmbeddingProvider};
use super::knn::{best_mean, cosine_distance, routing_scores};
use crate::corpus::RoutingExample;
use crate::error::{contract, Result};
use crate::router::{RoutingDecision, RoutingPolicy};

const MAX_ITERS: usize = 100;
const TOLERANCE: f64 = 1e-6;

/// Spherical k-means clusters with the best model of each cluster.
#[derive(Clone, Debug)]
pub struct ClusterModel {
    pub centroids: Vec<Vec<f64>>,
    /// 0-based best model per cluster.
    pub best: Vec<usize>,
    /// Within-cluster cosine cost after each assignment step.
    pub objective: Vec<f64>,
    /// Empty clusters re-seeded at the farthest point.
    pub reseeds: usize,
    pub iterations: usize,
}

fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, mu) in centroids.iter().enumerate() {
        let d = cosine_distance(x, mu);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus<R: Rng + ?Sized>(x: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![x[rng.random_range(0..x.len())].clone()];
    while centroids.len() < k {
        let w: Vec<f64> = x.iter().map(|p| nearest(&centroids, p).1.max(0.0)).collect();
        let next = match WeightedIndex::new(&w) {
            Ok(dist) => dist.sample(rng),
            // every point coincides with a centroid
            Err(_) => rng.random_range(0..x.len()),
        };
        centroids.push(x[next].clone());
    }
    centroids
}

/// Lloyd iterations from a seeded k-means++ start, until no centroid moves by
/// more than 1e-6 or 100 iterations.
pub fn kmeans_fit(embeddings: &[Vec<f64>], scores: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusterModel> {
    let n = embeddings.len();
    if n == 0 || k == 0 || k > n {
        return Err(contract(format!("k = {k} outside 1..={n}")));
    }
    if scores.len() != n {
        return Err(contract(format!("{n} embeddings but {} score rows", scores.len())));
    }
    let x: Vec<Vec<f64>> = embeddings.iter().cloned().map(unit_normalize).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus(&x, k, &mut rng);
    let mut assign = vec![0; n];
    let mut objective = Vec::new();
    let mut reseeds = 0;
    let mut iterations = 0;
    for _ in 0..MAX_ITERS {
        iterations += 1;
        let mut cost = 0.0;
        let mut dist = vec![0.0; n];
        for (i, p) in x.iter().enumerate() {
            let (c, d) = nearest(&centroids, p);
            assign[i] = c;
            dist[i] = d;
            cost += d;
        }
        let mut counts = vec![0usize; k];
        assign.iter().for_each(|&c| counts[c] += 1);
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[assign[i]] > 1)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .ok_or_else(|| contract("cannot re-seed an empty cluster"))?;
                counts[assign[far]] -= 1;
                cost -= dist[far];
                assign[far] = c;
                counts[c] = 1;
                dist[far] = 0.0;
                reseeds += 1;
            }
        }
        objective.push(cost);
        let dim = x[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        for (i, p) in x.iter().enumerate() {
            sums[assign[i]].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        let mut moved: f64 = 0.0;
        for (c, s) in sums.into_iter().enumerate() {
            let mu = unit_normalize(s);
            let shift = mu.iter().zip(&centroids[c]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            moved = moved.max(shift);
            centroids[c] = mu;
        }
        if moved < TOLERANCE {
            break;
        }
    }
    // final assignment against the settled centroids
    for (i, p) in x.iter().enumerate() {
        assign[i] = nearest(&centroids, p).0;
    }
    let mut best = Vec::with_capacity(k);
    for c in 0..k {
        let rows: Vec<&[f64]> = (0..n).filter(|&i| assign[i] == c).map(|i| scores[i].as_slice()).collect();
        let rows = if rows.is_empty() {
            scores.iter().map(Vec::as_slice).collect()
        } else {
            rows
        };
        best.push(best_mean(&rows));
    }
    Ok(ClusterModel {
        centroids,
        best,
        objective,
        reseeds,
        iterations,
    })
}

impl ClusterModel {
    pub fn route(&self, query: &[f64], models: usize) -> RoutingDecision {
        let q = unit_normalize(query.to_vec());
        let (c, _) = nearest(&self.centroids, &q);
        let mut scores = vec![0.0; models];
        scores[self.best[c]] = 1.0;
        RoutingDecision::from_scores(scores, 0.0)
    }
}

/// k-means router over an embedding provider.
pub struct KmeansRouter<P> {
    pub provider: P,
    pub model: ClusterModel,
    models: usize,
}

impl<P: EmbeddingProvider> KmeansRouter<P> {
    pub fn fit(provider: P, train: &[RoutingExample], k: usize, seed: u64) -> Result<Self> {
        let emb = train
            .iter()
            .map(|e| provider.embed(&e.id, &e.query))
            .collect::<Result<Vec<_>>>()?;
        let scores: Vec<Vec<f64>> = train.iter().map(|e| routing_scores(e).to_vec()).collect();
        let models = scores.first().map_or(0, Vec::len);
        let model = kmeans_fit(&emb, &scores, k, seed)?;
        Ok(Self { provider, model, models })
    }
}

impl<P: EmbeddingProvider> RoutingPolicy for KmeansRouter<P> {
    fn name(&self) -> String {
        format!("kmeans-{}", self.model.centroids.len())
    }

    fn models(&self) -> usize {
        self.models
    }

    fn decide(&self, ex: &RoutingExample) -> Result<RoutingDecision> {
        let start = std::time::Instant::now();
        let e = self.provider.embed(&ex.id, &ex.query)?;
        let mut d = self.model.route(&e, self.models);
        d.latency_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(d)
    }
}
