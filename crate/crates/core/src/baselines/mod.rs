//! Comparison routers: query classifiers, embedding-neighbourhood methods,
//! and the random, oracle and reward-selection references.

mod classifier;
mod embedding;
mod kmeans;
mod knn;
mod reference;

pub use classifier::{softmax_with_temperature, ClassifierConfig, ClassifierObjective, QueryClassifier};
pub use embedding::{unit_normalize, EmbeddingProvider, FileEmbeddings, RandomEncoder};
pub use kmeans::{kmeans_fit, ClusterModel, KmeansRouter};
pub use knn::{cosine_distance, routing_scores, KnnRouter, NeighborIndex};
pub use reference::{oracle_route, random_route, reward_select, NoisyJudge, OracleRouter, RandomRouter, RewardSelect};
