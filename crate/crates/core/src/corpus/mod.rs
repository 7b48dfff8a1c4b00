//! Routing-corpus schema, ingestion, score processing and a planted-specialist
//! synthetic generator.

mod example;
mod io;
mod process;
mod synth;

pub use example::{RoutingExample, TaskKind};
pub use io::{corpus_digest, load_corpus, parse_corpus, save_corpus, write_corpus};
pub use process::{
    binarize, binarize_all, filter_uninformative, normalize_scores, split, CorpusSplit, Warning, DEFAULT_THRESHOLD,
};
pub use synth::{generate_synthetic, DomainSpec, SpecializationPlan};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}, field {field}: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: record has {found} models, corpus has {expected}")]
    InconsistentModels { line: usize, expected: usize, found: usize },
    #[error("record {id}: non-finite raw score at index {index}")]
    NonFinite { id: String, index: usize },
    #[error("invalid specialization plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
