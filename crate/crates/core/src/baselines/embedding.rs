use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{AttentionMask, Direction, TokenId, Transformer, Vocabulary, CLS};
use crate::error::{Error, Result};
use crate::numeric::{ParamStore, Tape};
use crate::router::BackboneShape;

/// Maps a query to a unit-norm vector.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    /// `id` identifies the record for providers backed by precomputed vectors;
    /// text encoders ignore it.
    fn embed(&self, id: &str, query: &str) -> Result<Vec<f64>>;
}

/// Scales `v` to unit length; the zero vector is returned unchanged.
pub fn unit_normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Mean of the final hidden states of a frozen, randomly initialized
/// bidirectional encoder.
#[derive(Clone, Debug)]
pub struct RandomEncoder {
    store: ParamStore,
    encoder: Transformer,
}

impl RandomEncoder {
    pub fn new(shape: BackboneShape, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = shape.config(1, Direction::Bidirectional);
        let encoder = Transformer::new(config, &mut store, "encoder", &mut rng)?;
        Ok(Self { store, encoder })
    }

    fn tokens(&self, query: &str) -> Vec<TokenId> {
        let budget = self.encoder.config().max_len - 1;
        std::iter::once(CLS)
            .chain(Vocabulary::new(1).encode_bytes(query.as_bytes()).into_iter().take(budget))
            .collect()
    }
}

impl EmbeddingProvider for RandomEncoder {
    fn dim(&self) -> usize {
        self.encoder.config().d_model
    }

    fn embed(&self, _id: &str, query: &str) -> Result<Vec<f64>> {
        let tokens = self.tokens(query);
        let n = tokens.len();
        let mut tape = Tape::with_nan_check(false);
        let p = self.store.bind(&mut tape, false);
        let positions: Vec<usize> = (0..n).collect();
        let mask = AttentionMask::bidirectional(&vec![false; n])?;
        let h = self.encoder.hidden(&mut tape, &p, &tokens, &positions, &mask)?;
        let h = tape.value(h);
        let d = self.dim();
        let mut m = vec![0.0; d];
        for r in 0..n {
            m.iter_mut().zip(h.row(r)).for_each(|(a, b)| *a += b);
        }
        Ok(unit_normalize(m))
    }
}

/// Precomputed vectors keyed by record id.
#[derive(Clone, Debug, Default)]
pub struct FileEmbeddings {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl FileEmbeddings {
    /// One record per line: id, then the vector components, space-separated.
    pub fn parse(reader: impl BufRead) -> Result<Self> {
        let mut out = Self::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let mut parts = line.split_whitespace();
            let Some(id) = parts.next() else { continue };
            let v = parts
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Input(format!("embeddings line {}: {e}", i + 1)))?;
            if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Input(format!("embeddings line {}: empty or non-finite vector", i + 1)));
            }
            if out.dim == 0 {
                out.dim = v.len();
            } else if v.len() != out.dim {
                return Err(Error::Input(format!(
                    "embeddings line {}: {} components, expected {}",
                    i + 1,
                    v.len(),
                    out.dim
                )));
            }
            if out.vectors.insert(id.to_string(), unit_normalize(v)).is_some() {
                return Err(Error::Input(format!("embeddings line {}: duplicate id {id}", i + 1)));
            }
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

impl EmbeddingProvider for FileEmbeddings {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, id: &str, _query: &str) -> Result<Vec<f64>> {
        self.vectors
            .get(id)
            .cloned()
            .ok_or_else(|| Error::Input(format!("no precomputed embedding for record {id}")))
    }
}
