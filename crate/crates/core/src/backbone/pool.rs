use rand::Rng;

use crate::error::{contract, Result};
use crate::numeric::{Bound, ParamId, ParamStore, Tape, Tensor, Var};

/// Single-head attention read-out: one query row attends over a set of key
/// rows through learned query, key and value projections.
#[derive(Clone, Debug)]
pub struct AttentionPool {
    d: usize,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
}

/// Pooled vector and the attention weights that produced it.
#[derive(Clone, Copy, Debug)]
pub struct Pooled {
    pub vector: Var,
    pub weights: Var,
}

impl AttentionPool {
    pub fn new<R: Rng + ?Sized>(d: usize, store: &mut ParamStore, prefix: &str, rng: &mut R) -> Self {
        let std = 1.0 / (d as f64).sqrt();
        Self {
            d,
            wq: store.add(format!("{prefix}.wq"), Tensor::randn(&[d, d], std, rng)),
            wk: store.add(format!("{prefix}.wk"), Tensor::randn(&[d, d], std, rng)),
            wv: store.add(format!("{prefix}.wv"), Tensor::randn(&[d, d], std, rng)),
        }
    }

    pub fn locate(d: usize, store: &ParamStore, prefix: &str) -> Result<Self> {
        let get = |s: &str| -> Result<ParamId> { Ok(store.require(&format!("{prefix}.{s}"), &[d, d])?) };
        Ok(Self {
            d,
            wq: get("wq")?,
            wk: get("wk")?,
            wv: get("wv")?,
        })
    }

    /// `softmax((q Wq)(K Wk)ᵀ / √d) (K Wv)` for a `[1, d]` query and `[n, d]` keys.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, query: Var, keys: Var) -> Result<Pooled> {
        let qs = tape.shape(query).to_vec();
        let ks = tape.shape(keys).to_vec();
        if qs != [1, self.d] || ks.len() != 2 || ks[1] != self.d || ks[0] == 0 {
            return Err(contract(format!(
                "pool expects a [1, {d}] query and [n, {d}] keys, got {qs:?} and {ks:?}",
                d = self.d
            )));
        }
        let q = tape.matmul(query, p[self.wq])?;
        let k = tape.matmul(keys, p[self.wk])?;
        let v = tape.matmul(keys, p[self.wv])?;
        let s = tape.matmul_nt(q, k)?;
        let s = tape.scale(s, 1.0 / (self.d as f64).sqrt())?;
        let weights = tape.softmax_rows(s, None)?;
        let vector = tape.matmul(weights, v)?;
        Ok(Pooled { vector, weights })
    }
}

/// Pools `h_cls` over the row-concatenation of query states and every
/// response-latent block.
pub fn cls_attention_pool(
    tape: &mut Tape,
    p: &Bound,
    pool: &AttentionPool,
    h_cls: Var,
    h_query: Var,
    latents: &[Var],
) -> Result<Pooled> {
    let mut parts = Vec::with_capacity(latents.len() + 1);
    parts.push(h_query);
    parts.extend_from_slice(latents);
    let keys = tape.concat_rows(&parts)?;
    pool.forward(tape, p, h_cls, keys)
}
