use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AttentionMask, TokenId, CLS};
use crate::error::{contract, Result};
use crate::numeric::{Bound, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Causal,
    Bidirectional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub direction: Direction,
}

impl TransformerConfig {
    /// 4 layers, width 128, 4 heads, FFN 512, 512 positions.
    pub fn desk(vocab_size: usize, direction: Direction) -> Self {
        Self {
            layers: 4,
            d_model: 128,
            heads: 4,
            ffn: 512,
            max_len: 512,
            vocab_size,
            direction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.d_model == 0 || self.heads == 0 || self.ffn == 0 || self.max_len == 0 {
            return Err(contract(format!("degenerate transformer config {self:?}")));
        }
        if self.d_model % self.heads != 0 {
            return Err(contract(format!(
                "width {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

/// Final hidden states and LM-head logits of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardActivations {
    pub hidden: Tensor,
    pub logits: Tensor,
}

#[derive(Clone, Debug)]
struct Block {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wqkv: ParamId,
    bqkv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Pre-norm transformer with learned absolute positions and an untied LM head.
#[derive(Clone, Debug)]
pub struct Transformer {
    config: TransformerConfig,
    tok: ParamId,
    pos: ParamId,
    blocks: Vec<Block>,
    lnf_g: ParamId,
    lnf_b: ParamId,
    head_w: ParamId,
    head_b: ParamId,
}

const LN_EPS: f64 = 1e-5;

struct Namer<'a> {
    prefix: &'a str,
}

impl Namer<'_> {
    fn name(&self, s: &str) -> String {
        format!("{}.{s}", self.prefix)
    }
}

impl Transformer {
    /// Registers freshly initialized weights under `prefix` in `store`.
    pub fn new<R: Rng + ?Sized>(
        config: TransformerConfig,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let n = Namer { prefix };
        let (d, f, v) = (config.d_model, config.ffn, config.vocab_size);
        let std = 0.02;
        let resid_std = std / (2.0 * config.layers as f64).sqrt();
        let tok = store.add(n.name("tok_emb"), Tensor::randn(&[v, d], std, rng));
        let pos = store.add(n.name("pos_emb"), Tensor::randn(&[config.max_len, d], std, rng));
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let b = |s: &str| n.name(&format!("h{l}.{s}"));
            blocks.push(Block {
                ln1_g: store.add(b("ln1.g"), Tensor::filled(&[d], 1.0)),
                ln1_b: store.add(b("ln1.b"), Tensor::zeros(&[d])),
                wqkv: store.add(b("attn.wqkv"), Tensor::randn(&[d, 3 * d], std, rng)),
                bqkv: store.add(b("attn.bqkv"), Tensor::zeros(&[3 * d])),
                wo: store.add(b("attn.wo"), Tensor::randn(&[d, d], resid_std, rng)),
                bo: store.add(b("attn.bo"), Tensor::zeros(&[d])),
                ln2_g: store.add(b("ln2.g"), Tensor::filled(&[d], 1.0)),
                ln2_b: store.add(b("ln2.b"), Tensor::zeros(&[d])),
                w1: store.add(b("mlp.w1"), Tensor::randn(&[d, f], std, rng)),
                b1: store.add(b("mlp.b1"), Tensor::zeros(&[f])),
                w2: store.add(b("mlp.w2"), Tensor::randn(&[f, d], resid_std, rng)),
                b2: store.add(b("mlp.b2"), Tensor::zeros(&[d])),
            });
        }
        Ok(Self {
            config,
            tok,
            pos,
            blocks,
            lnf_g: store.add(n.name("lnf.g"), Tensor::filled(&[d], 1.0)),
            lnf_b: store.add(n.name("lnf.b"), Tensor::zeros(&[d])),
            head_w: store.add(n.name("head.w"), Tensor::randn(&[d, v], std, rng)),
            head_b: store.add(n.name("head.b"), Tensor::zeros(&[v])),
        })
    }

    /// Re-attaches to weights already present in `store` (e.g. after loading
    /// a checkpoint), checking every shape against `config`.
    pub fn locate(config: TransformerConfig, store: &ParamStore, prefix: &str) -> Result<Self> {
        config.validate()?;
        let n = Namer { prefix };
        let (d, f, v) = (config.d_model, config.ffn, config.vocab_size);
        let get = |name: String, shape: &[usize]| -> Result<ParamId> { Ok(store.require(&name, shape)?) };
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let b = |s: &str| n.name(&format!("h{l}.{s}"));
            blocks.push(Block {
                ln1_g: get(b("ln1.g"), &[d])?,
                ln1_b: get(b("ln1.b"), &[d])?,
                wqkv: get(b("attn.wqkv"), &[d, 3 * d])?,
                bqkv: get(b("attn.bqkv"), &[3 * d])?,
                wo: get(b("attn.wo"), &[d, d])?,
                bo: get(b("attn.bo"), &[d])?,
                ln2_g: get(b("ln2.g"), &[d])?,
                ln2_b: get(b("ln2.b"), &[d])?,
                w1: get(b("mlp.w1"), &[d, f])?,
                b1: get(b("mlp.b1"), &[f])?,
                w2: get(b("mlp.w2"), &[f, d])?,
                b2: get(b("mlp.b2"), &[d])?,
            });
        }
        Ok(Self {
            config,
            tok: get(n.name("tok_emb"), &[v, d])?,
            pos: get(n.name("pos_emb"), &[config.max_len, d])?,
            blocks,
            lnf_g: get(n.name("lnf.g"), &[d])?,
            lnf_b: get(n.name("lnf.b"), &[d])?,
            head_w: get(n.name("head.w"), &[d, v])?,
            head_b: get(n.name("head.b"), &[v])?,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    /// Final-layer hidden states `[n, d]` for `tokens` at `positions`.
    pub fn hidden(
        &self,
        tape: &mut Tape,
        p: &Bound,
        tokens: &[TokenId],
        positions: &[usize],
        mask: &AttentionMask,
    ) -> Result<Var> {
        let c = &self.config;
        let n = tokens.len();
        if n == 0 {
            return Err(contract("empty token sequence"));
        }
        if positions.len() != n || mask.len() != n {
            return Err(contract(format!(
                "{n} tokens but {} positions and a {}-wide mask",
                positions.len(),
                mask.len()
            )));
        }
        if let Some(&bad) = positions.iter().find(|&&q| q >= c.max_len) {
            return Err(contract(format!("position {bad} exceeds max length {}", c.max_len)));
        }
        if c.direction == Direction::Causal && !mask.is_causal_compatible() {
            return Err(contract("causal model given a mask that attends to later positions"));
        }
        let tok = tape.gather_rows(p[self.tok], tokens)?;
        let pos = tape.gather_rows(p[self.pos], positions)?;
        let mut x = tape.add(tok, pos)?;
        let d = c.d_model;
        let dh = d / c.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for b in &self.blocks {
            let h = tape.layer_norm(x, p[b.ln1_g], p[b.ln1_b], LN_EPS)?;
            let qkv = tape.matmul(h, p[b.wqkv])?;
            let qkv = tape.add(qkv, p[b.bqkv])?;
            let mut heads = Vec::with_capacity(c.heads);
            for hd in 0..c.heads {
                let q = tape.slice_cols(qkv, hd * dh, dh)?;
                let k = tape.slice_cols(qkv, d + hd * dh, dh)?;
                let v = tape.slice_cols(qkv, 2 * d + hd * dh, dh)?;
                let s = tape.matmul_nt(q, k)?;
                let s = tape.scale(s, scale)?;
                let a = tape.softmax_rows(s, Some(mask.as_slice()))?;
                heads.push(tape.matmul(a, v)?);
            }
            let o = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
            let o = tape.matmul(o, p[b.wo])?;
            let o = tape.add(o, p[b.bo])?;
            x = tape.add(x, o)?;
            let h = tape.layer_norm(x, p[b.ln2_g], p[b.ln2_b], LN_EPS)?;
            let h = tape.matmul(h, p[b.w1])?;
            let h = tape.add(h, p[b.b1])?;
            let h = tape.gelu(h)?;
            let h = tape.matmul(h, p[b.w2])?;
            let h = tape.add(h, p[b.b2])?;
            x = tape.add(x, h)?;
        }
        Ok(tape.layer_norm(x, p[self.lnf_g], p[self.lnf_b], LN_EPS)?)
    }

    /// LM-head logits for the given hidden rows.
    pub fn lm_logits(&self, tape: &mut Tape, p: &Bound, hidden: Var) -> Result<Var> {
        let l = tape.matmul(hidden, p[self.head_w])?;
        Ok(tape.add(l, p[self.head_b])?)
    }

    fn activations(
        &self,
        store: &ParamStore,
        tokens: &[TokenId],
        positions: &[usize],
        mask: &AttentionMask,
    ) -> Result<ForwardActivations> {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let h = self.hidden(&mut tape, &p, tokens, positions, mask)?;
        let l = self.lm_logits(&mut tape, &p, h)?;
        Ok(ForwardActivations {
            hidden: tape.value(h).clone(),
            logits: tape.value(l).clone(),
        })
    }

    /// Causal pass with explicit positions and mask.
    pub fn clm_forward_at(
        &self,
        store: &ParamStore,
        tokens: &[TokenId],
        positions: &[usize],
        mask: &AttentionMask,
    ) -> Result<ForwardActivations> {
        if self.config.direction != Direction::Causal {
            return Err(contract("clm_forward on a bidirectional model"));
        }
        self.activations(store, tokens, positions, mask)
    }

    /// Causal pass with positions `0..n`.
    pub fn clm_forward(&self, store: &ParamStore, tokens: &[TokenId], mask: &AttentionMask) -> Result<ForwardActivations> {
        let positions: Vec<usize> = (0..tokens.len()).collect();
        self.clm_forward_at(store, tokens, &positions, mask)
    }

    /// Bidirectional pass over non-padding positions; `tokens[0]` must be CLS.
    pub fn mlm_forward(&self, store: &ParamStore, tokens: &[TokenId], padding: &[bool]) -> Result<ForwardActivations> {
        if self.config.direction != Direction::Bidirectional {
            return Err(contract("mlm_forward on a causal model"));
        }
        if tokens.first() != Some(&CLS) {
            return Err(contract("masked-LM input must start with CLS"));
        }
        if padding.len() != tokens.len() {
            return Err(contract("padding flags do not match token count"));
        }
        let mask = AttentionMask::bidirectional(padding)?;
        let positions: Vec<usize> = (0..tokens.len()).collect();
        self.activations(store, tokens, &positions, &mask)
    }
}
