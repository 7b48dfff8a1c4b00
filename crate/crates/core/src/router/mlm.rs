use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::curriculum::{select_masked_positions, CurriculumState};
use super::losses::{joint_loss, mean_over_models, routing_loss_bce};
use super::{LookaheadConfig, StepLoss};
use crate::backbone::{
    cls_attention_pool, AttentionMask, AttentionPool, Direction, TokenId, Transformer, TransformerConfig, Vocabulary,
    CLS, PAD,
};
use crate::error::{contract, Error, Result};
use crate::numeric::{Bound, ParamId, ParamStore, Tape, Tensor, Var};

/// `CLS ∥ x ∥ block_1 ∥ … ∥ block_T`, each block exactly `m` tokens long.
#[derive(Clone, Debug, PartialEq)]
pub struct MlmInput {
    pub tokens: Vec<TokenId>,
    /// Position ids. Query slots count as padded to the full query budget, so
    /// block `t` always starts at the same position whatever the query length.
    pub positions: Vec<usize>,
    /// True at padding positions, which no position attends to.
    pub padding: Vec<bool>,
    pub query_len: usize,
    pub block_len: usize,
    /// Per block: `(row, true token)` for every masked response position.
    pub targets: Vec<Vec<(usize, TokenId)>>,
}

impl MlmInput {
    pub fn block_start(&self, t: usize) -> usize {
        1 + self.query_len + t * self.block_len
    }

    /// Rows of block `t` that hold a token rather than padding.
    pub fn block_rows(&self, t: usize) -> Vec<usize> {
        let s = self.block_start(t);
        (s..s + self.block_len).filter(|&r| !self.padding[r]).collect()
    }

    /// Query rows plus every non-padding block row.
    pub fn key_rows(&self) -> Vec<usize> {
        (1..self.tokens.len()).filter(|&r| !self.padding[r]).collect()
    }
}

/// Builds the MLM router input.
///
/// Without responses every block slot is `MID_t`. With responses, block `t`
/// carries the first `min(|y_t|, m)` response tokens, the curriculum-selected
/// ones replaced by `MID_t`, and `PAD` after a short response.
pub fn mlm_build_input<R: Rng + ?Sized>(
    vocab: &Vocabulary,
    query: &str,
    responses: Option<&[String]>,
    block_len: usize,
    max_len: usize,
    curriculum: &CurriculumState,
    rng: &mut R,
) -> Result<MlmInput> {
    let models = vocab.models();
    let fixed = 1 + models * block_len;
    if fixed >= max_len {
        return Err(Error::Input(format!(
            "{models} blocks of {block_len} tokens leave no room for a query within {max_len} positions"
        )));
    }
    let budget = max_len - fixed;
    let x: Vec<TokenId> = vocab.encode_bytes(query.as_bytes()).into_iter().take(budget).collect();
    if x.is_empty() {
        return Err(Error::Input("empty query".into()));
    }
    if let Some(r) = responses {
        if r.len() != models {
            return Err(Error::Input(format!("{} responses for {models} models", r.len())));
        }
    }
    let q = x.len();
    let mut tokens = Vec::with_capacity(q + fixed);
    tokens.push(CLS);
    tokens.extend_from_slice(&x);
    let mut padding = vec![false; 1 + q];
    let mut targets = Vec::with_capacity(models);
    for t in 0..models {
        let mid = vocab.mid(t + 1)?;
        let start = tokens.len();
        let mut tt = Vec::new();
        match responses {
            None => {
                tokens.extend(std::iter::repeat_n(mid, block_len));
                padding.extend(std::iter::repeat_n(false, block_len));
            }
            Some(r) => {
                let y: Vec<TokenId> = vocab.encode_bytes(r[t].as_bytes()).into_iter().take(block_len).collect();
                let masked = select_masked_positions(y.len(), curriculum.ratio(), curriculum.strategy, rng);
                let mut block = y.clone();
                for &j in &masked {
                    block[j] = mid;
                    tt.push((start + j, y[j]));
                }
                padding.extend(std::iter::repeat_n(false, block.len()));
                padding.extend(std::iter::repeat_n(true, block_len - block.len()));
                block.resize(block_len, PAD);
                tokens.extend(block);
            }
        }
        targets.push(tt);
    }
    let mut positions: Vec<usize> = (0..=q).collect();
    positions.extend(1 + budget..1 + budget + models * block_len);
    Ok(MlmInput {
        tokens,
        positions,
        padding,
        query_len: q,
        block_len,
        targets,
    })
}

/// Bidirectional-backbone router: CLS attention pooling over the query and
/// all response-latent blocks, then a two-layer head with one output per model.
#[derive(Clone, Debug)]
pub struct MlmRouter {
    config: LookaheadConfig,
    vocab: Vocabulary,
    backbone: Transformer,
    pool: AttentionPool,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl MlmRouter {
    pub fn new<R: Rng + ?Sized>(
        config: LookaheadConfig,
        backbone: TransformerConfig,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        check_backbone(&config, &backbone)?;
        let d = backbone.d_model;
        let t = config.models;
        let bb = Transformer::new(backbone, store, "backbone", rng)?;
        let pool = AttentionPool::new(d, store, "pool", rng);
        Ok(Self {
            config,
            vocab: Vocabulary::new(t),
            backbone: bb,
            pool,
            w1: store.add("route.w1", Tensor::randn(&[d, d], 1.0 / (d as f64).sqrt(), rng)),
            b1: store.add("route.b1", Tensor::zeros(&[d])),
            w2: store.add("route.w2", Tensor::zeros(&[d, t])),
            b2: store.add("route.b2", Tensor::zeros(&[t])),
        })
    }

    pub fn locate(config: LookaheadConfig, backbone: TransformerConfig, store: &ParamStore) -> Result<Self> {
        check_backbone(&config, &backbone)?;
        let d = backbone.d_model;
        let t = config.models;
        Ok(Self {
            config,
            vocab: Vocabulary::new(t),
            backbone: Transformer::locate(backbone, store, "backbone")?,
            pool: AttentionPool::locate(d, store, "pool")?,
            w1: store.require("route.w1", &[d, d])?,
            b1: store.require("route.b1", &[d])?,
            w2: store.require("route.w2", &[d, t])?,
            b2: store.require("route.b2", &[t])?,
        })
    }

    pub fn config(&self) -> &LookaheadConfig {
        &self.config
    }

    pub fn backbone(&self) -> &Transformer {
        &self.backbone
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn build_input<R: Rng + ?Sized>(
        &self,
        query: &str,
        responses: Option<&[String]>,
        curriculum: &CurriculumState,
        rng: &mut R,
    ) -> Result<MlmInput> {
        mlm_build_input(
            &self.vocab,
            query,
            responses,
            self.config.block_len,
            self.backbone.config().max_len,
            curriculum,
            rng,
        )
    }

    fn encode(&self, tape: &mut Tape, p: &Bound, input: &MlmInput) -> Result<(Var, Var)> {
        let mask = AttentionMask::bidirectional(&input.padding)?;
        let h = self.backbone.hidden(tape, p, &input.tokens, &input.positions, &mask)?;
        let h_cls = tape.slice_rows(h, 0, 1)?;
        let keys = tape.gather_rows(h, &input.key_rows())?;
        let pooled = self.pool.forward(tape, p, h_cls, keys)?;
        Ok((h, pooled.vector))
    }

    /// Per-block latents `[m, d]` (padding rows dropped) and the pooled
    /// vector, via the explicit pooling helper.
    pub fn latents(&self, tape: &mut Tape, p: &Bound, input: &MlmInput) -> Result<(Vec<Var>, Var)> {
        let mask = AttentionMask::bidirectional(&input.padding)?;
        let h = self.backbone.hidden(tape, p, &input.tokens, &input.positions, &mask)?;
        let h_cls = tape.slice_rows(h, 0, 1)?;
        let h_x = tape.slice_rows(h, 1, input.query_len)?;
        let mut blocks = Vec::new();
        for t in 0..self.config.models {
            let rows = input.block_rows(t);
            if !rows.is_empty() {
                blocks.push(tape.gather_rows(h, &rows)?);
            }
        }
        let pooled = cls_attention_pool(tape, p, &self.pool, h_cls, h_x, &blocks)?;
        Ok((blocks, pooled.vector))
    }

    fn head(&self, tape: &mut Tape, p: &Bound, pooled: Var) -> Result<Var> {
        let z = tape.matmul(pooled, p[self.w1])?;
        let z = tape.add(z, p[self.b1])?;
        let z = tape.gelu(z)?;
        let z = tape.matmul(z, p[self.w2])?;
        let z = tape.add(z, p[self.b2])?;
        let s = tape.sigmoid(z)?;
        Ok(tape.reshape(s, &[self.config.models])?)
    }

    fn inference_input(&self, query: &str) -> Result<MlmInput> {
        let full = CurriculumState::full(self.config.strategy);
        self.build_input(query, None, &full, &mut ChaCha8Rng::seed_from_u64(0))
    }

    pub fn scores(&self, tape: &mut Tape, p: &Bound, query: &str) -> Result<Var> {
        let input = self.inference_input(query)?;
        let (_, pooled) = self.encode(tape, p, &input)?;
        self.head(tape, p, pooled)
    }

    /// Pooled routing representation `[d]`.
    pub fn features(&self, tape: &mut Tape, p: &Bound, query: &str) -> Result<Vec<f64>> {
        let input = self.inference_input(query)?;
        let (_, pooled) = self.encode(tape, p, &input)?;
        Ok(tape.value(pooled).data().to_vec())
    }

    pub fn loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        p: &Bound,
        query: &str,
        responses: &[String],
        targets: &[f64],
        curriculum: &CurriculumState,
        rng: &mut R,
    ) -> Result<StepLoss> {
        let input = self.build_input(query, Some(responses), curriculum, rng)?;
        let (h, pooled) = self.encode(tape, p, &input)?;
        let scores = self.head(tape, p, pooled)?;
        let route = routing_loss_bce(tape, scores, targets)?;
        let mut warnings = Vec::new();
        let resp = if self.config.lambda > 0.0 {
            let mut terms = Vec::with_capacity(self.config.models);
            for (t, tt) in input.targets.iter().enumerate() {
                if responses[t].is_empty() {
                    warnings.push(format!("model {} has an empty response", t + 1));
                }
                if tt.is_empty() {
                    terms.push(None);
                    continue;
                }
                let rows: Vec<usize> = tt.iter().map(|&(r, _)| r).collect();
                let gold: Vec<TokenId> = tt.iter().map(|&(_, y)| y).collect();
                let hr = tape.gather_rows(h, &rows)?;
                let logits = self.backbone.lm_logits(tape, p, hr)?;
                terms.push(Some(tape.cross_entropy(logits, &gold)?));
            }
            mean_over_models(tape, &terms)?
        } else {
            None
        };
        let total = joint_loss(tape, route, resp, self.config.lambda)?;
        Ok(StepLoss {
            total,
            route: tape.value(route).item(),
            resp: resp.map(|r| tape.value(r).item()).unwrap_or(0.0),
            warnings,
        })
    }
}

fn check_backbone(config: &LookaheadConfig, backbone: &TransformerConfig) -> Result<()> {
    config.validate()?;
    backbone.validate()?;
    if backbone.direction != Direction::Bidirectional {
        return Err(contract("MLM router needs a bidirectional backbone"));
    }
    let want = Vocabulary::new(config.models).size();
    if backbone.vocab_size != want {
        return Err(contract(format!(
            "backbone vocabulary {} does not match {want} for {} models",
            backbone.vocab_size, config.models
        )));
    }
    Ok(())
}
