use rand::Rng;

use super::losses::{joint_loss, mean_over_models, routing_loss_bce};
use super::{LookaheadConfig, StepLoss};
use crate::backbone::{AttentionMask, Direction, TokenId, Transformer, TransformerConfig, Vocabulary};
use crate::error::{Error, Result};
use crate::numeric::{Bound, ParamId, ParamStore, Tape, Tensor, Var};

/// Causal-backbone router: one `MID_t` hidden state per model, scored by a
/// shared linear head.
#[derive(Clone, Debug)]
pub struct ClmRouter {
    config: LookaheadConfig,
    vocab: Vocabulary,
    backbone: Transformer,
    head_w: ParamId,
    head_b: ParamId,
}

/// Teacher-forcing layout: `x ∥ [MID_1, y_1] ∥ … ∥ [MID_T, y_T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClmTrainingInput {
    pub tokens: Vec<TokenId>,
    pub positions: Vec<usize>,
    pub query_len: usize,
    /// Token count of each block, `MID_t` included.
    pub block_lens: Vec<usize>,
}

impl ClmTrainingInput {
    /// Row of `MID_t` (0-based `t`).
    pub fn mid_row(&self, t: usize) -> usize {
        self.query_len + self.block_lens[..t].iter().sum::<usize>()
    }
}

impl ClmRouter {
    pub fn new<R: Rng + ?Sized>(
        config: LookaheadConfig,
        backbone: TransformerConfig,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        check_backbone(&config, &backbone)?;
        let d = backbone.d_model;
        let bb = Transformer::new(backbone, store, "backbone", rng)?;
        let head_w = store.add("route.w", Tensor::zeros(&[d, 1]));
        let head_b = store.add("route.b", Tensor::zeros(&[1]));
        Ok(Self {
            config,
            vocab: Vocabulary::new(config.models),
            backbone: bb,
            head_w,
            head_b,
        })
    }

    pub fn locate(config: LookaheadConfig, backbone: TransformerConfig, store: &ParamStore) -> Result<Self> {
        check_backbone(&config, &backbone)?;
        let d = backbone.d_model;
        Ok(Self {
            config,
            vocab: Vocabulary::new(config.models),
            backbone: Transformer::locate(backbone, store, "backbone")?,
            head_w: store.require("route.w", &[d, 1])?,
            head_b: store.require("route.b", &[1])?,
        })
    }

    pub fn config(&self) -> &LookaheadConfig {
        &self.config
    }

    pub fn backbone(&self) -> &Transformer {
        &self.backbone
    }

    /// Query tokens after truncation to the positional budget.
    pub fn query_tokens(&self, query: &str) -> Result<Vec<TokenId>> {
        let max_len = self.backbone.config().max_len;
        let budget = max_len.saturating_sub(1 + self.config.max_response_len);
        if budget == 0 {
            return Err(Error::Input(format!(
                "max length {max_len} leaves no room for a query next to {}-token responses",
                self.config.max_response_len
            )));
        }
        let tokens: Vec<TokenId> = self.vocab.encode_bytes(query.as_bytes()).into_iter().take(budget).collect();
        if tokens.is_empty() {
            return Err(Error::Input("empty query".into()));
        }
        Ok(tokens)
    }

    /// `x ∥ MID_1 … MID_T` with every MID at position `q`.
    pub fn batched_input(&self, query: &[TokenId]) -> Result<(Vec<TokenId>, Vec<usize>, AttentionMask)> {
        let q = query.len();
        let t = self.config.models;
        let mut tokens = query.to_vec();
        for m in 1..=t {
            tokens.push(self.vocab.mid(m)?);
        }
        let mut positions: Vec<usize> = (0..q).collect();
        positions.extend(std::iter::repeat_n(q, t));
        Ok((tokens, positions, AttentionMask::batched_mid(q, t)?))
    }

    pub fn training_input(&self, query: &[TokenId], responses: &[String]) -> Result<ClmTrainingInput> {
        let q = query.len();
        let mut tokens = query.to_vec();
        let mut positions: Vec<usize> = (0..q).collect();
        let mut block_lens = Vec::with_capacity(responses.len());
        for (t, y) in responses.iter().enumerate() {
            let y: Vec<TokenId> = self
                .vocab
                .encode_bytes(y.as_bytes())
                .into_iter()
                .take(self.config.max_response_len)
                .collect();
            tokens.push(self.vocab.mid(t + 1)?);
            tokens.extend_from_slice(&y);
            positions.extend(q..q + 1 + y.len());
            block_lens.push(1 + y.len());
        }
        Ok(ClmTrainingInput {
            tokens,
            positions,
            query_len: q,
            block_lens,
        })
    }

    /// Latent response representations `[T, d]` from one batched pass.
    pub fn predict_latents(&self, tape: &mut Tape, p: &Bound, query: &[TokenId]) -> Result<Var> {
        let (tokens, positions, mask) = self.batched_input(query)?;
        let h = self.backbone.hidden(tape, p, &tokens, &positions, &mask)?;
        Ok(tape.slice_rows(h, query.len(), self.config.models)?)
    }

    /// Sigmoid scores `[T]` from latents `[T, d]`.
    pub fn head(&self, tape: &mut Tape, p: &Bound, latents: Var) -> Result<Var> {
        let z = tape.matmul(latents, p[self.head_w])?;
        let z = tape.add(z, p[self.head_b])?;
        let s = tape.sigmoid(z)?;
        Ok(tape.reshape(s, &[self.config.models])?)
    }

    pub fn scores(&self, tape: &mut Tape, p: &Bound, query: &str) -> Result<Var> {
        let q = self.query_tokens(query)?;
        let latents = self.predict_latents(tape, p, &q)?;
        self.head(tape, p, latents)
    }

    /// Concatenated latents, flattened to `[T * d]`.
    pub fn features(&self, tape: &mut Tape, p: &Bound, query: &str) -> Result<Vec<f64>> {
        let q = self.query_tokens(query)?;
        let latents = self.predict_latents(tape, p, &q)?;
        Ok(tape.value(latents).data().to_vec())
    }

    /// Routing and reconstruction losses from one block-isolated pass.
    pub fn loss(&self, tape: &mut Tape, p: &Bound, query: &str, responses: &[String], targets: &[f64]) -> Result<StepLoss> {
        if responses.len() != self.config.models {
            return Err(Error::Input(format!(
                "{} responses for {} models",
                responses.len(),
                self.config.models
            )));
        }
        let q = self.query_tokens(query)?;
        let input = self.training_input(&q, responses)?;
        let mask = AttentionMask::block_isolated(input.query_len, &input.block_lens)?;
        let h = self.backbone.hidden(tape, p, &input.tokens, &input.positions, &mask)?;
        let mid_rows: Vec<usize> = (0..self.config.models).map(|t| input.mid_row(t)).collect();
        let latents = tape.gather_rows(h, &mid_rows)?;
        let scores = self.head(tape, p, latents)?;
        let route = routing_loss_bce(tape, scores, targets)?;

        let mut warnings = Vec::new();
        let resp = if self.config.lambda > 0.0 {
            let mut terms = Vec::with_capacity(self.config.models);
            for (t, &len) in input.block_lens.iter().enumerate() {
                let l = len - 1;
                if l == 0 {
                    warnings.push(format!("model {} has an empty response", t + 1));
                    terms.push(None);
                    continue;
                }
                let start = mid_rows[t];
                let rows = tape.slice_rows(h, start, l)?;
                let logits = self.backbone.lm_logits(tape, p, rows)?;
                let targets = &input.tokens[start + 1..start + 1 + l];
                terms.push(Some(tape.cross_entropy(logits, targets)?));
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
    if backbone.direction != Direction::Causal {
        return Err(crate::error::contract("CLM router needs a causal backbone"));
    }
    let want = Vocabulary::new(config.models).size();
    if backbone.vocab_size != want {
        return Err(crate::error::contract(format!(
            "backbone vocabulary {} does not match {want} for {} models",
            backbone.vocab_size, config.models
        )));
    }
    Ok(())
}
