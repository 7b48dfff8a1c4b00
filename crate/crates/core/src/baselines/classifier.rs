use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{AttentionMask, Direction, TokenId, Transformer, TransformerConfig, Vocabulary, CLS};
use crate::error::{contract, Error, Result};
use crate::numeric::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::router::{routing_loss_bce, LabelMode, StepLoss};

/// Training objective of a query-only classifier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClassifierObjective {
    /// Independent sigmoid per model with BCE against the labels.
    Bce,
    /// Softmax over models, KL from `softmax(normalized / tau)`.
    Kl { tau: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub models: usize,
    pub objective: ClassifierObjective,
    pub labels: LabelMode,
}

impl ClassifierConfig {
    /// Multi-label classifier over query features.
    pub fn mlc(models: usize) -> Self {
        Self {
            models,
            objective: ClassifierObjective::Bce,
            labels: LabelMode::Hard,
        }
    }

    /// Reward-distribution matching with temperature `tau`.
    pub fn zooter(models: usize, tau: f64) -> Self {
        Self {
            models,
            objective: ClassifierObjective::Kl { tau },
            labels: LabelMode::Soft,
        }
    }
}

/// Router that sees only the query: CLS state (bidirectional backbone) or
/// last-token state (causal backbone) fed to a two-layer head.
#[derive(Clone, Debug)]
pub struct QueryClassifier {
    config: ClassifierConfig,
    vocab: Vocabulary,
    backbone: Transformer,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl QueryClassifier {
    pub fn new<R: Rng + ?Sized>(
        config: ClassifierConfig,
        backbone: TransformerConfig,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        check(&config, &backbone)?;
        let (d, t) = (backbone.d_model, config.models);
        let bb = Transformer::new(backbone, store, "backbone", rng)?;
        Ok(Self {
            config,
            vocab: Vocabulary::new(t),
            backbone: bb,
            w1: store.add("route.w1", Tensor::randn(&[d, d], 1.0 / (d as f64).sqrt(), rng)),
            b1: store.add("route.b1", Tensor::zeros(&[d])),
            w2: store.add("route.w2", Tensor::zeros(&[d, t])),
            b2: store.add("route.b2", Tensor::zeros(&[t])),
        })
    }

    pub fn locate(config: ClassifierConfig, backbone: TransformerConfig, store: &ParamStore) -> Result<Self> {
        check(&config, &backbone)?;
        let (d, t) = (backbone.d_model, config.models);
        Ok(Self {
            config,
            vocab: Vocabulary::new(t),
            backbone: Transformer::locate(backbone, store, "backbone")?,
            w1: store.require("route.w1", &[d, d])?,
            b1: store.require("route.b1", &[d])?,
            w2: store.require("route.w2", &[d, t])?,
            b2: store.require("route.b2", &[t])?,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    fn tokens(&self, query: &str) -> Result<Vec<TokenId>> {
        let max_len = self.backbone.config().max_len;
        let bidir = self.backbone.config().direction == Direction::Bidirectional;
        let budget = if bidir { max_len - 1 } else { max_len };
        let x: Vec<TokenId> = self.vocab.encode_bytes(query.as_bytes()).into_iter().take(budget).collect();
        if x.is_empty() {
            return Err(Error::Input("empty query".into()));
        }
        Ok(if bidir { std::iter::once(CLS).chain(x).collect() } else { x })
    }

    /// Query representation `[1, d]`.
    pub fn represent(&self, tape: &mut Tape, p: &Bound, query: &str) -> Result<Var> {
        let tokens = self.tokens(query)?;
        let n = tokens.len();
        let positions: Vec<usize> = (0..n).collect();
        let (mask, row) = match self.backbone.config().direction {
            Direction::Bidirectional => (AttentionMask::bidirectional(&vec![false; n])?, 0),
            Direction::Causal => (AttentionMask::causal(n), n - 1),
        };
        let h = self.backbone.hidden(tape, p, &tokens, &positions, &mask)?;
        Ok(tape.slice_rows(h, row, 1)?)
    }

    fn logits(&self, tape: &mut Tape, p: &Bound, query: &str) -> Result<Var> {
        let r = self.represent(tape, p, query)?;
        let z = tape.matmul(r, p[self.w1])?;
        let z = tape.add(z, p[self.b1])?;
        let z = tape.gelu(z)?;
        let z = tape.matmul(z, p[self.w2])?;
        Ok(tape.add(z, p[self.b2])?)
    }

    /// Sigmoid scores for BCE, softmax probabilities for KL; shape `[T]`.
    pub fn scores(&self, tape: &mut Tape, p: &Bound, query: &str) -> Result<Var> {
        let z = self.logits(tape, p, query)?;
        let s = match self.config.objective {
            ClassifierObjective::Bce => tape.sigmoid(z)?,
            ClassifierObjective::Kl { .. } => tape.softmax_rows(z, None)?,
        };
        Ok(tape.reshape(s, &[self.config.models])?)
    }

    pub fn features(&self, tape: &mut Tape, p: &Bound, query: &str) -> Result<Vec<f64>> {
        let r = self.represent(tape, p, query)?;
        Ok(tape.value(r).data().to_vec())
    }

    pub fn loss(&self, tape: &mut Tape, p: &Bound, query: &str, targets: &[f64]) -> Result<StepLoss> {
        let route = match self.config.objective {
            ClassifierObjective::Bce => {
                let s = self.scores(tape, p, query)?;
                routing_loss_bce(tape, s, targets)?
            }
            ClassifierObjective::Kl { tau } => {
                let target = softmax_with_temperature(targets, tau);
                let z = self.logits(tape, p, query)?;
                let logq = tape.log_softmax_rows(z)?;
                let w = tape.constant(Tensor::new(&[1, target.len()], target.clone())?);
                let cross = tape.mul(logq, w)?;
                let cross = tape.sum(cross)?;
                let entropy: f64 = target.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum();
                // KL(p ‖ q) = Σ p log p − Σ p log q
                let kl = tape.neg(cross)?;
                tape.add_scalar(kl, entropy)?
            }
        };
        Ok(StepLoss {
            total: route,
            route: tape.value(route).item(),
            resp: 0.0,
            warnings: Vec::new(),
        })
    }
}

/// `softmax(v / tau)`.
pub fn softmax_with_temperature(v: &[f64], tau: f64) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|&x| ((x - m) / tau).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn check(config: &ClassifierConfig, backbone: &TransformerConfig) -> Result<()> {
    backbone.validate()?;
    if config.models < 2 {
        return Err(contract("need at least 2 candidate models"));
    }
    if let ClassifierObjective::Kl { tau } = config.objective {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(contract(format!("temperature must be positive, got {tau}")));
        }
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
