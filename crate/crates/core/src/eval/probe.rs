use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mine::{mine_estimate, standardize, MineConfig, MineResult};
use crate::backbone::{AttentionMask, Direction, TokenId, Transformer, Vocabulary, CLS};
use crate::corpus::RoutingExample;
use crate::error::{contract, Error, Result};
use crate::numeric::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::router::{routing_loss_bce, BackboneShape, CurriculumState, MaskStrategy, Router, StepLoss, Trainable};

/// Classifier that reads the actual response: `CLS ∥ x ∥ y_t` through a
/// bidirectional encoder, CLS state to a sigmoid. Scoring needs every
/// response, so it is an upper reference rather than a router.
#[derive(Clone, Debug)]
pub struct ResponseClassifier {
    models: usize,
    store: ParamStore,
    encoder: Transformer,
    w: ParamId,
    b: ParamId,
}

impl ResponseClassifier {
    pub fn new(models: usize, shape: BackboneShape, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_rng(models, shape, &mut rng)
    }

    pub fn with_rng<R: Rng + ?Sized>(models: usize, shape: BackboneShape, rng: &mut R) -> Result<Self> {
        if shape.max_len < 4 {
            return Err(contract("max length too small for query and response"));
        }
        let mut store = ParamStore::new();
        let config = shape.config(models, Direction::Bidirectional);
        let encoder = Transformer::new(config, &mut store, "backbone", rng)?;
        let d = config.d_model;
        let w = store.add("probe.w", Tensor::zeros(&[d, 1]));
        let b = store.add("probe.b", Tensor::zeros(&[1]));
        Ok(Self {
            models,
            store,
            encoder,
            w,
            b,
        })
    }

    pub fn models(&self) -> usize {
        self.models
    }

    fn tokens(&self, query: &str, response: &str) -> Result<Vec<TokenId>> {
        let v = Vocabulary::new(self.models);
        let room = self.encoder.config().max_len - 1;
        let y = v.encode_bytes(response.as_bytes());
        let y_len = y.len().min(room / 2);
        let x: Vec<TokenId> = v.encode_bytes(query.as_bytes()).into_iter().take(room - y_len).collect();
        if x.is_empty() {
            return Err(Error::Input("empty query".into()));
        }
        let mut t = Vec::with_capacity(1 + x.len() + y_len);
        t.push(CLS);
        t.extend(x);
        t.extend_from_slice(&y[..y_len]);
        Ok(t)
    }

    fn cls_states(&self, tape: &mut Tape, p: &Bound, ex: &RoutingExample) -> Result<Vec<Var>> {
        if ex.responses.len() != self.models {
            return Err(Error::Input(format!(
                "record {} has {} responses, probe expects {}",
                ex.id,
                ex.responses.len(),
                self.models
            )));
        }
        let mut out = Vec::with_capacity(self.models);
        for y in &ex.responses {
            let tokens = self.tokens(&ex.query, y)?;
            let n = tokens.len();
            let positions: Vec<usize> = (0..n).collect();
            let mask = AttentionMask::bidirectional(&vec![false; n])?;
            let h = self.encoder.hidden(tape, p, &tokens, &positions, &mask)?;
            out.push(tape.slice_rows(h, 0, 1)?);
        }
        Ok(out)
    }

    fn score_var(&self, tape: &mut Tape, p: &Bound, ex: &RoutingExample) -> Result<Var> {
        let cls = self.cls_states(tape, p, ex)?;
        let h = tape.concat_rows(&cls)?;
        let z = tape.matmul(h, p[self.w])?;
        let z = tape.add(z, p[self.b])?;
        let s = tape.sigmoid(z)?;
        Ok(tape.reshape(s, &[self.models])?)
    }

    /// CLS states of every query-response pair, concatenated to `[T * d]`.
    pub fn features(&self, ex: &RoutingExample) -> Result<Vec<f64>> {
        let mut tape = Tape::with_nan_check(false);
        let p = self.store.bind(&mut tape, false);
        let cls = self.cls_states(&mut tape, &p, ex)?;
        Ok(cls.iter().flat_map(|&v| tape.value(v).data().to_vec()).collect())
    }
}

impl Trainable for ResponseClassifier {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn curriculum(&self) -> CurriculumState {
        CurriculumState::full(MaskStrategy::End)
    }

    fn example_loss(
        &self,
        tape: &mut Tape,
        p: &Bound,
        ex: &RoutingExample,
        _curriculum: &CurriculumState,
        _rng: &mut ChaCha8Rng,
    ) -> Result<StepLoss> {
        if ex.labels.len() != self.models {
            return Err(Error::Input(format!("record {} is not binarized", ex.id)));
        }
        let s = self.score_var(tape, p, ex)?;
        let route = routing_loss_bce(tape, s, &ex.labels)?;
        Ok(StepLoss {
            total: route,
            route: tape.value(route).item(),
            resp: 0.0,
            warnings: Vec::new(),
        })
    }

    fn example_scores(&self, ex: &RoutingExample) -> Result<Vec<f64>> {
        let mut tape = Tape::with_nan_check(false);
        let p = self.store.bind(&mut tape, false);
        let s = self.score_var(&mut tape, &p, ex)?;
        Ok(tape.value(s).data().to_vec())
    }
}

/// MI between each router's routing-time states and the response classifier's.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiProbe {
    pub with_rm: MineResult,
    pub without_rm: MineResult,
}

/// Routing-time states of `router` on `examples`, z-scored per column.
pub fn router_states(router: &Router, examples: &[RoutingExample]) -> Result<Vec<Vec<f64>>> {
    let raw = examples
        .iter()
        .map(|e| router.features(&e.query))
        .collect::<Result<Vec<_>>>()?;
    Ok(standardize(&raw))
}

pub fn oracle_states(oracle: &ResponseClassifier, examples: &[RoutingExample]) -> Result<Vec<Vec<f64>>> {
    let raw = examples
        .iter()
        .map(|e| oracle.features(e))
        .collect::<Result<Vec<_>>>()?;
    Ok(standardize(&raw))
}

/// Runs the estimator for the router trained with response modeling and the
/// one trained without, each against the response classifier.
pub fn mi_probe(
    with_rm: &Router,
    without_rm: &Router,
    oracle: &ResponseClassifier,
    examples: &[RoutingExample],
    config: &MineConfig,
) -> Result<MiProbe> {
    let a = router_states(with_rm, examples)?;
    let b = router_states(without_rm, examples)?;
    let dim = |m: &[Vec<f64>]| m.first().map_or(0, Vec::len);
    if dim(&a) != dim(&b) {
        return Err(contract(format!(
            "state dimensions differ: {} with response modeling, {} without",
            dim(&a),
            dim(&b)
        )));
    }
    let y = oracle_states(oracle, examples)?;
    Ok(MiProbe {
        with_rm: mine_estimate(&a, &y, config)?,
        without_rm: mine_estimate(&b, &y, config)?,
    })
}
