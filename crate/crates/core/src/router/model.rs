use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::clm::ClmRouter;
use super::curriculum::CurriculumState;
use super::mlm::MlmRouter;
use super::train::Trainable;
use super::{LabelMode, LookaheadConfig, RoutingDecision, StepLoss, Variant};
use crate::backbone::{Direction, TransformerConfig, Vocabulary};
use crate::baselines::{ClassifierConfig, QueryClassifier};
use crate::corpus::RoutingExample;
use crate::error::{contract, Error, Result};
use crate::numeric::{Bound, ParamStore, Tape};

/// Backbone size, independent of vocabulary and attention direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneShape {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_len: usize,
}

impl BackboneShape {
    pub fn desk() -> Self {
        Self {
            layers: 4,
            d_model: 128,
            heads: 4,
            ffn: 512,
            max_len: 512,
        }
    }

    pub fn config(self, models: usize, direction: Direction) -> TransformerConfig {
        TransformerConfig {
            layers: self.layers,
            d_model: self.d_model,
            heads: self.heads,
            ffn: self.ffn,
            max_len: self.max_len,
            vocab_size: Vocabulary::new(models).size(),
            direction,
        }
    }
}

/// Everything needed to rebuild a router around a parameter store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RouterSpec {
    Lookahead {
        config: LookaheadConfig,
        backbone: TransformerConfig,
    },
    Classifier {
        config: ClassifierConfig,
        backbone: TransformerConfig,
    },
}

impl RouterSpec {
    pub fn lookahead(config: LookaheadConfig, shape: BackboneShape) -> Self {
        let direction = match config.variant {
            Variant::Clm => Direction::Causal,
            Variant::Mlm => Direction::Bidirectional,
        };
        Self::Lookahead {
            config,
            backbone: shape.config(config.models, direction),
        }
    }

    pub fn classifier(config: ClassifierConfig, shape: BackboneShape, direction: Direction) -> Self {
        Self::Classifier {
            config,
            backbone: shape.config(config.models, direction),
        }
    }

    pub fn models(&self) -> usize {
        match self {
            Self::Lookahead { config, .. } => config.models,
            Self::Classifier { config, .. } => config.models,
        }
    }

    pub fn backbone(&self) -> &TransformerConfig {
        match self {
            Self::Lookahead { backbone, .. } | Self::Classifier { backbone, .. } => backbone,
        }
    }

    /// Short human-readable method name.
    pub fn label(&self) -> String {
        match self {
            Self::Lookahead { config, .. } => match config.variant {
                Variant::Clm => "lookahead-clm".into(),
                Variant::Mlm => "lookahead-mlm".into(),
            },
            Self::Classifier { config, backbone } => {
                let dir = match backbone.direction {
                    Direction::Causal => "clm",
                    Direction::Bidirectional => "mlm",
                };
                match config.objective {
                    crate::baselines::ClassifierObjective::Bce => format!("mlc-{dir}"),
                    crate::baselines::ClassifierObjective::Kl { .. } => format!("zooter-{dir}"),
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Kind {
    Clm(ClmRouter),
    Mlm(MlmRouter),
    Classifier(QueryClassifier),
}

/// A trainable router: its description, its weights and the model bound to them.
#[derive(Clone, Debug)]
pub struct Router {
    spec: RouterSpec,
    store: ParamStore,
    kind: Kind,
}

impl Router {
    /// Fresh weights drawn from `seed`.
    pub fn new(spec: RouterSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_rng(spec, &mut rng)
    }

    pub fn with_rng<R: Rng + ?Sized>(spec: RouterSpec, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let kind = match &spec {
            RouterSpec::Lookahead { config, backbone } => match config.variant {
                Variant::Clm => Kind::Clm(ClmRouter::new(*config, *backbone, &mut store, rng)?),
                Variant::Mlm => Kind::Mlm(MlmRouter::new(*config, *backbone, &mut store, rng)?),
            },
            RouterSpec::Classifier { config, backbone } => {
                Kind::Classifier(QueryClassifier::new(*config, *backbone, &mut store, rng)?)
            }
        };
        Ok(Self { spec, store, kind })
    }

    /// Binds `spec` to existing weights, checking names and shapes.
    pub fn from_parts(spec: RouterSpec, store: ParamStore) -> Result<Self> {
        let kind = match &spec {
            RouterSpec::Lookahead { config, backbone } => match config.variant {
                Variant::Clm => Kind::Clm(ClmRouter::locate(*config, *backbone, &store)?),
                Variant::Mlm => Kind::Mlm(MlmRouter::locate(*config, *backbone, &store)?),
            },
            RouterSpec::Classifier { config, backbone } => {
                Kind::Classifier(QueryClassifier::locate(*config, *backbone, &store)?)
            }
        };
        Ok(Self { spec, store, kind })
    }

    pub fn spec(&self) -> &RouterSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn into_parts(self) -> (RouterSpec, ParamStore) {
        (self.spec, self.store)
    }

    pub fn models(&self) -> usize {
        self.spec.models()
    }

    pub fn clm(&self) -> Option<&ClmRouter> {
        match &self.kind {
            Kind::Clm(r) => Some(r),
            _ => None,
        }
    }

    pub fn mlm(&self) -> Option<&MlmRouter> {
        match &self.kind {
            Kind::Mlm(r) => Some(r),
            _ => None,
        }
    }

    pub fn classifier(&self) -> Option<&QueryClassifier> {
        match &self.kind {
            Kind::Classifier(r) => Some(r),
            _ => None,
        }
    }

    fn scores_on(&self, tape: &mut Tape, p: &Bound, query: &str) -> Result<Vec<f64>> {
        let s = match &self.kind {
            Kind::Clm(r) => r.scores(tape, p, query)?,
            Kind::Mlm(r) => r.scores(tape, p, query)?,
            Kind::Classifier(r) => r.scores(tape, p, query)?,
        };
        Ok(tape.value(s).data().to_vec())
    }

    /// Per-model scores `ĉ_t` for a query.
    pub fn scores(&self, query: &str) -> Result<Vec<f64>> {
        let mut tape = Tape::with_nan_check(false);
        let p = self.store.bind(&mut tape, false);
        let s = self.scores_on(&mut tape, &p, query)?;
        if let Some(i) = s.iter().position(|v| !v.is_finite()) {
            return Err(contract(format!("non-finite score for model {}", i + 1)));
        }
        Ok(s)
    }

    pub fn route(&self, query: &str) -> Result<RoutingDecision> {
        let start = Instant::now();
        let s = self.scores(query)?;
        Ok(RoutingDecision::from_scores(s, start.elapsed().as_secs_f64() * 1e3))
    }

    /// Routing-time hidden representation used for information probes.
    pub fn features(&self, query: &str) -> Result<Vec<f64>> {
        let mut tape = Tape::with_nan_check(false);
        let p = self.store.bind(&mut tape, false);
        match &self.kind {
            Kind::Clm(r) => r.features(&mut tape, &p, query),
            Kind::Mlm(r) => r.features(&mut tape, &p, query),
            Kind::Classifier(r) => r.features(&mut tape, &p, query),
        }
    }

    fn label_mode(&self) -> LabelMode {
        match &self.spec {
            RouterSpec::Lookahead { config, .. } => config.labels,
            RouterSpec::Classifier { config, .. } => config.labels,
        }
    }
}

/// Training targets of an example under a label mode.
pub fn targets_for(ex: &RoutingExample, mode: LabelMode) -> Result<&[f64]> {
    let v = match mode {
        LabelMode::Hard => &ex.labels,
        LabelMode::Soft => &ex.normalized,
    };
    if v.len() != ex.models() {
        return Err(Error::Input(format!(
            "record {} has no {} targets; normalize the corpus first",
            ex.id,
            match mode {
                LabelMode::Hard => "binary",
                LabelMode::Soft => "normalized",
            }
        )));
    }
    Ok(v)
}

impl Trainable for Router {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn curriculum(&self) -> CurriculumState {
        match &self.spec {
            RouterSpec::Lookahead { config, .. } => CurriculumState {
                progress: 0.0,
                alpha: config.alpha,
                strategy: config.strategy,
                enabled: config.curriculum,
                seed: 0,
            },
            RouterSpec::Classifier { .. } => CurriculumState::full(super::MaskStrategy::End),
        }
    }

    fn example_loss(
        &self,
        tape: &mut Tape,
        p: &Bound,
        ex: &RoutingExample,
        curriculum: &CurriculumState,
        rng: &mut ChaCha8Rng,
    ) -> Result<StepLoss> {
        if ex.models() != self.models() {
            return Err(Error::Input(format!(
                "record {} has {} models, router expects {}",
                ex.id,
                ex.models(),
                self.models()
            )));
        }
        let targets = targets_for(ex, self.label_mode())?;
        match &self.kind {
            Kind::Clm(r) => r.loss(tape, p, &ex.query, &ex.responses, targets),
            Kind::Mlm(r) => r.loss(tape, p, &ex.query, &ex.responses, targets, curriculum, rng),
            Kind::Classifier(r) => {
                let t = match r.config().objective {
                    crate::baselines::ClassifierObjective::Kl { .. } => targets_for(ex, LabelMode::Soft)?,
                    crate::baselines::ClassifierObjective::Bce => targets,
                };
                r.loss(tape, p, &ex.query, t)
            }
        }
    }

    fn example_scores(&self, ex: &RoutingExample) -> Result<Vec<f64>> {
        self.scores(&ex.query)
    }
}
