//! Lookahead routers: latent response prediction with a causal (CLM) or a
//! masked (MLM) backbone, plus the shared training loop.

mod clm;
mod config;
mod curriculum;
mod decision;
mod losses;
mod mlm;
mod model;
mod policy;
mod train;

pub use clm::{ClmRouter, ClmTrainingInput};
pub use config::{LabelMode, LookaheadConfig, MaskStrategy, Variant};
pub use curriculum::{mask_ratio, masked_count, select_masked_positions, CurriculumState};
pub use decision::{argmax_lowest, RoutingDecision};
pub use losses::{bce_value, joint_loss, mean_over_models, routing_loss_bce};
pub use mlm::{mlm_build_input, MlmInput, MlmRouter};
pub use policy::RoutingPolicy;
pub use model::{targets_for, BackboneShape, Router, RouterSpec};
pub use train::{train, validation_metrics, LogRow, Trainable, TrainConfig, TrainReport};

use crate::numeric::Var;

/// Loss graph of one example plus reported scalars.
#[derive(Clone, Debug)]
pub struct StepLoss {
    pub total: Var,
    pub route: f64,
    pub resp: f64,
    pub warnings: Vec<String>,
}
