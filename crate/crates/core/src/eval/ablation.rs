use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::evaluate;
use crate::corpus::CorpusSplit;
use crate::error::{contract, Result};
use crate::router::{train, BackboneShape, LookaheadConfig, MaskStrategy, Router, RouterSpec, TrainConfig, TrainReport};

/// One configuration of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub name: String,
    pub spec: RouterSpec,
    /// Leading fraction of the training split used by this arm.
    pub train_fraction: f64,
}

impl Arm {
    pub fn new(name: impl Into<String>, spec: RouterSpec) -> Self {
        Self {
            name: name.into(),
            spec,
            train_fraction: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmRun {
    pub seed: u64,
    pub mu_o: f64,
    pub mu_n: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub best_step: usize,
    pub steps: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    pub runs: Vec<ArmRun>,
}

impl ArmSummary {
    /// Mean test `μ_n` over runs; `None` if any run left it undefined.
    pub fn mean_mu_n(&self) -> Option<f64> {
        let v: Option<Vec<f64>> = self.runs.iter().map(|r| r.mu_n).collect();
        v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Fresh router from `spec` seeded with `cfg.seed`, trained on `train`.
pub fn train_router(
    spec: &RouterSpec,
    train_set: &[crate::corpus::RoutingExample],
    validation: &[crate::corpus::RoutingExample],
    cfg: &TrainConfig,
) -> Result<(Router, TrainReport)> {
    let mut router = Router::new(spec.clone(), cfg.seed)?;
    let report = train(&mut router, train_set, validation, cfg)?;
    Ok((router, report))
}

/// Trains and tests `arm` once per seed.
pub fn run_arm(arm: &Arm, split: &CorpusSplit, cfg: &TrainConfig, seeds: &[u64]) -> Result<ArmSummary> {
    if !(arm.train_fraction > 0.0 && arm.train_fraction <= 1.0) {
        return Err(contract(format!("arm {}: train fraction {} outside (0, 1]", arm.name, arm.train_fraction)));
    }
    let n = ((split.train.len() as f64 * arm.train_fraction).round() as usize).max(1);
    let train_set = &split.train[..n.min(split.train.len())];
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let start = Instant::now();
        let cfg = TrainConfig { seed, ..*cfg };
        let (router, report) = train_router(&arm.spec, train_set, &split.validation, &cfg)?;
        let eval = evaluate(&router, &split.test)?;
        runs.push(ArmRun {
            seed,
            mu_o: eval.overall.mu_o,
            mu_n: eval.overall.mu_n,
            val_accuracy: report.best_val_accuracy,
            best_step: report.best_step,
            steps: report.steps,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(ArmSummary {
        arm: arm.name.clone(),
        runs,
    })
}

/// Masking-strategy sweep: end, start and random curricula, and full masking
/// from the first step.
pub fn masking_arms(base: LookaheadConfig, shape: BackboneShape) -> Vec<Arm> {
    let mut arms: Vec<Arm> = [("end", MaskStrategy::End), ("start", MaskStrategy::Start), ("random", MaskStrategy::Random)]
        .into_iter()
        .map(|(name, strategy)| {
            Arm::new(
                format!("mask-{name}"),
                RouterSpec::lookahead(
                    LookaheadConfig {
                        strategy,
                        curriculum: true,
                        ..base
                    },
                    shape,
                ),
            )
        })
        .collect();
    arms.push(Arm::new(
        "mask-none",
        RouterSpec::lookahead(
            LookaheadConfig {
                curriculum: false,
                ..base
            },
            shape,
        ),
    ));
    arms
}

/// Response-modeling weight sweep.
pub fn lambda_arms(base: LookaheadConfig, shape: BackboneShape, lambdas: &[f64]) -> Vec<Arm> {
    lambdas
        .iter()
        .map(|&lambda| Arm::new(format!("lambda-{lambda}"), RouterSpec::lookahead(LookaheadConfig { lambda, ..base }, shape)))
        .collect()
}

/// Tab-separated table: arm, mean `μ_n`, then per-seed `μ_n`.
pub fn ablation_table(summaries: &[ArmSummary]) -> String {
    let mut s = String::from("arm\tmean_mu_n\tper_seed\n");
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
    for a in summaries {
        let per: Vec<String> = a.runs.iter().map(|r| fmt(r.mu_n)).collect();
        let _ = writeln!(s, "{}\t{}\t{}", a.arm, fmt(a.mean_mu_n()), per.join(","));
    }
    s
}
