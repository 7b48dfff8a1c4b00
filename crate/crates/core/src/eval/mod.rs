//! Routing metrics, comparison tables, and mutual-information probes.

mod ablation;
mod metrics;
mod mine;
mod probe;

pub use metrics::{
    decide_all, evaluate, evaluate_decisions, normalized_score, oracle_reference, original_score, original_score_of,
    random_reference, routing_proportions, routing_proportions_of, summary_table, win_tie_loss, win_tie_loss_of,
    BenchmarkScore, EvalReport, WinTieLoss,
};
pub use mine::{mine_estimate, quantile, standardize, MineConfig, MineResult};
pub use probe::{mi_probe, oracle_states, router_states, MiProbe, ResponseClassifier};
pub use ablation::{ablation_table, lambda_arms, masking_arms, run_arm, train_router, Arm, ArmRun, ArmSummary};
