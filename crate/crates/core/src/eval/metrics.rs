use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::RoutingExample;
use crate::error::{contract, Error, Result};
use crate::router::{RoutingDecision, RoutingPolicy};

/// Decisions of `policy` on every example, in order.
pub fn decide_all(policy: &dyn RoutingPolicy, examples: &[RoutingExample]) -> Result<Vec<RoutingDecision>> {
    examples.iter().map(|e| policy.decide(e)).collect()
}

fn selected_score(ex: &RoutingExample, d: &RoutingDecision) -> Result<f64> {
    ex.raw
        .get(d.index())
        .copied()
        .ok_or_else(|| contract(format!("record {} has no score for model {}", ex.id, d.selected)))
}

/// Mean score of the selected responses.
pub fn original_score_of(examples: &[RoutingExample], decisions: &[RoutingDecision]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::UndefinedMetric("no examples".into()));
    }
    if examples.len() != decisions.len() {
        return Err(contract("one decision per example required"));
    }
    let mut sum = 0.0;
    for (e, d) in examples.iter().zip(decisions) {
        sum += selected_score(e, d)?;
    }
    Ok(sum / examples.len() as f64)
}

pub fn original_score(policy: &dyn RoutingPolicy, examples: &[RoutingExample]) -> Result<f64> {
    original_score_of(examples, &decide_all(policy, examples)?)
}

/// Expected score of uniform routing: the mean over examples of the mean
/// score across models.
pub fn random_reference(examples: &[RoutingExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::UndefinedMetric("no examples".into()));
    }
    let sum: f64 = examples
        .iter()
        .map(|e| e.raw.iter().sum::<f64>() / e.raw.len() as f64)
        .sum();
    Ok(sum / examples.len() as f64)
}

/// Mean over examples of the best score.
pub fn oracle_reference(examples: &[RoutingExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::UndefinedMetric("no examples".into()));
    }
    let sum: f64 = examples
        .iter()
        .map(|e| e.raw.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum();
    Ok(sum / examples.len() as f64)
}

/// Share of the random-to-oracle gap closed, in percent.
pub fn normalized_score(mu: f64, random: f64, oracle: f64) -> Result<f64> {
    let gap = oracle - random;
    if gap <= 0.0 || !gap.is_finite() {
        return Err(Error::UndefinedMetric(format!(
            "oracle {oracle} does not exceed random {random}"
        )));
    }
    Ok((mu - random) / gap * 100.0)
}

/// Percentage of examples routed to each model.
pub fn routing_proportions_of(decisions: &[RoutingDecision], models: usize) -> Result<Vec<f64>> {
    if decisions.is_empty() {
        return Err(Error::UndefinedMetric("no decisions".into()));
    }
    let mut counts = vec![0usize; models];
    for d in decisions {
        *counts
            .get_mut(d.index())
            .ok_or_else(|| contract(format!("model {} outside 1..={models}", d.selected)))? += 1;
    }
    Ok(counts
        .into_iter()
        .map(|c| c as f64 * 100.0 / decisions.len() as f64)
        .collect())
}

pub fn routing_proportions(policy: &dyn RoutingPolicy, examples: &[RoutingExample]) -> Result<Vec<f64>> {
    routing_proportions_of(&decide_all(policy, examples)?, policy.models())
}

/// Outcome shares for examples with a given number of correct candidates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WinTieLoss {
    pub correct_candidates: usize,
    pub count: usize,
    pub win: f64,
    pub tie: f64,
    pub loss: f64,
}

/// Win when `a` picks a correct model and `b` does not, loss for the reverse,
/// tie otherwise; grouped by the number of correct candidates.
pub fn win_tie_loss_of(
    examples: &[RoutingExample],
    a: &[RoutingDecision],
    b: &[RoutingDecision],
) -> Result<Vec<WinTieLoss>> {
    if examples.len() != a.len() || examples.len() != b.len() {
        return Err(contract("one decision per example required"));
    }
    let mut groups: BTreeMap<usize, (usize, usize, usize)> = BTreeMap::new();
    for ((e, da), db) in examples.iter().zip(a).zip(b) {
        if e.labels.len() != e.models() {
            return Err(contract(format!("record {} has no binary labels", e.id)));
        }
        let g = groups.entry(e.correct_count()).or_default();
        match (e.correct(da.index()), e.correct(db.index())) {
            (true, false) => g.0 += 1,
            (false, true) => g.2 += 1,
            _ => g.1 += 1,
        }
    }
    Ok(groups
        .into_iter()
        .map(|(k, (w, t, l))| {
            let n = (w + t + l) as f64;
            WinTieLoss {
                correct_candidates: k,
                count: w + t + l,
                win: w as f64 * 100.0 / n,
                tie: t as f64 * 100.0 / n,
                loss: l as f64 * 100.0 / n,
            }
        })
        .collect())
}

pub fn win_tie_loss(
    a: &dyn RoutingPolicy,
    b: &dyn RoutingPolicy,
    examples: &[RoutingExample],
) -> Result<Vec<WinTieLoss>> {
    win_tie_loss_of(examples, &decide_all(a, examples)?, &decide_all(b, examples)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkScore {
    pub dataset: String,
    pub count: usize,
    pub mu_o: f64,
    pub random: f64,
    pub oracle: f64,
    /// `None` when the oracle does not beat random on this benchmark.
    pub mu_n: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub benchmarks: Vec<BenchmarkScore>,
    pub overall: BenchmarkScore,
    /// Mean of the defined per-benchmark normalized scores.
    pub average_mu_n: Option<f64>,
    pub proportions: Vec<f64>,
}

fn score_group(name: &str, examples: &[RoutingExample], decisions: &[RoutingDecision]) -> Result<BenchmarkScore> {
    let mu_o = original_score_of(examples, decisions)?;
    let random = random_reference(examples)?;
    let oracle = oracle_reference(examples)?;
    Ok(BenchmarkScore {
        dataset: name.to_string(),
        count: examples.len(),
        mu_o,
        random,
        oracle,
        mu_n: normalized_score(mu_o, random, oracle).ok(),
    })
}

/// Per-benchmark (dataset tag) and overall scores of one policy.
pub fn evaluate(policy: &dyn RoutingPolicy, examples: &[RoutingExample]) -> Result<EvalReport> {
    let decisions = decide_all(policy, examples)?;
    evaluate_decisions(&policy.name(), policy.models(), examples, &decisions)
}

pub fn evaluate_decisions(
    method: &str,
    models: usize,
    examples: &[RoutingExample],
    decisions: &[RoutingDecision],
) -> Result<EvalReport> {
    let mut by_tag: BTreeMap<&str, (Vec<RoutingExample>, Vec<RoutingDecision>)> = BTreeMap::new();
    for (e, d) in examples.iter().zip(decisions) {
        let g = by_tag.entry(e.dataset.as_str()).or_default();
        g.0.push(e.clone());
        g.1.push(d.clone());
    }
    let benchmarks = by_tag
        .iter()
        .map(|(tag, (ex, ds))| score_group(tag, ex, ds))
        .collect::<Result<Vec<_>>>()?;
    let defined: Vec<f64> = benchmarks.iter().filter_map(|b| b.mu_n).collect();
    Ok(EvalReport {
        method: method.to_string(),
        overall: score_group("all", examples, decisions)?,
        average_mu_n: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        benchmarks,
        proportions: routing_proportions_of(decisions, models)?,
    })
}

/// Tab-separated table: one row per method, `μ_o` and `μ_n` per benchmark,
/// then the average `μ_n`.
pub fn summary_table(reports: &[EvalReport]) -> String {
    let mut s = String::from("method");
    let tags: Vec<&str> = reports
        .first()
        .map(|r| r.benchmarks.iter().map(|b| b.dataset.as_str()).collect())
        .unwrap_or_default();
    for t in &tags {
        let _ = write!(s, "\t{t}.mu_o\t{t}.mu_n");
    }
    s.push_str("\tavg.mu_n\n");
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
    for r in reports {
        s.push_str(&r.method);
        for t in &tags {
            match r.benchmarks.iter().find(|b| b.dataset == *t) {
                Some(b) => {
                    let _ = write!(s, "\t{:.4}\t{}", b.mu_o, fmt(b.mu_n));
                }
                None => s.push_str("\t-\t-"),
            }
        }
        let _ = writeln!(s, "\t{}", fmt(r.average_mu_n));
    }
    s
}
