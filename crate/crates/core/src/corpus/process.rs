use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, RoutingExample, TaskKind};

pub const DEFAULT_THRESHOLD: f64 = 0.8;

/// Non-fatal condition raised while processing a corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct Warning(pub String);

/// Min–max normalizes raw scores within each dataset tag, pooling all models
/// of the group into one min and max. A group whose scores are all equal maps
/// to 0.5.
pub fn normalize_scores(examples: &mut [RoutingExample]) -> Result<Vec<Warning>, CorpusError> {
    let mut groups: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for ex in examples.iter() {
        if let Some(i) = ex.raw.iter().position(|v| !v.is_finite()) {
            return Err(CorpusError::NonFinite {
                id: ex.id.clone(),
                index: i,
            });
        }
        let e = groups
            .entry(ex.dataset.clone())
            .or_insert((f64::INFINITY, f64::NEG_INFINITY));
        for &v in &ex.raw {
            e.0 = e.0.min(v);
            e.1 = e.1.max(v);
        }
    }
    let mut warnings = Vec::new();
    for (tag, (lo, hi)) in &groups {
        if hi <= lo {
            warnings.push(Warning(format!(
                "dataset {tag}: all raw scores equal ({lo}); normalized to 0.5"
            )));
        }
    }
    for ex in examples.iter_mut() {
        let (lo, hi) = groups[&ex.dataset];
        ex.normalized = ex
            .raw
            .iter()
            .map(|&v| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 })
            .collect();
    }
    Ok(warnings)
}

/// `c_t = 1` iff `normalized_t >= threshold`.
pub fn binarize(example: &mut RoutingExample, threshold: f64) {
    example.labels = example
        .normalized
        .iter()
        .map(|&v| if v >= threshold { 1.0 } else { 0.0 })
        .collect();
}

pub fn binarize_all(examples: &mut [RoutingExample], threshold: f64) {
    examples.iter_mut().for_each(|e| binarize(e, threshold));
}

/// Drops verifiable-task examples whose labels are all equal; open-ended
/// examples are always kept.
pub fn filter_uninformative(examples: Vec<RoutingExample>) -> Vec<RoutingExample> {
    examples
        .into_iter()
        .filter(|ex| {
            if ex.kind != TaskKind::Verifiable || ex.labels.is_empty() {
                return true;
            }
            let first = ex.correct(0);
            (1..ex.models()).any(|t| ex.correct(t) != first)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<RoutingExample>,
    pub validation: Vec<RoutingExample>,
    pub test: Vec<RoutingExample>,
    pub seed: u64,
}

/// Seeded shuffle, then validation and test fractions off the front.
pub fn split(mut examples: Vec<RoutingExample>, validation: f64, test: f64, seed: u64) -> Result<CorpusSplit, CorpusError> {
    if !(0.0..1.0).contains(&validation) || !(0.0..1.0).contains(&test) || validation + test >= 1.0 {
        return Err(CorpusError::InvalidPlan(format!(
            "split fractions validation={validation} test={test} leave no training data"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    examples.shuffle(&mut rng);
    let n = examples.len();
    let n_val = (n as f64 * validation).round() as usize;
    let n_test = (n as f64 * test).round() as usize;
    let rest = examples.split_off(n_val + n_test);
    let test_part = examples.split_off(n_val);
    Ok(CorpusSplit {
        train: rest,
        validation: examples,
        test: test_part,
        seed,
    })
}
