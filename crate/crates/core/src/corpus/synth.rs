use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::process::{binarize_all, normalize_scores, CorpusSplit, DEFAULT_THRESHOLD};
use super::{CorpusError, RoutingExample, TaskKind};

const FILLER: &[&str] = &[
    "please", "tell", "me", "about", "the", "a", "this", "that", "how", "what", "why", "quick", "simple", "for", "with",
    "some", "given", "each", "now", "then", "here", "help", "need", "want", "show", "short", "best", "way", "to", "it",
];

/// Word banks for built-in planted domains: (name, kind, markers, answers).
const BANK: &[(&str, TaskKind, [&str; 4], [&str; 4])] = &[
    ("math", TaskKind::Verifiable, ["integral", "prime", "equation", "matrix"], ["area", "seven", "x=2", "det"]),
    ("code", TaskKind::Verifiable, ["python", "compile", "recursion", "regex"], ["def f", "gcc", "base", "\\d+"]),
    ("chat", TaskKind::OpenEnded, ["poem", "story", "letter", "slogan"], ["rhyme", "once", "dear", "catchy"]),
    ("law", TaskKind::OpenEnded, ["contract", "tort", "statute", "appeal"], ["clause", "duty", "act", "court"]),
    ("bio", TaskKind::Verifiable, ["enzyme", "genome", "neuron", "protein"], ["lock", "dna", "spike", "fold"]),
    ("art", TaskKind::OpenEnded, ["palette", "sketch", "sculpt", "fresco"], ["hue", "line", "clay", "lime"]),
];

const WRONG: &[&str] = &["unsure", "maybe", "hmm", "error", "skip"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub kind: TaskKind,
    /// Query marker words; disjoint across domains.
    pub markers: Vec<String>,
    /// Answer token emitted by a correct response, one per marker.
    pub answers: Vec<String>,
    /// Probability that each model answers a query of this domain correctly.
    pub correctness: Vec<f64>,
}

/// Generator parameters for a corpus with known per-domain specialists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecializationPlan {
    pub models: usize,
    pub domains: Vec<DomainSpec>,
    /// Style prefix that marks each model's responses.
    pub styles: Vec<String>,
    pub seed: u64,
    /// Upper bound on the jitter added to open-ended scores.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    /// Inclusive range of filler words around the marker.
    #[serde(default = "default_filler")]
    pub filler: (usize, usize),
}

fn default_filler() -> (usize, usize) {
    (2, 4)
}

fn default_jitter() -> f64 {
    0.1
}

impl SpecializationPlan {
    /// `domains` built-in domains where domain `d` is mastered by model
    /// `d mod models` with probability `diag` and every other model succeeds
    /// with probability `off`.
    pub fn planted(models: usize, domains: usize, diag: f64, off: f64, seed: u64) -> Result<Self, CorpusError> {
        if domains > BANK.len() {
            return Err(CorpusError::InvalidPlan(format!(
                "at most {} built-in domains, asked for {domains}",
                BANK.len()
            )));
        }
        let doms = BANK[..domains]
            .iter()
            .enumerate()
            .map(|(d, (name, kind, markers, answers))| DomainSpec {
                name: (*name).into(),
                kind: *kind,
                markers: markers.iter().map(|s| s.to_string()).collect(),
                answers: answers.iter().map(|s| s.to_string()).collect(),
                correctness: (0..models).map(|t| if t == d % models { diag } else { off }).collect(),
            })
            .collect();
        let styles = (0..models).map(|t| format!("[{}]", (b'A' + (t % 26) as u8) as char)).collect();
        let plan = Self {
            models,
            domains: doms,
            styles,
            seed,
            jitter: default_jitter(),
            filler: default_filler(),
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::InvalidPlan(m));
        if self.models < 2 {
            return bad(format!("need at least 2 models, got {}", self.models));
        }
        if self.domains.is_empty() {
            return bad("no domains".into());
        }
        if self.styles.len() != self.models {
            return bad(format!("{} styles for {} models", self.styles.len(), self.models));
        }
        if self.filler.0 > self.filler.1 {
            return bad(format!("filler range {:?} is empty", self.filler));
        }
        if !(0.0..=0.5).contains(&self.jitter) {
            return bad(format!("jitter {} outside [0, 0.5]", self.jitter));
        }
        let mut seen = std::collections::HashSet::new();
        for d in &self.domains {
            if d.correctness.len() != self.models {
                return bad(format!("domain {}: {} probabilities for {} models", d.name, d.correctness.len(), self.models));
            }
            if d.correctness.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return bad(format!("domain {}: probabilities must lie in [0, 1]", d.name));
            }
            let max = d.correctness.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if d.correctness.iter().filter(|&&p| p == max).count() != 1 {
                return bad(format!("domain {} has no unique best model", d.name));
            }
            if d.markers.is_empty() || d.markers.len() != d.answers.len() {
                return bad(format!("domain {} needs one answer per marker", d.name));
            }
            for m in &d.markers {
                if !seen.insert(m.clone()) {
                    return bad(format!("marker {m:?} used by more than one domain"));
                }
            }
        }
        Ok(())
    }

    /// Unique best model (0-based) of each domain.
    pub fn specialists(&self) -> Vec<usize> {
        self.domains
            .iter()
            .map(|d| {
                let mut best = 0;
                for t in 1..self.models {
                    if d.correctness[t] > d.correctness[best] {
                        best = t;
                    }
                }
                best
            })
            .collect()
    }

    /// Builds a query for `domain` using its `marker`-th marker.
    pub fn query_text<R: Rng + ?Sized>(&self, domain: usize, marker: usize, rng: &mut R) -> String {
        let n_fill = rng.random_range(self.filler.0..=self.filler.1);
        let mut words: Vec<&str> = (0..n_fill).map(|_| *FILLER.choose(rng).expect("non-empty")).collect();
        let at = rng.random_range(0..=words.len());
        words.insert(at, &self.domains[domain].markers[marker]);
        words.join(" ")
    }

    fn example<R: Rng + ?Sized>(&self, id: String, rng: &mut R) -> RoutingExample {
        let d = rng.random_range(0..self.domains.len());
        let spec = &self.domains[d];
        let marker = rng.random_range(0..spec.markers.len());
        let query = self.query_text(d, marker, rng);
        let mut responses = Vec::with_capacity(self.models);
        let mut raw = Vec::with_capacity(self.models);
        for t in 0..self.models {
            let correct = rng.random_bool(spec.correctness[t]);
            let body = if correct {
                spec.answers[marker].clone()
            } else {
                wrong_answer(spec, marker, rng)
            };
            responses.push(format!("{} {body}.", self.styles[t]));
            let mut s = if correct { 1.0 } else { 0.0 };
            if spec.kind == TaskKind::OpenEnded && self.jitter > 0.0 {
                s += rng.random_range(0.0..self.jitter);
            }
            raw.push(s);
        }
        let mut best = 0;
        for t in 1..self.models {
            if raw[t] > raw[best] {
                best = t;
            }
        }
        RoutingExample {
            id,
            dataset: spec.name.clone(),
            kind: spec.kind,
            query,
            responses,
            raw,
            normalized: vec![],
            labels: vec![],
            oracle_best: Some(best + 1),
            domain: Some(d),
        }
    }
}

/// An on-topic but wrong answer: another marker's answer from the same
/// domain, or a generic non-answer when the domain has a single marker.
fn wrong_answer<R: Rng + ?Sized>(spec: &DomainSpec, marker: usize, rng: &mut R) -> String {
    let others: Vec<&String> = spec
        .answers
        .iter()
        .enumerate()
        .filter(|&(i, a)| i != marker && *a != spec.answers[marker])
        .map(|(_, a)| a)
        .collect();
    match others.choose(rng) {
        Some(a) => (*a).clone(),
        None => WRONG.choose(rng).expect("non-empty").to_string(),
    }
}

/// Generates train, validation and test splits, then normalizes per dataset
/// over the whole corpus and binarizes at the default threshold.
pub fn generate_synthetic(
    plan: &SpecializationPlan,
    n_train: usize,
    n_validation: usize,
    n_test: usize,
) -> Result<CorpusSplit, CorpusError> {
    plan.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut all = Vec::with_capacity(n_train + n_validation + n_test);
    for (prefix, n) in [("train", n_train), ("val", n_validation), ("test", n_test)] {
        for i in 0..n {
            all.push(plan.example(format!("{prefix}-{i:06}"), &mut rng));
        }
    }
    normalize_scores(&mut all)?;
    binarize_all(&mut all, DEFAULT_THRESHOLD);
    let test = all.split_off(n_train + n_validation);
    let validation = all.split_off(n_train);
    Ok(CorpusSplit {
        train: all,
        validation,
        test,
        seed: plan.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_tied_argmax_and_shared_markers() {
        let mut plan = SpecializationPlan::planted(3, 3, 0.95, 0.2, 1).unwrap();
        plan.domains[0].correctness = vec![0.5, 0.5, 0.1];
        assert!(plan.validate().is_err());
        let mut plan = SpecializationPlan::planted(3, 3, 0.95, 0.2, 1).unwrap();
        plan.domains[1].markers[0] = plan.domains[0].markers[0].clone();
        assert!(plan.validate().is_err());
    }

    #[test]
    fn certain_specialist_is_always_oracle_best() {
        let mut plan = SpecializationPlan::planted(3, 1, 1.0, 0.0, 3).unwrap();
        plan.domains[0].correctness = vec![1.0, 0.0, 0.0];
        let split = generate_synthetic(&plan, 50, 0, 0).unwrap();
        assert!(split.train.iter().all(|e| e.oracle_best == Some(1)));
    }

    #[test]
    fn labels_track_correctness_with_jitter() {
        let plan = SpecializationPlan::planted(3, 3, 0.95, 0.2, 5).unwrap();
        let split = generate_synthetic(&plan, 300, 0, 0).unwrap();
        for e in &split.train {
            for t in 0..3 {
                let correct = e.raw[t] >= 1.0;
                assert_eq!(e.correct(t), correct, "{e:?}");
            }
        }
    }
}
