use serde::{Deserialize, Serialize};

/// Whether a dataset's scores come from a verifier (math, code) or from a
/// judge over open-ended text.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Verifiable,
    #[default]
    OpenEnded,
}

/// One query with the responses and scores of all `T` candidate models.
///
/// `normalized` and `labels` are empty until normalization has run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingExample {
    pub id: String,
    pub dataset: String,
    #[serde(default)]
    pub kind: TaskKind,
    pub query: String,
    pub responses: Vec<String>,
    pub raw: Vec<f64>,
    #[serde(default)]
    pub normalized: Vec<f64>,
    #[serde(default)]
    pub labels: Vec<f64>,
    /// Generator-recorded best model (1-based), synthetic corpora only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_best: Option<usize>,
    /// Planted domain index (0-based), synthetic corpora only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<usize>,
}

impl RoutingExample {
    /// A bare query without responses or scores, as seen at serving time.
    pub fn query_only(query: impl Into<String>) -> Self {
        Self {
            id: "query".into(),
            dataset: String::new(),
            kind: TaskKind::default(),
            query: query.into(),
            responses: vec![],
            raw: vec![],
            normalized: vec![],
            labels: vec![],
            oracle_best: None,
            domain: None,
        }
    }

    pub fn models(&self) -> usize {
        self.raw.len()
    }

    /// Binary correctness of model `t` (0-based), from labels.
    pub fn correct(&self, t: usize) -> bool {
        self.labels.get(t).is_some_and(|&c| c >= 0.5)
    }

    pub fn correct_count(&self) -> usize {
        (0..self.models()).filter(|&t| self.correct(t)).count()
    }

    /// Field-level invariant check; returns the offending field and reason.
    pub fn check(&self) -> Result<(), (&'static str, String)> {
        let t = self.raw.len();
        if t == 0 {
            return Err(("raw", "no candidate scores".into()));
        }
        if self.responses.len() != t {
            return Err(("responses", format!("{} responses for {t} scores", self.responses.len())));
        }
        if let Some(i) = self.raw.iter().position(|v| !v.is_finite()) {
            return Err(("raw", format!("non-finite score at index {i}")));
        }
        if !self.normalized.is_empty() {
            if self.normalized.len() != t {
                return Err(("normalized", format!("{} values for {t} models", self.normalized.len())));
            }
            if self.normalized.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(("normalized", "values must lie in [0, 1]".into()));
            }
        }
        if !self.labels.is_empty() {
            if self.labels.len() != t {
                return Err(("labels", format!("{} values for {t} models", self.labels.len())));
            }
            if self.labels.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(("labels", "values must lie in [0, 1]".into()));
            }
        }
        if let Some(b) = self.oracle_best {
            if b == 0 || b > t {
                return Err(("oracle_best", format!("{b} outside 1..={t}")));
            }
        }
        Ok(())
    }
}
