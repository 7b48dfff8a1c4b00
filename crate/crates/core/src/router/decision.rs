use serde::{Deserialize, Serialize};

/// Index (0-based) of the maximum; ties go to the lowest index.
pub fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Routing outcome for one query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub scores: Vec<f64>,
    /// 1-based index of the selected model.
    pub selected: usize,
    pub latency_ms: f64,
}

impl RoutingDecision {
    pub fn from_scores(scores: Vec<f64>, latency_ms: f64) -> Self {
        let selected = argmax_lowest(&scores) + 1;
        Self {
            scores,
            selected,
            latency_ms,
        }
    }

    /// 0-based selected index.
    pub fn index(&self) -> usize {
        self.selected - 1
    }
}
