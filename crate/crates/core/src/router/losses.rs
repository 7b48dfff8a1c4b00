use crate::error::{contract, Result};
use crate::numeric::{Tape, Var};

/// Mean BCE between predicted scores and targets.
pub fn routing_loss_bce(tape: &mut Tape, scores: Var, targets: &[f64]) -> Result<Var> {
    if tape.value(scores).len() != targets.len() {
        return Err(contract(format!(
            "{} scores for {} targets",
            tape.value(scores).len(),
            targets.len()
        )));
    }
    Ok(tape.bce(scores, targets)?)
}

/// `route + lambda * resp`; with `lambda == 0` the routing loss is returned as is.
pub fn joint_loss(tape: &mut Tape, route: Var, resp: Option<Var>, lambda: f64) -> Result<Var> {
    match resp {
        Some(r) if lambda != 0.0 => {
            let w = tape.scale(r, lambda)?;
            Ok(tape.add(route, w)?)
        }
        _ => Ok(route),
    }
}

/// Arithmetic mean of per-model reconstruction terms; `None` terms count as 0.
pub fn mean_over_models(tape: &mut Tape, terms: &[Option<Var>]) -> Result<Option<Var>> {
    let present: Vec<Var> = terms.iter().flatten().copied().collect();
    if present.is_empty() {
        return Ok(None);
    }
    let mut acc = present[0];
    for &v in &present[1..] {
        acc = tape.add(acc, v)?;
    }
    Ok(Some(tape.scale(acc, 1.0 / terms.len() as f64)?))
}

/// Plain arithmetic for reporting and tests.
pub fn bce_value(pred: &[f64], target: &[f64]) -> f64 {
    let lo = 1e-7;
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &c)| {
            let p = p.clamp(lo, 1.0 - lo);
            -(c * p.ln() + (1.0 - c) * (1.0 - p).ln())
        })
        .sum();
    sum / pred.len() as f64
}
