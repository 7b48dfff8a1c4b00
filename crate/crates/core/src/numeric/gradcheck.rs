use super::{Tape, Tensor, TensorError, Var};

/// Compares reverse-mode gradients of `loss` against central differences.
///
/// `loss` builds a scalar on a fresh tape from leaves bound to `params`.
/// Returns the max over all coordinates of
/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn check_gradients<F>(loss: F, params: &[Tensor], eps: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(i, p)| (0..p.len()).map(move |j| (i, j)))
        .collect();
    check_gradients_at(loss, params, eps, &coords)
}

/// [`check_gradients`] restricted to the `(parameter, flat index)` pairs in
/// `coords`.
pub fn check_gradients_at<F>(loss: F, params: &[Tensor], eps: f64, coords: &[(usize, usize)]) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    if let Some(&(i, j)) = coords.iter().find(|&&(i, j)| i >= params.len() || j >= params[i].len()) {
        return Err(TensorError::Contract(format!("coordinate ({i}, {j}) out of range")));
    }
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(TensorError::Contract(format!("epsilon {eps} outside (0, 1e-2]")));
    }
    let eval = |ps: &[Tensor]| -> Result<f64, TensorError> {
        let mut tape = Tape::with_nan_check(true);
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone(), false)).collect();
        let l = loss(&mut tape, &vars)?;
        Ok(tape.value(l).item())
    };

    let first = eval(params)?;
    let second = eval(params)?;
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::Determinism { first, second });
    }

    let mut tape = Tape::with_nan_check(true);
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone(), true)).collect();
    let l = loss(&mut tape, &vars)?;
    tape.backward(l)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| tape.grad(v).map_or_else(|| vec![0.0; p.len()], |g| g.to_vec()))
        .collect();

    let mut worst: f64 = 0.0;
    let mut work = params.to_vec();
    for &(pi, j) in coords {
        let orig = params[pi].data()[j];
        work[pi].data_mut()[j] = orig + eps;
        let plus = eval(&work)?;
        work[pi].data_mut()[j] = orig - eps;
        let minus = eval(&work)?;
        work[pi].data_mut()[j] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let err = (analytic[pi][j] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
