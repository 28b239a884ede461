//! Central finite-difference checks against autodiff gradients.

use crate::error::{NnError, Result};
use crate::graph::{evaluate_with_gradients, Graph, Var};
use crate::params::{ParamId, ParameterStore};

/// `|Δ| / max(1e-8, |g_auto| + |g_fd|)`
pub fn relative_error(auto: f64, fd: f64) -> f64 {
    (auto - fd).abs() / (auto.abs() + fd.abs()).max(1e-8)
}

/// Compares `f`'s own gradient at `theta` with central differences of its value.
///
/// `f` returns `(value, gradient)`; only the value is used at the perturbed points.
pub fn finite_diff_check<F>(theta: &[f64], eps: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if eps <= 0.0 {
        return Err(NnError::Contract("finite difference step must be positive".into()));
    }
    let (_, auto) = f(theta)?;
    if auto.len() != theta.len() {
        return Err(NnError::Contract("gradient length differs from parameter length".into()));
    }
    let mut point = theta.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        point[i] = theta[i] + eps;
        let (up, _) = f(&point)?;
        point[i] = theta[i] - eps;
        let (down, _) = f(&point)?;
        point[i] = theta[i];
        let fd = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(auto[i], fd));
    }
    Ok(worst)
}

/// Finite-difference check over the parameters in `ids`, probing at most
/// `max_coords` evenly spaced coordinates per parameter.
pub fn check_parameters<F>(
    store: &mut ParameterStore,
    ids: &[ParamId],
    eps: f64,
    max_coords: usize,
    mut build: F,
) -> Result<f64>
where
    F: FnMut(&mut Graph, &ParameterStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    let (_, grads) = evaluate_with_gradients(&mut g, loss)?;
    let mut eval = |store: &ParameterStore| -> Result<f64> {
        let mut g = Graph::new();
        let loss = build(&mut g, store)?;
        Ok(g.value(loss).item())
    };
    let mut worst: f64 = 0.0;
    for &id in ids {
        let n = store.value(id).len();
        let stride = n.div_ceil(max_coords.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let auto = grads.get(id).map_or(0.0, |g| g.data()[i]);
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + eps;
            let up = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig - eps;
            let down = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(auto, fd));
        }
    }
    Ok(worst)
}
